//! Contrastive matching core: similarity, InfoNCE, retrieval and the two
//! training loops.

mod check;
mod loss;
mod train;

pub use check::{end_to_end_gradient_check, EndToEndCheck};
pub use loss::{
    cosine_matrix, diagonal_topk, infonce_one_sided, infonce_symmetric, infonce_symmetric_graph,
    rank_candidates, retrieve_topk, Direction, SimilarityMatrix,
};
pub use train::{
    encode_seeg, evaluate_detector, evaluate_pairs, stack_windows, train_contrastive,
    train_detector, write_history, ContrastiveHp, DetectorHp, EpochRecord, GroupEval, LabeledSet,
    PairEval, PairSet, TrainedDetector, TrainedEncoder,
};
