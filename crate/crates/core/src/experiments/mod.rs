//! Evaluation protocol: detection cross-validation, block-split decoding,
//! electrode ablation, chance baselines, metrics and reports.

mod channels;
mod metrics;
mod report;
mod run;
mod split;

pub use channels::{ChannelSet, FULL, RANDOM};
pub use metrics::{
    confusion, lda_probe, paired_ttest, student_t_two_sided, topk_accuracy, Lda, LdaResult, TTest,
};
pub use report::{
    ablate, assemble, audio_lda_probe, figure_series, render_csv, AblationConfig, CellResult,
    ColumnMark, DecodingConfig, ExperimentReport, FigureConfig, SetSummary, TTestRecord, Task,
    DECODE_METRICS, DETECTION,
};
pub use run::{
    decode_run, decoding_data, detection_cv, detection_data, DecodeOutcome, DecodingData,
    DetectionCv, DetectionData, DetectionOutcome, EncoderArch, NON_SPEECH, SPEECH,
};
pub use split::{
    decoding_split, stratified_folds, stratified_holdout, BlockAssignment, DecodingSplit,
};
