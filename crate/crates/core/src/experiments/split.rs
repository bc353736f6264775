use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::TrialEvent;
use crate::error::{Error, Result};

/// Stratified `k`-fold partition: indices of each class are shuffled and
/// dealt round-robin, continuing the rotation across classes, so fold sizes
/// and per-class counts each differ by at most one.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if let Some((c, v)) = by_class.iter().find(|(_, v)| v.len() < k) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has {} samples, fewer than {k} folds",
            v.len()
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Stratified holdout of `frac` of each class from `idx`; returns `(rest, held)`.
pub fn stratified_holdout(
    idx: &[usize],
    labels: &[usize],
    frac: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let (mut rest, mut held) = (Vec::new(), Vec::new());
    for v in by_class.values_mut() {
        v.shuffle(&mut rng);
        let n_held = ((v.len() as f64 * frac).round() as usize)
            .clamp(usize::from(v.len() > 1), v.len().saturating_sub(1));
        held.extend_from_slice(&v[..n_held]);
        rest.extend_from_slice(&v[n_held..]);
    }
    rest.sort_unstable();
    held.sort_unstable();
    (rest, held)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockAssignment {
    pub n_blocks: u32,
    pub val_block: u32,
    pub test_block: u32,
}

impl Default for BlockAssignment {
    fn default() -> Self {
        BlockAssignment {
            n_blocks: 10,
            val_block: 9,
            test_block: 10,
        }
    }
}

/// Event indices per split; `val_groups`/`test_groups` hold one session block each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodingSplit {
    pub train: Vec<usize>,
    pub val_groups: Vec<Vec<usize>>,
    pub test_groups: Vec<Vec<usize>>,
}

impl DecodingSplit {
    pub fn val(&self) -> Vec<usize> {
        self.val_groups.iter().flatten().copied().collect()
    }

    pub fn test(&self) -> Vec<usize> {
        self.test_groups.iter().flatten().copied().collect()
    }
}

/// Per-session block split; blocks are 1-based.
pub fn decoding_split(events: &[TrialEvent], blocks: BlockAssignment) -> Result<DecodingSplit> {
    let BlockAssignment {
        n_blocks,
        val_block,
        test_block,
    } = blocks;
    if val_block == test_block
        || !(1..=n_blocks).contains(&val_block)
        || !(1..=n_blocks).contains(&test_block)
    {
        return Err(Error::Config(format!(
            "invalid block assignment {blocks:?}"
        )));
    }
    let mut sessions: BTreeMap<u32, BTreeMap<u32, Vec<usize>>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        sessions
            .entry(e.session)
            .or_default()
            .entry(e.block)
            .or_default()
            .push(i);
    }
    if sessions.is_empty() {
        return Err(Error::InvalidArgument("no events to split".into()));
    }
    let mut split = DecodingSplit {
        train: Vec::new(),
        val_groups: Vec::new(),
        test_groups: Vec::new(),
    };
    for (s, by_block) in &sessions {
        let present: BTreeSet<u32> = by_block.keys().copied().collect();
        if let Some(b) = (1..=n_blocks).find(|b| !present.contains(b)) {
            return Err(Error::InvalidArgument(format!(
                "session {s} is missing block {b}"
            )));
        }
        if let Some(b) = present.iter().find(|&&b| b > n_blocks || b == 0) {
            return Err(Error::InvalidArgument(format!(
                "session {s} has unexpected block {b}"
            )));
        }
        for (&b, idx) in by_block {
            if b == val_block {
                split.val_groups.push(idx.clone());
            } else if b == test_block {
                split.test_groups.push(idx.clone());
            } else {
                split.train.extend_from_slice(idx);
            }
        }
    }
    split.train.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_events, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn four_sessions_split_into_paper_sizes() {
        let events = gen_events(&SynthConfig::new(1));
        let s = decoding_split(&events, BlockAssignment::default()).unwrap();
        assert_eq!(
            (s.train.len(), s.val().len(), s.test().len()),
            (1536, 192, 192)
        );
        for g in &s.test_groups {
            let words: BTreeSet<u32> = g.iter().map(|&i| events[i].word_label).collect();
            assert_eq!((g.len(), words.len()), (48, 48));
        }
        assert!(s
            .train
            .iter()
            .all(|&i| events[i].block != 9 && events[i].block != 10));
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val())
            .chain(&s.test())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..events.len()).collect::<Vec<_>>());
    }

    #[test]
    fn missing_block_is_reported() {
        let events: Vec<_> = gen_events(&SynthConfig::new(1))
            .into_iter()
            .filter(|e| e.block != 4)
            .collect();
        let err = decoding_split(&events, BlockAssignment::default()).unwrap_err();
        assert!(err.to_string().contains("block 4"), "{err}");
    }

    #[test]
    fn too_few_samples_per_class_is_an_error() {
        assert!(stratified_folds(&[0, 0, 0, 1, 1, 1, 1, 1], 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stay_balanced(n0 in 5usize..60, n1 in 5usize..60, seed in 0u64..100) {
            let labels: Vec<usize> = (0..n0).map(|_| 0).chain((0..n1).map(|_| 1)).collect();
            let folds = stratified_folds(&labels, 5, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for c in 0..2 {
                let counts: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn holdout_is_disjoint_and_stratified(n0 in 2usize..50, n1 in 2usize..50, seed in 0u64..100) {
            let labels: Vec<usize> = (0..n0).map(|_| 0).chain((0..n1).map(|_| 1)).collect();
            let idx: Vec<usize> = (0..labels.len()).collect();
            let (rest, held) = stratified_holdout(&idx, &labels, 0.2, seed);
            prop_assert_eq!(rest.len() + held.len(), labels.len());
            prop_assert!(rest.iter().all(|i| !held.contains(i)));
            for c in 0..2 {
                prop_assert!(held.iter().any(|&i| labels[i] == c) && rest.iter().any(|&i| labels[i] == c));
            }
        }
    }
}
