//! Frozen audio encoder: lookup into imported embeddings, or built-in
//! log-mel statistics with an optional fixed random projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audiofeat::{logmel_stats, LogMelConfig};
use crate::datamodel::{EmbeddingSet, TrialSegment};
use crate::error::{Error, Result};

pub const BUILTIN_DIM: usize = 80;

#[derive(Clone, Debug, PartialEq)]
pub enum AudioEncoder {
    Precomputed(EmbeddingSet),
    Builtin {
        rate: f64,
        logmel: LogMelConfig,
        d: usize,
        /// `BUILTIN_DIM × d`, row-major; absent when `d` equals the feature size.
        projection: Option<Vec<f32>>,
    },
}

impl AudioEncoder {
    pub fn precomputed(es: EmbeddingSet) -> Self {
        AudioEncoder::Precomputed(es)
    }

    pub fn builtin(rate: f64, d: usize, seed: u64) -> Self {
        Self::builtin_with(rate, LogMelConfig::default(), d, seed)
    }

    /// Feature size is `2·n_mels`; the projection is skipped when `d` equals it.
    pub fn builtin_with(rate: f64, logmel: LogMelConfig, d: usize, seed: u64) -> Self {
        let feat = 2 * logmel.n_mels;
        let projection = (d != feat).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1.0 / (feat as f64).sqrt();
            (0..feat * d)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (g * scale) as f32
                })
                .collect()
        });
        AudioEncoder::Builtin {
            rate,
            logmel,
            d,
            projection,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AudioEncoder::Precomputed(es) => es.d,
            AudioEncoder::Builtin { d, .. } => *d,
        }
    }

    fn lookup(es: &EmbeddingSet, ids: impl Iterator<Item = i64>) -> Result<Vec<f32>> {
        let index: std::collections::HashMap<i64, usize> =
            es.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut out = Vec::new();
        for id in ids {
            let &i = index.get(&id).ok_or(Error::MissingEmbedding(id))?;
            out.extend_from_slice(es.row(i));
        }
        Ok(out)
    }

    pub fn encode_clip(&self, clip: &[f32]) -> Result<Vec<f32>> {
        let AudioEncoder::Builtin {
            rate,
            logmel,
            d,
            projection,
        } = self
        else {
            return Err(Error::InvalidArgument(
                "precomputed audio encoder cannot embed raw clips".into(),
            ));
        };
        let f = logmel_stats(clip, *rate, logmel)?;
        Ok(match projection {
            None => f,
            Some(p) => (0..*d)
                .map(|j| {
                    f.iter()
                        .enumerate()
                        .map(|(i, &v)| v as f64 * p[i * d + j] as f64)
                        .sum::<f64>() as f32
                })
                .collect(),
        })
    }

    /// Row-major `n × d` embeddings of the given trials.
    pub fn encode_trials(&self, trials: &[&TrialSegment]) -> Result<Vec<f32>> {
        match self {
            AudioEncoder::Precomputed(es) => {
                Self::lookup(es, trials.iter().map(|t| t.trial_id() as i64))
            }
            AudioEncoder::Builtin { .. } => {
                let mut out = Vec::with_capacity(trials.len() * self.dim());
                for t in trials {
                    out.extend(self.encode_clip(&t.audio_window)?);
                }
                Ok(out)
            }
        }
    }

    pub fn encode_ids(&self, ids: &[i64]) -> Result<Vec<f32>> {
        match self {
            AudioEncoder::Precomputed(es) => Self::lookup(es, ids.iter().copied()),
            AudioEncoder::Builtin { .. } => Err(Error::InvalidArgument(
                "built-in audio encoder needs clips, not ids".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_trial_audio, SynthConfig};

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn builtin_features_separate_synthetic_words() {
        let cfg = SynthConfig {
            audio_rate: 16000.0,
            ..SynthConfig::new(3)
        };
        let enc = AudioEncoder::builtin(cfg.audio_rate, BUILTIN_DIM, 0);
        let tones = cfg.corpus.tone_map();
        let reps = 3;
        let mut feats = vec![Vec::new(); 48];
        for w in 0..48usize {
            for r in 0..reps {
                let clip = gen_trial_audio(w as u32, tones[w], &cfg, (w * 100 + r) as u32);
                feats[w].push(enc.encode_clip(&clip).unwrap());
            }
        }
        // z-score each dimension, then leave-one-out nearest centroid
        let all: Vec<&Vec<f32>> = feats.iter().flatten().collect();
        let d = BUILTIN_DIM;
        let mu: Vec<f64> = (0..d)
            .map(|j| all.iter().map(|f| f[j] as f64).sum::<f64>() / all.len() as f64)
            .collect();
        let sd: Vec<f64> = (0..d)
            .map(|j| {
                (all.iter()
                    .map(|f| (f[j] as f64 - mu[j]).powi(2))
                    .sum::<f64>()
                    / all.len() as f64)
                    .sqrt()
                    .max(1e-9)
            })
            .collect();
        let z = |f: &[f32]| -> Vec<f32> {
            (0..d)
                .map(|j| ((f[j] as f64 - mu[j]) / sd[j]) as f32)
                .collect()
        };
        let zf: Vec<Vec<Vec<f32>>> = feats
            .iter()
            .map(|v| v.iter().map(|f| z(f)).collect())
            .collect();
        let (mut hit, mut total) = (0, 0);
        for w in 0..48 {
            for r in 0..reps {
                let q = &zf[w][r];
                let best = (0..48)
                    .map(|c| {
                        let members: Vec<&Vec<f32>> = zf[c]
                            .iter()
                            .enumerate()
                            .filter(|&(k, _)| !(c == w && k == r))
                            .map(|(_, f)| f)
                            .collect();
                        let cen: Vec<f32> = (0..d)
                            .map(|j| {
                                members.iter().map(|f| f[j]).sum::<f32>() / members.len() as f32
                            })
                            .collect();
                        (c, cosine(q, &cen))
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
                    .0;
                hit += (best == w) as usize;
                total += 1;
            }
        }
        let acc = hit as f64 / total as f64;
        assert!(acc >= 0.95, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn projection_is_seeded_and_sized() {
        let a = AudioEncoder::builtin(16000.0, 32, 5);
        let b = AudioEncoder::builtin(16000.0, 32, 5);
        assert_eq!(a, b);
        assert_eq!(a.dim(), 32);
        let clip: Vec<f32> = (0..4000).map(|i| (i as f32 * 0.05).sin()).collect();
        assert_eq!(a.encode_clip(&clip).unwrap().len(), 32);
        assert!(matches!(
            AudioEncoder::builtin(16000.0, BUILTIN_DIM, 5),
            AudioEncoder::Builtin {
                projection: None,
                ..
            }
        ));
    }

    #[test]
    fn missing_ids_are_reported() {
        let es = EmbeddingSet::new(vec![4, 9], 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let enc = AudioEncoder::precomputed(es);
        assert_eq!(enc.encode_ids(&[9, 4]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            enc.encode_ids(&[5]),
            Err(Error::MissingEmbedding(5))
        ));
        assert!(enc.encode_clip(&[0.0; 10]).is_err());
    }
}
