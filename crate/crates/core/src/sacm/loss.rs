//! Cosine similarity, InfoNCE in both directions, and similarity ranking.

use sacm_autodiff::{Element, Graph, Var};

use crate::error::{Error, Result};

/// `S[i][j] = cos(B_i, A_j)`, row-major over `n_b × n_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub n_b: usize,
    pub n_a: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_a + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_a..(i + 1) * self.n_a]
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let data = (0..self.n_a)
            .flat_map(|j| (0..self.n_b).map(move |i| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        SimilarityMatrix {
            n_b: self.n_a,
            n_a: self.n_b,
            data,
        }
    }
}

fn rows_of<T: Copy + Into<f64>>(x: &[T], d: usize, side: &'static str) -> Result<Vec<Vec<f64>>> {
    if d == 0 || !x.len().is_multiple_of(d) {
        return Err(Error::InvalidArgument(format!(
            "{side}: {} values do not form rows of width {d}",
            x.len()
        )));
    }
    Ok(x.chunks(d)
        .map(|r| r.iter().map(|&v| v.into()).collect())
        .collect())
}

fn norms(rows: &[Vec<f64>], side: &'static str) -> Result<Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::ZeroNorm { side, row: i })
            }
        })
        .collect()
}

/// Cosine similarity between row-major `B` and `A`, both of width `d`.
pub fn cosine_matrix<T: Copy + Into<f64>>(b: &[T], a: &[T], d: usize) -> Result<SimilarityMatrix> {
    let br = rows_of(b, d, "B")?;
    let ar = rows_of(a, d, "A")?;
    let bn = norms(&br, "B")?;
    let an = norms(&ar, "A")?;
    let mut data = Vec::with_capacity(br.len() * ar.len());
    for (bi, nb) in br.iter().zip(&bn) {
        for (aj, na) in ar.iter().zip(&an) {
            let dot: f64 = bi.iter().zip(aj).map(|(x, y)| x * y).sum();
            data.push(dot / (nb * na));
        }
    }
    Ok(SimilarityMatrix {
        n_b: br.len(),
        n_a: ar.len(),
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    BToA,
    AToB,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "temperature must be a positive finite number, got {tau}"
        )))
    }
}

/// Mean over rows of `−log softmax(row/τ)[diag]`, via log-sum-exp.
fn row_nll(s: &SimilarityMatrix, tau: f64) -> f64 {
    let n = s.n_b;
    let mut total = 0.0;
    for i in 0..n {
        let row = s.row(i);
        let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / tau));
        let lse = m + row.iter().map(|&v| (v / tau - m).exp()).sum::<f64>().ln();
        total += lse - row[i] / tau;
    }
    total / n as f64
}

/// One-sided InfoNCE; `AToB` scores each audio row against all SEEG rows.
pub fn infonce_one_sided(s: &SimilarityMatrix, tau: f64, dir: Direction) -> Result<f64> {
    check_tau(tau)?;
    if s.n_a != s.n_b || s.n_a == 0 {
        return Err(Error::InvalidArgument(format!(
            "InfoNCE needs a square non-empty matrix, got {}×{}",
            s.n_b, s.n_a
        )));
    }
    Ok(match dir {
        Direction::BToA => row_nll(s, tau),
        Direction::AToB => row_nll(&s.transpose(), tau),
    })
}

pub fn infonce_symmetric<T: Copy + Into<f64>>(b: &[T], a: &[T], d: usize, tau: f64) -> Result<f64> {
    let s = cosine_matrix(b, a, d)?;
    Ok(infonce_one_sided(&s, tau, Direction::BToA)? + infonce_one_sided(&s, tau, Direction::AToB)?)
}

/// Differentiable symmetric InfoNCE for `b, a: N × d` graph nodes.
pub fn infonce_symmetric_graph<T: Element>(
    g: &mut Graph<T>,
    b: Var,
    a: Var,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let n = g.shape(b)[0];
    let targets: Vec<usize> = (0..n).collect();
    let s = g.cosine_similarity_matrix(b, a)?;
    let logits = g.scale(s, 1.0 / tau);
    let l_ba = g.cross_entropy(logits, &targets)?;
    let lt = g.transpose(logits)?;
    let l_ab = g.cross_entropy(lt, &targets)?;
    Ok(g.add(l_ba, l_ab)?)
}

/// Full candidate ranking per row of `S/τ`, descending, ties to the lower index.
pub fn rank_candidates(s: &SimilarityMatrix, tau: f64) -> Result<Vec<Vec<usize>>> {
    check_tau(tau)?;
    Ok((0..s.n_b)
        .map(|i| {
            let row: Vec<f64> = s.row(i).iter().map(|v| v / tau).collect();
            let mut idx: Vec<usize> = (0..s.n_a).collect();
            idx.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
            idx
        })
        .collect())
}

pub fn retrieve_topk(s: &SimilarityMatrix, tau: f64, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > s.n_a {
        return Err(Error::InvalidArgument(format!(
            "top-{k} requested from {} candidates",
            s.n_a
        )));
    }
    let mut r = rank_candidates(s, tau)?;
    r.iter_mut().for_each(|row| row.truncate(k));
    Ok(r)
}

/// Percentage of rows whose own index (the positive) is among the first `k` ranks.
pub fn diagonal_topk(rankings: &[Vec<usize>], k: usize) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    let hits = rankings
        .iter()
        .enumerate()
        .filter(|(i, r)| r.iter().take(k).any(|j| j == i))
        .count();
    100.0 * hits as f64 / rankings.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use sacm_autodiff::{Mode, Tensor};

    fn eye(n: usize) -> Vec<f64> {
        (0..n * n)
            .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
            .collect()
    }

    fn gauss(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn cosine_examples() {
        let s = cosine_matrix(&eye(3), &eye(3), 3).unwrap();
        assert_eq!(s.data, eye(3));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = cosine_matrix(&[1.0, 0.0], &[h, h], 2).unwrap();
        assert!((s.data[0] - h).abs() < 1e-15);
    }

    #[test]
    fn cosine_is_row_scale_invariant() {
        let b = gauss(5 * 4, 1);
        let a = gauss(5 * 4, 2);
        let mut b7 = b.clone();
        b7[8..12].iter_mut().for_each(|v| *v *= 7.0);
        let s = cosine_matrix(&b, &a, 4).unwrap();
        let s7 = cosine_matrix(&b7, &a, 4).unwrap();
        for (x, y) in s.data.iter().zip(&s7.data) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_rows_are_named() {
        let err = cosine_matrix(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { side: "B", row: 1 }));
        let err = cosine_matrix(&[1.0, 0.0], &[0.0, 0.0], 2).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { side: "A", row: 0 }));
    }

    #[test]
    fn uniform_similarity_gives_log_n() {
        let s = SimilarityMatrix {
            n_b: 48,
            n_a: 48,
            data: vec![0.3; 48 * 48],
        };
        for dir in [Direction::BToA, Direction::AToB] {
            let l = infonce_one_sided(&s, 0.05, dir).unwrap();
            assert!((l - 48f64.ln()).abs() < 1e-12);
        }
        let ones = vec![1.0f64; 48 * 3];
        let l = infonce_symmetric(&ones, &ones, 3, 0.05).unwrap();
        assert!((l - 2.0 * 48f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_similarity_closed_form() {
        let s = SimilarityMatrix {
            n_b: 48,
            n_a: 48,
            data: eye(48),
        };
        let l = infonce_one_sided(&s, 0.05, Direction::BToA).unwrap();
        let expected = (47.0 * (-20f64).exp()).ln_1p();
        assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
        assert!(l <= 1e-6);
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let s = SimilarityMatrix {
            n_b: 1,
            n_a: 1,
            data: vec![0.2],
        };
        assert_eq!(infonce_one_sided(&s, 0.05, Direction::BToA).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_loss_is_swap_invariant_and_doubles_on_symmetric_s() {
        let b = gauss(48 * 6, 3);
        let a = gauss(48 * 6, 4);
        assert_eq!(
            infonce_symmetric(&b, &a, 6, 0.05).unwrap(),
            infonce_symmetric(&a, &b, 6, 0.05).unwrap()
        );
        let s = cosine_matrix(&b, &b, 6).unwrap();
        let one = infonce_one_sided(&s, 0.05, Direction::BToA).unwrap();
        let both = infonce_symmetric(&b, &b, 6, 0.05).unwrap();
        assert!((both - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        let s = SimilarityMatrix {
            n_b: 1,
            n_a: 1,
            data: vec![0.2],
        };
        assert!(infonce_one_sided(&s, 0.0, Direction::BToA).is_err());
        assert!(rank_candidates(&s, -1.0).is_err());
    }

    #[test]
    fn graph_loss_matches_direct_evaluation() {
        let b = gauss(7 * 5, 5);
        let a = gauss(7 * 5, 6);
        let mut g = Graph::<f64>::new(Mode::Eval);
        let bv = g.constant(Tensor::new(vec![7, 5], b.clone()).unwrap());
        let av = g.constant(Tensor::new(vec![7, 5], a.clone()).unwrap());
        let l = infonce_symmetric_graph(&mut g, bv, av, 0.05).unwrap();
        let direct = infonce_symmetric(&b, &a, 5, 0.05).unwrap();
        assert!((g.value(l).data()[0] - direct).abs() < 1e-10);
    }

    #[test]
    fn retrieval_examples() {
        let s = cosine_matrix(&eye(6), &eye(6), 6).unwrap();
        assert_eq!(
            diagonal_topk(&retrieve_topk(&s, 0.05, 1).unwrap(), 1),
            100.0
        );
        assert!(retrieve_topk(&s, 0.05, 7).is_err());
        let tied = SimilarityMatrix {
            n_b: 1,
            n_a: 4,
            data: vec![0.5, 0.9, 0.5, 0.9],
        };
        assert_eq!(rank_candidates(&tied, 1.0).unwrap()[0], vec![1, 3, 0, 2]);
    }

    #[test]
    fn random_embeddings_hit_top5_at_chance() {
        let mut rates = Vec::new();
        for seed in 0..6 {
            let mut hits = 0.0;
            let reps = 50;
            for r in 0..reps {
                let b = gauss(48 * 16, seed * 1000 + 2 * r);
                let a = gauss(48 * 16, seed * 1000 + 2 * r + 1);
                let s = cosine_matrix(&b, &a, 16).unwrap();
                hits += diagonal_topk(&retrieve_topk(&s, 0.05, 5).unwrap(), 5);
            }
            rates.push(hits / reps as f64);
        }
        let mean = rates.iter().sum::<f64>() / 6.0;
        assert!((mean - 500.0 / 48.0).abs() <= 2.0, "mean top-5 {mean}");
    }

    proptest! {
        #[test]
        fn loss_within_bounds(seed in 0u64..1000, n in 1usize..12) {
            let b = gauss(n * 4, seed);
            let a = gauss(n * 4, seed + 7);
            let s = cosine_matrix(&b, &a, 4).unwrap();
            prop_assert!(s.data.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
            let tau = 0.05;
            let l = infonce_one_sided(&s, tau, Direction::BToA).unwrap();
            prop_assert!(l >= -1e-12 && l <= 2.0 / tau + (n as f64).ln() + 1e-9);
        }

        #[test]
        fn ranking_ignores_temperature(seed in 0u64..1000) {
            let b = gauss(9 * 3, seed);
            let a = gauss(9 * 3, seed + 1);
            let s = cosine_matrix(&b, &a, 3).unwrap();
            prop_assert_eq!(rank_candidates(&s, 0.05).unwrap(), rank_candidates(&s, 1.0).unwrap());
        }
    }
}
