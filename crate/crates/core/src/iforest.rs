//! Seeded isolation forest over one-dimensional values.
//!
//! Grown from scratch so the random stream is pinned: given (values,
//! params) the forest, and therefore every outlier score, is identical on
//! every platform and release. Splits are drawn as `min + u * (max - min)`
//! with u in the open unit interval, so the scores are invariant under
//! translation and positive scaling of the inputs.
//!
//! Scores follow the classic convention: anomaly score
//! `s = 2^(-E[h] / c(psi))` in (0, 1), decision score `d = 0.5 - s` in
//! (-0.5, 0.5). Lower d means more anomalous, so thresholds are applied
//! as `d < delta`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IForestError {
    #[error("need at least 2 values to fit a forest (got {got})")]
    TooFewValues { got: usize },
    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("invalid forest parameters: {reason}")]
    InvalidParams { reason: &'static str },
}

/// Forest hyperparameters. The subsample defaults to
/// `min(values.len(), 256)` and the depth cap to `ceil(log2(subsample))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IForestParams {
    pub n_trees: usize,
    /// Per-tree subsample size; `None` means `min(n, 256)`.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for IForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: None,
            seed: 0,
        }
    }
}

const DEFAULT_SUBSAMPLE_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Internal { split: f64, left: u32, right: u32 },
    External { size: u32 },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

/// A fitted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<Tree>,
    psi: usize,
}

/// Per-value outputs of [`IsolationForest::score`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierScores {
    /// `E[h]`: path length averaged over trees.
    pub expected_path: Vec<f64>,
    /// `s = 2^(-E[h]/c(psi))`, in (0, 1).
    pub anomaly: Vec<f64>,
    /// d = 0.5 - s; lower is more anomalous.
    pub decision: Vec<f64>,
}

/// Average unsuccessful-search path length of a binary search tree of
/// size m; normalizes path lengths. c(1) = 0, c(2) = 1.
pub fn average_path_length(m: usize) -> f64 {
    const EULER_GAMMA: f64 = 0.5772156649;
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = m as f64;
            2.0 * (libm::log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
        }
    }
}

/// Fit `params.n_trees` trees, each on a seeded subsample drawn without
/// replacement. Tree t uses its own derived seed, so fitting could run
/// tree-parallel without changing the result.
pub fn fit(values: &[f64], params: &IForestParams) -> Result<IsolationForest, IForestError> {
    if values.len() < 2 {
        return Err(IForestError::TooFewValues { got: values.len() });
    }
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(IForestError::NonFiniteInput { index });
        }
    }
    if params.n_trees == 0 {
        return Err(IForestError::InvalidParams {
            reason: "n_trees must be >= 1",
        });
    }
    let n = values.len();
    let psi = params
        .subsample
        .unwrap_or_else(|| n.min(DEFAULT_SUBSAMPLE_CAP))
        .min(n);
    if psi < 2 {
        return Err(IForestError::InvalidParams {
            reason: "subsample must be >= 2",
        });
    }
    let depth_cap = libm::ceil(libm::log2(psi as f64)) as usize;

    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = SplitMix64::new(derive_seed(params.seed, b"tree", t as u64));
            let sample = draw_subsample(values, psi, &mut rng);
            let mut nodes = Vec::new();
            grow(&mut nodes, sample, 0, depth_cap, &mut rng);
            Tree { nodes }
        })
        .collect();

    Ok(IsolationForest { trees, psi })
}

/// First `psi` entries of a partial Fisher-Yates shuffle. When the
/// subsample is the whole set no draws are consumed.
fn draw_subsample(values: &[f64], psi: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = values.len();
    if psi == n {
        return values.to_vec();
    }
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..psi {
        let j = i + rng.next_below((n - i) as u64) as usize;
        indices.swap(i, j);
    }
    indices[..psi].iter().map(|&i| values[i]).collect()
}

/// Recursive growth; returns the index of the node it created.
///
/// Contract relied on by the reference oracle in the tests: exactly one
/// uniform draw per internal node, taken before either child is grown,
/// left child grown before right.
fn grow(
    nodes: &mut Vec<Node>,
    values: Vec<f64>,
    depth: usize,
    depth_cap: usize,
    rng: &mut SplitMix64,
) -> u32 {
    let size = values.len() as u32;
    if values.len() <= 1 || depth >= depth_cap {
        nodes.push(Node::External { size });
        return nodes.len() as u32 - 1;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        // Zero-width range: nothing left to split on.
        nodes.push(Node::External { size });
        return nodes.len() as u32 - 1;
    }
    let u = rng.next_unit_open();
    let split = min + u * (max - min);
    let (left_values, right_values): (Vec<f64>, Vec<f64>) =
        values.into_iter().partition(|&v| v < split);
    let this = nodes.len();
    nodes.push(Node::External { size }); // placeholder, patched below
    let left = grow(nodes, left_values, depth + 1, depth_cap, rng);
    let right = grow(nodes, right_values, depth + 1, depth_cap, rng);
    nodes[this] = Node::Internal { split, left, right };
    this as u32
}

impl IsolationForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Subsample size the trees were grown on.
    pub fn psi(&self) -> usize {
        self.psi
    }

    fn path_length(tree: &Tree, value: f64) -> f64 {
        let mut node = 0usize;
        let mut depth = 0.0;
        loop {
            match &tree.nodes[node] {
                Node::Internal { split, left, right } => {
                    node = if value < *split {
                        *left as usize
                    } else {
                        *right as usize
                    };
                    depth += 1.0;
                }
                Node::External { size } => {
                    return depth + average_path_length(*size as usize);
                }
            }
        }
    }

    /// Score values (not necessarily the ones the forest was fitted on).
    pub fn score(&self, values: &[f64]) -> OutlierScores {
        let norm = average_path_length(self.psi);
        let mut expected_path = Vec::with_capacity(values.len());
        let mut anomaly = Vec::with_capacity(values.len());
        let mut decision = Vec::with_capacity(values.len());
        for &v in values {
            let total: f64 = self.trees.iter().map(|t| Self::path_length(t, v)).sum();
            let e = total / self.trees.len() as f64;
            let s = libm::exp2(-e / norm);
            expected_path.push(e);
            anomaly.push(s);
            decision.push(0.5 - s);
        }
        OutlierScores {
            expected_path,
            anomaly,
            decision,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn params(seed: u64) -> IForestParams {
        IForestParams {
            n_trees: 100,
            subsample: None,
            seed,
        }
    }

    #[test]
    fn c_values_match_closed_forms() {
        assert_eq!(average_path_length(0), 0.0);
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // c(3) = 2(ln 2 + gamma) - 4/3
        let expected = 2.0 * (core::f64::consts::LN_2 + 0.5772156649) - 4.0 / 3.0;
        assert!((average_path_length(3) - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_values_collapse_to_single_external_nodes() {
        let values = vec![-10.0; 24];
        let forest = fit(&values, &params(1)).unwrap();
        for tree in &forest.trees {
            assert_eq!(tree.nodes.len(), 1);
            assert_eq!(tree.nodes[0], Node::External { size: 24 });
        }
        // Every value sits at depth 0 with c(24) tail, so E[h] = c(psi)
        // and d = 0 up to the float error of averaging 100 path lengths.
        let scores = forest.score(&values);
        for (s, d) in scores.anomaly.iter().zip(&scores.decision) {
            assert!((s - 0.5).abs() < 1e-12);
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_expected_path_gives_exact_midpoint_score() {
        // E[h] = c(psi) => s = 2^-1 = 0.5, d = 0: the definition of the
        // normalizer.
        let e = average_path_length(24);
        let s = libm::exp2(-e / average_path_length(24));
        assert_eq!(s, 0.5);
        assert_eq!(0.5 - s, 0.0);
    }

    #[test]
    fn same_seed_reproduces_identical_scores() {
        let values: Vec<f64> = (0..40).map(|i| -50.0 - (i as f64) * 0.37).collect();
        let a = fit(&values, &params(42)).unwrap();
        let b = fit(&values, &params(42)).unwrap();
        assert_eq!(a, b);
        let sa = a.score(&values);
        let sb = b.score(&values);
        assert_eq!(sa, sb);
        // Different seed grows different trees.
        let c = fit(&values, &params(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn isolated_extreme_point_scores_deterministically() {
        // 23 identical cluster values and one far maximum: every split
        // lands strictly between them, so every tree isolates the maximum
        // at depth exactly 1 and sends the cluster to a zero-width
        // external node. The scores then have closed forms, whatever the
        // seed.
        let mut values = vec![-10.0; 23];
        values.push(-5.0);
        for seed in [0u64, 42, 7, 123456] {
            let forest = fit(&values, &params(seed)).unwrap();
            let scores = forest.score(&values);
            let c24 = average_path_length(24);
            let d_max = 0.5 - libm::exp2(-1.0 / c24);
            let d_cluster = 0.5 - libm::exp2(-(1.0 + average_path_length(23)) / c24);
            assert!((scores.decision[23] - d_max).abs() < 1e-12);
            for d in &scores.decision[..23] {
                assert!((d - d_cluster).abs() < 1e-12);
            }
            assert!(scores.decision[23] < scores.decision[0]);
            assert!(d_max < -0.2, "far outlier must sit below usual thresholds");
        }
    }

    #[test]
    fn equal_inputs_get_equal_scores() {
        let values = vec![-3.0, -1.0, -3.0, -2.0, -1.0, -9.0];
        let forest = fit(&values, &params(5)).unwrap();
        let scores = forest.score(&values);
        assert_eq!(scores.decision[0], scores.decision[2]);
        assert_eq!(scores.decision[1], scores.decision[4]);
    }

    #[test]
    fn scaling_by_powers_of_two_is_exact() {
        // Doubling every value doubles min, max and split exactly in
        // binary floating point, so the trees have identical shapes and
        // the scores identical bits.
        let values: Vec<f64> = (0..24).map(|i| -54.0 - (i as f64) * 0.31).collect();
        let doubled: Vec<f64> = values.iter().map(|v| v * 2.0).collect();
        let a = fit(&values, &params(11)).unwrap().score(&values);
        let b = fit(&doubled, &params(11)).unwrap().score(&doubled);
        assert_eq!(a, b);
    }

    #[test]
    fn translation_by_dyadic_constant_is_exact() {
        // Dyadic values and a dyadic offset keep every addition exact.
        let values: Vec<f64> = (0..24).map(|i| -64.0 + (i as f64) * 0.25).collect();
        let shifted: Vec<f64> = values.iter().map(|v| v + 4096.0).collect();
        let a = fit(&values, &params(13)).unwrap().score(&values);
        let b = fit(&shifted, &params(13)).unwrap().score(&shifted);
        assert_eq!(a, b);
    }

    #[test]
    fn moving_the_maximum_away_never_raises_its_decision_score() {
        let cluster: Vec<f64> = (0..20).map(|i| -10.0 - (i as f64) * 0.01).collect();
        for seed in [1u64, 2, 3, 4, 5, 6, 7, 8, 9, 10] {
            let mut previous = f64::INFINITY;
            for max in [-8.0, -6.0, -4.0, -2.0] {
                let mut values = cluster.clone();
                values.push(max);
                let forest = fit(&values, &params(seed)).unwrap();
                let d = forest.score(&values).decision[20];
                assert!(
                    d <= previous + 1e-12,
                    "seed {seed}: d rose from {previous} to {d} at max {max}"
                );
                previous = d;
            }
        }
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            fit(&[1.0], &params(0)),
            Err(IForestError::TooFewValues { got: 1 })
        ));
        assert!(matches!(
            fit(&[1.0, f64::NAN], &params(0)),
            Err(IForestError::NonFiniteInput { index: 1 })
        ));
        assert!(matches!(
            fit(
                &[1.0, 2.0],
                &IForestParams {
                    n_trees: 0,
                    ..params(0)
                }
            ),
            Err(IForestError::InvalidParams { .. })
        ));
        assert!(matches!(
            fit(
                &[1.0, 2.0],
                &IForestParams {
                    subsample: Some(1),
                    ..params(0)
                }
            ),
            Err(IForestError::InvalidParams { .. })
        ));
    }

    #[test]
    fn subsampled_fit_is_deterministic() {
        let values: Vec<f64> = (0..500).map(|i| -(i as f64) * 0.1).collect();
        let p = IForestParams {
            n_trees: 20,
            subsample: None, // caps at 256
            seed: 3,
        };
        let a = fit(&values, &p).unwrap();
        let b = fit(&values, &p).unwrap();
        assert_eq!(a.psi(), 256);
        assert_eq!(a.score(&values), b.score(&values));
    }
}
