//! Independent naive-recursion reference for the isolation forest.
//!
//! The reference grows boxed trees carrying their values down the
//! recursion and re-derives every score from scratch; the production
//! implementation uses an index arena and a walk over stored splits. Both
//! consume the documented RNG contract (one uniform draw per internal
//! node, drawn before the children, left child first; partial
//! Fisher-Yates for subsampling), so their outputs must agree bit for
//! bit.

use benchleak_core::iforest::{fit, IForestParams};
use benchleak_core::rng::{derive_seed, SplitMix64};

enum RefNode {
    Leaf {
        size: usize,
    },
    Split {
        at: f64,
        left: Box<RefNode>,
        right: Box<RefNode>,
    },
}

fn ref_c(m: usize) -> f64 {
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

fn ref_grow(values: &[f64], depth: usize, cap: usize, rng: &mut SplitMix64) -> RefNode {
    if values.len() <= 1 || depth >= cap {
        return RefNode::Leaf { size: values.len() };
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        return RefNode::Leaf { size: values.len() };
    }
    let at = min + rng.next_unit_open() * (max - min);
    let left: Vec<f64> = values.iter().copied().filter(|&v| v < at).collect();
    let right: Vec<f64> = values.iter().copied().filter(|&v| v >= at).collect();
    RefNode::Split {
        at,
        left: Box::new(ref_grow(&left, depth + 1, cap, rng)),
        right: Box::new(ref_grow(&right, depth + 1, cap, rng)),
    }
}

fn ref_path(node: &RefNode, v: f64) -> f64 {
    match node {
        RefNode::Leaf { size } => ref_c(*size),
        RefNode::Split { at, left, right } => 1.0 + ref_path(if v < *at { left } else { right }, v),
    }
}

fn ref_subsample(values: &[f64], psi: usize, rng: &mut SplitMix64) -> Vec<f64> {
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

/// (expected path, anomaly, decision) per value, from first principles.
fn ref_scores(values: &[f64], params: &IForestParams) -> Vec<(f64, f64, f64)> {
    let n = values.len();
    let psi = params.subsample.unwrap_or_else(|| n.min(256)).min(n);
    let cap = libm::ceil(libm::log2(psi as f64)) as usize;
    let trees: Vec<RefNode> = (0..params.n_trees)
        .map(|t| {
            let mut rng = SplitMix64::new(derive_seed(params.seed, b"tree", t as u64));
            let sample = ref_subsample(values, psi, &mut rng);
            ref_grow(&sample, 0, cap, &mut rng)
        })
        .collect();
    values
        .iter()
        .map(|&v| {
            let total: f64 = trees.iter().map(|t| ref_path(t, v)).sum();
            let e = total / params.n_trees as f64;
            let s = libm::exp2(-e / ref_c(psi));
            (e, s, 0.5 - s)
        })
        .collect()
}

fn random_values(rng: &mut SplitMix64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            // Mix of clustered and stray values, duplicates included.
            match rng.next_below(4) {
                0 => -50.0 - rng.next_unit_open(),
                1 => -50.0 - 10.0 * rng.next_unit_open(),
                2 => -45.0,
                _ => -60.0 + 20.0 * rng.next_unit_open(),
            }
        })
        .collect()
}

#[test]
fn forest_matches_reference_on_all_small_datasets() {
    let mut gen = SplitMix64::new(0xDECADE);
    for seed in 0..100u64 {
        for len in 2..=8usize {
            let values = random_values(&mut gen, len);
            let params = IForestParams {
                n_trees: 25,
                subsample: None,
                seed,
            };
            let forest = fit(&values, &params).expect("fit");
            let got = forest.score(&values);
            let want = ref_scores(&values, &params);
            for (i, want_i) in want.iter().enumerate() {
                assert_eq!(
                    got.expected_path[i].to_bits(),
                    want_i.0.to_bits(),
                    "expected path differs: seed {seed} len {len} index {i}"
                );
                assert_eq!(got.anomaly[i].to_bits(), want_i.1.to_bits());
                assert_eq!(got.decision[i].to_bits(), want_i.2.to_bits());
            }
        }
    }
}

#[test]
fn forest_matches_reference_with_subsampling() {
    let mut gen = SplitMix64::new(7);
    let values = random_values(&mut gen, 40);
    for seed in [0u64, 1, 99] {
        let params = IForestParams {
            n_trees: 50,
            subsample: Some(16),
            seed,
        };
        let forest = fit(&values, &params).expect("fit");
        let got = forest.score(&values);
        let want = ref_scores(&values, &params);
        for (i, want_i) in want.iter().enumerate() {
            assert_eq!(got.decision[i].to_bits(), want_i.2.to_bits());
        }
    }
}

#[test]
fn forest_matches_reference_on_permutation_sized_input() {
    // The shape the detector actually uses: 24 log probabilities with one
    // isolated maximum.
    let mut values: Vec<f64> = (0..23).map(|i| -54.0 - 0.05 * f64::from(i)).collect();
    values.push(-45.9);
    for seed in 0..20u64 {
        let params = IForestParams {
            n_trees: 100,
            subsample: None,
            seed,
        };
        let forest = fit(&values, &params).expect("fit");
        let got = forest.score(&values);
        let want = ref_scores(&values, &params);
        for (i, want_i) in want.iter().enumerate() {
            assert_eq!(got.decision[i].to_bits(), want_i.2.to_bits());
        }
    }
}
