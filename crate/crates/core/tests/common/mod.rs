//! Oracles shared by the integration tests and the acceptance run.

#![allow(dead_code)]

use mpsams::selection::Points;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Within-cluster sum of squared distances of a 2-partition.
pub fn wss(rows: &[Vec<f64>], side: &[bool]) -> f64 {
    let d = rows[0].len();
    let mut total = 0.0;
    for g in [false, true] {
        let members: Vec<&Vec<f64>> = rows.iter().zip(side).filter(|(_, &s)| s == g).map(|(r, _)| r).collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let centroid: Vec<f64> = (0..d).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / k).collect();
        total += members
            .iter()
            .map(|r| r.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>();
    }
    total
}

/// Every 2-partition with both sides non-empty, by brute force; returns
/// the minimizing partition with row 0 on the `false` side.
pub fn exhaustive_two_means(rows: &[Vec<f64>]) -> (Vec<bool>, f64) {
    let n = rows.len();
    assert!((2..=20).contains(&n));
    let mut best = (Vec::new(), f64::INFINITY);
    // row 0 fixed on side `false`; the other n-1 bits enumerate.
    for bits in 1u32..(1 << (n - 1)) {
        let side: Vec<bool> = (0..n).map(|i| i > 0 && bits & (1 << (i - 1)) != 0).collect();
        let w = wss(rows, &side);
        if w < best.1 {
            best = (side, w);
        }
    }
    best
}

/// Same partition up to swapping the two labels.
pub fn same_partition(a: &[bool], b: &[bool]) -> bool {
    a == b || a.iter().zip(b).all(|(x, y)| x != y)
}

/// Two blobs of radius `radius` whose centers lie `gap` apart; sizes at
/// least one each. Returns rows and ground-truth sides.
pub fn separated_fixture(n: usize, dim: usize, radius: f64, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(1..n);
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    dir.iter_mut().for_each(|v| *v *= gap / len);
    let mut rows = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let side = i >= first;
        // uniform in the ball by rejection
        let offset = loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                break v;
            }
        };
        rows.push(
            (0..dim)
                .map(|j| offset[j] * radius + if side { dir[j] } else { 0.0 })
                .collect(),
        );
        truth.push(side);
    }
    (rows, truth)
}

pub fn points(rows: &[Vec<f64>]) -> Points {
    Points::from_rows(rows).unwrap()
}

/// Pixels of `mask` falling in each patch of a `size x size` image.
pub fn overlapping_patches(mask: &[bool], size: usize, patch: usize) -> Vec<bool> {
    let per_row = size / patch;
    let mut hit = vec![false; per_row * per_row];
    for y in 0..size {
        for x in 0..size {
            if mask[y * size + x] {
                hit[(y / patch) * per_row + x / patch] = true;
            }
        }
    }
    hit
}
