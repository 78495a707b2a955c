//! Two-means (Lloyd) with a data-anchored initialization.
//!
//! Initial centers: the row farthest from the overall mean (lesion
//! candidate, cluster 0) and the row nearest to it (background candidate,
//! cluster 1). Mean squared distance from a row to all rows equals its
//! squared distance to the mean plus a constant, so this is the
//! max/min-mean-distance rule computed in linear time. The choice depends
//! only on row contents, so permuting the rows permutes the result.

use rand::seq::index::sample;

use super::points::{sq_dist, Points};
use super::{ClusterAssignment, ClusterMethod};
use crate::error::{Error, Result};
use crate::rng;

pub(crate) const MAX_ITERATIONS: usize = 100;
const RETRIES: usize = 3;

fn anchored_init(points: &Points) -> Option<(usize, usize)> {
    let n = points.len();
    let d = points.dim();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(points.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &mean)).collect();

    let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
    let near = (0..n)
        .filter(|&i| points.row(i) != points.row(far))
        .fold(None, |b: Option<usize>, i| match b {
            Some(b) if dist[b] <= dist[i] => Some(b),
            _ => Some(i),
        })?;
    Some((far, near))
}

/// Lloyd iterations from the given centers. `None` if a cluster empties.
fn lloyd(points: &Points, mut centers: [Vec<f64>; 2]) -> Option<(Vec<u8>, usize, bool)> {
    let n = points.len();
    let d = points.dim();
    let mut assignment = vec![u8::MAX; n];
    for it in 1..=MAX_ITERATIONS {
        let mut changed = false;
        for (i, a) in assignment.iter_mut().enumerate() {
            let row = points.row(i);
            let c = if sq_dist(row, &centers[1]) < sq_dist(row, &centers[0]) {
                1
            } else {
                0
            };
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut sums = [vec![0.0; d], vec![0.0; d]];
        let mut counts = [0usize; 2];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a as usize] += 1;
            for (s, v) in sums[a as usize].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        if counts[0] == 0 || counts[1] == 0 {
            return None;
        }
        for k in 0..2 {
            for (c, s) in centers[k].iter_mut().zip(&sums[k]) {
                *c = s / counts[k] as f64;
            }
        }
        if !changed {
            return Some((assignment, it, true));
        }
    }
    Some((assignment, MAX_ITERATIONS, false))
}

pub(crate) fn two_means(points: &Points, seed: u64) -> Result<ClusterAssignment> {
    let n = points.len();
    let finish = |(assignment, iterations, converged): (Vec<u8>, usize, bool)| ClusterAssignment {
        assignment,
        method: ClusterMethod::KMeans,
        iterations,
        converged,
        seed,
    };
    if let Some((a, b)) = anchored_init(points) {
        if let Some(r) = lloyd(points, [points.row(a).to_vec(), points.row(b).to_vec()]) {
            return Ok(finish(r));
        }
    }
    let mut rng = rng::rng_for(seed, "kmeans-retry");
    for _ in 0..RETRIES {
        let pick = sample(&mut rng, n, 2);
        let (a, b) = (pick.index(0), pick.index(1));
        if points.row(a) == points.row(b) {
            continue;
        }
        if let Some(r) = lloyd(points, [points.row(a).to_vec(), points.row(b).to_vec()]) {
            return Ok(finish(r));
        }
    }
    Err(Error::ClusteringDegenerate(format!(
        "k-means could not form two non-empty clusters over {n} rows"
    )))
}
