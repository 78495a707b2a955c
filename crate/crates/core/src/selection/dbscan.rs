//! DBSCAN reduced to a two-way partition.
//!
//! Radius is half the median pairwise distance, minimum neighborhood four
//! points (counting the point itself). The two largest density clusters
//! are kept; noise and any further clusters join whichever of the two has
//! the nearer centroid.

use std::collections::VecDeque;

use super::points::{sq_dist, Points};
use super::{ClusterAssignment, ClusterMethod, Deadline};
use crate::error::{Error, Result};

pub(crate) const MIN_POINTS: usize = 4;
pub(crate) const RADIUS_FRACTION: f64 = 0.5;

const NOISE: usize = usize::MAX;

pub(crate) fn two_clusters(points: &Points, seed: u64, deadline: Deadline) -> Result<ClusterAssignment> {
    let n = points.len();
    let mut pair = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pair.push(sq_dist(points.row(i), points.row(j)).sqrt());
        }
        if i % 256 == 0 {
            deadline.check()?;
        }
    }
    let eps = {
        let mut sorted = pair.clone();
        let mid = sorted.len() / 2;
        let (_, m, _) = sorted.select_nth_unstable_by(mid, f64::total_cmp);
        RADIUS_FRACTION * *m
    };
    let idx = |i: usize, j: usize| {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + (j - i - 1)
    };
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| j == i || pair[idx(i, j)] <= eps).collect()
    };

    let mut label = vec![None::<usize>; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if label[start].is_some() {
            continue;
        }
        let nb = neighbors(start);
        if nb.len() < MIN_POINTS {
            label[start] = Some(NOISE);
            continue;
        }
        let id = clusters.len();
        let mut members = vec![start];
        label[start] = Some(id);
        let mut queue: VecDeque<usize> = nb.into_iter().filter(|&j| j != start).collect();
        while let Some(j) = queue.pop_front() {
            match label[j] {
                Some(NOISE) => {
                    label[j] = Some(id);
                    members.push(j);
                }
                Some(_) => {}
                None => {
                    label[j] = Some(id);
                    members.push(j);
                    let nbj = neighbors(j);
                    if nbj.len() >= MIN_POINTS {
                        queue.extend(nbj.into_iter().filter(|&k| label[k].is_none() || label[k] == Some(NOISE)));
                    }
                }
            }
        }
        clusters.push(members);
        deadline.check()?;
    }

    // Largest two clusters, earlier discovery first on ties.
    let mut by_size: Vec<usize> = (0..clusters.len()).collect();
    by_size.sort_by(|&a, &b| clusters[b].len().cmp(&clusters[a].len()).then(a.cmp(&b)));
    let noise: Vec<usize> = (0..n).filter(|&i| label[i] == Some(NOISE)).collect();
    let (first, second): (Vec<usize>, Vec<usize>) = match by_size.len() {
        0 => {
            return Err(Error::ClusteringDegenerate(
                "dbscan found no dense cluster".into(),
            ))
        }
        1 if noise.is_empty() => {
            return Err(Error::ClusteringDegenerate(
                "dbscan found a single cluster and no noise".into(),
            ))
        }
        1 => (clusters[by_size[0]].clone(), noise),
        _ => (clusters[by_size[0]].clone(), clusters[by_size[1]].clone()),
    };

    let centroid = |members: &[usize]| {
        let mut c = vec![0.0; points.dim()];
        for &i in members {
            for (s, v) in c.iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        c.iter_mut().for_each(|s| *s /= members.len() as f64);
        c
    };
    let (c0, c1) = (centroid(&first), centroid(&second));
    let mut assignment = vec![u8::MAX; n];
    for &i in &first {
        assignment[i] = 0;
    }
    for &i in &second {
        assignment[i] = 1;
    }
    for (i, a) in assignment.iter_mut().enumerate() {
        if *a == u8::MAX {
            let row = points.row(i);
            *a = if sq_dist(row, &c1) < sq_dist(row, &c0) { 1 } else { 0 };
        }
    }
    Ok(ClusterAssignment {
        assignment,
        method: ClusterMethod::Dbscan,
        iterations: clusters.len(),
        converged: true,
        seed,
    })
}
