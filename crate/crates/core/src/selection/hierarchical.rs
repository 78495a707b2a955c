//! Agglomerative clustering with Ward linkage via the nearest-neighbor
//! chain algorithm: O(n^2) time over a condensed distance matrix.

use super::points::{sq_dist, Points};
use super::{ClusterAssignment, ClusterMethod, Deadline};
use crate::error::Result;

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub(crate) fn ward_two_clusters(points: &Points, seed: u64, deadline: Deadline) -> Result<ClusterAssignment> {
    let n = points.len();
    let mut dist = Condensed {
        n,
        d: Vec::with_capacity(n * (n - 1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            dist.d.push(sq_dist(points.row(i), points.row(j)));
        }
        if i % 256 == 0 {
            deadline.check()?;
        }
    }

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);
    let mut cursor = 0;

    while merges.len() < n - 1 {
        if chain.is_empty() {
            while !active[cursor] {
                cursor += 1;
            }
            chain.push(cursor);
        }
        let (a, b) = loop {
            let a = *chain.last().expect("non-empty chain");
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| dist.get(a, p));
            for k in 0..n {
                if k != a && active[k] {
                    let dk = dist.get(a, k);
                    if dk < best_d {
                        best_d = dk;
                        best = Some(k);
                    }
                }
            }
            let b = best.expect("at least two active clusters");
            if Some(b) == prev {
                break (a, b);
            }
            chain.push(b);
        };
        chain.pop();
        chain.pop();

        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        let d_ab = dist.get(a, b);
        let (ns, nt) = (size[keep] as f64, size[drop] as f64);
        for k in 0..n {
            if active[k] && k != keep && k != drop {
                let nk = size[k] as f64;
                let v = ((ns + nk) * dist.get(k, keep) + (nt + nk) * dist.get(k, drop) - nk * d_ab)
                    / (ns + nt + nk);
                dist.set(k, keep, v);
            }
        }
        active[drop] = false;
        size[keep] += size[drop];
        // slot `keep` always still contains original point `keep`
        merges.push((d_ab, keep, drop));
        deadline.check()?;
    }

    // Cut the dendrogram at two clusters: apply every merge but the highest.
    merges.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut parent: Vec<usize> = (0..n).collect();
    for &(_, a, b) in &merges[..n - 2] {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[rb] = ra;
        }
    }
    let root0 = find(&mut parent, 0);
    let assignment = (0..n)
        .map(|i| if find(&mut parent, i) == root0 { 0 } else { 1 })
        .collect();
    Ok(ClusterAssignment {
        assignment,
        method: ClusterMethod::Hierarchical,
        iterations: n - 1,
        converged: true,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_groups() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
        ];
        let a = ward_two_clusters(&Points::from_rows(&rows).unwrap(), 0, Deadline::none()).unwrap();
        assert_eq!(a.assignment, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn two_points() {
        let p = Points::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let a = ward_two_clusters(&p, 0, Deadline::none()).unwrap();
        assert_eq!(a.assignment, vec![0, 1]);
    }
}
