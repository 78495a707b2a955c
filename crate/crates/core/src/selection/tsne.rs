//! Exact (O(n^2) per iteration) t-SNE to two dimensions.

use rand_distr::{Distribution, Normal};

use super::points::{sq_dist, Points};
use super::Deadline;
use crate::error::Result;
use crate::rng;

#[derive(Clone, Copy, Debug)]
pub(crate) struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 10.0,
            iterations: 500,
            learning_rate: None,
            exaggeration: 12.0,
            exaggeration_iters: 100,
        }
    }
}

/// Conditional affinities for row `i` at the precision matching `log_perp`.
fn conditional_row(d: &[f64], i: usize, log_perp: f64, out: &mut [f64]) {
    let n = d.len();
    let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..64 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            let p = if j == i { 0.0 } else { (-beta * d[j]).exp() };
            out[j] = p;
            sum += p;
            weighted += p * d[j];
        }
        if sum <= f64::MIN_POSITIVE {
            // beta far too large: every neighbor underflowed
            hi = beta;
            beta = (lo + hi) / 2.0;
            continue;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        let diff = entropy - log_perp;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (lo + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (lo + hi) / 2.0;
        }
    }
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        out.iter_mut().for_each(|p| *p /= sum);
    }
}

pub(crate) fn embed(points: &Points, params: &TsneParams, seed: u64, deadline: Deadline) -> Result<Points> {
    let n = points.len();
    let perplexity = params.perplexity.min((n as f64 - 1.0) / 3.0).max(1.0);
    let log_perp = perplexity.ln();

    let mut p = vec![0.0f32; n * n];
    let mut d_row = vec![0.0; n];
    let mut cond = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            d_row[j] = sq_dist(points.row(i), points.row(j));
        }
        conditional_row(&d_row, i, log_perp, &mut cond);
        for j in 0..n {
            p[i * n + j] = cond[j] as f32;
        }
        if i % 64 == 0 {
            deadline.check()?;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = ((p[i * n + j] + p[j * n + i]) as f64 / (2.0 * n as f64)).max(1e-12) as f32;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
        p[i * n + i] = 0.0;
    }

    let mut rng = rng::rng_for(seed, "tsne-init");
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let learning_rate = params
        .learning_rate
        .unwrap_or_else(|| (n as f64 / params.exaggeration / 4.0).max(50.0));
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];

    for it in 0..params.iterations {
        deadline.check()?;
        let exaggeration = if it < params.exaggeration_iters {
            params.exaggeration
        } else {
            1.0
        };
        let momentum = if it < 250 { 0.5 } else { 0.8 };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                z += 2.0 / (1.0 + dx * dx + dy * dy);
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let num = 1.0 / (1.0 + dx * dx + dy * dy);
                let coeff = 4.0 * (exaggeration * p[i * n + j] as f64 - num / z) * num;
                grad[2 * i] += coeff * dx;
                grad[2 * i + 1] += coeff * dy;
                grad[2 * j] -= coeff * dx;
                grad[2 * j + 1] -= coeff * dy;
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        // recenter
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + axis] -= mean);
        }
    }
    Points::new(2, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_groups_stay_separated() {
        let mut rows = Vec::new();
        for i in 0..12 {
            rows.push(vec![0.01 * i as f64, 0.0, 0.0]);
        }
        for i in 0..6 {
            rows.push(vec![10.0, 10.0 + 0.01 * i as f64, 0.0]);
        }
        let pts = Points::from_rows(&rows).unwrap();
        let e = embed(&pts, &TsneParams::default(), 3, Deadline::none()).unwrap();
        let centroid = |r: std::ops::Range<usize>| {
            let k = r.len() as f64;
            r.fold([0.0, 0.0], |acc, i| [acc[0] + e.row(i)[0] / k, acc[1] + e.row(i)[1] / k])
        };
        let (a, b) = (centroid(0..12), centroid(12..18));
        let between = sq_dist(&a, &b).sqrt();
        let spread = (0..12).map(|i| sq_dist(e.row(i), &a).sqrt()).fold(0.0, f64::max);
        assert!(between > spread, "between {between}, spread {spread}");
    }
}
