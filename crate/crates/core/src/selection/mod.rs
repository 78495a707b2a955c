//! Masked-patch selection.
//!
//! Pipeline: patch covariance → row-wise softmax similarity → two-way
//! clustering of the similarity rows → the smaller cluster is labeled
//! lesion → lesion-first ordering of the patches.

mod bench;
mod dbscan;
mod hierarchical;
mod kmeans;
mod points;
mod tsne;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::{
    patchify, ImageTensor, MaskPlan, PatchGrid, PatchLabel, PatchOrdering, PatchSet,
};

pub use bench::{bench_points, cluster_bench, BenchCell, BenchConfig, BenchReport, BenchStatus};
pub use points::Points;

/// Row-stochastic similarity between patches: `softmax_row(cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    grid: PatchGrid,
    n: usize,
    values: Vec<f64>,
    patch_variance: Vec<f64>,
    degenerate: bool,
}

/// Below this, every patch is treated as having zero variance.
const DEGENERATE_VARIANCE: f64 = 1e-12;

impl SimilarityMatrix {
    /// Build from explicit values; every row must be a strictly positive
    /// distribution.
    pub fn from_values(grid: PatchGrid, values: Vec<f64>, patch_variance: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if values.len() != n * n || patch_variance.len() != n {
            return Err(Error::invalid(format!(
                "similarity for {n} patches needs {} values and {n} variances",
                n * n
            )));
        }
        for (i, row) in values.chunks(n).enumerate() {
            if row.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(Error::invalid(format!("similarity row {i} has an entry outside (0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("similarity row {i} sums to {s}")));
            }
        }
        let degenerate = patch_variance.iter().all(|v| v.abs() <= DEGENERATE_VARIANCE);
        Ok(Self {
            grid,
            n,
            values,
            patch_variance,
            degenerate,
        })
    }

    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Diagonal of the covariance matrix, i.e. each patch's pixel variance.
    pub fn patch_variance(&self) -> &[f64] {
        &self.patch_variance
    }

    /// Set when every patch had zero variance; rows are then uniform.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// The similarity rows as clustering features.
    pub fn as_points(&self) -> Points {
        Points::new(self.n, self.values.clone()).expect("square matrix rows")
    }
}

/// Covariance between patch vectors (each centered on its own mean,
/// normalized by `len - 1`), followed by a row-wise softmax.
pub fn patch_similarity(patches: &PatchSet) -> Result<SimilarityMatrix> {
    let n = patches.len();
    if n < 2 {
        return Err(Error::invalid(format!("similarity needs at least 2 patches, got {n}")));
    }
    let m = patches.grid().patch_len();
    let centered: Vec<Vec<f64>> = patches
        .patches()
        .iter()
        .map(|p| {
            let mean = p.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
            p.iter().map(|&v| v as f64 - mean).collect()
        })
        .collect();
    let denom = (m.max(2) - 1) as f64;

    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let c = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / denom;
            cov[i * n + j] = c;
            cov[j * n + i] = c;
        }
    }
    let variance: Vec<f64> = (0..n).map(|i| cov[i * n + i]).collect();

    let mut values = cov;
    for row in values.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    let degenerate = variance.iter().all(|v| v.abs() <= DEGENERATE_VARIANCE);
    if degenerate {
        values.iter_mut().for_each(|v| *v = 1.0 / n as f64);
    }
    Ok(SimilarityMatrix {
        grid: patches.grid(),
        n,
        values,
        patch_variance: variance,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    #[default]
    #[serde(rename = "kmeans", alias = "k-means")]
    KMeans,
    Hierarchical,
    #[serde(alias = "tsne-kmeans")]
    TsneKmeans,
    Dbscan,
}

impl ClusterMethod {
    pub const ALL: [ClusterMethod; 4] = [
        ClusterMethod::KMeans,
        ClusterMethod::Hierarchical,
        ClusterMethod::TsneKmeans,
        ClusterMethod::Dbscan,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClusterMethod::KMeans => "kmeans",
            ClusterMethod::Hierarchical => "hierarchical",
            ClusterMethod::TsneKmeans => "tsne_kmeans",
            ClusterMethod::Dbscan => "dbscan",
        }
    }
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "k-means" => Ok(ClusterMethod::KMeans),
            "hierarchical" => Ok(ClusterMethod::Hierarchical),
            "tsne_kmeans" | "tsne-kmeans" | "tsne" => Ok(ClusterMethod::TsneKmeans),
            "dbscan" => Ok(ClusterMethod::Dbscan),
            other => Err(Error::invalid(format!("unknown clustering method `{other}`"))),
        }
    }
}

/// A two-way partition of the rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub assignment: Vec<u8>,
    pub method: ClusterMethod,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> [usize; 2] {
        let ones = self.assignment.iter().filter(|&&a| a == 1).count();
        [self.assignment.len() - ones, ones]
    }

    pub(crate) fn checked(self) -> Result<Self> {
        let [a, b] = self.sizes();
        if a == 0 || b == 0 {
            return Err(Error::ClusteringDegenerate(format!(
                "{} produced a single cluster of {} rows",
                self.method,
                a + b
            )));
        }
        Ok(self)
    }
}

/// Cooperative wall-clock budget for the slower clustering methods.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Deadline(Option<Instant>);

impl Deadline {
    pub(crate) fn none() -> Self {
        Deadline(None)
    }

    pub(crate) fn after(budget: Option<Duration>) -> Self {
        Deadline(budget.map(|b| Instant::now() + b))
    }

    pub(crate) fn check(&self) -> Result<()> {
        match self.0 {
            Some(t) if Instant::now() > t => Err(Error::TimedOut("clustering budget exhausted".into())),
            _ => Ok(()),
        }
    }
}

/// Partition arbitrary feature rows into two non-empty clusters.
pub fn cluster_rows(points: &Points, method: ClusterMethod, seed: u64) -> Result<ClusterAssignment> {
    cluster_rows_within(points, method, seed, Deadline::none())
}

pub(crate) fn cluster_rows_within(
    points: &Points,
    method: ClusterMethod,
    seed: u64,
    deadline: Deadline,
) -> Result<ClusterAssignment> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "clustering needs at least 2 rows, got {}",
            points.len()
        )));
    }
    let result = match method {
        ClusterMethod::KMeans => kmeans::two_means(points, seed),
        ClusterMethod::Hierarchical => hierarchical::ward_two_clusters(points, seed, deadline),
        ClusterMethod::TsneKmeans => {
            let embedded = tsne::embed(points, &tsne::TsneParams::default(), seed, deadline)?;
            kmeans::two_means(&embedded, seed).map(|mut a| {
                a.method = ClusterMethod::TsneKmeans;
                a
            })
        }
        ClusterMethod::Dbscan => dbscan::two_clusters(points, seed, deadline),
    }?;
    result.checked()
}

/// Cluster the similarity rows of the patches.
pub fn cluster_patches(sim: &SimilarityMatrix, method: ClusterMethod, seed: u64) -> Result<ClusterAssignment> {
    if sim.is_degenerate() {
        return Err(Error::ClusteringDegenerate(
            "all patches have zero variance; similarity rows are uniform".into(),
        ));
    }
    cluster_rows(&sim.as_points(), method, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LesionLabeling {
    pub lesion_cluster: u8,
    pub labels: Vec<PatchLabel>,
    pub lesion_count: usize,
}

/// The smaller cluster is the lesion. On equal sizes the cluster whose
/// patches have the higher mean variance wins, then cluster 0.
pub fn label_lesion_cluster(assign: &ClusterAssignment, patch_variance: &[f64]) -> Result<LesionLabeling> {
    if patch_variance.len() != assign.assignment.len() {
        return Err(Error::invalid(format!(
            "{} variances for {} assigned rows",
            patch_variance.len(),
            assign.assignment.len()
        )));
    }
    let sizes = assign.sizes();
    if sizes[0] == 0 || sizes[1] == 0 {
        return Err(Error::invalid("lesion labeling needs two non-empty clusters"));
    }
    let lesion_cluster = if sizes[0] != sizes[1] {
        if sizes[0] < sizes[1] {
            0
        } else {
            1
        }
    } else {
        let mean_var = |c: u8| {
            let (s, k) = assign
                .assignment
                .iter()
                .zip(patch_variance)
                .filter(|(a, _)| **a == c)
                .fold((0.0, 0usize), |(s, k), (_, v)| (s + v, k + 1));
            s / k as f64
        };
        if mean_var(1) > mean_var(0) {
            1
        } else {
            0
        }
    };
    let labels: Vec<PatchLabel> = assign
        .assignment
        .iter()
        .map(|&a| {
            if a == lesion_cluster {
                PatchLabel::Lesion
            } else {
                PatchLabel::Background
            }
        })
        .collect();
    Ok(LesionLabeling {
        lesion_cluster,
        lesion_count: sizes[lesion_cluster as usize],
        labels,
    })
}

/// Lesion patches first, then background; inside each group by descending
/// score, ties by ascending patch index.
pub fn order_by_scores(grid: PatchGrid, labels: &[PatchLabel], scores: &[f64]) -> Result<PatchOrdering> {
    if labels.len() != grid.len() || scores.len() != grid.len() {
        return Err(Error::invalid(format!(
            "ordering needs {} labels and scores, got {} and {}",
            grid.len(),
            labels.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    let group = |i: usize| match labels[i] {
        PatchLabel::Lesion => 0,
        PatchLabel::Background => 1,
    };
    order.sort_by(|&a, &b| {
        group(a)
            .cmp(&group(b))
            .then(scores[b].total_cmp(&scores[a]))
            .then(a.cmp(&b))
    });
    PatchOrdering::new(grid, order, labels.to_vec())
}

/// Score each patch by its mean similarity to the lesion patches and order
/// lesion-first.
pub fn order_patches(labeling: &LesionLabeling, sim: &SimilarityMatrix) -> Result<PatchOrdering> {
    let n = sim.len();
    if labeling.labels.len() != n {
        return Err(Error::invalid(format!(
            "labeling covers {} patches, similarity {n}",
            labeling.labels.len()
        )));
    }
    let lesion: Vec<usize> = (0..n)
        .filter(|&j| labeling.labels[j] == PatchLabel::Lesion)
        .collect();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            if lesion.is_empty() {
                0.0
            } else {
                lesion.iter().map(|&j| sim.get(i, j)).sum::<f64>() / lesion.len() as f64
            }
        })
        .collect();
    order_by_scores(sim.grid(), &labeling.labels, &scores)
}

/// Mask the first `n` patches of the ordering.
pub fn make_mask_plan(ordering: PatchOrdering, n: usize, seed: u64) -> Result<MaskPlan> {
    MaskPlan::new(ordering, n, seed)
}

/// Full selection on one image: similarity, clustering, labeling, ordering.
pub fn select_patches(
    image: &ImageTensor,
    patch_size: usize,
    method: ClusterMethod,
    seed: u64,
) -> Result<PatchOrdering> {
    let patches = patchify(image, patch_size)?;
    let sim = patch_similarity(&patches)?;
    let assign = cluster_patches(&sim, method, seed)?;
    let labeling = label_lesion_cluster(&assign, sim.patch_variance())?;
    order_patches(&labeling, &sim)
}
