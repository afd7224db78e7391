//! Partition quality: weighted Newman-Girvan modularity and normalized mutual
//! information between hard partitions.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, PlantedPartition};

/// Hard partition with dense community ids `0..C`, each used at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardPartition {
    labels: Vec<usize>,
    communities: usize,
}

impl HardPartition {
    /// Checks that `labels` is already dense.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let communities = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut used = vec![false; communities];
        for &l in &labels {
            used[l] = true;
        }
        if let Some(missing) = used.iter().position(|&u| !u) {
            return Err(Error::Validation(format!(
                "community ids must be dense, id {missing} is unused"
            )));
        }
        Ok(HardPartition { labels, communities })
    }

    /// Renumbers arbitrary labels densely in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut dense: HashMap<usize, usize> = HashMap::new();
        let labels = labels
            .iter()
            .map(|&l| {
                let next = dense.len();
                *dense.entry(l).or_insert(next)
            })
            .collect();
        HardPartition {
            labels,
            communities: dense.len(),
        }
    }

    /// Like [`from_labels`](Self::from_labels), but every `None` becomes its
    /// own singleton community.
    pub fn from_assignments(assignments: &[Option<usize>]) -> Self {
        let mut dense: HashMap<usize, usize> = HashMap::new();
        let mut next = 0;
        let labels = assignments
            .iter()
            .map(|a| match a {
                Some(l) => *dense.entry(*l).or_insert_with(|| {
                    next += 1;
                    next - 1
                }),
                None => {
                    next += 1;
                    next - 1
                }
            })
            .collect();
        HardPartition {
            labels,
            communities: next,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn community_count(&self) -> usize {
        self.communities
    }
}

impl From<&PlantedPartition> for HardPartition {
    fn from(p: &PlantedPartition) -> Self {
        HardPartition::from_labels(&p.labels)
    }
}

/// `Q = Σ_c [e_c / m − (d_c / 2m)²]`, with `m` the total edge weight, `e_c`
/// the weight inside community `c` and `d_c` its total strength.
pub fn modularity(g: &Graph, p: &HardPartition) -> Result<f64> {
    if p.len() != g.n() {
        return Err(Error::Validation(format!(
            "partition covers {} nodes, graph has {}",
            p.len(),
            g.n()
        )));
    }
    let m = g.total_weight();
    if g.edge_count() == 0 || m <= 0.0 {
        return Err(Error::UndefinedMetric("modularity of an edgeless graph".into()));
    }
    let labels = p.labels();
    let mut inside = vec![0.0; p.community_count()];
    let mut strength = vec![0.0; p.community_count()];
    for e in g.edges() {
        let (ci, cj) = (labels[e.i], labels[e.j]);
        if ci == cj {
            inside[ci] += e.w;
        }
        strength[ci] += e.w;
        strength[cj] += e.w;
    }
    Ok(inside
        .iter()
        .zip(&strength)
        .map(|(&e, &d)| e / m - (d / (2.0 * m)).powi(2))
        .sum())
}

/// Normalized mutual information in the confusion-matrix form of Danon et al.:
///
/// `NMI = −2 Σ_ij N_ij ln(N_ij N / (N_i N_j)) / [Σ_i N_i ln(N_i / N) + Σ_j N_j ln(N_j / N)]`
///
/// Two single-community partitions score 1. Otherwise a zero denominator
/// cannot occur, and a single-community partition against anything else
/// scores 0.
pub fn nmi(a: &HardPartition, b: &HardPartition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "partitions have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Validation("partitions are empty".into()));
    }
    let n = a.len() as f64;
    let mut confusion: HashMap<(usize, usize), usize> = HashMap::new();
    let mut row = vec![0usize; a.community_count()];
    let mut col = vec![0usize; b.community_count()];
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        *confusion.entry((x, y)).or_default() += 1;
        row[x] += 1;
        col[y] += 1;
    }
    let margin = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| c as f64 * (c as f64 / n).ln())
            .sum()
    };
    let denominator = margin(&row) + margin(&col);
    if denominator == 0.0 {
        return Ok(if a.community_count() <= 1 && b.community_count() <= 1 {
            1.0
        } else {
            0.0
        });
    }
    // iterate in a fixed order so the result does not depend on hashing
    let mut cells: Vec<_> = confusion.into_iter().collect();
    cells.sort_unstable();
    let numerator: f64 = cells
        .iter()
        .map(|&((x, y), c)| {
            let c = c as f64;
            c * (c * n / (row[x] as f64 * col[y] as f64)).ln()
        })
        .sum();
    Ok((-2.0 * numerator / denominator).clamp(0.0, 1.0))
}
