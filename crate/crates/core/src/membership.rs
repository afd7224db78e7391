//! Soft community membership derived from the mixing matrix `W`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    /// Row-stochastic N×K membership probabilities.
    pub pi: Array2<f64>,
    /// Greedy (argmax) community per node; `None` for degenerate rows.
    pub labels: Vec<Option<usize>>,
    /// Rows whose `W` mass is indistinguishable from the numerical floor.
    pub degenerate: Vec<bool>,
    /// Number of communities receiving at least one greedily allocated node.
    pub k_effective: usize,
    /// Surviving community index to dense index, in increasing order.
    pub remap: BTreeMap<usize, usize>,
}

impl Membership {
    pub fn n(&self) -> usize {
        self.pi.nrows()
    }

    pub fn k(&self) -> usize {
        self.pi.ncols()
    }
}

/// Row-normalizes `w` and allocates each node to its most probable community.
///
/// A row is degenerate when `Σ_k w_ik ≤ 10·K·eps`. Argmax ties go to the
/// lowest index.
pub fn memberships(w: ArrayView2<'_, f64>, eps: f64) -> Membership {
    let (n, k) = w.dim();
    let mut pi = Array2::zeros((n, k));
    let mut labels = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    let threshold = 10.0 * k as f64 * eps;

    for (i, row) in w.axis_iter(Axis(0)).enumerate() {
        let mass: f64 = row.sum();
        if mass > 0.0 {
            pi.row_mut(i).assign(&row.mapv(|x| x / mass));
        }
        let is_degenerate = mass <= threshold;
        degenerate.push(is_degenerate);
        labels.push(if is_degenerate { None } else { argmax(row.iter().copied()) });
    }
    let remap = dense_remap(&labels);
    Membership {
        pi,
        labels,
        degenerate,
        k_effective: remap.len(),
        remap,
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, x) in values.enumerate() {
        if best.map_or(true, |(_, b)| x > b) {
            best = Some((k, x));
        }
    }
    best.map(|(k, _)| k)
}

fn dense_remap(labels: &[Option<usize>]) -> BTreeMap<usize, usize> {
    let mut remap: BTreeMap<usize, usize> = labels.iter().flatten().map(|&k| (k, 0)).collect();
    for (dense, slot) in remap.values_mut().enumerate() {
        *slot = dense;
    }
    remap
}

/// Per-node membership entropy in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// `None` for degenerate rows.
    pub per_node: Vec<Option<f64>>,
    /// Mean over non-degenerate rows; 0 when there are none.
    pub mean_bits: f64,
}

pub fn entropy_bits(m: &Membership) -> EntropyReport {
    let per_node: Vec<Option<f64>> = m
        .pi
        .axis_iter(Axis(0))
        .zip(&m.degenerate)
        .map(|(row, &degenerate)| {
            (!degenerate).then(|| {
                -row.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p * p.log2())
                    .sum::<f64>()
            })
        })
        .collect();
    let valid: Vec<f64> = per_node.iter().flatten().copied().collect();
    let mean_bits = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    EntropyReport { per_node, mean_bits }
}

/// Drops communities that receive no greedily allocated node, renumbers the
/// rest densely and renormalizes each row over the survivors.
pub fn compact(m: &Membership) -> Membership {
    let keep: Vec<usize> = m.remap.keys().copied().collect();
    let mut pi = m.pi.select(Axis(1), &keep);
    for mut row in pi.axis_iter_mut(Axis(0)) {
        let mass = row.sum();
        if mass > 0.0 {
            row.mapv_inplace(|x| x / mass);
        }
    }
    let labels = m.labels.iter().map(|l| l.map(|k| m.remap[&k])).collect();
    Membership {
        pi,
        labels,
        degenerate: m.degenerate.clone(),
        k_effective: m.k_effective,
        remap: m.remap.clone(),
    }
}

/// Diagnostic model order: components whose column energy `Σ_i w_ik²` exceeds
/// `rel_threshold` times the largest column energy.
pub fn energetic_components(w: ArrayView2<'_, f64>, rel_threshold: f64) -> usize {
    let energy = w.mapv(|x| x * x).sum_axis(Axis(0));
    let max = energy.iter().copied().fold(0.0, f64::max);
    energy.iter().filter(|&&e| e > rel_threshold * max).count()
}
