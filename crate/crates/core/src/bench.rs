//! Experiment harness: seeded multi-restart fits on one graph, planted
//! partition cohesion sweeps, and scoring of graphs loaded from disk.
//!
//! Runs execute in parallel, but every aggregate is folded in seed order, so a
//! report depends only on its inputs and base seed. Wall-clock fields are the
//! only exception; [`RestartReport::strip_timings`] and
//! [`SweepReport::strip_timings`] remove them.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{self, Graph, InteractionMatrix, LoadReport, NgParams, NodeIds};
use crate::membership::{entropy_bits, memberships, Membership};
use crate::metrics::{modularity, nmi, HardPartition};
use crate::nmf::{self, SolverConfig};

/// Default cap on the number of components for benchmark runs.
pub const BENCH_K_MAX: usize = 64;

/// Mean and sample (n − 1) standard deviation; the deviation of a single
/// sample is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub q: f64,
    pub k_effective: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub mean_entropy_bits: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartAggregates {
    pub runs: usize,
    pub q_mean: f64,
    pub q_std: f64,
    pub q_best: f64,
    pub k_eff_mean: f64,
    pub k_eff_std: f64,
    pub converged_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRun {
    pub index: usize,
    pub seed: u64,
    pub q: f64,
    pub k_effective: usize,
    /// Greedy labels of the best run; `None` marks unassigned nodes.
    pub labels: Vec<Option<usize>>,
    #[serde(skip)]
    pub membership: Membership,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartReport {
    pub runs: Vec<RunRecord>,
    pub aggregates: RestartAggregates,
    pub best_run: BestRun,
}

impl RestartReport {
    pub fn strip_timings(&mut self) {
        for r in &mut self.runs {
            r.wall_ms = None;
        }
        self.aggregates.total_wall_ms = None;
    }
}

fn run_once(
    v: &InteractionMatrix,
    g: &Graph,
    config: &SolverConfig,
    seed: u64,
    reference: Option<&HardPartition>,
) -> Result<(RunRecord, Membership)> {
    let attempt = || -> Result<(RunRecord, Membership)> {
        let config = config.with_seed(seed);
        let fit = nmf::fit(v.view(), &config)?;
        let m = memberships(fit.factorization.w.view(), config.eps);
        let partition = HardPartition::from_assignments(&m.labels);
        let q = modularity(g, &partition)?;
        let nmi = reference.map(|r| nmi(r, &partition)).transpose()?;
        let record = RunRecord {
            seed,
            q,
            k_effective: m.k_effective,
            iterations: fit.iterations_run,
            converged: fit.converged,
            initial_energy: fit.energy_trace[0],
            final_energy: fit.final_energy(),
            mean_entropy_bits: entropy_bits(&m).mean_bits,
            nmi,
            wall_ms: Some(fit.wall_ms),
        };
        Ok((record, m))
    };
    attempt().map_err(|e| Error::RunFailed {
        seed,
        source: Box::new(e),
    })
}

/// Fits `runs` times with seeds `base_seed..base_seed + runs` and scores each
/// greedy partition by modularity on `g`.
pub fn restart_experiment(
    v: &InteractionMatrix,
    g: &Graph,
    config: &SolverConfig,
    runs: usize,
    base_seed: u64,
) -> Result<RestartReport> {
    restart_experiment_against(v, g, config, runs, base_seed, None)
}

/// [`restart_experiment`], additionally scoring every run by NMI against a
/// reference partition.
pub fn restart_experiment_against(
    v: &InteractionMatrix,
    g: &Graph,
    config: &SolverConfig,
    runs: usize,
    base_seed: u64,
    reference: Option<&HardPartition>,
) -> Result<RestartReport> {
    config.validate()?;
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    if v.n() != g.n() {
        return Err(Error::Validation(format!(
            "interaction matrix is {}×{}, graph has {} nodes",
            v.n(),
            v.n(),
            g.n()
        )));
    }
    if let Some(r) = reference {
        if r.len() != g.n() {
            return Err(Error::Validation(format!(
                "reference partition covers {} nodes, graph has {}",
                r.len(),
                g.n()
            )));
        }
    }
    let outcomes: Vec<Result<(RunRecord, Membership)>> = (0..runs as u64)
        .into_par_iter()
        .map(|offset| run_once(v, g, config, base_seed.wrapping_add(offset), reference))
        .collect();
    let mut records = Vec::with_capacity(runs);
    let mut best: Option<(usize, Membership)> = None;
    for (index, outcome) in outcomes.into_iter().enumerate() {
        let (record, membership) = outcome?;
        let better = match &best {
            None => true,
            Some((b, _)) => record.q > records.get(*b).map_or(f64::NEG_INFINITY, |r: &RunRecord| r.q),
        };
        if better {
            best = Some((index, membership));
        }
        records.push(record);
    }
    let (best_index, membership) = best.expect("at least one run");

    let qs: Vec<f64> = records.iter().map(|r| r.q).collect();
    let ks: Vec<f64> = records.iter().map(|r| r.k_effective as f64).collect();
    let (q_mean, q_std) = mean_std(&qs);
    let (k_eff_mean, k_eff_std) = mean_std(&ks);
    let nmis: Vec<f64> = records.iter().filter_map(|r| r.nmi).collect();
    let (nmi_mean, nmi_std) = if nmis.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&nmis);
        (Some(m), Some(s))
    };
    let best_record = &records[best_index];
    let best_run = BestRun {
        index: best_index,
        seed: best_record.seed,
        q: best_record.q,
        k_effective: best_record.k_effective,
        labels: membership.labels.clone(),
        membership,
    };
    Ok(RestartReport {
        aggregates: RestartAggregates {
            runs,
            q_mean,
            q_std,
            q_best: best_record.q,
            k_eff_mean,
            k_eff_std,
            converged_runs: records.iter().filter(|r| r.converged).count(),
            nmi_mean,
            nmi_std,
            total_wall_ms: Some(records.iter().filter_map(|r| r.wall_ms).sum()),
        },
        runs: records,
        best_run,
    })
}

/// One fitted realization of a cohesion sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k_out: f64,
    pub realization: usize,
    pub graph_seed: u64,
    pub fit_seed: u64,
    pub nmi: f64,
    pub q: f64,
    pub mean_entropy_bits: f64,
    pub k_effective: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub k_out: f64,
    pub realizations: usize,
    pub nmi_mean: f64,
    pub nmi_std: f64,
    pub q_mean: f64,
    pub q_std: f64,
    pub mean_entropy_bits_mean: f64,
    pub mean_entropy_bits_std: f64,
    pub k_eff_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub params: NgParams,
    pub restarts: usize,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn strip_timings(&mut self) {
        for r in &mut self.rows {
            r.wall_ms = None;
        }
    }
}

/// Seeds for realization `r` of grid cell `cell`: the graph uses
/// `base + 2i` and the fit `base + 2i + 1`, with `i = cell · R + r`.
pub fn sweep_seeds(base_seed: u64, cell: usize, realization: usize, realizations: usize) -> (u64, u64) {
    let index = (cell * realizations + realization) as u64;
    let graph_seed = base_seed.wrapping_add(2 * index);
    (graph_seed, graph_seed.wrapping_add(1))
}

/// Generates `realizations` planted-partition graphs per `k_out` value, fits
/// each once and scores it against the planted blocks.
pub fn ng_sweep(
    params_base: &NgParams,
    kout_values: &[f64],
    realizations: usize,
    config: &SolverConfig,
    base_seed: u64,
) -> Result<SweepReport> {
    ng_sweep_with_restarts(params_base, kout_values, realizations, 1, config, base_seed)
}

/// Seed of restart `r` for a realization whose first fit uses `fit_seed`.
pub fn restart_seed(fit_seed: u64, restart: usize) -> u64 {
    fit_seed.wrapping_add((restart as u64) << 32)
}

/// [`ng_sweep`], but every realization is fitted `restarts` times and the fit
/// with the lowest final energy (the best posterior mode found) is scored.
/// The selection never looks at the planted partition.
pub fn ng_sweep_with_restarts(
    params_base: &NgParams,
    kout_values: &[f64],
    realizations: usize,
    restarts: usize,
    config: &SolverConfig,
    base_seed: u64,
) -> Result<SweepReport> {
    config.validate()?;
    if realizations == 0 || restarts == 0 {
        return Err(Error::InvalidParameter(
            "realizations and restarts must be at least 1".into(),
        ));
    }
    for &k_out in kout_values {
        params_base.with_k_out(k_out).probabilities()?;
    }
    let jobs: Vec<(usize, usize)> = (0..kout_values.len())
        .flat_map(|c| (0..realizations).map(move |r| (c, r)))
        .collect();
    let rows: Vec<Result<SweepRow>> = jobs
        .into_par_iter()
        .map(|(cell, realization)| {
            let k_out = kout_values[cell];
            let (graph_seed, first_seed) = sweep_seeds(base_seed, cell, realization, realizations);
            let mut failed_seed = first_seed;
            let mut attempt = || -> Result<SweepRow> {
                let (g, planted) = graph::generate_ng_graph(&params_base.with_k_out(k_out), graph_seed)?;
                let v = InteractionMatrix::from_graph(&g);
                let mut best: Option<(u64, nmf::FitResult)> = None;
                let mut wall_ms = 0.0;
                for restart in 0..restarts {
                    let seed = restart_seed(first_seed, restart);
                    failed_seed = seed;
                    let fit = nmf::fit(v.view(), &config.with_seed(seed))?;
                    wall_ms += fit.wall_ms;
                    if best.as_ref().map_or(true, |(_, b)| fit.final_energy() < b.final_energy()) {
                        best = Some((seed, fit));
                    }
                }
                let (fit_seed, fit) = best.expect("restarts >= 1");
                let m = memberships(fit.factorization.w.view(), config.eps);
                let found = HardPartition::from_assignments(&m.labels);
                Ok(SweepRow {
                    k_out,
                    realization,
                    graph_seed,
                    fit_seed,
                    nmi: nmi(&HardPartition::from(&planted), &found)?,
                    q: modularity(&g, &found)?,
                    mean_entropy_bits: entropy_bits(&m).mean_bits,
                    k_effective: m.k_effective,
                    iterations: fit.iterations_run,
                    converged: fit.converged,
                    final_energy: fit.final_energy(),
                    wall_ms: Some(wall_ms),
                })
            };
            attempt().map_err(|e| Error::RunFailed {
                seed: failed_seed,
                source: Box::new(e),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let cells = kout_values
        .iter()
        .enumerate()
        .map(|(cell, &k_out)| {
            let chunk = &rows[cell * realizations..(cell + 1) * realizations];
            let col = |f: fn(&SweepRow) -> f64| chunk.iter().map(f).collect::<Vec<_>>();
            let (nmi_mean, nmi_std) = mean_std(&col(|r| r.nmi));
            let (q_mean, q_std) = mean_std(&col(|r| r.q));
            let (h_mean, h_std) = mean_std(&col(|r| r.mean_entropy_bits));
            let (k_eff_mean, _) = mean_std(&col(|r| r.k_effective as f64));
            SweepCell {
                k_out,
                realizations,
                nmi_mean,
                nmi_std,
                q_mean,
                q_std,
                mean_entropy_bits_mean: h_mean,
                mean_entropy_bits_std: h_std,
                k_eff_mean,
            }
        })
        .collect();
    Ok(SweepReport {
        params: *params_base,
        restarts,
        cells,
        rows,
    })
}

/// A graph read from disk together with its restart report.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub dataset: String,
    pub nodes: usize,
    pub edges: usize,
    pub merged_duplicates: usize,
    pub components: usize,
    pub report: RestartReport,
    #[serde(skip)]
    pub graph: Graph,
    #[serde(skip)]
    pub load: LoadReport,
}

pub fn load_graph_file(path: &Path) -> Result<(Graph, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
    graph::load_edge_list(BufReader::new(file)).map_err(|e| e.with_path(path))
}

pub fn load_partition_file(path: &Path, ids: NodeIds<'_>) -> Result<HardPartition> {
    let file = File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
    let planted = graph::load_partition(BufReader::new(file), ids).map_err(|e| e.with_path(path))?;
    Ok(HardPartition::from(&planted))
}

/// Loads an edge list (and optionally a reference partition keyed by the same
/// node ids), then runs [`restart_experiment_against`].
pub fn ingest_and_score(
    graph_path: &Path,
    partition_path: Option<&Path>,
    config: &SolverConfig,
    runs: usize,
    base_seed: u64,
) -> Result<IngestReport> {
    let (g, load) = load_graph_file(graph_path)?;
    let reference = partition_path
        .map(|p| load_partition_file(p, NodeIds::Remapped(&load)))
        .transpose()?;
    let v = InteractionMatrix::from_graph(&g);
    let report = restart_experiment_against(&v, &g, config, runs, base_seed, reference.as_ref())?;
    let mut roots = g.components();
    roots.sort_unstable();
    roots.dedup();
    Ok(IngestReport {
        dataset: graph_path
            .file_name()
            .map_or_else(|| graph_path.display().to_string(), |s| s.to_string_lossy().into_owned()),
        nodes: g.n(),
        edges: g.edge_count(),
        merged_duplicates: load.merged_duplicates,
        components: roots.len(),
        report,
        graph: g,
        load,
    })
}
