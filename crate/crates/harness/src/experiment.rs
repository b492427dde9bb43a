//! Building, running, comparing and auditing experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use stiefel_dgt_core::algorithms::{
    run_with_observer, step_size_bounds, Algorithm, AlgorithmConfig, ExitReason, NetworkState,
    StepSizeBounds,
};
use stiefel_dgt_core::diagnostics::{distance_to_manifold, fit_pl_constant, TraceRecord};
use stiefel_dgt_core::manifold::{
    gaussian_matrix, project_to_stiefel, random_stiefel, tangent_projection, LandingParams,
};
use stiefel_dgt_core::matrix_io::{load_dmat, save_dmat};
use stiefel_dgt_core::merit::{
    audit_inequalities, estimate_constants, sampled_bounds, AuditContext, AuditReport, CheckStatus,
    MeritConstants,
};
use stiefel_dgt_core::network::{Graph, MixingMatrix};
use stiefel_dgt_core::problems::{
    default_weights, generate_planted_pca, generate_synthetic_pca, load_dataset_matrix,
    DatasetOptions, Partition, PlantedPcaSpec, ProblemInstance, Sign, SyntheticPcaSpec,
};
use stiefel_dgt_core::Mat;

use crate::config::*;
use crate::output::{write_json, JsonLines, TraceWriter};

/// ChaCha stream for initial points.
const INIT_STREAM: u64 = 1;

/// Samples for the empirical PŁ fit.
const PL_SAMPLES: usize = 200;

/// A configuration with every automatic value resolved, plus the objects it describes.
pub struct Prepared {
    /// `alpha`, `lambda` and `init_seed` are concrete numbers here.
    pub config: ExperimentConfig,
    pub algorithm: Algorithm,
    pub problem: ProblemInstance,
    pub mixing: MixingMatrix,
    pub consts: MeritConstants,
    pub bounds: StepSizeBounds,
    pub settings: AlgorithmConfig,
    pub x0: Mat,
}

impl Prepared {
    pub fn sigma(&self) -> f64 {
        self.mixing.sigma()
    }
}

pub fn build_problem(p: &ProblemConfig, n: usize) -> Result<ProblemInstance> {
    let sign = Sign::from_factor(p.sign)?;
    let pca = match p.kind {
        ProblemKind::SyntheticPca => generate_synthetic_pca(&SyntheticPcaSpec {
            n,
            d: p.d.context("problem.d is required")?,
            r: p.r,
            m: p.m.context("problem.m is required")?,
            condition_target: p
                .condition_target
                .context("problem.condition_target is required")?,
            spectrum_max: p.spectrum_max,
            weights: p.weights.clone(),
            sign,
            seed: p.seed,
        })?,
        ProblemKind::PlantedPca => generate_planted_pca(&PlantedPcaSpec {
            n,
            d: p.d.context("problem.d is required")?,
            r: p.r,
            m: p.m.context("problem.m is required")?,
            leading: p.leading.clone().context("problem.leading is required")?,
            floor: p.floor.context("problem.floor is required")?,
            weights: p.weights.clone(),
            sign,
            seed: p.seed,
        })?,
        ProblemKind::Dataset => {
            let path = p.dataset.as_ref().context("problem.dataset is required")?;
            let weights = match &p.weights {
                Some(w) => DVector::from_vec(w.clone()),
                None => default_weights(p.r),
            };
            let opts = DatasetOptions {
                header: p.header,
                center: p.center,
                partition: match p.partition {
                    PartitionKind::Contiguous => Partition::Contiguous,
                    PartitionKind::RoundRobin => Partition::RoundRobin,
                },
                weights,
                sign,
            };
            load_dataset_matrix(path, n, &opts)?
        }
    };
    Ok(ProblemInstance::from_pca(pca)?)
}

pub fn build_mixing(net: &NetworkConfig) -> Result<MixingMatrix> {
    if net.n == 1 {
        return Ok(MixingMatrix::complete(1)?);
    }
    let w = match net.weights {
        WeightScheme::Lazy => MixingMatrix::ring(net.n, net.self_weight.unwrap_or(0.8))?,
        WeightScheme::Uniform => MixingMatrix::complete(net.n)?,
        WeightScheme::Metropolis => {
            let g = match net.topology {
                Topology::Ring => Graph::ring(net.n)?,
                Topology::Path => Graph::path(net.n)?,
                Topology::Star => Graph::star(net.n)?,
                Topology::Complete => Graph::complete(net.n)?,
            };
            MixingMatrix::metropolis(&g)?
        }
    };
    Ok(w)
}

pub fn build_constants(
    problem: &ProblemInstance,
    p: &ProblemConfig,
    lambda: f64,
    epsilon: f64,
) -> Result<MeritConstants> {
    let params = LandingParams::new(lambda, epsilon)?;
    if p.sampled_constants || problem.pca().is_none() {
        let b = sampled_bounds(problem, epsilon, p.constant_samples, p.seed)?;
        Ok(MeritConstants::from_bounds(b, params, true))
    } else {
        Ok(estimate_constants(
            problem,
            params,
            p.constant_samples,
            p.seed,
        )?)
    }
}

pub fn initial_point(problem: &ProblemInstance, a: &AlgorithmSection, seed: u64) -> Result<Mat> {
    let (d, r) = problem.dims();
    // a separate stream, so equal seeds do not replay the problem generator's draws
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let x = match a.init {
        InitKind::Random => random_stiefel(d, r, &mut rng)?.into_inner(),
        InitKind::PerturbedReference => {
            let s = problem
                .reference()
                .context("init = \"perturbed-reference\" needs a problem with a unique solution")?;
            if a.init_noise > 0.0 {
                let xi = tangent_projection(&s.x, &gaussian_matrix(d, r, &mut rng))?;
                let xi = &xi * (a.init_noise / xi.norm());
                project_to_stiefel(&(&s.x + xi))?.into_inner()
            } else {
                s.x.clone()
            }
        }
    };
    Ok(x * a.init_scale)
}

/// Validates the configuration, builds the problem and network and resolves
/// automatic step sizes. Nothing is written to disk.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let algorithm = cfg.algorithm()?;
    let problem = build_problem(&cfg.problem, cfg.network.n)?;
    let mixing = build_mixing(&cfg.network)?;
    let a = &cfg.algorithm;
    let sigma = mixing.sigma();
    let (alpha, lambda, consts, bounds) = match a.lambda {
        LambdaSpec::Fixed(lambda) => {
            let consts = build_constants(&problem, &cfg.problem, lambda, a.epsilon)?;
            let bounds = step_size_bounds(&consts, sigma, problem.n())?;
            let alpha = match a.alpha {
                StepSpec::Fixed(v) => v,
                StepSpec::AutoSafe => bounds.safe,
                StepSpec::AutoStable => bounds.safe.min(bounds.stable),
            };
            (alpha, lambda, consts, bounds)
        }
        LambdaSpec::Ratio(c) => {
            let StepSpec::Fixed(alpha) = a.alpha else {
                bail!("lambda = \"ratio:c\" needs a numeric alpha");
            };
            let lambda = c / alpha;
            let consts = build_constants(&problem, &cfg.problem, lambda, a.epsilon)?;
            let bounds = step_size_bounds(&consts, sigma, problem.n())?;
            (alpha, lambda, consts, bounds)
        }
    };
    let init_seed = a.init_seed.unwrap_or(cfg.problem.seed);
    let mut resolved = cfg.clone();
    resolved.algorithm.alpha = StepSpec::Fixed(alpha);
    resolved.algorithm.lambda = LambdaSpec::Fixed(lambda);
    resolved.algorithm.init_seed = Some(init_seed);
    let x0 = initial_point(&problem, a, init_seed)?;
    let settings = AlgorithmConfig {
        alpha,
        lambda,
        epsilon: a.epsilon,
        max_iters: a.max_iters,
        tol_grad: a.tol_grad,
        tol_consensus: a.tol_consensus,
        consensus_rounds: a.consensus_rounds,
        trace_stride: cfg.output.trace_stride,
    };
    settings.validate()?;
    Ok(Prepared {
        config: resolved,
        algorithm,
        problem,
        mixing,
        consts,
        bounds,
        settings,
        x0,
    })
}

/// Constants for audits: `mu` from the configuration, or fitted on the
/// manifold within `2 delta` of the solution set with a safety factor of 1/2.
pub fn audit_constants(prep: &Prepared) -> Result<MeritConstants> {
    let o = &prep.config.output;
    match (o.mu, prep.problem.reference()) {
        (Some(mu), _) => Ok(prep.consts.with_mu(mu)?),
        (None, Some(s)) => {
            let fit = fit_pl_constant(
                prep.problem.global(),
                s,
                2.0 * o.audit_delta,
                PL_SAMPLES,
                prep.config.problem.seed,
            )?;
            Ok(prep.consts.with_mu(0.5 * fit.min_ratio)?)
        }
        (None, None) => Ok(prep.consts),
    }
}

/// Every constant a run used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConstants {
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub rho: f64,
    pub c: f64,
    pub l_prime: f64,
    pub sigma_w: f64,
    pub seed: u64,
    pub init_seed: u64,
    pub smoothness: f64,
    pub l_hat: f64,
    pub s: f64,
    pub grad_bound: f64,
    pub mu: Option<f64>,
    pub mu_prime: Option<f64>,
    pub estimated: bool,
    pub step_sizes: StepSizeBounds,
}

pub fn resolved_constants(prep: &Prepared, consts: &MeritConstants) -> ResolvedConstants {
    ResolvedConstants {
        alpha: prep.settings.alpha,
        lambda: consts.lambda,
        epsilon: consts.epsilon,
        gamma: consts.gamma,
        rho: consts.rho,
        c: consts.c,
        l_prime: consts.l_prime,
        sigma_w: prep.sigma(),
        seed: prep.config.problem.seed,
        init_seed: prep
            .config
            .algorithm
            .init_seed
            .unwrap_or(prep.config.problem.seed),
        smoothness: consts.bounds.smoothness,
        l_hat: consts.bounds.l_hat,
        s: consts.bounds.s,
        grad_bound: consts.bounds.local_relative_grad,
        mu: consts.mu,
        mu_prime: consts.mu_prime,
        estimated: consts.estimated,
        step_sizes: prep.bounds,
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckTally {
    pub pass: usize,
    pub fail: usize,
    pub not_applicable: usize,
    /// Smallest slack among applicable evaluations.
    pub min_slack: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditTally {
    pub snapshots: usize,
    pub points: usize,
    pub checks: BTreeMap<String, CheckTally>,
}

impl AuditTally {
    pub fn add(&mut self, report: &AuditReport) {
        self.points += 1;
        for c in &report.checks {
            let t = self.checks.entry(c.name.clone()).or_default();
            match c.status {
                CheckStatus::Pass => t.pass += 1,
                CheckStatus::Fail => t.fail += 1,
                CheckStatus::NotApplicable => t.not_applicable += 1,
            }
            if c.status != CheckStatus::NotApplicable {
                t.min_slack = Some(t.min_slack.map_or(c.slack, |m| m.min(c.slack)));
            }
        }
    }

    pub fn failures(&self) -> usize {
        self.checks.values().map(|t| t.fail).sum()
    }

    pub fn merge(&mut self, other: &AuditTally) {
        self.snapshots += other.snapshots;
        self.points += other.points;
        for (name, t) in &other.checks {
            let e = self.checks.entry(name.clone()).or_default();
            e.pass += t.pass;
            e.fail += t.fail;
            e.not_applicable += t.not_applicable;
            e.min_slack = match (e.min_slack, t.min_slack) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<34} {:>8} {:>8} {:>8} {:>14}\n",
            "check", "pass", "fail", "n/a", "min slack"
        );
        for (name, t) in &self.checks {
            let slack = t.min_slack.map_or("-".to_string(), |s| format!("{s:.3e}"));
            out += &format!(
                "{name:<34} {:>8} {:>8} {:>8} {slack:>14}\n",
                t.pass, t.fail, t.not_applicable
            );
        }
        out
    }
}

/// One audited point: the average iterate (`agent = None`) or one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRow {
    pub k: usize,
    pub agent: Option<usize>,
    #[serde(flatten)]
    pub report: AuditReport,
}

/// Audits the average iterate and every agent of one snapshot.
pub fn audit_blocks(
    k: usize,
    blocks: &[Mat],
    problem: &ProblemInstance,
    consts: &MeritConstants,
    delta: f64,
) -> Result<Vec<AuditRow>> {
    let ctx = AuditContext {
        objective: problem.global(),
        consts,
        reference: problem.reference(),
        delta,
    };
    let mut mean = blocks[0].clone();
    for b in &blocks[1..] {
        mean += b;
    }
    mean /= blocks.len() as f64;
    let mut rows = vec![AuditRow {
        k,
        agent: None,
        report: audit_inequalities(&mean, &ctx)?,
    }];
    if blocks.len() > 1 {
        for (i, b) in blocks.iter().enumerate() {
            rows.push(AuditRow {
                k,
                agent: Some(i),
                report: audit_inequalities(b, &ctx)?,
            });
        }
    }
    Ok(rows)
}

fn stack(blocks: &[Mat]) -> Mat {
    let (d, r) = blocks[0].shape();
    let mut out = Mat::zeros(d * blocks.len(), r);
    for (i, b) in blocks.iter().enumerate() {
        out.view_mut((i * d, 0), (d, r)).copy_from(b);
    }
    out
}

fn unstack(m: &Mat, d: usize) -> Result<Vec<Mat>> {
    ensure!(
        d > 0 && m.nrows() % d == 0 && m.nrows() > 0,
        "snapshot has {} rows, not a multiple of d = {d}",
        m.nrows()
    );
    Ok((0..m.nrows() / d)
        .map(|i| m.rows(i * d, d).into_owned())
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub exit: ExitReason,
    pub iterations: usize,
    pub converged: bool,
    #[serde(rename = "final")]
    pub last: TraceRecord,
    pub wall_time_s: f64,
    pub qr_svd_count: u64,
    pub metric_projections: u64,
    pub constants: ResolvedConstants,
    /// Distance of the final average iterate to the manifold.
    pub mean_iterate_feasibility: f64,
    pub distance_to_reference: Option<f64>,
    pub optimality_gap: Option<f64>,
    pub warnings: Vec<String>,
    pub audit: Option<AuditTally>,
}

pub struct RunResult {
    pub summary: RunSummary,
    pub trace: Vec<TraceRecord>,
    pub state: NetworkState,
}

/// Runs one algorithm and writes its outputs into `dir`, which is created.
pub fn run_in_dir(prep: &Prepared, algorithm: Algorithm, dir: &Path) -> Result<RunResult> {
    let o = &prep.config.output;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    fs::write(dir.join("config.resolved"), prep.config.to_toml()?)?;
    let consts = if o.audit {
        audit_constants(prep)?
    } else {
        prep.consts
    };
    let mut sink = TraceWriter::create(dir, o.format, o.zero_wall_time)?;
    let mut audit = if o.audit {
        fs::create_dir_all(dir.join("snapshots"))?;
        Some((
            JsonLines::create(&dir.join("audit.jsonl"))?,
            AuditTally::default(),
        ))
    } else {
        None
    };
    let snapshots = dir.join("snapshots");
    let mut observer = |state: &NetworkState| -> stiefel_dgt_core::Result<()> {
        let Some((lines, tally)) = audit.as_mut() else {
            return Ok(());
        };
        if state.iteration % o.audit_stride != 0 {
            return Ok(());
        }
        let k = state.iteration;
        save_dmat(&snapshots.join(format!("k{k:010}.dmat")), &stack(&state.x))?;
        let rows = audit_blocks(k, &state.x, &prep.problem, &consts, o.audit_delta)
            .map_err(|e| stiefel_dgt_core::Error::Precondition(e.to_string()))?;
        tally.snapshots += 1;
        for row in &rows {
            tally.add(&row.report);
            lines.write(row).map_err(|e| stiefel_dgt_core::Error::Io {
                path: snapshots.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
        Ok(())
    };
    let outcome = run_with_observer(
        algorithm,
        &prep.problem,
        &prep.mixing,
        &prep.settings,
        &prep.x0,
        &consts,
        &mut sink,
        &mut observer,
    )?;
    let trace = sink.finish()?;
    let audit = match audit {
        Some((lines, tally)) => {
            lines.finish()?;
            Some(tally)
        }
        None => None,
    };
    for w in &outcome.warnings {
        log::warn!("{}: {w}", algorithm.name());
    }
    log::info!(
        "{} finished after {} iterations ({:?})",
        algorithm.name(),
        outcome.iterations,
        outcome.exit
    );
    let xbar = outcome.state.mean_x();
    let reference = prep.problem.reference();
    let mut last = outcome.last;
    if o.zero_wall_time {
        last.wall_time_s = 0.0;
    }
    let summary = RunSummary {
        algorithm,
        exit: outcome.exit,
        iterations: outcome.iterations,
        converged: outcome.exit == ExitReason::Converged,
        last,
        wall_time_s: if o.zero_wall_time {
            0.0
        } else {
            outcome.wall_time_s
        },
        qr_svd_count: outcome.state.factorizations,
        metric_projections: outcome.metric_projections,
        constants: resolved_constants(prep, &consts),
        mean_iterate_feasibility: distance_to_manifold(&xbar),
        distance_to_reference: reference.map(|s| s.distance(&xbar)),
        optimality_gap: reference.map(|s| prep.problem.global().value(&xbar) - s.value),
        warnings: outcome.warnings,
        audit,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunResult {
        summary,
        trace,
        state: outcome.state,
    })
}

/// `run`: the configured algorithm into `config.output.dir`.
pub fn run(prep: &Prepared) -> Result<RunResult> {
    run_in_dir(prep, prep.algorithm, &prep.config.output.dir)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub algorithm: Algorithm,
    pub exit: ExitReason,
    pub iterations: usize,
    pub iterations_to_tolerance: Option<usize>,
    pub wall_time_s: f64,
    pub qr_svd_count: u64,
    pub metric_projections: u64,
    pub final_landing_norm: f64,
    pub final_feasibility: f64,
    pub mean_iterate_feasibility: f64,
    pub final_consensus: f64,
    pub trace_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub alpha: f64,
    pub lambda: f64,
    pub sigma_w: f64,
    pub entries: Vec<ComparisonEntry>,
}

/// `compare`: every algorithm from the same initial point, network and step
/// size, each in its own subdirectory of `config.output.dir`.
pub fn compare(prep: &Prepared, algorithms: &[Algorithm]) -> Result<Comparison> {
    ensure!(
        algorithms.len() >= 2,
        "compare needs at least two algorithms, got {}",
        algorithms.len()
    );
    let mut seen = algorithms.to_vec();
    seen.sort_by_key(|a| a.name());
    seen.dedup();
    ensure!(
        seen.len() == algorithms.len(),
        "compare got a repeated algorithm"
    );
    let root = prep.config.output.dir.clone();
    fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
    let results: Vec<Result<ComparisonEntry>> = algorithms
        .par_iter()
        .map(|&alg| {
            let dir = root.join(alg.name());
            let res = run_in_dir(prep, alg, &dir)?;
            let s = res.summary;
            Ok(ComparisonEntry {
                algorithm: alg,
                exit: s.exit,
                iterations: s.iterations,
                iterations_to_tolerance: s.converged.then_some(s.iterations),
                wall_time_s: s.wall_time_s,
                qr_svd_count: s.qr_svd_count,
                metric_projections: s.metric_projections,
                final_landing_norm: s.last.landing_norm_avg,
                final_feasibility: s.last.feasibility_avg,
                mean_iterate_feasibility: s.mean_iterate_feasibility,
                final_consensus: s.last.consensus_x,
                trace_dir: dir,
            })
        })
        .collect();
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let cmp = Comparison {
        alpha: prep.settings.alpha,
        lambda: prep.settings.lambda,
        sigma_w: prep.sigma(),
        entries,
    };
    write_json(&root.join("comparison.json"), &cmp)?;
    Ok(cmp)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub gamma: f64,
    pub gamma_scale: f64,
    pub tally: AuditTally,
}

/// Snapshot files of a run directory in iteration order.
pub fn snapshot_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let snap = dir.join("snapshots");
    let mut out = Vec::new();
    if snap.is_dir() {
        for entry in fs::read_dir(&snap)? {
            let path = entry?.path();
            let k = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.strip_prefix('k'))
                .and_then(|s| s.parse::<usize>().ok());
            if let (Some(k), Some("dmat")) = (k, path.extension().and_then(|e| e.to_str())) {
                out.push((k, path));
            }
        }
    }
    if out.is_empty() {
        bail!(
            "no snapshots in {}; rerun with --audit to store them",
            snap.display()
        );
    }
    out.sort();
    Ok(out)
}

/// `audit`: replays the stored snapshots of `dir` with `gamma` scaled by
/// `gamma_scale` and writes `audit_replay.jsonl`.
pub fn audit_dir(dir: &Path, gamma_scale: f64) -> Result<AuditOutcome> {
    ensure!(
        gamma_scale >= 0.0 && gamma_scale.is_finite(),
        "gamma scale must be non-negative"
    );
    let cfg_path = dir.join("config.resolved");
    ensure!(
        cfg_path.is_file(),
        "{} is not a run directory (no config.resolved)",
        dir.display()
    );
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let files = snapshot_files(dir)?;
    let prep = prepare(&cfg)?;
    let base = audit_constants(&prep)?;
    let consts = base.with_gamma(base.gamma * gamma_scale)?;
    let (d, _) = prep.problem.dims();
    let mut lines = JsonLines::create(&dir.join("audit_replay.jsonl"))?;
    let mut tally = AuditTally::default();
    for (k, path) in files {
        let blocks = unstack(&load_dmat(&path)?, d)?;
        let rows = audit_blocks(k, &blocks, &prep.problem, &consts, cfg.output.audit_delta)?;
        tally.snapshots += 1;
        for row in &rows {
            tally.add(&row.report);
            lines.write(row)?;
        }
    }
    lines.finish()?;
    Ok(AuditOutcome {
        gamma: consts.gamma,
        gamma_scale,
        tally,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking_round_trips() {
        let blocks = vec![Mat::from_element(3, 2, 1.0), Mat::from_element(3, 2, 2.0)];
        let s = stack(&blocks);
        assert_eq!(s.shape(), (6, 2));
        assert_eq!(unstack(&s, 3).unwrap(), blocks);
        assert!(unstack(&s, 4).is_err());
    }

    #[test]
    fn tally_counts_and_merges() {
        let mut a = AuditTally::default();
        assert_eq!(a.failures(), 0);
        let mut b = AuditTally::default();
        b.snapshots = 2;
        b.checks.insert(
            "x".into(),
            CheckTally {
                pass: 1,
                fail: 2,
                not_applicable: 0,
                min_slack: Some(-1.0),
            },
        );
        a.merge(&b);
        a.merge(&b);
        assert_eq!(a.failures(), 4);
        assert_eq!(a.snapshots, 4);
        assert!(a.table().contains("-1.000e0"));
    }
}
