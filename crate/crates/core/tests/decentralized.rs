use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stiefel_dgt_core::algorithms::{
    run, safe_step_size, step_size_bounds, Algorithm, AlgorithmConfig, ExitReason, Solver,
};
use stiefel_dgt_core::diagnostics::{
    ergodic_check, ErgodicPremise, ErgodicVerdict, NullSink, TraceRecord,
};
use stiefel_dgt_core::manifold::{feasibility_residual, landing_field, random_stiefel};
use stiefel_dgt_core::merit::{estimate_constants, MeritConstants};
use stiefel_dgt_core::network::{Graph, MixingMatrix};
use stiefel_dgt_core::problems::{generate_planted_pca, PlantedPcaSpec, ProblemInstance, Sign};
use stiefel_dgt_core::Mat;

fn planted(n: usize, d: usize, r: usize, seed: u64) -> ProblemInstance {
    let leading: Vec<f64> = (0..r).map(|j| 1.0 - 0.3 * j as f64).collect();
    let pca = generate_planted_pca(&PlantedPcaSpec {
        n,
        d,
        r,
        m: 40,
        leading,
        floor: 0.05,
        weights: None,
        sign: Sign::Negative,
        seed,
    })
    .unwrap();
    ProblemInstance::from_pca(pca).unwrap()
}

fn settings(alpha: f64, iters: usize) -> AlgorithmConfig {
    AlgorithmConfig {
        alpha,
        lambda: 10.0,
        epsilon: 0.3,
        max_iters: iters,
        tol_grad: 0.0,
        tol_consensus: 0.0,
        consensus_rounds: 1,
        trace_stride: 1,
    }
}

fn consts(problem: &ProblemInstance, cfg: &AlgorithmConfig) -> MeritConstants {
    estimate_constants(problem, cfg.params().unwrap(), 50, 0).unwrap()
}

fn start(problem: &ProblemInstance, seed: u64) -> Mat {
    let (d, r) = problem.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    random_stiefel(d, r, &mut rng).unwrap().into_inner()
}

#[test]
fn one_agent_lags_the_centralized_method_by_one_step() {
    let problem = planted(1, 8, 2, 3);
    let w = MixingMatrix::complete(1).unwrap();
    let cfg = settings(1e-3, 300);
    let x0 = start(&problem, 3);
    let mut dec = Solver::new(Algorithm::Drfgt, &problem, &w, &cfg, &x0).unwrap();
    let mut cen = Solver::new(Algorithm::CentralizedLanding, &problem, &w, &cfg, &x0).unwrap();
    dec.step().unwrap();
    assert_eq!(dec.state().x[0], x0);
    for _ in 0..300 {
        assert_eq!(dec.state().x[0], cen.state().x[0]);
        dec.step().unwrap();
        cen.step().unwrap();
    }
}

#[test]
fn retraction_baseline_stays_feasible_and_counts_factorizations() {
    let problem = planted(4, 8, 2, 5);
    let w = MixingMatrix::metropolis(&Graph::ring(4).unwrap()).unwrap();
    let cfg = settings(1e-3, 200);
    let k = consts(&problem, &cfg);
    let out = run(
        Algorithm::RetractionDgt,
        &problem,
        &w,
        &cfg,
        &start(&problem, 5),
        &k,
        &mut NullSink,
    )
    .unwrap();
    assert_eq!(out.iterations, 200);
    assert_eq!(out.state.factorizations, 4 * 200);
    for x in &out.state.x {
        assert!(feasibility_residual(x) <= 1e-12);
    }
}

#[test]
fn drfgt_never_factorizes() {
    let problem = planted(4, 8, 2, 6);
    let w = MixingMatrix::metropolis(&Graph::ring(4).unwrap()).unwrap();
    let cfg = settings(1e-3, 200);
    let k = consts(&problem, &cfg);
    let out = run(
        Algorithm::Drfgt,
        &problem,
        &w,
        &cfg,
        &start(&problem, 6),
        &k,
        &mut NullSink,
    )
    .unwrap();
    assert_eq!(out.state.factorizations, 0);
    assert_eq!(out.last.qr_svd_count, 0);
}

#[test]
fn huge_steps_are_reported_as_divergence() {
    let problem = planted(3, 6, 2, 7);
    let w = MixingMatrix::complete(3).unwrap();
    let cfg = settings(50.0, 1000);
    let k = consts(&problem, &cfg);
    let out = run(
        Algorithm::Drfgt,
        &problem,
        &w,
        &cfg,
        &start(&problem, 7),
        &k,
        &mut NullSink,
    )
    .unwrap();
    assert!(
        matches!(out.exit, ExitReason::Diverged { .. }),
        "{:?}",
        out.exit
    );
    assert!(out.iterations < 1000);
    assert!(!out.warnings.is_empty());
}

#[test]
fn converged_runs_stop_early() {
    let problem = planted(3, 6, 2, 8);
    let w = MixingMatrix::complete(3).unwrap();
    let mut cfg = settings(0.02, 20_000);
    cfg.lambda = 1.0;
    cfg.tol_grad = 1e-6;
    cfg.tol_consensus = 1e-6;
    let k = consts(&problem, &cfg);
    let out = run(
        Algorithm::Drfgt,
        &problem,
        &w,
        &cfg,
        &start(&problem, 8),
        &k,
        &mut NullSink,
    )
    .unwrap();
    assert_eq!(out.exit, ExitReason::Converged);
    assert!(out.iterations < 20_000);
    assert!(out.last.landing_norm_avg <= 1e-6);
}

#[test]
fn trace_stride_keeps_first_and_last() {
    let problem = planted(2, 6, 2, 9);
    let w = MixingMatrix::complete(2).unwrap();
    let mut cfg = settings(1e-3, 95);
    cfg.trace_stride = 10;
    let k = consts(&problem, &cfg);
    let mut trace: Vec<TraceRecord> = Vec::new();
    run(
        Algorithm::Drfgt,
        &problem,
        &w,
        &cfg,
        &start(&problem, 9),
        &k,
        &mut trace,
    )
    .unwrap();
    let ks: Vec<usize> = trace.iter().map(|t| t.k).collect();
    assert_eq!(ks, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]);
    let text = serde_json::to_string(&trace[3]).unwrap();
    let back: TraceRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back, trace[3]);
}

#[test]
fn ergodic_bound_holds_on_a_small_ring() {
    let problem = planted(4, 8, 2, 10);
    let w = MixingMatrix::metropolis(&Graph::ring(4).unwrap()).unwrap();
    let mut cfg = settings(1.0, 2000);
    let k = consts(&problem, &cfg);
    let b = step_size_bounds(&k, w.sigma(), 4).unwrap();
    cfg.alpha = b.safe.min(0.99 * b.ergodic);
    let premise = ErgodicPremise::new(cfg.alpha, &k, w.sigma(), 4).unwrap();
    assert!(premise.satisfied());
    let mut trace: Vec<TraceRecord> = Vec::new();
    run(
        Algorithm::Drfgt,
        &problem,
        &w,
        &cfg,
        &start(&problem, 10),
        &k,
        &mut trace,
    )
    .unwrap();
    for horizon in [10, 100, 2000] {
        let rep = ergodic_check(&trace, horizon, &premise).unwrap();
        assert_eq!(rep.verdict, ErgodicVerdict::Holds, "{rep:?}");
    }
}

#[test]
fn safe_step_shrinks_with_more_agents_and_worse_mixing() {
    let a = safe_step_size(2.0, 50.0, 10.0, 0.3, 0.5, 4).unwrap();
    assert!(safe_step_size(2.0, 50.0, 10.0, 0.3, 0.5, 16).unwrap() <= a);
    assert!(safe_step_size(2.0, 50.0, 10.0, 0.3, 0.9, 4).unwrap() < a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The average tracker equals the average landing field at every step.
    #[test]
    fn tracking_identity_holds(seed in 0u64..1000, n in 2usize..6, self_weight in 0.3f64..0.9) {
        let problem = planted(n, 6, 2, seed);
        let w = MixingMatrix::ring(n, self_weight).unwrap();
        let cfg = settings(2e-3, 50);
        let params = cfg.params().unwrap();
        let mut solver = Solver::new(Algorithm::Drfgt, &problem, &w, &cfg, &start(&problem, seed)).unwrap();
        for _ in 0..50 {
            solver.step().unwrap();
            let s = solver.state();
            let mut lbar = Mat::zeros(6, 2);
            for (i, x) in s.x.iter().enumerate() {
                let g = problem.local(i).unwrap().gradient(x);
                lbar += landing_field(x, &g, &params).unwrap();
            }
            lbar /= n as f64;
            let ybar = s.mean_y();
            prop_assert!((&ybar - &lbar).norm() <= 1e-12 * (1.0 + ybar.norm()));
        }
    }

    /// With a feasible start and the safe step the average iterate stays in half the safety region.
    #[test]
    fn safe_step_keeps_the_average_near_the_manifold(seed in 0u64..1000) {
        let problem = planted(4, 8, 2, seed);
        let w = MixingMatrix::metropolis(&Graph::ring(4).unwrap()).unwrap();
        let mut cfg = settings(1.0, 300);
        let k = consts(&problem, &cfg);
        cfg.alpha = step_size_bounds(&k, w.sigma(), 4).unwrap().safe;
        let mut solver = Solver::new(Algorithm::Drfgt, &problem, &w, &cfg, &start(&problem, seed)).unwrap();
        for _ in 0..300 {
            solver.step().unwrap();
            prop_assert!(feasibility_residual(&solver.state().mean_x()) <= cfg.epsilon / 2.0);
        }
    }
}
