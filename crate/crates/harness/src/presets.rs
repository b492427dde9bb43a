//! Named configurations.

use std::path::PathBuf;

use anyhow::{bail, Result};

use crate::config::*;

pub const PRESETS: &[&str] = &["paper-synthetic", "desk-pca"];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "paper-synthetic" => Ok(paper_synthetic()),
        "desk-pca" => Ok(desk_pca()),
        _ => bail!("unknown preset {name:?}; available: {}", PRESETS.join(", ")),
    }
}

/// Ten agents on a lazy ring (0.8 / 0.1), `d = 100`, `r = 10`, 1000 samples
/// per agent, `alpha = 1e-4`, `lambda = 0.1 / alpha`. Covariance spectra are
/// mapped onto `[0.01, 1]`.
pub fn paper_synthetic() -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemConfig {
            kind: ProblemKind::SyntheticPca,
            d: Some(100),
            r: 10,
            m: Some(1000),
            seed: 0,
            sign: -1,
            weights: None,
            condition_target: Some(100.0),
            spectrum_max: Some(1.0),
            leading: None,
            floor: None,
            dataset: None,
            header: false,
            center: true,
            partition: PartitionKind::Contiguous,
            sampled_constants: false,
            constant_samples: 200,
        },
        network: NetworkConfig {
            topology: Topology::Ring,
            n: 10,
            weights: WeightScheme::Lazy,
            self_weight: Some(0.8),
        },
        algorithm: AlgorithmSection {
            name: "drfgt".into(),
            alpha: StepSpec::Fixed(1e-4),
            lambda: LambdaSpec::Ratio(0.1),
            epsilon: 0.5,
            max_iters: 50_000,
            tol_grad: 1e-8,
            tol_consensus: 1e-8,
            consensus_rounds: 1,
            init: InitKind::Random,
            init_noise: 0.0,
            init_scale: 1.0,
            init_seed: None,
            compare: vec!["drfgt".into(), "retraction_dgt".into()],
        },
        output: OutputConfig {
            dir: PathBuf::from("runs/paper-synthetic"),
            trace_stride: 10,
            ..OutputConfig::default()
        },
    }
}

/// Five agents on a Metropolis ring, `d = 20`, `r = 3`, planted spectrum
/// `(1, 0.67, 0.34)` over a floor of `0.02`, safe step size.
pub fn desk_pca() -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemConfig {
            kind: ProblemKind::PlantedPca,
            d: Some(20),
            r: 3,
            m: Some(200),
            seed: 1,
            sign: -1,
            weights: None,
            condition_target: None,
            spectrum_max: None,
            leading: Some(vec![1.0, 0.67, 0.34]),
            floor: Some(0.02),
            dataset: None,
            header: false,
            center: true,
            partition: PartitionKind::Contiguous,
            sampled_constants: false,
            constant_samples: 200,
        },
        network: NetworkConfig {
            topology: Topology::Ring,
            n: 5,
            weights: WeightScheme::Metropolis,
            self_weight: None,
        },
        algorithm: AlgorithmSection {
            name: "drfgt".into(),
            alpha: StepSpec::AutoSafe,
            lambda: LambdaSpec::Fixed(40.0),
            epsilon: 0.3,
            max_iters: 8_000_000,
            tol_grad: 1e-6,
            tol_consensus: 1e-6,
            consensus_rounds: 1,
            init: InitKind::Random,
            init_noise: 0.0,
            init_scale: 1.0,
            init_seed: None,
            compare: vec!["drfgt".into(), "retraction_dgt".into()],
        },
        output: OutputConfig {
            dir: PathBuf::from("runs/desk-pca"),
            trace_stride: 1000,
            ..OutputConfig::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(
                ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(),
                c
            );
        }
        assert!(preset("nope").is_err());
    }
}
