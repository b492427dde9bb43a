//! Experiment configuration: a TOML file with `[problem]`, `[network]`,
//! `[algorithm]` and `[output]` tables. Every key is listed in the README.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use stiefel_dgt_core::algorithms::Algorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    SyntheticPca,
    PlantedPca,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    #[default]
    Contiguous,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "type")]
    pub kind: ProblemKind,
    #[serde(default)]
    pub d: Option<usize>,
    pub r: usize,
    /// Samples per agent for the generated problems.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// `-1` minimizes `-tr(D xᵀCx)` (leading subspace), `+1` the opposite.
    #[serde(default = "default_sign")]
    pub sign: i64,
    /// Diagonal of `D`; defaults to `r, r-1, ..., 1`.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// synthetic-pca: target condition number of the averaged covariance.
    #[serde(default)]
    pub condition_target: Option<f64>,
    #[serde(default)]
    pub spectrum_max: Option<f64>,
    /// planted-pca: the `r` leading eigenvalues and the level of the rest.
    #[serde(default)]
    pub leading: Option<Vec<f64>>,
    #[serde(default)]
    pub floor: Option<f64>,
    /// dataset: CSV or DMAT file with one sample per row.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub header: bool,
    #[serde(default = "default_true")]
    pub center: bool,
    #[serde(default)]
    pub partition: PartitionKind,
    /// Use sampled constants even when closed-form PCA bounds exist.
    #[serde(default)]
    pub sampled_constants: bool,
    #[serde(default = "default_constant_samples")]
    pub constant_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Ring,
    Path,
    Star,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    #[default]
    Metropolis,
    /// Ring only: `self_weight` on the diagonal, the rest split between neighbours.
    Lazy,
    /// Complete graph only: every entry `1/n`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub topology: Topology,
    pub n: usize,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub self_weight: Option<f64>,
}

/// `alpha`: a number, `"auto-safe"` or `"auto-stable"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSpec {
    Fixed(f64),
    AutoSafe,
    AutoStable,
}

/// `lambda`: a number or `"ratio:c"`, meaning `c / alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Fixed(f64),
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Random,
    /// Reference solution plus tangent noise of norm `init_noise`.
    PerturbedReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    #[serde(default = "default_algorithm")]
    pub name: String,
    pub alpha: StepSpec,
    pub lambda: LambdaSpec,
    pub epsilon: f64,
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol_grad: f64,
    #[serde(default = "default_tol")]
    pub tol_consensus: f64,
    #[serde(default = "default_rounds")]
    pub consensus_rounds: usize,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub init_noise: f64,
    /// Multiplies the initial point, e.g. to start off the manifold.
    #[serde(default = "default_scale")]
    pub init_scale: f64,
    /// Seed of the initial point; defaults to the problem seed.
    #[serde(default)]
    pub init_seed: Option<u64>,
    /// Algorithms for `compare`.
    #[serde(default)]
    pub compare: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Jsonl,
    Both,
}

impl FromStr for TraceFormat {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "csv" => TraceFormat::Csv,
            "jsonl" => TraceFormat::Jsonl,
            "both" => TraceFormat::Both,
            _ => bail!("format must be csv, jsonl or both, got {s:?}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: TraceFormat,
    #[serde(default = "default_trace_stride")]
    pub trace_stride: usize,
    #[serde(default)]
    pub audit: bool,
    #[serde(default = "default_audit_stride")]
    pub audit_stride: usize,
    /// Radius around the solution set for the local audit checks.
    #[serde(default = "default_delta")]
    pub audit_delta: f64,
    /// PŁ constant for the local checks; fitted empirically when absent.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Write `wall_time_s = 0` so that reruns produce identical traces.
    #[serde(default)]
    pub zero_wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: TraceFormat::Csv,
            trace_stride: default_trace_stride(),
            audit: false,
            audit_stride: default_audit_stride(),
            audit_delta: default_delta(),
            mu: None,
            zero_wall_time: false,
        }
    }
}

fn default_sign() -> i64 {
    -1
}
fn default_true() -> bool {
    true
}
fn default_constant_samples() -> usize {
    200
}
fn default_algorithm() -> String {
    "drfgt".into()
}
fn default_tol() -> f64 {
    1e-6
}
fn default_scale() -> f64 {
    1.0
}
fn default_rounds() -> usize {
    1
}
fn default_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}
fn default_trace_stride() -> usize {
    1
}
fn default_audit_stride() -> usize {
    100
}
fn default_delta() -> f64 {
    0.5
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSpec::Fixed(a) => write!(f, "{a:e}"),
            StepSpec::AutoSafe => f.write_str("auto-safe"),
            StepSpec::AutoStable => f.write_str("auto-stable"),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrText {
    Num(f64),
    Int(i64),
    Text(String),
}

impl<'de> Deserialize<'de> for StepSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumOrText::deserialize(d)? {
            NumOrText::Num(v) => Ok(StepSpec::Fixed(v)),
            NumOrText::Int(v) => Ok(StepSpec::Fixed(v as f64)),
            NumOrText::Text(s) => match s.as_str() {
                "auto-safe" => Ok(StepSpec::AutoSafe),
                "auto-stable" => Ok(StepSpec::AutoStable),
                _ => Err(serde::de::Error::custom(format!(
                    "alpha must be a number, \"auto-safe\" or \"auto-stable\", got {s:?}"
                ))),
            },
        }
    }
}

impl Serialize for StepSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSpec::Fixed(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumOrText::deserialize(d)? {
            NumOrText::Num(v) => Ok(LambdaSpec::Fixed(v)),
            NumOrText::Int(v) => Ok(LambdaSpec::Fixed(v as f64)),
            NumOrText::Text(s) => s
                .strip_prefix("ratio:")
                .and_then(|c| c.trim().parse::<f64>().ok())
                .map(LambdaSpec::Ratio)
                .ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        "lambda must be a number or \"ratio:<c>\", got {s:?}"
                    ))
                }),
        }
    }
}

impl Serialize for LambdaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaSpec::Fixed(v) => s.serialize_f64(*v),
            LambdaSpec::Ratio(c) => s.serialize_str(&format!("ratio:{c}")),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        Ok(self.algorithm.name.parse::<Algorithm>()?)
    }

    /// Checks every numeric domain and referenced file without running anything.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        ensure!(p.r >= 1, "problem.r must be at least 1");
        ensure!(
            p.sign == 1 || p.sign == -1,
            "problem.sign must be 1 or -1, got {}",
            p.sign
        );
        if let Some(w) = &p.weights {
            ensure!(
                w.len() == p.r,
                "problem.weights needs {} entries, got {}",
                p.r,
                w.len()
            );
        }
        match p.kind {
            ProblemKind::SyntheticPca | ProblemKind::PlantedPca => {
                let d =
                    p.d.context("problem.d is required for generated problems")?;
                ensure!(p.r <= d, "problem.r = {} exceeds problem.d = {d}", p.r);
                ensure!(p.m.is_some_and(|m| m >= 1), "problem.m must be at least 1");
                if p.kind == ProblemKind::SyntheticPca {
                    let k = p
                        .condition_target
                        .context("problem.condition_target is required")?;
                    ensure!(k >= 1.0, "problem.condition_target must be at least 1");
                } else {
                    let l = p.leading.as_ref().context("problem.leading is required")?;
                    ensure!(l.len() == p.r, "problem.leading needs {} entries", p.r);
                    ensure!(p.floor.is_some(), "problem.floor is required");
                }
            }
            ProblemKind::Dataset => {
                let path = p.dataset.as_ref().context("problem.dataset is required")?;
                ensure!(path.is_file(), "dataset {} does not exist", path.display());
            }
        }
        ensure!(
            p.constant_samples >= 1,
            "problem.constant_samples must be at least 1"
        );

        let n = &self.network;
        ensure!(n.n >= 1, "network.n must be at least 1");
        match n.weights {
            WeightScheme::Lazy => {
                ensure!(n.topology == Topology::Ring, "lazy weights need a ring");
                let s = n
                    .self_weight
                    .context("network.self_weight is required for lazy weights")?;
                ensure!(
                    (0.0..=1.0).contains(&s),
                    "network.self_weight must lie in [0, 1]"
                );
            }
            WeightScheme::Uniform => {
                ensure!(
                    n.topology == Topology::Complete,
                    "uniform weights need a complete graph"
                )
            }
            WeightScheme::Metropolis => {}
        }

        let a = &self.algorithm;
        self.algorithm()?;
        for name in &a.compare {
            name.parse::<Algorithm>()?;
        }
        ensure!(
            a.epsilon > 0.0 && a.epsilon < 0.75,
            "algorithm.epsilon must lie in (0, 0.75), got {}",
            a.epsilon
        );
        match (a.alpha, a.lambda) {
            (StepSpec::Fixed(v), _) => {
                ensure!(v > 0.0 && v.is_finite(), "algorithm.alpha must be positive")
            }
            (_, LambdaSpec::Ratio(_)) => {
                bail!("lambda = \"ratio:c\" needs a numeric alpha; automatic step sizes depend on lambda")
            }
            _ => {}
        }
        match a.lambda {
            LambdaSpec::Fixed(v) | LambdaSpec::Ratio(v) => {
                ensure!(
                    v > 0.0 && v.is_finite(),
                    "algorithm.lambda must be positive"
                )
            }
        }
        ensure!(
            a.tol_grad >= 0.0 && a.tol_consensus >= 0.0,
            "tolerances must be non-negative"
        );
        ensure!(
            a.consensus_rounds >= 1,
            "algorithm.consensus_rounds must be at least 1"
        );
        ensure!(
            a.init_noise >= 0.0,
            "algorithm.init_noise must be non-negative"
        );
        ensure!(
            a.init_scale > 0.0 && a.init_scale.is_finite(),
            "algorithm.init_scale must be positive"
        );

        let o = &self.output;
        ensure!(
            o.trace_stride >= 1,
            "output.trace_stride must be at least 1"
        );
        ensure!(
            o.audit_stride >= 1,
            "output.audit_stride must be at least 1"
        );
        ensure!(o.audit_delta > 0.0, "output.audit_delta must be positive");
        if let Some(mu) = o.mu {
            ensure!(mu > 0.0, "output.mu must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
type = "planted-pca"
d = 6
r = 2
m = 30
leading = [1.0, 0.5]
floor = 0.1

[network]
topology = "ring"
n = 4

[algorithm]
alpha = "auto-safe"
lambda = 10
epsilon = 0.3
max_iters = 10
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.algorithm.alpha, StepSpec::AutoSafe);
        assert_eq!(c.algorithm.lambda, LambdaSpec::Fixed(10.0));
        assert_eq!(c.problem.sign, -1);
        assert_eq!(c.output.audit_stride, 100);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn ratio_lambda_needs_numeric_alpha() {
        let c =
            ExperimentConfig::from_toml(&MINIMAL.replace("lambda = 10", "lambda = \"ratio:0.1\""))
                .unwrap();
        assert!(c.validate().is_err());
        let text = MINIMAL
            .replace("lambda = 10", "lambda = \"ratio:0.1\"")
            .replace("\"auto-safe\"", "1e-4");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.algorithm.lambda, LambdaSpec::Ratio(0.1));
    }

    #[test]
    fn errors_name_the_offending_line() {
        let err =
            ExperimentConfig::from_toml(&MINIMAL.replace("epsilon = 0.3", "epsilon = \"big\""))
                .unwrap_err()
                .to_string();
        assert!(err.contains("line 17"), "{err}");
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("n = 4", "n = 4\nbogus = 1"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("\"auto-safe\"", "\"fast\""))
            .unwrap_err()
            .to_string();
        assert!(err.contains("auto-safe"), "{err}");
    }

    #[test]
    fn domains_are_checked() {
        for (from, to) in [
            ("epsilon = 0.3", "epsilon = 0.8"),
            ("n = 4", "n = 0"),
            ("r = 2", "r = 7"),
            (
                "type = \"planted-pca\"",
                "type = \"dataset\"\ndataset = \"/nonexistent/x.csv\"",
            ),
        ] {
            let c = ExperimentConfig::from_toml(&MINIMAL.replace(from, to)).unwrap();
            assert!(c.validate().is_err(), "{to}");
        }
    }
}
