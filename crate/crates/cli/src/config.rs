use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Two-dimensional double banana with Genz integrands.
    Banana,
    /// Predator-prey posterior.
    Predprey,
}

impl ProblemKind {
    pub fn dim(&self) -> usize {
        match self {
            ProblemKind::Banana => 2,
            ProblemKind::Predprey => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adaptive,
    Combined,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Adaptive => "adaptive",
            Method::Combined => "combined",
        }
    }
}

/// Experiment settings; every field can come from a JSON file or a flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub method: Method,
    /// Integrand names; empty means all of the problem's integrands.
    pub qoi: Vec<String>,
    pub levels: usize,
    /// Fixed allocation threshold; `None` uses the library default.
    pub delta: Option<f64>,
    pub tail_mult: f64,
    pub identity_rotation: bool,
    pub seed: u64,
    pub paper_scale: bool,
    /// Overrides the threshold of level 0.
    pub epsilon0: Option<f64>,
    /// Overrides the sample size of level 0.
    pub n0: Option<usize>,
    /// Overrides the per-level threshold ratio.
    pub epsilon_ratio: Option<f64>,
    /// Exponent scale of the banana density.
    pub sigma: f64,
    /// Number of partition-of-unity components; 0 picks the problem's default.
    pub components: usize,
    /// Lattice points per axis for the training data.
    pub lattice: usize,
    /// Training samples per EM round.
    pub em_samples: usize,
    /// Resampling rounds from the fitted mixture.
    pub em_rounds: usize,
    pub em_iterations: usize,
    /// Density evaluations allowed per surrogate.
    pub budget: u64,
    /// Initial intervals per axis.
    pub initial: usize,
    /// log2 of the self-reference sample size (predator-prey).
    pub reference_log2: u32,
    pub golden: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Banana,
            method: Method::Adaptive,
            qoi: Vec::new(),
            levels: 4,
            delta: None,
            tail_mult: hatqmc::pou::DEFAULT_TAIL_MULTIPLIER,
            identity_rotation: false,
            seed: 1,
            paper_scale: false,
            epsilon0: None,
            n0: None,
            epsilon_ratio: None,
            sigma: 1.0,
            components: 0,
            lattice: 0,
            em_samples: 4000,
            em_rounds: 2,
            em_iterations: 200,
            budget: hatqmc::adaptgrid::DEFAULT_BUDGET,
            initial: 2,
            reference_log2: 22,
            golden: None,
            dataset: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.levels == 0 {
            return bad("levels must be >= 1");
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return bad("delta must be positive");
            }
        }
        if !(self.tail_mult > 0.0) {
            return bad("tail multiplier must be positive");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if self.initial == 0 {
            return bad("initial resolution must be >= 1");
        }
        if matches!(self.epsilon0, Some(e) if !(e > 0.0)) {
            return bad("epsilon0 must be positive");
        }
        if matches!(self.epsilon_ratio, Some(r) if !(r > 0.0 && r <= 1.0)) {
            return bad("epsilon_ratio must lie in (0, 1]");
        }
        if matches!(self.n0, Some(n) if n < 2) {
            return bad("n0 must be >= 2");
        }
        if self.reference_log2 > 40 {
            return bad("reference_log2 must be <= 40");
        }
        Ok(())
    }

    /// Threshold of level 0 and sample size of level 0.
    pub fn scale(&self) -> (f64, usize) {
        let (eps, n) = match (self.paper_scale, self.problem) {
            (false, ProblemKind::Banana) => (5e-3, 1 << 12),
            (false, ProblemKind::Predprey) => (0.3, 1 << 14),
            (true, ProblemKind::Banana) => (5e-4, 400_000),
            (true, ProblemKind::Predprey) => (5e-6, 100_000),
        };
        (self.epsilon0.unwrap_or(eps), self.n0.unwrap_or(n))
    }

    /// Factor between consecutive thresholds. Sample sizes grow by 4 per
    /// level. A tensor grid has about `epsilon^(-s/2)` points, so at desk
    /// scale the factor `4^(-1/s)` doubles the grid per level and keeps it
    /// small against the sample size.
    pub fn threshold_ratio(&self) -> f64 {
        self.epsilon_ratio.unwrap_or(if self.paper_scale {
            0.25
        } else {
            0.25f64.powf(1.0 / self.problem.dim() as f64)
        })
    }

    /// `(epsilon_k, N_k)` for every level.
    pub fn schedule(&self) -> Vec<(f64, usize)> {
        let (e0, n0) = self.scale();
        let ratio = self.threshold_ratio();
        (0..self.levels)
            .map(|k| (e0 * ratio.powi(k as i32), n0 << (2 * k)))
            .collect()
    }

    /// Mixture size used for the partition of unity.
    pub fn component_count(&self) -> usize {
        match (self.components, self.problem) {
            (0, ProblemKind::Banana) => 2,
            (0, ProblemKind::Predprey) => 1,
            (n, _) => n,
        }
    }

    /// Lattice resolution for the EM training data.
    pub fn lattice_per_axis(&self) -> usize {
        if self.lattice > 0 {
            return self.lattice;
        }
        match self.problem {
            ProblemKind::Banana => 129,
            ProblemKind::Predprey => 17,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_paper_schedules() {
        let desk = ExperimentConfig::default().schedule();
        assert_eq!(desk.len(), 4);
        assert_eq!(desk[3].1, 4096 * 64);
        assert!((desk[2].0 - 5e-3 / 4.0).abs() < 1e-18);
        let paper = ExperimentConfig {
            paper_scale: true,
            ..Default::default()
        }
        .schedule();
        assert_eq!(paper[1], (5e-4 / 4.0, 1_600_000));
        let pp = ExperimentConfig {
            problem: ProblemKind::Predprey,
            ..Default::default()
        };
        assert_eq!(pp.component_count(), 1);
        let pp = pp.schedule();
        assert_eq!(pp[0], (0.3, 16384));
        assert!((pp[2].0 - 0.15).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"levelz": 3}"#).is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"levels": 0}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
