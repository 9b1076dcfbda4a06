use std::path::PathBuf;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hatqmc::mixture::{estimate_multi_batched, g_diagnostic, select_and_allocate, DeltaRule, EstimateReport};
use hatqmc::oracle::{reference_expectation, GoldenEntry, GoldenValues, QuadratureSpec, Rule};
use hatqmc::pou::{build_partition_model, combined_estimate_batched, em_fit, GaussianComponent, PartitionModel};
use hatqmc::problems::{horizon_states, Dataset, DoubleBanana, Genz, GenzKind, Posterior, PredPreyParams, Qoi};
use hatqmc::{run_to_convergence, DigitalSequence, GridReport, TensorHatSurrogate};

use crate::config::{ExperimentConfig, Method, ProblemKind};
use crate::report::{fit_slope, to_csv, ConvergenceRecord, LevelPoint};
use crate::CliError;

/// Trapezoid nodes per axis for the banana ground truth.
pub const GOLDEN_NODES: usize = 2049;

/// A density together with the integrands evaluated against it.
pub enum Target {
    Banana {
        density: DoubleBanana,
        integrands: Vec<(String, Genz)>,
    },
    PredPrey {
        posterior: Posterior,
        qois: Vec<Qoi>,
    },
}

fn genz_name(kind: GenzKind) -> &'static str {
    match kind {
        GenzKind::ProductPeak => "f1",
        GenzKind::CornerPeak => "f2",
        GenzKind::Continuous => "f3",
    }
}

impl Target {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        match cfg.problem {
            ProblemKind::Banana => {
                let all = [GenzKind::ProductPeak, GenzKind::CornerPeak, GenzKind::Continuous];
                let integrands = all
                    .iter()
                    .filter(|k| cfg.qoi.is_empty() || cfg.qoi.iter().any(|q| q == genz_name(**k)))
                    .map(|&k| (genz_name(k).to_string(), Genz::two_dim(k)))
                    .collect::<Vec<_>>();
                if integrands.len() != cfg.qoi.len().max(if cfg.qoi.is_empty() { 3 } else { 0 }) {
                    return Err(CliError::Config(format!(
                        "unknown integrand in {:?}; expected f1, f2 or f3",
                        cfg.qoi
                    )));
                }
                Ok(Target::Banana {
                    density: DoubleBanana::new(cfg.sigma)?,
                    integrands,
                })
            }
            ProblemKind::Predprey => {
                let qois = if cfg.qoi.is_empty() {
                    Qoi::ALL.to_vec()
                } else {
                    cfg.qoi
                        .iter()
                        .map(|q| Qoi::parse(q).map_err(|e| CliError::Config(e.to_string())))
                        .collect::<Result<_, _>>()?
                };
                let data = match &cfg.dataset {
                    Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(|e| {
                        CliError::Config(format!("cannot read dataset {}: {e}", p.display()))
                    })?)
                    .map_err(|e| CliError::Config(format!("dataset {}: {e}", p.display())))?,
                    None => Dataset::standard(),
                };
                Ok(Target::PredPrey {
                    posterior: Posterior::new(data),
                    qois,
                })
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target::Banana { .. } => "banana",
            Target::PredPrey { .. } => "predprey",
        }
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Target::Banana { .. } => DoubleBanana::BOUNDS.to_vec(),
            Target::PredPrey { .. } => PredPreyParams::bounds(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds().len()
    }

    /// Unnormalized density, zero outside the box.
    pub fn density(&self, x: &[f64]) -> f64 {
        match self {
            Target::Banana { density, .. } => {
                if DoubleBanana::BOUNDS.iter().zip(x).all(|(&(a, b), v)| *v >= a && *v <= b) {
                    density.density(x)
                } else {
                    0.0
                }
            }
            Target::PredPrey { posterior, .. } => posterior.eval(x),
        }
    }

    pub fn output_names(&self) -> Vec<String> {
        match self {
            Target::Banana { integrands, .. } => integrands.iter().map(|(n, _)| n.clone()).collect(),
            Target::PredPrey { qois, .. } => qois.iter().map(Qoi::name).collect(),
        }
    }

    /// All integrands at points stored back to back, `outputs` values per
    /// point; NaN marks a failed model solve.
    pub fn outputs(&self, xs: &[f64], outs: &mut [f64]) {
        let s = self.dim();
        let m = outs.len() / (xs.len() / s).max(1);
        match self {
            Target::Banana { integrands, .. } => {
                for (x, out) in xs.chunks(s).zip(outs.chunks_mut(m)) {
                    for (o, (_, g)) in out.iter_mut().zip(integrands) {
                        *o = g.eval(x);
                    }
                }
            }
            Target::PredPrey { qois, .. } => {
                for (state, out) in horizon_states(xs).into_iter().zip(outs.chunks_mut(m)) {
                    match state {
                        Some((p, q)) => {
                            for (o, k) in out.iter_mut().zip(qois) {
                                *o = k.from_state(p, q);
                            }
                        }
                        None => out.fill(f64::NAN),
                    }
                }
            }
        }
    }
}

/// Key of a banana ground-truth value in the golden file.
pub fn golden_key(sigma: f64, integrand: &str) -> String {
    format!("banana/sigma={sigma}/{integrand}")
}

/// Tensor trapezoid ground truth for every banana integrand.
pub fn compute_golden(cfg: &ExperimentConfig) -> Result<GoldenValues, CliError> {
    let target = Target::from_config(&ExperimentConfig {
        problem: ProblemKind::Banana,
        qoi: Vec::new(),
        ..cfg.clone()
    })?;
    let Target::Banana { density, integrands } = &target else {
        unreachable!()
    };
    // Shift the log density so values near the peak are O(1).
    let shift = density.log_density(&[0.0, 0.0]);
    let spec = QuadratureSpec::new(target.bounds(), vec![GOLDEN_NODES; 2], Rule::Trapezoid)?;
    let mut golden = GoldenValues::default();
    for (name, g) in integrands {
        let (value, err) = reference_expectation(|x| (density.log_density(x) - shift).exp(), |x| g.eval(x), &spec)?;
        log::info!("golden {name}: {value:.15e} (half-resolution difference {err:.2e})");
        golden.insert(
            golden_key(cfg.sigma, name),
            GoldenEntry {
                value,
                error_estimate: err,
                spec: spec.clone(),
            },
        );
    }
    Ok(golden)
}

fn golden_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.golden.clone().unwrap_or_else(|| cfg.out_dir.join("golden.json"))
}

/// Training data for EM: lattice importance resampling, then rounds of
/// resampling from the fitted mixture. Returns the components and the
/// density evaluations spent.
pub fn fit_partition(target: &Target, cfg: &ExperimentConfig) -> Result<(Vec<GaussianComponent>, u64), CliError> {
    let bounds = target.bounds();
    let s = bounds.len();
    let l = cfg.lattice_per_axis();
    let cells = l.pow(s as u32);
    let width: Vec<f64> = bounds.iter().map(|(a, b)| (b - a) / l as f64).collect();
    let centre = |i: usize| -> Vec<f64> {
        let mut rem = i;
        let mut x = vec![0.0; s];
        for j in (0..s).rev() {
            x[j] = bounds[j].0 + (rem % l) as f64 * width[j] + 0.5 * width[j];
            rem /= l;
        }
        x
    };
    let weights: Vec<f64> = (0..cells).into_par_iter().map(|i| target.density(&centre(i))).collect();
    let mut evals = cells as u64;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let picks = resample(&weights, cfg.em_samples, &mut rng)
        .ok_or(CliError::Numerical(hatqmc::Error::DegenerateDensity(0.0)))?;
    let samples: Vec<Vec<f64>> = picks
        .into_iter()
        .map(|i| {
            let c = centre(i);
            c.iter()
                .zip(&width)
                .map(|(x, w)| x + (rng.gen::<f64>() - 0.5) * w)
                .collect()
        })
        .collect();
    let mut comps = em_fit(&samples, cfg.component_count(), cfg.em_iterations, cfg.seed)?.components;

    for round in 0..cfg.em_rounds {
        let chols: Vec<_> = comps
            .iter()
            .map(|c| {
                c.covariance()
                    .clone()
                    .cholesky()
                    .ok_or_else(|| CliError::Numerical(hatqmc::Error::Fit("covariance is not positive definite".into())))
            })
            .collect::<Result<_, _>>()?;
        let alphas: Vec<f64> = comps.iter().map(GaussianComponent::alpha).collect();
        let candidates: Vec<Vec<f64>> = (0..cfg.em_samples)
            .map(|_| {
                let k = pick(&alphas, rng.gen::<f64>());
                let e = DVector::from_iterator(s, (0..s).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let x = chols[k].l() * e;
                (0..s).map(|j| comps[k].mean()[j] + x[j]).collect()
            })
            .collect();
        let importance: Vec<f64> = candidates
            .par_iter()
            .map(|x| {
                let p = target.density(x);
                if p == 0.0 {
                    return 0.0;
                }
                let psi: f64 = comps.iter().map(|c| c.alpha() * c.pdf(x)).sum();
                if psi > 0.0 {
                    p / psi
                } else {
                    0.0
                }
            })
            .collect();
        evals += cfg.em_samples as u64;
        let Some(picks) = resample(&importance, cfg.em_samples, &mut rng) else {
            log::warn!("resampling round {round} found no mass; keeping the previous fit");
            break;
        };
        let samples: Vec<Vec<f64>> = picks.into_iter().map(|i| candidates[i].clone()).collect();
        comps = em_fit(&samples, cfg.component_count(), cfg.em_iterations, cfg.seed.wrapping_add(round as u64 + 1))?.components;
    }
    let comps = comps
        .iter()
        .map(|c| c.with_box(cfg.tail_mult, cfg.identity_rotation))
        .collect::<Result<_, _>>()?;
    Ok((comps, evals))
}

fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = u * total;
    for (i, w) in weights.iter().enumerate() {
        if t < *w {
            return i;
        }
        t -= w;
    }
    weights.len() - 1
}

/// Multinomial resampling of `count` indices proportional to `weights`.
fn resample(weights: &[f64], count: usize, rng: &mut ChaCha20Rng) -> Option<Vec<usize>> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    if !(acc > 0.0 && acc.is_finite()) {
        return None;
    }
    Some(
        (0..count)
            .map(|_| {
                let t = rng.gen::<f64>() * acc;
                cdf.partition_point(|&c| c <= t).min(weights.len() - 1)
            })
            .collect(),
    )
}

/// The approximation built at one level.
pub enum Approximation {
    Adaptive(TensorHatSurrogate, GridReport),
    Combined(PartitionModel),
}

impl Approximation {
    pub fn evaluations(&self) -> u64 {
        match self {
            Approximation::Adaptive(_, r) => r.evaluations,
            Approximation::Combined(m) => m.evaluations(),
        }
    }

    pub fn grid_points(&self) -> usize {
        match self {
            Approximation::Adaptive(s, _) => s.values().len(),
            Approximation::Combined(m) => m.surrogates.iter().map(|s| s.values().len()).sum(),
        }
    }

    pub fn budget_exceeded(&self) -> bool {
        match self {
            Approximation::Adaptive(_, r) => r.budget_exceeded,
            Approximation::Combined(m) => m.reports.iter().any(|r| r.budget_exceeded),
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(match self {
            Approximation::Adaptive(s, _) => s.to_json()?,
            Approximation::Combined(m) => m.to_json()?,
        })
    }

    /// Estimates of all integrands (plus, for the combined method, the
    /// integral of `1 / Psi` as a last entry).
    pub fn estimate(
        &self,
        target: &Target,
        outputs: usize,
        n: usize,
        delta: DeltaRule,
        seq: &DigitalSequence,
    ) -> Result<(Vec<f64>, EstimateReport), CliError> {
        let (values, report) = match self {
            Approximation::Adaptive(s, _) => {
                let comps = s.to_mixture()?;
                let w: Vec<f64> = comps.iter().map(|c| c.weight).collect();
                let alloc = select_and_allocate(&w, n, delta.resolve(&w, n)?)?;
                estimate_multi_batched(&comps, &alloc, outputs, |xs, outs| target.outputs(xs, outs), seq)?
            }
            Approximation::Combined(m) => {
                let comps = &m.components;
                let s = m.dim();
                let f = |xs: &[f64], outs: &mut [f64]| {
                    let mut own = vec![0.0; xs.len() / s * outputs];
                    target.outputs(xs, &mut own);
                    for ((x, out), v) in xs.chunks(s).zip(outs.chunks_mut(outputs + 1)).zip(own.chunks(outputs)) {
                        out[..outputs].copy_from_slice(v);
                        let psi: f64 = comps.iter().map(|c| c.alpha() * c.pdf(x)).sum();
                        out[outputs] = if psi > 0.0 { 1.0 / psi } else { 0.0 };
                    }
                };
                combined_estimate_batched(m, outputs + 1, f, n, delta, seq)?
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numerical(hatqmc::Error::Domain(
                "an integrand evaluation failed during estimation".into(),
            )));
        }
        Ok((values, report))
    }
}

pub fn build_approximation(
    target: &Target,
    cfg: &ExperimentConfig,
    comps: Option<&[GaussianComponent]>,
    epsilon: f64,
) -> Result<Approximation, CliError> {
    let pi = |x: &[f64]| target.density(x);
    let approx = match cfg.method {
        Method::Adaptive => {
            let (s, r) = run_to_convergence(pi, &target.bounds(), &vec![cfg.initial; target.dim()], epsilon, cfg.budget)?;
            Approximation::Adaptive(s, r)
        }
        Method::Combined => {
            let comps = comps.ok_or_else(|| CliError::Config("combined method needs a fitted partition".into()))?;
            Approximation::Combined(build_partition_model(&pi, comps, epsilon, cfg.initial, cfg.budget)?)
        }
    };
    if approx.budget_exceeded() {
        log::warn!("evaluation budget exhausted at threshold {epsilon:e}; treating the grid as converged");
    }
    Ok(approx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub epsilon: f64,
    pub n: usize,
    pub evals: u64,
    pub grid_points: usize,
    pub budget_exceeded: bool,
    pub unselected_mass: f64,
    pub zero_count_mass: f64,
    pub zero_count: usize,
    /// Quadrature constant `G(N)` with unit product weights, for reference.
    pub g_diagnostic: f64,
    /// Estimate of the integral of the normalized target over `Psi`.
    pub inv_psi_integral: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub problem: String,
    pub method: String,
    pub config: ExperimentConfig,
    /// Density evaluations spent on the partition fit.
    pub training_evals: u64,
    pub references: Vec<(String, f64)>,
    pub levels: Vec<LevelSummary>,
    pub records: Vec<ConvergenceRecord>,
}

impl ExperimentOutput {
    pub fn record(&self, qoi: &str) -> Option<&ConvergenceRecord> {
        self.records.iter().find(|r| r.qoi == qoi)
    }

    pub fn stem(&self) -> String {
        format!("{}_{}", self.problem, self.method)
    }
}

/// Runs the double-refinement sweep and returns the records. Nothing is
/// written; see [`run_experiment`].
pub fn run_levels(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    cfg.validate()?;
    let target = Target::from_config(cfg)?;
    let names = target.output_names();
    let outputs = names.len();
    let seq = DigitalSequence::sobol(target.dim())?;
    let delta = cfg.delta.map(DeltaRule::Fixed).unwrap_or_default();

    let golden = match cfg.problem {
        ProblemKind::Banana => {
            let path = golden_path(cfg);
            let g = GoldenValues::load(&path).map_err(|_| {
                CliError::Config(format!(
                    "no ground truth at {}; run `hatqmc oracle` with the same settings first",
                    path.display()
                ))
            })?;
            let refs = names
                .iter()
                .map(|n| {
                    g.get(&golden_key(cfg.sigma, n)).map(|e| e.value).ok_or_else(|| {
                        CliError::Config(format!(
                            "{} has no value for {n} at sigma = {}; run `hatqmc oracle` first",
                            path.display(),
                            cfg.sigma
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(refs)
        }
        ProblemKind::Predprey => None,
    };

    let (comps, training_evals) = match cfg.method {
        Method::Combined => {
            let (c, e) = fit_partition(&target, cfg)?;
            (Some(c), e)
        }
        Method::Adaptive => (None, 0),
    };

    let mut estimates = Vec::new();
    let mut levels = Vec::new();
    let mut last = None;
    for (k, (eps, n)) in cfg.schedule().into_iter().enumerate() {
        let approx = build_approximation(&target, cfg, comps.as_deref(), eps)?;
        let (values, report) = approx.estimate(&target, outputs, n, delta, &seq)?;
        log::info!(
            "level {k}: epsilon {eps:.3e}, N {n}, {} evaluations, {} grid points",
            approx.evaluations(),
            approx.grid_points()
        );
        let ones = vec![1.0; target.dim()];
        levels.push(LevelSummary {
            level: k,
            epsilon: eps,
            n,
            evals: approx.evaluations(),
            grid_points: approx.grid_points(),
            budget_exceeded: approx.budget_exceeded(),
            unselected_mass: report.unselected_mass,
            zero_count_mass: report.zero_count_mass,
            zero_count: report.zero_count.len(),
            g_diagnostic: g_diagnostic(&ones, 2.0, &target.bounds(), n as f64)?,
            inv_psi_integral: values.get(outputs).copied(),
        });
        estimates.push(values[..outputs].to_vec());
        last = Some(approx);
    }

    let references = match golden {
        Some(r) => r,
        None => {
            let approx = last.expect("at least one level");
            let n = 1usize << cfg.reference_log2;
            log::info!("computing the self-reference with {n} samples");
            approx.estimate(&target, outputs, n, delta, &seq)?.0[..outputs].to_vec()
        }
    };

    let records = names
        .iter()
        .enumerate()
        .map(|(o, name)| {
            let points = levels
                .iter()
                .zip(&estimates)
                .map(|(lv, est)| LevelPoint {
                    level: lv.level,
                    n: lv.n,
                    epsilon: lv.epsilon,
                    estimate: est[o],
                    reference: references[o],
                    error: (est[o] - references[o]).abs(),
                    evals: lv.evals + training_evals,
                })
                .collect::<Vec<_>>();
            let slope = fit_slope(&points.iter().map(|p| (p.n as f64, p.error)).collect::<Vec<_>>()).ok();
            ConvergenceRecord {
                problem: target.name().into(),
                method: cfg.method.name().into(),
                qoi: name.clone(),
                points,
                slope,
            }
        })
        .collect();

    Ok(ExperimentOutput {
        problem: target.name().into(),
        method: cfg.method.name().into(),
        config: cfg.clone(),
        training_evals,
        references: names.into_iter().zip(references).collect(),
        levels,
        records,
    })
}

/// Runs the sweep and writes `<problem>_<method>.csv` and `.json` into
/// the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let out = run_levels(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let stem = out.stem();
    std::fs::write(cfg.out_dir.join(format!("{stem}.csv")), to_csv(&out.records))?;
    std::fs::write(
        cfg.out_dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&out).map_err(hatqmc::Error::from)? + "\n",
    )?;
    Ok(out)
}

/// Writes the banana ground truth to the configured golden file, merging
/// with any values already there.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<(PathBuf, GoldenValues), CliError> {
    let path = golden_path(cfg);
    let mut golden = GoldenValues::load(&path).unwrap_or_default();
    for (k, v) in compute_golden(cfg)?.0 {
        golden.insert(k, v);
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    golden.save(&path)?;
    Ok((path, golden))
}
