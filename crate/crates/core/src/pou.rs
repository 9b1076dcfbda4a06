//! Gaussian-mixture partition of unity and the combined estimator.
//!
//! A mixture `Psi = sum_i alpha_i psi_i` splits the target into pieces
//! `pi * psi_i / Psi`. Each piece is approximated by an adaptive hat
//! surrogate on a box aligned with the eigenvectors of its component's
//! covariance, and the estimator sums the per-piece mixture rules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptgrid::{run_to_convergence, GridReport};
use crate::error::{Error, Result};
use crate::hatbasis::TensorHatSurrogate;
use crate::lowdisc::DigitalSequence;
use crate::mixture::{select_and_allocate, weighted_sums_batched, DeltaRule, EstimateReport};
use crate::numeric::CompensatedSum;

/// Default number of standard deviations covered by each local box.
pub const DEFAULT_TAIL_MULTIPLIER: f64 = 5.0;

const EIGEN_FLOOR: f64 = 1e-12;
const JITTER: f64 = 1e-8;

/// One weighted Gaussian with its local frame and truncation box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentDoc", into = "ComponentDoc")]
pub struct GaussianComponent {
    alpha: f64,
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    rotation: DMatrix<f64>,
    lambda: Vec<f64>,
    half_widths: Vec<f64>,
    tail_multiplier: f64,
    // derived
    precision: DMatrix<f64>,
    log_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentDoc {
    alpha: f64,
    mu: Vec<f64>,
    #[serde(rename = "Sigma")]
    sigma: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    a_vec: Vec<f64>,
    tail_multiplier: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = r.len();
    if r.iter().any(|row| row.len() != n) {
        return Err(Error::Parameter("matrix must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| r[i][j]))
}

impl From<GaussianComponent> for ComponentDoc {
    fn from(c: GaussianComponent) -> Self {
        ComponentDoc {
            alpha: c.alpha,
            mu: c.mean,
            sigma: rows(&c.cov),
            u: rows(&c.rotation),
            lambda: c.lambda,
            a_vec: c.half_widths,
            tail_multiplier: c.tail_multiplier,
        }
    }
}

impl TryFrom<ComponentDoc> for GaussianComponent {
    type Error = Error;

    fn try_from(d: ComponentDoc) -> Result<Self> {
        let cov = from_rows(&d.sigma)?;
        let rotation = from_rows(&d.u)?;
        let s = d.mu.len();
        if cov.nrows() != s || rotation.nrows() != s || d.lambda.len() != s || d.a_vec.len() != s {
            return Err(Error::Parameter("component fields disagree in dimension".into()));
        }
        let (precision, log_norm) = density_factors(&cov)?;
        Ok(Self {
            alpha: d.alpha,
            mean: d.mu,
            cov,
            rotation,
            lambda: d.lambda,
            half_widths: d.a_vec,
            tail_multiplier: d.tail_multiplier,
            precision,
            log_norm,
        })
    }
}

/// Clamped eigendecomposition, largest eigenvalue first, with a fixed sign
/// convention (largest-magnitude entry of each eigenvector positive).
fn eigen(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let s = cov.nrows();
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(lmax > 0.0 && lmax.is_finite()) {
        return Err(Error::Fit("covariance has no positive eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = DMatrix::zeros(s, s);
    let mut lambda = Vec::with_capacity(s);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        u.set_column(col, &v);
        lambda.push(eig.eigenvalues[k].max(EIGEN_FLOOR * lmax));
    }
    Ok((u, lambda))
}

/// Precision matrix and `-0.5 * log det(2 pi Sigma)` from the clamped spectrum.
fn density_factors(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (u, lambda) = eigen(cov)?;
    let s = cov.nrows();
    let inv = DMatrix::from_diagonal(&DVector::from_iterator(s, lambda.iter().map(|l| 1.0 / l)));
    let precision = &u * inv * u.transpose();
    let log_det: f64 = lambda.iter().map(|l| l.ln()).sum();
    let log_norm = -0.5 * (s as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    Ok((precision, log_norm))
}

impl GaussianComponent {
    /// Builds a component; `identity_rotation` keeps the original axes.
    pub fn new(
        alpha: f64,
        mean: Vec<f64>,
        cov: DMatrix<f64>,
        tail_multiplier: f64,
        identity_rotation: bool,
    ) -> Result<Self> {
        let s = mean.len();
        if s == 0 || cov.nrows() != s || cov.ncols() != s {
            return Err(Error::Parameter("mean and covariance disagree in dimension".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0 + 1e-12) {
            return Err(Error::Parameter(format!("weight {alpha} outside (0, 1]")));
        }
        if !(tail_multiplier > 0.0) {
            return Err(Error::Parameter(format!(
                "tail multiplier must be positive, got {tail_multiplier}"
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite mean or covariance".into()));
        }
        let (precision, log_norm) = density_factors(&cov)?;
        let (rotation, lambda) = if identity_rotation {
            let lmax = (0..s).map(|j| cov[(j, j)]).fold(0.0, f64::max);
            (
                DMatrix::identity(s, s),
                (0..s).map(|j| cov[(j, j)].max(EIGEN_FLOOR * lmax)).collect(),
            )
        } else {
            eigen(&cov)?
        };
        let half_widths = lambda.iter().map(|l| tail_multiplier * l.sqrt()).collect();
        Ok(Self {
            alpha,
            mean,
            cov,
            rotation,
            lambda,
            half_widths,
            tail_multiplier,
            precision,
            log_norm,
        })
    }

    /// Same Gaussian with a different box.
    pub fn with_box(&self, tail_multiplier: f64, identity_rotation: bool) -> Result<Self> {
        Self::new(self.alpha, self.mean.clone(), self.cov.clone(), tail_multiplier, identity_rotation)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn tail_multiplier(&self) -> f64 {
        self.tail_multiplier
    }

    /// Local box `[-a^(i), a^(i)]`.
    pub fn local_bounds(&self) -> Vec<(f64, f64)> {
        self.half_widths.iter().map(|&h| (-h, h)).collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let s = self.dim();
        let mut q = 0.0;
        for i in 0..s {
            let di = x[i] - self.mean[i];
            let mut row = 0.0;
            for j in 0..s {
                row += self.precision[(i, j)] * (x[j] - self.mean[j]);
            }
            q += di * row;
        }
        self.log_norm - 0.5 * q
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// `z = U^T (x - mu)`.
    pub fn to_local(&self, x: &[f64], z: &mut [f64]) {
        let s = self.dim();
        for j in 0..s {
            let mut v = 0.0;
            for i in 0..s {
                v += self.rotation[(i, j)] * (x[i] - self.mean[i]);
            }
            z[j] = v;
        }
    }

    /// `x = U z + mu`.
    pub fn from_local(&self, z: &[f64], x: &mut [f64]) {
        let s = self.dim();
        for i in 0..s {
            let mut v = self.mean[i];
            for j in 0..s {
                v += self.rotation[(i, j)] * z[j];
            }
            x[i] = v;
        }
    }

    /// `sup psi_i` outside the rotated box: the density at the closest
    /// boundary point, `exp(-0.5 min_j h_j^2 / (U^T Sigma U)_jj)` times the peak.
    pub fn tail_bound(&self) -> f64 {
        let local_cov = self.rotation.transpose() * &self.cov * &self.rotation;
        let q = self
            .half_widths
            .iter()
            .enumerate()
            .map(|(j, h)| h * h / local_cov[(j, j)])
            .fold(f64::INFINITY, f64::min);
        (self.log_norm - 0.5 * q).exp()
    }

    /// Peak value of the normalized density.
    pub fn peak(&self) -> f64 {
        self.log_norm.exp()
    }
}

/// Convenience for `transform_to_local` as a free function.
pub fn transform_to_local(comp: &GaussianComponent, x: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; comp.dim()];
    comp.to_local(x, &mut z);
    z
}

pub fn inverse_transform(comp: &GaussianComponent, z: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; comp.dim()];
    comp.from_local(z, &mut x);
    x
}

/// `psi_i(x) / Psi(x)` for every `i`, evaluated in log space.
pub fn partition_ratios(comps: &[GaussianComponent], x: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (o, c) in out.iter_mut().zip(comps) {
        *o = c.log_pdf(x);
        max = max.max(*o + c.alpha.ln());
    }
    let log_total = max
        + comps
            .iter()
            .zip(out.iter())
            .map(|(c, l)| (l + c.alpha.ln() - max).exp())
            .sum::<f64>()
            .ln();
    for o in out.iter_mut() {
        *o = (*o - log_total).exp();
    }
}

fn single_ratio(comps: &[GaussianComponent], i: usize, x: &[f64]) -> f64 {
    let logs: Vec<f64> = comps.iter().map(|c| c.alpha.ln() + c.log_pdf(x)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    (logs[i] - comps[i].alpha.ln() - log_total).exp()
}

/// `z -> pi(x) psi_i(x) / Psi(x)` with `x = T_i^{-1}(z)`.
pub fn localized_target<'a, P>(pi: &'a P, comps: &'a [GaussianComponent], i: usize) -> impl Fn(&[f64]) -> f64 + Sync + 'a
where
    P: Fn(&[f64]) -> f64 + Sync,
{
    move |z: &[f64]| {
        let x = inverse_transform(&comps[i], z);
        let p = pi(&x);
        if p == 0.0 {
            return 0.0;
        }
        p * single_ratio(comps, i, &x)
    }
}

/// Result of [`em_fit`].
#[derive(Debug, Clone)]
pub struct EmFit {
    pub components: Vec<GaussianComponent>,
    /// Mean log-likelihood after each iteration.
    pub log_likelihood: Vec<f64>,
}

struct Params {
    alpha: Vec<f64>,
    mean: Vec<DVector<f64>>,
    cov: Vec<DMatrix<f64>>,
}

fn log_gauss(mean: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, log_det: f64, x: &DVector<f64>) -> f64 {
    let s = x.len() as f64;
    let d = x - mean;
    let y = chol.l().solve_lower_triangular(&d).expect("triangular factor is invertible");
    -0.5 * (s * (2.0 * std::f64::consts::PI).ln() + log_det + y.norm_squared())
}

fn m_step(points: &[DVector<f64>], resp: &[Vec<f64>], k: usize) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let s = points[0].len();
    let nk: f64 = resp.iter().map(|r| r[k]).sum();
    if !(nk > 1e-12 * points.len() as f64) {
        return None;
    }
    let mut mean = DVector::zeros(s);
    for (p, r) in points.iter().zip(resp) {
        mean += p * r[k];
    }
    mean /= nk;
    let mut cov = DMatrix::zeros(s, s);
    for (p, r) in points.iter().zip(resp) {
        let d = p - &mean;
        cov += &d * d.transpose() * r[k];
    }
    cov /= nk;
    let jitter = JITTER * cov.trace() / s as f64;
    for j in 0..s {
        cov[(j, j)] += jitter;
    }
    Some((nk / points.len() as f64, mean, cov))
}

/// k-means++ seeding: hard assignments to `count` seeded centres.
fn seed_responsibilities(points: &[DVector<f64>], count: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centres = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - &centres[0]).norm_squared()).collect();
    while centres.len() < count {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centres.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - &points[pick]).norm_squared());
        }
    }
    points
        .iter()
        .map(|p| {
            let best = (0..count)
                .min_by(|&a, &b| (p - &centres[a]).norm_squared().total_cmp(&(p - &centres[b]).norm_squared()))
                .unwrap();
            (0..count).map(|k| f64::from(u8::from(k == best))).collect()
        })
        .collect()
}

/// Expectation-maximization for a Gaussian mixture with `count` components.
///
/// Iterates until the mean log-likelihood improves by less than `1e-10`
/// relative or `iterations` is reached. The returned components carry the
/// default box; use [`GaussianComponent::with_box`] to change it.
pub fn em_fit(samples: &[Vec<f64>], count: usize, iterations: usize, seed: u64) -> Result<EmFit> {
    if count == 0 {
        return Err(Error::Parameter("component count must be >= 1".into()));
    }
    let s = samples.first().map(Vec::len).unwrap_or(0);
    if s == 0 || samples.iter().any(|x| x.len() != s) {
        return Err(Error::Parameter("samples must share a positive dimension".into()));
    }
    if samples.len() < count * (s + 1) {
        return Err(Error::Parameter(format!(
            "{} samples are too few for {count} components in {s} dimensions",
            samples.len()
        )));
    }
    let points: Vec<DVector<f64>> = samples.iter().map(|x| DVector::from_column_slice(x)).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut resp = seed_responsibilities(&points, count, &mut rng);
    let mut reseeded = vec![false; count];
    let mut history = Vec::new();
    let mut params;
    let mut iter = 0;
    loop {
        // M-step
        params = Params {
            alpha: Vec::with_capacity(count),
            mean: Vec::with_capacity(count),
            cov: Vec::with_capacity(count),
        };
        let mut empty = None;
        for k in 0..count {
            match m_step(&points, &resp, k) {
                Some((a, m, c)) => {
                    params.alpha.push(a);
                    params.mean.push(m);
                    params.cov.push(c);
                }
                None => {
                    empty = Some(k);
                    break;
                }
            }
        }
        if let Some(k) = empty {
            if reseeded[k] {
                return Err(Error::Fit(format!("component {k} lost all its samples twice")));
            }
            reseeded[k] = true;
            log::warn!("EM component {k} is empty, reseeding it");
            let far = (0..points.len())
                .max_by(|&a, &b| {
                    let ra = resp[a].iter().cloned().fold(0.0, f64::max);
                    let rb = resp[b].iter().cloned().fold(0.0, f64::max);
                    rb.total_cmp(&ra)
                })
                .unwrap();
            for (i, r) in resp.iter_mut().enumerate() {
                if i == far {
                    r.iter_mut().for_each(|v| *v = 0.0);
                }
                r[k] = if i == far { 1.0 } else { r[k] };
            }
            // give the reseeded component the nearest s + 1 points
            let mut by_dist: Vec<usize> = (0..points.len()).collect();
            by_dist.sort_by(|&a, &b| {
                (&points[a] - &points[far])
                    .norm_squared()
                    .total_cmp(&(&points[b] - &points[far]).norm_squared())
            });
            for &i in by_dist.iter().take(s + 1) {
                resp[i].iter_mut().for_each(|v| *v = 0.0);
                resp[i][k] = 1.0;
            }
            continue;
        }

        // E-step
        let chols: Vec<_> = params
            .cov
            .iter()
            .map(|c| {
                c.clone()
                    .cholesky()
                    .ok_or_else(|| Error::Fit("covariance is singular after regularization".into()))
            })
            .collect::<Result<_>>()?;
        let log_dets: Vec<f64> = chols
            .iter()
            .map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            .collect();
        let mut ll = CompensatedSum::new();
        for (p, r) in points.iter().zip(resp.iter_mut()) {
            let logs: Vec<f64> = (0..count)
                .map(|k| params.alpha[k].ln() + log_gauss(&params.mean[k], &chols[k], log_dets[k], p))
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            ll.add(lse);
            for (rk, l) in r.iter_mut().zip(&logs) {
                *rk = (l - lse).exp();
            }
        }
        let ll = ll.value() / points.len() as f64;
        if !ll.is_finite() {
            return Err(Error::Fit("log-likelihood is not finite".into()));
        }
        iter += 1;
        let done = history
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= 1e-10 * ll.abs().max(1.0));
        if let Some(&prev) = history.last() {
            if ll < prev - 1e-9 * prev.abs().max(1.0) {
                log::warn!("EM log-likelihood decreased from {prev} to {ll}");
            }
        }
        history.push(ll);
        if done || iter >= iterations.max(1) {
            break;
        }
    }
    let components = (0..count)
        .map(|k| {
            GaussianComponent::new(
                params.alpha[k],
                params.mean[k].iter().copied().collect(),
                params.cov[k].clone(),
                DEFAULT_TAIL_MULTIPLIER,
                false,
            )
        })
        .collect::<Result<_>>()?;
    Ok(EmFit {
        components,
        log_likelihood: history,
    })
}

/// Per-component surrogates of the localized targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionModel {
    pub components: Vec<GaussianComponent>,
    pub surrogates: Vec<TensorHatSurrogate>,
    pub reports: Vec<GridReport>,
    /// `c^(i)`, the surrogate masses.
    pub masses: Vec<f64>,
    /// `c = sum_i alpha_i c^(i)`.
    pub c: f64,
    /// Largest Gaussian value outside the boxes.
    pub epsilon: f64,
}

impl PartitionModel {
    pub fn evaluations(&self) -> u64 {
        self.reports.iter().map(|r| r.evaluations).sum()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Evaluates the approximation `sum_i alpha_i phi_i(T_i x)` of `pi`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; self.dim()];
        self.components
            .iter()
            .zip(&self.surrogates)
            .map(|(comp, s)| {
                comp.to_local(x, &mut z);
                let inside = z.iter().zip(comp.half_widths()).all(|(v, h)| v.abs() <= *h);
                if inside {
                    comp.alpha() * s.eval_unchecked(&z)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Builds one adaptive surrogate per component on its local box. `budget`
/// caps the evaluations of each component separately.
pub fn build_partition_model<P>(
    pi: &P,
    comps: &[GaussianComponent],
    epsilon_adapt: f64,
    initial: usize,
    budget: u64,
) -> Result<PartitionModel>
where
    P: Fn(&[f64]) -> f64 + Sync,
{
    if comps.is_empty() {
        return Err(Error::Parameter("partition needs at least one component".into()));
    }
    let s = comps[0].dim();
    let built: Vec<(TensorHatSurrogate, GridReport)> = (0..comps.len())
        .into_par_iter()
        .map(|i| {
            let target = localized_target(pi, comps, i);
            run_to_convergence(target, &comps[i].local_bounds(), &vec![initial; s], epsilon_adapt, budget)
        })
        .collect::<Result<_>>()?;
    let (surrogates, reports): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    let masses: Vec<f64> = surrogates.iter().map(TensorHatSurrogate::mass).collect();
    let c: f64 = comps.iter().zip(&masses).map(|(k, m)| k.alpha() * m).sum();
    if !(c > 0.0) {
        return Err(Error::DegenerateMixture);
    }
    let epsilon = comps.iter().map(GaussianComponent::tail_bound).fold(0.0, f64::max);
    for comp in comps {
        if comp.tail_bound() > 1e-3 * comp.peak() {
            log::warn!(
                "truncation dominates: Gaussian exceeds {:.3e} of its peak outside the box (tail multiplier {})",
                comp.tail_bound() / comp.peak(),
                comp.tail_multiplier()
            );
        }
    }
    Ok(PartitionModel {
        components: comps.to_vec(),
        surrogates,
        reports,
        masses,
        c,
        epsilon,
    })
}

/// Splits `n` in proportion to `weights` by largest remainder. Ties go to
/// the lower index.
pub fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// The combined estimator for several integrands evaluated together.
pub fn combined_estimate_multi<F>(
    model: &PartitionModel,
    outputs: usize,
    f: F,
    n: usize,
    delta: DeltaRule,
    seq: &DigitalSequence,
) -> Result<(Vec<f64>, EstimateReport)>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = model.dim();
    let g = |xs: &[f64], outs: &mut [f64]| {
        for (x, o) in xs.chunks(dim).zip(outs.chunks_mut(outputs.max(1))) {
            f(x, o);
        }
    };
    combined_estimate_batched(model, outputs, g, n, delta, seq)
}

/// As [`combined_estimate_multi`], with `f` taking blocks of points stored
/// back to back in original coordinates.
pub fn combined_estimate_batched<F>(
    model: &PartitionModel,
    outputs: usize,
    f: F,
    n: usize,
    delta: DeltaRule,
    seq: &DigitalSequence,
) -> Result<(Vec<f64>, EstimateReport)>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if n < 2 {
        return Err(Error::Parameter(format!("sample size must be >= 2, got {n}")));
    }
    let shares: Vec<f64> = model
        .components
        .iter()
        .zip(&model.masses)
        .map(|(k, m)| k.alpha() * m)
        .collect();
    let budgets = largest_remainder(&shares, n);
    let mut totals = vec![CompensatedSum::new(); outputs];
    let mut report = EstimateReport::default();
    for (i, (comp, surrogate)) in model.components.iter().zip(&model.surrogates).enumerate() {
        let ni = budgets[i];
        if ni < 2 {
            let msg = format!("partition component {i} received {ni} samples and was skipped");
            log::warn!("{msg}");
            report.warnings.push(msg);
            report.zero_count_mass += shares[i] / model.c;
            continue;
        }
        let hats = surrogate.to_mixture()?;
        let weights: Vec<f64> = hats.iter().map(|h| h.weight).collect();
        let alloc = select_and_allocate(&weights, ni, delta.resolve(&weights, ni)?)?;
        let dim = comp.dim();
        let g = |zs: &[f64], outs: &mut [f64]| {
            let mut xs = vec![0.0; zs.len()];
            for (z, x) in zs.chunks(dim).zip(xs.chunks_mut(dim)) {
                comp.from_local(z, x);
            }
            f(&xs, outs);
        };
        let (sums, sub) = weighted_sums_batched(&hats, &alloc, outputs, g, seq)?;
        for (t, v) in totals.iter_mut().zip(sums) {
            t.add(comp.alpha() * v);
        }
        report.unselected_mass += sub.unselected_mass * shares[i] / model.c;
        report.zero_count_mass += sub.zero_count_mass * shares[i] / model.c;
        report.zero_count.extend(sub.zero_count);
        report.warnings.extend(sub.warnings);
    }
    Ok((totals.iter().map(|t| t.value() / model.c).collect(), report))
}

pub fn combined_estimate<F>(
    model: &PartitionModel,
    f: F,
    n: usize,
    delta: DeltaRule,
    seq: &DigitalSequence,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (v, _) = combined_estimate_multi(model, 1, |x, out| out[0] = f(x), n, delta, seq)?;
    Ok(v[0])
}
