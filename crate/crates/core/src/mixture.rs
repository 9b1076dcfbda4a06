//! QMC integration against mixtures of product densities.
//!
//! Components are ordered by weight, the heaviest prefix carrying at least
//! `1 - delta/N` of the mass is kept, and the `N` sample indices are split
//! between the kept components by flooring their proportional shares (the
//! last kept component takes the remainder). Every component then maps the
//! same initial segment of a digital sequence through its coordinate-wise
//! inverse CDF.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowdisc::DigitalSequence;
use crate::numeric::CompensatedSum;

/// A one-dimensional probability density on a bounded interval.
pub trait Density1D: Send + Sync {
    /// The interval `[a, b]` outside of which the density vanishes.
    fn support(&self) -> (f64, f64);
    fn pdf(&self, x: f64) -> f64;
    /// Distribution function; 0 left of the support and 1 right of it.
    fn cdf(&self, x: f64) -> f64;
    /// Inverse distribution function for `z` in `[0, 1]`.
    fn inv_cdf(&self, z: f64) -> f64;
}

/// Uniform density on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformDensity {
    lo: f64,
    hi: f64,
}

impl UniformDensity {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Parameter(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }
}

impl Density1D for UniformDensity {
    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn pdf(&self, x: f64) -> f64 {
        if (self.lo..=self.hi).contains(&x) {
            1.0 / (self.hi - self.lo)
        } else {
            0.0
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    fn inv_cdf(&self, z: f64) -> f64 {
        self.lo + z * (self.hi - self.lo)
    }
}

/// One mixture term: a product of one-dimensional densities and a weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductComponent<D> {
    pub factors: Vec<D>,
    pub weight: f64,
}

impl<D: Density1D> ProductComponent<D> {
    pub fn new(factors: Vec<D>, weight: f64) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Parameter("component needs at least one factor".into()));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Parameter(format!("component weight {weight} is not >= 0")));
        }
        Ok(Self { factors, weight })
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    /// Applies the coordinate-wise inverse CDF to a unit-cube point.
    pub fn transform(&self, u: &[f64], out: &mut [f64]) {
        for ((o, &z), d) in out.iter_mut().zip(u).zip(&self.factors) {
            *o = d.inv_cdf(z);
        }
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.factors.iter().zip(x).map(|(d, &xi)| d.pdf(xi)).product()
    }
}

/// The selected index set and per-component sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Original component indices, heaviest first.
    pub selected: Vec<usize>,
    /// Sample count for each entry of `selected`.
    pub counts: Vec<usize>,
    pub total: usize,
    pub delta: f64,
    /// Total weight `c` of all components.
    pub mass: f64,
    /// Weight of the selected components.
    pub selected_mass: f64,
}

impl Allocation {
    /// Size of the selected set.
    pub fn r(&self) -> usize {
        self.selected.len()
    }

    /// Share of the mass left out by the threshold, `1 - selected/c`.
    pub fn dropped_mass(&self) -> f64 {
        1.0 - self.selected_mass / self.mass
    }
}

/// How the threshold `delta` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    Fixed(f64),
    /// `delta = 3N / (3 + A N)` with `A` the smallest positive relative weight.
    MinWeight,
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::Fixed(0.5)
    }
}

impl DeltaRule {
    pub fn resolve(&self, weights: &[f64], n: usize) -> Result<f64> {
        match *self {
            DeltaRule::Fixed(d) => Ok(d),
            DeltaRule::MinWeight => {
                let c: f64 = weights.iter().sum();
                let a = weights
                    .iter()
                    .filter(|&&w| w > 0.0)
                    .map(|&w| w / c)
                    .fold(f64::INFINITY, f64::min);
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::DegenerateMixture);
                }
                let n = n as f64;
                Ok(3.0 * n / (3.0 + a * n))
            }
        }
    }
}

/// Orders components, picks the index set and splits `n` samples.
///
/// Ties in weight keep the original order. Counts of the non-last selected
/// components are `floor(n * c_k / c)`, the last one takes what is left.
/// Counts can be zero when a selected weight is below `c / n`.
pub fn select_and_allocate(weights: &[f64], n: usize, delta: f64) -> Result<Allocation> {
    if n < 2 {
        return Err(Error::Parameter(format!("sample size must be >= 2, got {n}")));
    }
    if !(delta > 0.0 && delta < n as f64) {
        return Err(Error::Parameter(format!(
            "delta must lie in (0, {n}), got {delta}"
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Parameter(format!("weight {w} is not >= 0")));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Stable sort keeps lower indices first among equal weights.
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let mass: f64 = order.iter().map(|&k| weights[k]).sum();
    if mass <= 0.0 {
        return Err(Error::DegenerateMixture);
    }

    let target = (1.0 - delta / n as f64) * mass;
    let mut cumulative = 0.0;
    let mut r = order.len();
    for (v, &k) in order.iter().enumerate() {
        cumulative += weights[k];
        if cumulative >= target {
            r = v + 1;
            break;
        }
    }
    order.truncate(r);

    let nf = n as f64;
    let mut counts: Vec<usize> = order[..r - 1]
        .iter()
        .map(|&k| (nf * weights[k] / mass).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    counts.push(n - assigned);
    let selected_mass = order.iter().map(|&k| weights[k]).sum();

    Ok(Allocation {
        selected: order,
        counts,
        total: n,
        delta,
        mass,
        selected_mass,
    })
}

/// Diagnostics collected while evaluating the estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Selected components that received no samples.
    pub zero_count: Vec<usize>,
    /// Relative mass of `zero_count`.
    pub zero_count_mass: f64,
    /// Relative mass outside the selected set.
    pub unselected_mass: f64,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn merge(&mut self, other: EstimateReport) {
        self.zero_count.extend(other.zero_count);
        self.zero_count_mass += other.zero_count_mass;
        self.unselected_mass += other.unselected_mass;
        self.warnings.extend(other.warnings);
    }
}

/// Unnormalized estimator sums `sum_k (c_k / N_k) sum_n f(Phi_k^-1(y_n))`
/// for an `outputs`-valued integrand.
///
/// Dividing by the allocation's mass gives the estimator itself; the
/// partition-of-unity estimator combines several of these sums.
pub fn weighted_sums<D, F>(
    components: &[ProductComponent<D>],
    alloc: &Allocation,
    outputs: usize,
    f: F,
    seq: &DigitalSequence,
) -> Result<(Vec<f64>, EstimateReport)>
where
    D: Density1D,
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = components.first().map_or(0, ProductComponent::dim).max(1);
    weighted_sums_batched(
        components,
        alloc,
        outputs,
        |xs, outs| {
            for (x, o) in xs.chunks(dim).zip(outs.chunks_mut(outputs)) {
                f(x, o);
            }
        },
        seq,
    )
}

/// Points handed to a batched integrand per call.
pub const BATCH: usize = 64;

/// As [`weighted_sums`], but `f` receives up to [`BATCH`] points at once,
/// stored back to back, and fills `outputs` values per point. Results are
/// identical to the pointwise version.
pub fn weighted_sums_batched<D, F>(
    components: &[ProductComponent<D>],
    alloc: &Allocation,
    outputs: usize,
    f: F,
    seq: &DigitalSequence,
) -> Result<(Vec<f64>, EstimateReport)>
where
    D: Density1D,
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if outputs == 0 {
        return Err(Error::Precondition("integrand needs at least one output".into()));
    }
    let dim = check_inputs(components, alloc, seq)?;
    let tasks: Vec<(usize, usize)> = alloc
        .selected
        .iter()
        .copied()
        .zip(alloc.counts.iter().copied())
        .collect();

    let partials: Vec<Option<Vec<f64>>> = tasks
        .par_iter()
        .map(|&(k, nk)| {
            if nk == 0 {
                return None;
            }
            let comp = &components[k];
            let mut iter = seq.iter_from(0).expect("index 0 is always valid");
            let mut u = vec![0.0; seq.dim()];
            let mut xs = vec![0.0; BATCH * dim];
            let mut outs = vec![0.0; BATCH * outputs];
            let mut acc = vec![CompensatedSum::new(); outputs];
            let mut left = nk;
            while left > 0 {
                let m = left.min(BATCH);
                for x in xs.chunks_mut(dim).take(m) {
                    iter.next_into(&mut u);
                    comp.transform(&u[..dim], x);
                }
                f(&xs[..m * dim], &mut outs[..m * outputs]);
                for out in outs[..m * outputs].chunks(outputs) {
                    for (a, &v) in acc.iter_mut().zip(out) {
                        a.add(v);
                    }
                }
                left -= m;
            }
            let scale = comp.weight / nk as f64;
            Some(acc.iter().map(|a| a.value() * scale).collect())
        })
        .collect();

    let mut totals = vec![CompensatedSum::new(); outputs];
    let mut report = EstimateReport {
        unselected_mass: alloc.dropped_mass(),
        ..Default::default()
    };
    for (&(k, _), partial) in tasks.iter().zip(&partials) {
        match partial {
            Some(p) => {
                for (t, &v) in totals.iter_mut().zip(p) {
                    t.add(v);
                }
            }
            None => {
                report.zero_count.push(k);
                report.zero_count_mass += components[k].weight / alloc.mass;
            }
        }
    }
    if !report.zero_count.is_empty() {
        let msg = format!(
            "{} selected components received no samples (relative mass {:.3e}); their terms were dropped",
            report.zero_count.len(),
            report.zero_count_mass
        );
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    Ok((totals.iter().map(CompensatedSum::value).collect(), report))
}

fn check_inputs<D: Density1D>(
    components: &[ProductComponent<D>],
    alloc: &Allocation,
    seq: &DigitalSequence,
) -> Result<usize> {
    let dim = components
        .first()
        .map(ProductComponent::dim)
        .ok_or(Error::DegenerateMixture)?;
    if components.iter().any(|c| c.dim() != dim) {
        return Err(Error::Precondition("components differ in dimension".into()));
    }
    if seq.dim() < dim {
        return Err(Error::Precondition(format!(
            "sequence has {} dimensions, components need {dim}",
            seq.dim()
        )));
    }
    if alloc.selected.len() != alloc.counts.len()
        || alloc.selected.iter().any(|&k| k >= components.len())
    {
        return Err(Error::Precondition("allocation does not match the components".into()));
    }
    let mass: f64 = components.iter().map(|c| c.weight).sum();
    if (mass - alloc.mass).abs() > 1e-9 * mass {
        return Err(Error::Precondition(format!(
            "allocation mass {} differs from component mass {mass}",
            alloc.mass
        )));
    }
    let max_count = alloc.counts.iter().copied().max().unwrap_or(0) as u64;
    if max_count > seq.capacity() {
        return Err(Error::IndexOverflow {
            index: max_count - 1,
            precision: seq.precision(),
        });
    }
    Ok(dim)
}

/// The mixture estimator for several integrands evaluated at the same points.
pub fn estimate_multi<D, F>(
    components: &[ProductComponent<D>],
    alloc: &Allocation,
    outputs: usize,
    f: F,
    seq: &DigitalSequence,
) -> Result<(Vec<f64>, EstimateReport)>
where
    D: Density1D,
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let (sums, report) = weighted_sums(components, alloc, outputs, f, seq)?;
    Ok((sums.into_iter().map(|s| s / alloc.mass).collect(), report))
}

/// As [`estimate_multi`] with a batched integrand, see [`weighted_sums_batched`].
pub fn estimate_multi_batched<D, F>(
    components: &[ProductComponent<D>],
    alloc: &Allocation,
    outputs: usize,
    f: F,
    seq: &DigitalSequence,
) -> Result<(Vec<f64>, EstimateReport)>
where
    D: Density1D,
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let (sums, report) = weighted_sums_batched(components, alloc, outputs, f, seq)?;
    Ok((sums.into_iter().map(|s| s / alloc.mass).collect(), report))
}

/// The mixture estimator of the weighted integral of `f`.
pub fn estimate<D, F>(
    components: &[ProductComponent<D>],
    alloc: &Allocation,
    f: F,
    seq: &DigitalSequence,
) -> Result<f64>
where
    D: Density1D,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (v, _) = estimate_multi(components, alloc, 1, |x, out| out[0] = f(x), seq)?;
    Ok(v[0])
}

/// The quantity `G(N)` for product weights `gamma_j` on a box.
pub fn g_diagnostic(gamma: &[f64], q: f64, bounds: &[(f64, f64)], n: f64) -> Result<f64> {
    if gamma.len() != bounds.len() || gamma.is_empty() {
        return Err(Error::Parameter("one weight per box dimension is required".into()));
    }
    if gamma.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::Parameter("weights must be positive".into()));
    }
    if !(q >= 1.0) {
        return Err(Error::Parameter(format!("q must be >= 1, got {q}")));
    }
    if !(n >= 2.0) {
        return Err(Error::Parameter(format!("N must be >= 2, got {n}")));
    }
    if bounds.iter().any(|&(a, b)| !(a < b)) {
        return Err(Error::Parameter("box is degenerate".into()));
    }
    let log_n = n.ln();
    let prod: f64 = gamma
        .iter()
        .zip(bounds)
        .map(|(&g, &(a, b))| 1.0 + (g * 3.0 * (b - a) * log_n).powf(q))
        .product();
    Ok((prod - 1.0).powf(1.0 / q))
}
