//! Piecewise-linear hat functions and tensor-product hat surrogates.
//!
//! A surrogate interpolates a non-negative function at the points of a
//! tensor grid. Rewriting each hat as a normalized density turns the
//! surrogate into a mixture of product densities whose one-dimensional
//! factors have quadratic CDFs with closed-form inverses, so it can be fed
//! directly to [`crate::mixture`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{Density1D, ProductComponent};
use crate::numeric::CompensatedSum;

/// Strictly increasing knots `a = y_0 < .. < y_K = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Knots1D {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Knots1D {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Knots1D> for Vec<f64> {
    fn from(k: Knots1D) -> Self {
        k.values
    }
}

impl Knots1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Parameter("at least two knots are required".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("knots must be finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("knots must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    /// `m` equal intervals on `[a, b]`.
    pub fn uniform(a: f64, b: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Parameter("resolution must be >= 1".into()));
        }
        let h = (b - a) / m as f64;
        let mut values: Vec<f64> = (0..=m).map(|l| a + l as f64 * h).collect();
        values[m] = b;
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of intervals `K`.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn a(&self) -> f64 {
        self.values[0]
    }

    pub fn b(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Interval `k` with `x` in `[y_k, y_{k+1})`; the right end `b` maps
    /// to the last interval. Points outside `[a, b]` are clamped.
    pub fn locate(&self, x: f64) -> usize {
        let k = self.values.partition_point(|&y| y <= x);
        k.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Reciprocal of the hat normalization constant, i.e. the integral of hat `k`.
    pub fn hat_mass(&self, k: usize) -> f64 {
        let y = &self.values;
        let kk = self.intervals();
        if k == 0 {
            0.5 * (y[1] - y[0])
        } else if k == kk {
            0.5 * (y[kk] - y[kk - 1])
        } else {
            0.5 * (y[k + 1] - y[k - 1])
        }
    }
}

/// Value of hat `k` at `x`; zero outside its support.
pub fn hat_eval(knots: &Knots1D, k: usize, x: f64) -> f64 {
    let y = knots.values();
    let kk = knots.intervals();
    if k > kk {
        return 0.0;
    }
    if k > 0 && x >= y[k - 1] && x <= y[k] {
        return (x - y[k - 1]) / (y[k] - y[k - 1]);
    }
    if k < kk && x >= y[k] && x <= y[k + 1] {
        return (y[k + 1] - x) / (y[k + 1] - y[k]);
    }
    0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HatKind {
    /// `k = 0`, decreasing on `[a, y_1]`.
    Left,
    Interior,
    /// `k = K`, increasing on `[y_{K-1}, b]`.
    Right,
}

/// Hat function `k` of a knot vector, normalized to a probability density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatDensity1D {
    index: usize,
    kind: HatKind,
    lo: f64,
    peak: f64,
    hi: f64,
}

impl HatDensity1D {
    pub fn new(knots: &Knots1D, k: usize) -> Result<Self> {
        let y = knots.values();
        let kk = knots.intervals();
        let (kind, lo, peak, hi) = match k {
            0 => (HatKind::Left, y[0], y[0], y[1]),
            k if k == kk => (HatKind::Right, y[kk - 1], y[kk], y[kk]),
            k if k < kk => (HatKind::Interior, y[k - 1], y[k], y[k + 1]),
            _ => {
                return Err(Error::Parameter(format!(
                    "hat index {k} exceeds interval count {kk}"
                )))
            }
        };
        Ok(Self {
            index: k,
            kind,
            lo,
            peak,
            hi,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn kind(&self) -> HatKind {
        self.kind
    }

    /// The constant `c_k` turning the hat into a density.
    pub fn normalization(&self) -> f64 {
        2.0 / (self.hi - self.lo)
    }

    /// Inverse CDF with a domain check on `z`.
    pub fn try_inv_cdf(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::Domain(format!("probability {z} outside [0, 1]")));
        }
        Ok(self.inv_cdf(z))
    }
}

impl Density1D for HatDensity1D {
    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn pdf(&self, x: f64) -> f64 {
        let c = self.normalization();
        match self.kind {
            HatKind::Left if x >= self.lo && x <= self.hi => c * (self.hi - x) / (self.hi - self.lo),
            HatKind::Right if x >= self.lo && x <= self.hi => c * (x - self.lo) / (self.hi - self.lo),
            HatKind::Interior if x >= self.lo && x <= self.peak => {
                c * (x - self.lo) / (self.peak - self.lo)
            }
            HatKind::Interior if x > self.peak && x <= self.hi => {
                c * (self.hi - x) / (self.hi - self.peak)
            }
            _ => 0.0,
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        let (lo, peak, hi) = (self.lo, self.peak, self.hi);
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let width = hi - lo;
        match self.kind {
            HatKind::Left => 1.0 - (hi - x).powi(2) / (width * width),
            HatKind::Right => (x - lo).powi(2) / (width * width),
            HatKind::Interior if x <= peak => (x - lo).powi(2) / ((peak - lo) * width),
            HatKind::Interior => 1.0 - (hi - x).powi(2) / ((hi - peak) * width),
        }
    }

    fn inv_cdf(&self, z: f64) -> f64 {
        let (lo, peak, hi) = (self.lo, self.peak, self.hi);
        let width = hi - lo;
        match self.kind {
            HatKind::Left => hi - (1.0 - z).sqrt() * width,
            HatKind::Right => lo + z.sqrt() * width,
            HatKind::Interior => {
                let left = peak - lo;
                if z <= left / width {
                    lo + (z * left * width).sqrt()
                } else {
                    hi - ((1.0 - z) * (hi - peak) * width).sqrt()
                }
            }
        }
    }
}

/// Multilinear interpolant of a non-negative function on a tensor grid.
///
/// Values are stored row-major, last dimension fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurrogateDoc", into = "SurrogateDoc")]
pub struct TensorHatSurrogate {
    knots: Vec<Knots1D>,
    values: Vec<f64>,
    mass: f64,
}

/// On-disk form of a surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurrogateDoc {
    #[serde(rename = "box")]
    bounds: Vec<[f64; 2]>,
    knots: Vec<Knots1D>,
    coefficients: Vec<f64>,
    c: f64,
}

impl From<TensorHatSurrogate> for SurrogateDoc {
    fn from(s: TensorHatSurrogate) -> Self {
        SurrogateDoc {
            bounds: s.knots.iter().map(|k| [k.a(), k.b()]).collect(),
            knots: s.knots,
            coefficients: s.values,
            c: s.mass,
        }
    }
}

impl TryFrom<SurrogateDoc> for TensorHatSurrogate {
    type Error = Error;

    fn try_from(doc: SurrogateDoc) -> Result<Self> {
        if doc.bounds.len() != doc.knots.len()
            || doc.bounds.iter().zip(&doc.knots).any(|(b, k)| b[0] != k.a() || b[1] != k.b())
        {
            return Err(Error::Parameter("box does not match the knot vectors".into()));
        }
        let mut s = TensorHatSurrogate::new(doc.knots, doc.coefficients)?;
        s.mass = doc.c;
        Ok(s)
    }
}

impl TensorHatSurrogate {
    /// Builds a surrogate from grid values, validating shape and sign.
    pub fn new(knots: Vec<Knots1D>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Parameter("surrogate needs at least one dimension".into()));
        }
        let size: usize = knots.iter().map(Knots1D::len).product();
        if values.len() != size {
            return Err(Error::Parameter(format!(
                "expected {size} coefficients, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            let point = grid_point(&knots, i);
            return Err(Error::InvalidDensity {
                point,
                value: values[i],
            });
        }
        let mass = hat_weights_contracted(&knots, &values);
        Ok(Self { knots, values, mass })
    }

    /// Evaluates `pi` on the full tensor grid spanned by `knots`.
    pub fn from_function<P>(pi: P, knots: Vec<Knots1D>) -> Result<Self>
    where
        P: Fn(&[f64]) -> f64 + Sync,
    {
        let size: usize = knots.iter().map(Knots1D::len).product();
        let values: Vec<f64> = (0..size)
            .into_par_iter()
            .map(|i| pi(&grid_point(&knots, i)))
            .collect();
        Self::new(knots, values)
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[Knots1D] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total mass `c`, the exact integral of the interpolant.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.knots.iter().map(|k| (k.a(), k.b())).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.knots.iter().map(Knots1D::len).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Coordinates of the grid point with flat index `i`.
    pub fn grid_point(&self, i: usize) -> Vec<f64> {
        grid_point(&self.knots, i)
    }

    /// Evaluates the interpolant; `x` must lie in the closed box.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has {} coordinates, surrogate has {}",
                x.len(),
                self.dim()
            )));
        }
        if x
            .iter()
            .zip(&self.knots)
            .any(|(&xi, k)| !(xi >= k.a() && xi <= k.b()))
        {
            return Err(Error::Domain(format!("{x:?} lies outside the surrogate box")));
        }
        Ok(self.eval_unchecked(x))
    }

    /// Evaluation without the domain check; out-of-box points are clamped
    /// to the boundary cells.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let s = self.dim();
        let mut base = 0usize;
        let mut offsets = [0usize; 16];
        let mut weights = [[0.0f64; 2]; 16];
        let mut stride = 1usize;
        // Walk dimensions from the fastest one to build offsets.
        for j in (0..s).rev() {
            let k = &self.knots[j];
            let cell = k.locate(x[j]);
            let y = k.values();
            let t = ((x[j] - y[cell]) / (y[cell + 1] - y[cell])).clamp(0.0, 1.0);
            weights[j] = [1.0 - t, t];
            base += cell * stride;
            offsets[j] = stride;
            stride *= k.len();
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << s) {
            let mut w = 1.0;
            let mut idx = base;
            for j in 0..s {
                let bit = (corner >> j) & 1;
                w *= weights[j][bit];
                idx += bit * offsets[j];
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    /// Values of this interpolant at every point of another tensor grid
    /// inside the same box.
    pub fn interpolate_onto(&self, target: &[Knots1D]) -> Vec<f64> {
        let mut shape = self.shape();
        let mut data = self.values.clone();
        for (j, tk) in target.iter().enumerate() {
            let src = &self.knots[j];
            let stencil: Vec<(usize, f64)> = tk
                .values()
                .iter()
                .map(|&t| {
                    let cell = src.locate(t);
                    let y = src.values();
                    let w = ((t - y[cell]) / (y[cell + 1] - y[cell])).clamp(0.0, 1.0);
                    (cell, w)
                })
                .collect();
            data = apply_axis(&data, &shape, j, tk.len(), |out_idx, line| {
                let (cell, w) = stencil[out_idx];
                let right = if w != 0.0 { w * line(cell + 1) } else { 0.0 };
                (1.0 - w) * line(cell) + right
            });
            shape[j] = tk.len();
        }
        data
    }

    /// Rewrites the interpolant as a mixture of product hat densities.
    ///
    /// Grid points with zero value are left out; the weights sum to the mass.
    pub fn to_mixture(&self) -> Result<Vec<ProductComponent<HatDensity1D>>> {
        if !(self.mass > 0.0) {
            return Err(Error::DegenerateMixture);
        }
        let hats: Vec<Vec<HatDensity1D>> = self
            .knots
            .iter()
            .map(|k| (0..k.len()).map(|i| HatDensity1D::new(k, i)).collect())
            .collect::<Result<_>>()?;
        let masses: Vec<Vec<f64>> = self
            .knots
            .iter()
            .map(|k| (0..k.len()).map(|i| k.hat_mass(i)).collect())
            .collect();
        let shape = self.shape();
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.dim()];
        for &v in &self.values {
            if v > 0.0 {
                let mut w = v;
                let mut factors = Vec::with_capacity(self.dim());
                for (j, &i) in idx.iter().enumerate() {
                    w *= masses[j][i];
                    factors.push(hats[j][i]);
                }
                out.push(ProductComponent { factors, weight: w });
            }
            increment(&mut idx, &shape);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Interpolates `pi` on a uniform tensor grid with `m_j` intervals per axis.
pub fn build_uniform_surrogate<P>(pi: P, bounds: &[(f64, f64)], m: &[usize]) -> Result<TensorHatSurrogate>
where
    P: Fn(&[f64]) -> f64 + Sync,
{
    if bounds.len() != m.len() || bounds.is_empty() {
        return Err(Error::Parameter("one resolution per box dimension is required".into()));
    }
    let knots = bounds
        .iter()
        .zip(m)
        .map(|(&(a, b), &mj)| {
            if !(a < b) {
                return Err(Error::Parameter(format!("empty interval [{a}, {b}]")));
            }
            Knots1D::uniform(a, b, mj)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorHatSurrogate::from_function(pi, knots)
}

/// Coordinates of flat grid index `i` (row-major, last dimension fastest).
pub(crate) fn grid_point(knots: &[Knots1D], mut i: usize) -> Vec<f64> {
    let mut x = vec![0.0; knots.len()];
    for j in (0..knots.len()).rev() {
        let n = knots[j].len();
        x[j] = knots[j].values()[i % n];
        i /= n;
    }
    x
}

/// Row-major multi-index increment.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for j in (0..idx.len()).rev() {
        idx[j] += 1;
        if idx[j] < shape[j] {
            return;
        }
        idx[j] = 0;
    }
}

/// Applies a linear map along `axis`, producing `new_len` entries per line.
/// `f(out_index, line)` computes one output from the input line accessor.
pub(crate) fn apply_axis<F>(data: &[f64], shape: &[usize], axis: usize, new_len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &dyn Fn(usize) -> f64) -> f64,
{
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let old_len = shape[axis];
    let mut out = vec![0.0; outer * new_len * inner];
    for o in 0..outer {
        for i in 0..inner {
            let line = |k: usize| data[(o * old_len + k) * inner + i];
            for n in 0..new_len {
                out[(o * new_len + n) * inner + i] = f(n, &line);
            }
        }
    }
    out
}

/// `sum_k values[k] * prod_j hat_mass_j(k_j)`, contracted one axis at a time.
fn hat_weights_contracted(knots: &[Knots1D], values: &[f64]) -> f64 {
    let mut data = values.to_vec();
    let mut shape: Vec<usize> = knots.iter().map(Knots1D::len).collect();
    for j in (0..knots.len()).rev() {
        let inner: usize = shape[j + 1..].iter().product();
        debug_assert_eq!(inner, 1);
        let n = shape[j];
        let masses: Vec<f64> = (0..n).map(|k| knots[j].hat_mass(k)).collect();
        data = data
            .chunks_exact(n)
            .map(|line| {
                line.iter()
                    .zip(&masses)
                    .map(|(v, m)| v * m)
                    .collect::<CompensatedSum>()
                    .value()
            })
            .collect();
        shape.truncate(j);
    }
    data[0]
}
