//! Coordinate-wise adaptive refinement of tensor hat surrogates.
//!
//! Every coordinate interval carries a flag. A step bisects all flagged
//! intervals, evaluates the density only at the new grid points, and keeps
//! a bisection when the new points it created change the interpolant by
//! more than `epsilon` times the largest grid value. The kept grid is a
//! subset of the trial grid, so no further evaluations are needed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hatbasis::{increment, Knots1D, TensorHatSurrogate};

/// Default cap on density evaluations.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct AdaptiveState {
    surrogate: TensorHatSurrogate,
    flags: Vec<Vec<bool>>,
    epsilon: f64,
    budget: u64,
    evaluations: u64,
    iterations: usize,
    budget_exceeded: bool,
}

/// Summary of a refinement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub iterations: usize,
    pub evaluations: u64,
    pub knots: Vec<Vec<f64>>,
    pub flags_history_len: usize,
    pub budget_exceeded: bool,
}

impl AdaptiveState {
    /// Uniform start with `m_j` intervals per axis and every flag set.
    pub fn new<P>(pi: P, bounds: &[(f64, f64)], m: &[usize], epsilon: f64, budget: u64) -> Result<Self>
    where
        P: Fn(&[f64]) -> f64 + Sync,
    {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!("threshold must be positive, got {epsilon}")));
        }
        if bounds.len() != m.len() || bounds.is_empty() {
            return Err(Error::Parameter("one resolution per box dimension is required".into()));
        }
        let size: u128 = m.iter().map(|&mj| mj as u128 + 1).product();
        if size > budget as u128 {
            return Err(Error::Parameter(format!(
                "budget {budget} is smaller than the initial grid ({size} points)"
            )));
        }
        let surrogate = crate::hatbasis::build_uniform_surrogate(pi, bounds, m)?;
        let flags = m.iter().map(|&mj| vec![true; mj]).collect();
        Ok(Self {
            surrogate,
            flags,
            epsilon,
            budget,
            evaluations: size as u64,
            iterations: 0,
            budget_exceeded: false,
        })
    }

    pub fn surrogate(&self) -> &TensorHatSurrogate {
        &self.surrogate
    }

    pub fn into_surrogate(self) -> TensorHatSurrogate {
        self.surrogate
    }

    pub fn knots(&self) -> &[Knots1D] {
        self.surrogate.knots()
    }

    pub fn flags(&self) -> &[Vec<bool>] {
        &self.flags
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn budget_exceeded(&self) -> bool {
        self.budget_exceeded
    }

    pub fn converged(&self) -> bool {
        self.budget_exceeded || self.flags.iter().flatten().all(|f| !f)
    }

    pub fn report(&self) -> GridReport {
        GridReport {
            iterations: self.iterations,
            evaluations: self.evaluations,
            knots: self.knots().iter().map(|k| k.values().to_vec()).collect(),
            flags_history_len: self.iterations + 1,
            budget_exceeded: self.budget_exceeded,
        }
    }

    /// One bisect-evaluate-select step.
    pub fn refine_once<P>(&self, pi: P) -> Result<Self>
    where
        P: Fn(&[f64]) -> f64 + Sync,
    {
        if self.converged() {
            return Ok(self.clone());
        }
        let s = self.surrogate.dim();
        let old_knots = self.surrogate.knots();

        // Trial knots; `origin[j][t]` is Some(k) when trial knot t is the
        // midpoint of flagged interval k, `old_pos[j][t]` the old index otherwise.
        let mut trial = Vec::with_capacity(s);
        let mut origin: Vec<Vec<Option<usize>>> = Vec::with_capacity(s);
        let mut old_pos: Vec<Vec<Option<usize>>> = Vec::with_capacity(s);
        for j in 0..s {
            let y = old_knots[j].values();
            let mut v = Vec::with_capacity(2 * y.len());
            let mut org = Vec::with_capacity(2 * y.len());
            let mut pos = Vec::with_capacity(2 * y.len());
            for k in 0..y.len() {
                v.push(y[k]);
                org.push(None);
                pos.push(Some(k));
                if k + 1 < y.len() && self.flags[j][k] {
                    v.push(0.5 * (y[k] + y[k + 1]));
                    org.push(Some(k));
                    pos.push(None);
                }
            }
            trial.push(Knots1D::new(v)?);
            origin.push(org);
            old_pos.push(pos);
        }
        let trial_shape: Vec<usize> = trial.iter().map(Knots1D::len).collect();
        let old_shape = self.surrogate.shape();
        let trial_size: usize = trial_shape.iter().product();
        let new_points = (trial_size - self.surrogate.values().len()) as u64;
        if self.evaluations + new_points > self.budget {
            log::warn!(
                "refinement stopped: {} more evaluations would exceed the budget of {}",
                new_points,
                self.budget
            );
            let mut out = self.clone();
            out.budget_exceeded = true;
            return Ok(out);
        }

        // Old grid values are reused; pi runs only where some coordinate is new.
        let old_values = self.surrogate.values();
        let trial_values: Vec<f64> = (0..trial_size)
            .into_par_iter()
            .map(|flat| {
                let mut rem = flat;
                let mut old_flat = 0usize;
                let mut old_stride = 1usize;
                let mut is_old = true;
                let mut x = vec![0.0; s];
                for j in (0..s).rev() {
                    let t = rem % trial_shape[j];
                    rem /= trial_shape[j];
                    x[j] = trial[j].values()[t];
                    match old_pos[j][t] {
                        Some(k) => old_flat += k * old_stride,
                        None => is_old = false,
                    }
                    old_stride *= old_shape[j];
                }
                if is_old {
                    old_values[old_flat]
                } else {
                    pi(&x)
                }
            })
            .collect();
        if let Some(i) = trial_values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDensity {
                point: crate::hatbasis::grid_point(&trial, i),
                value: trial_values[i],
            });
        }

        // Largest change at the points created by each bisection.
        let coarse = self.surrogate.interpolate_onto(&trial);
        let mut indicator: Vec<Vec<f64>> = self.flags.iter().map(|f| vec![0.0; f.len()]).collect();
        let mut idx = vec![0usize; s];
        for (v, c) in trial_values.iter().zip(&coarse) {
            let diff = (v - c).abs();
            for j in 0..s {
                if let Some(k) = origin[j][idx[j]] {
                    if diff > indicator[j][k] {
                        indicator[j][k] = diff;
                    }
                }
            }
            increment(&mut idx, &trial_shape);
        }
        let scale = trial_values.iter().copied().fold(0.0, f64::max);
        let threshold = self.epsilon * scale;

        let mut kept_knots = Vec::with_capacity(s);
        let mut kept_index: Vec<Vec<usize>> = Vec::with_capacity(s);
        let mut flags = Vec::with_capacity(s);
        for j in 0..s {
            let mut v = Vec::new();
            let mut keep_idx = Vec::new();
            let mut f = Vec::new();
            for (t, &y) in trial[j].values().iter().enumerate() {
                match origin[j][t] {
                    None => {
                        v.push(y);
                        keep_idx.push(t);
                        if t + 1 < trial[j].len() && origin[j][t + 1].is_none() {
                            // unflagged interval stays closed
                            f.push(false);
                        }
                    }
                    Some(k) => {
                        if indicator[j][k] > threshold {
                            v.push(y);
                            keep_idx.push(t);
                            f.push(true);
                            f.push(true);
                        } else {
                            f.push(false);
                        }
                    }
                }
            }
            kept_knots.push(Knots1D::new(v)?);
            kept_index.push(keep_idx);
            flags.push(f);
        }

        let kept_shape: Vec<usize> = kept_knots.iter().map(Knots1D::len).collect();
        let kept_size: usize = kept_shape.iter().product();
        let mut values = Vec::with_capacity(kept_size);
        let mut idx = vec![0usize; s];
        for _ in 0..kept_size {
            let mut flat = 0usize;
            for j in 0..s {
                flat = flat * trial_shape[j] + kept_index[j][idx[j]];
            }
            values.push(trial_values[flat]);
            increment(&mut idx, &kept_shape);
        }

        Ok(Self {
            surrogate: TensorHatSurrogate::new(kept_knots, values)?,
            flags,
            epsilon: self.epsilon,
            budget: self.budget,
            evaluations: self.evaluations + new_points,
            iterations: self.iterations + 1,
            budget_exceeded: false,
        })
    }
}

/// Refines from a uniform start until no interval is flagged or the budget
/// would be exceeded.
pub fn run_to_convergence<P>(
    pi: P,
    bounds: &[(f64, f64)],
    m: &[usize],
    epsilon: f64,
    budget: u64,
) -> Result<(TensorHatSurrogate, GridReport)>
where
    P: Fn(&[f64]) -> f64 + Sync,
{
    let mut state = AdaptiveState::new(&pi, bounds, m, epsilon, budget)?;
    while !state.converged() {
        state = state.refine_once(&pi)?;
    }
    let report = state.report();
    log::debug!(
        "adaptive grid: {} iterations, {} evaluations, shape {:?}",
        report.iterations,
        report.evaluations,
        state.surrogate.shape()
    );
    Ok((state.into_surrogate(), report))
}
