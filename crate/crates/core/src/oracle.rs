//! Brute-force tensor quadrature used as ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Largest node count a single quadrature may touch.
pub const NODE_LIMIT: u128 = 100_000_000;

const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    /// `n` equal cells, one node at each cell centre.
    Midpoint,
    /// `n` equally spaced nodes including both ends.
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub bounds: Vec<(f64, f64)>,
    pub nodes: Vec<usize>,
    pub rule: Rule,
}

impl QuadratureSpec {
    pub fn new(bounds: Vec<(f64, f64)>, nodes: Vec<usize>, rule: Rule) -> Result<Self> {
        if bounds.len() != nodes.len() || bounds.is_empty() {
            return Err(Error::Parameter("one node count per box dimension is required".into()));
        }
        if nodes.iter().any(|&n| n < 2) {
            return Err(Error::Parameter("node counts must be >= 2".into()));
        }
        if bounds.iter().any(|&(a, b)| !(a < b)) {
            return Err(Error::Parameter("empty box".into()));
        }
        Ok(Self { bounds, nodes, rule })
    }

    /// The same rule with roughly half the spacing count per axis.
    pub fn halved(&self) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|&n| match self.rule {
                Rule::Midpoint => (n / 2).max(1),
                Rule::Trapezoid => ((n - 1) / 2).max(1) + 1,
            })
            .collect();
        Self {
            bounds: self.bounds.clone(),
            nodes,
            rule: self.rule,
        }
    }

    fn total(&self) -> u128 {
        self.nodes.iter().map(|&n| n as u128).product()
    }

    /// Per-axis nodes and weights.
    fn axes(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.bounds
            .iter()
            .zip(&self.nodes)
            .map(|(&(a, b), &n)| match self.rule {
                Rule::Midpoint => {
                    let h = (b - a) / n as f64;
                    let x = (0..n).map(|i| a + (i as f64 + 0.5) * h).collect();
                    (x, vec![h; n])
                }
                Rule::Trapezoid => {
                    let h = (b - a) / (n - 1) as f64;
                    let mut x: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
                    x[n - 1] = b;
                    let mut w = vec![h; n];
                    w[0] = 0.5 * h;
                    w[n - 1] = 0.5 * h;
                    (x, w)
                }
            })
            .collect()
    }
}

/// Applies the rule to `outputs` integrands computed together by `g`.
fn integrate_multi<G>(g: &G, outputs: usize, spec: &QuadratureSpec) -> Vec<f64>
where
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    let axes = spec.axes();
    let shape: Vec<usize> = spec.nodes.clone();
    let total: usize = shape.iter().product();
    let s = shape.len();
    let blocks: Vec<Vec<f64>> = (0..total.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc: Vec<CompensatedSum> = (0..outputs).map(|_| CompensatedSum::new()).collect();
            let mut x = vec![0.0; s];
            let mut out = vec![0.0; outputs];
            for flat in b * BLOCK..((b + 1) * BLOCK).min(total) {
                let mut rem = flat;
                let mut w = 1.0;
                for j in (0..s).rev() {
                    let i = rem % shape[j];
                    rem /= shape[j];
                    x[j] = axes[j].0[i];
                    w *= axes[j].1[i];
                }
                g(&x, &mut out);
                for (a, v) in acc.iter_mut().zip(&out) {
                    a.add(w * v);
                }
            }
            acc.iter().map(CompensatedSum::value).collect()
        })
        .collect();
    (0..outputs)
        .map(|o| blocks.iter().map(|b| b[o]).collect::<CompensatedSum>().value())
        .collect()
}

fn check_budget(spec: &QuadratureSpec) -> Result<QuadratureSpec> {
    let half = spec.halved();
    let requested = spec.total() + half.total();
    if requested > NODE_LIMIT {
        return Err(Error::NodeBudget {
            requested,
            limit: NODE_LIMIT,
        });
    }
    Ok(half)
}

/// Composite rule value and `|value - value at half resolution|`.
pub fn tensor_quadrature<F>(f: F, spec: &QuadratureSpec) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let half = check_budget(spec)?;
    let g = |x: &[f64], out: &mut [f64]| out[0] = f(x);
    let full = integrate_multi(&g, 1, spec)[0];
    let coarse = integrate_multi(&g, 1, &half)[0];
    Ok((full, (full - coarse).abs()))
}

/// `int f pi / int pi` on shared nodes, with the half-resolution error estimate.
pub fn reference_expectation<P, F>(pi: P, f: F, spec: &QuadratureSpec) -> Result<(f64, f64)>
where
    P: Fn(&[f64]) -> f64 + Sync,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let half = check_budget(spec)?;
    let g = |x: &[f64], out: &mut [f64]| {
        let p = pi(x);
        out[0] = p;
        out[1] = if p == 0.0 { 0.0 } else { p * f(x) };
    };
    let ratio = |sums: Vec<f64>| -> Result<f64> {
        if !(sums[0].is_normal() && sums[0] > 0.0) {
            return Err(Error::DegenerateDensity(sums[0]));
        }
        Ok(sums[1] / sums[0])
    };
    let full = ratio(integrate_multi(&g, 2, spec))?;
    let coarse = ratio(integrate_multi(&g, 2, &half))?;
    Ok((full, (full - coarse).abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenEntry {
    pub value: f64,
    pub error_estimate: f64,
    pub spec: QuadratureSpec,
}

/// Named reference values, stored as a JSON map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoldenValues(pub BTreeMap<String, GoldenEntry>);

impl GoldenValues {
    pub fn get(&self, name: &str) -> Option<&GoldenEntry> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: GoldenEntry) {
        self.0.insert(name.into(), entry);
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
