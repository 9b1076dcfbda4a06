use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use hatqmc::Error;

/// One row of a convergence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPoint {
    pub level: usize,
    pub n: usize,
    pub epsilon: f64,
    pub estimate: f64,
    pub reference: f64,
    pub error: f64,
    /// Density evaluations spent on the approximation of this level.
    pub evals: u64,
}

/// Error history of one integrand under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub problem: String,
    pub method: String,
    pub qoi: String,
    pub points: Vec<LevelPoint>,
    /// `None` when fewer than three levels have a positive error.
    pub slope: Option<f64>,
}

impl ConvergenceRecord {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.n as f64, p.error)).collect()
    }

    pub fn refit(&mut self) {
        self.slope = fit_slope(&self.pairs()).ok();
    }
}

/// Least-squares slope of `log error` against `log N`. Zero errors are
/// skipped; fewer than three usable points is an error.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64, Error> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, e)| *n > 0.0 && *e > 0.0 && e.is_finite())
        .map(|(n, e)| (n.ln(), e.ln()))
        .collect();
    if usable.len() < points.len() {
        log::info!(
            "slope fit skipped {} points with zero or invalid error",
            points.len() - usable.len()
        );
    }
    if usable.len() < 3 {
        return Err(Error::InsufficientData { usable: usable.len() });
    }
    let m = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / m;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all sample sizes are equal".into()));
    }
    Ok(sxy / sxx)
}

pub const CSV_HEADER: &str = "N,error,evals,method,qoi,level,epsilon,estimate,reference";

/// CSV with one row per (integrand, level).
pub fn to_csv(records: &[ConvergenceRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        for p in &r.points {
            let _ = writeln!(
                out,
                "{},{:e},{},{},{},{},{:e},{:e},{:e}",
                p.n, p.error, p.evals, r.method, r.qoi, p.level, p.epsilon, p.estimate, p.reference
            );
        }
    }
    out
}

/// Parses the `(N, error)` pairs of one integrand back out of a CSV report.
pub fn pairs_from_csv(csv: &str, qoi: &str) -> Vec<(f64, f64)> {
    csv.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            (f.len() >= 5 && f[4] == qoi).then(|| (f[0].parse().unwrap(), f[1].parse().unwrap()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let pts: Vec<(f64, f64)> = [4096.0, 16384.0, 65536.0, 262144.0].iter().map(|&n| (n, 3.0 / n)).collect();
        assert!((fit_slope(&pts).unwrap() + 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = pts.iter().map(|&(n, _)| (n, 0.2)).collect();
        assert!(fit_slope(&flat).unwrap().abs() < 1e-12);
    }

    #[test]
    fn jittered_fixture() {
        let jitter = [0.01, -0.01, 0.005, -0.007, 0.0];
        let pts: Vec<(f64, f64)> = (0..5)
            .map(|k| {
                let n = 1000.0 * 4f64.powi(k);
                (n, 2.0 * n.powf(-0.75) * (1.0 + jitter[k as usize]))
            })
            .collect();
        let s = fit_slope(&pts).unwrap();
        assert!((-0.8..=-0.7).contains(&s), "{s}");
    }

    #[test]
    fn too_few_points() {
        let pts = [(10.0, 0.1), (100.0, 0.0), (1000.0, 0.001)];
        assert!(matches!(fit_slope(&pts), Err(Error::InsufficientData { usable: 2 })));
    }

    #[test]
    fn csv_round_trip_of_pairs() {
        let rec = ConvergenceRecord {
            problem: "banana".into(),
            method: "adaptive".into(),
            qoi: "f2".into(),
            points: (0..3)
                .map(|k| LevelPoint {
                    level: k,
                    n: 100 << (2 * k),
                    epsilon: 0.1,
                    estimate: 1.0,
                    reference: 1.1,
                    error: 0.1 / (k + 1) as f64,
                    evals: 10,
                })
                .collect(),
            slope: None,
        };
        let csv = to_csv(std::slice::from_ref(&rec));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(pairs_from_csv(&csv, "f2"), rec.pairs());
    }
}
