//! Benchmark targets: a concentrated two-dimensional density with rescaled
//! Genz integrands, and the posterior of a four-parameter predator-prey model.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-banana density on `[-5, 5]^2`, unnormalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleBanana {
    pub sigma: f64,
}

impl Default for DoubleBanana {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

impl DoubleBanana {
    pub const BOUNDS: [(f64, f64); 2] = [(-5.0, 5.0), (-5.0, 5.0)];

    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        let t = 2.0 / 3.0 * x1;
        let bracket = (1.5 - t).powi(2)
            + 50.0 * (-(t - 0.5).powi(2) + x2 - 0.5).powi(2)
            + (1.5 + t).powi(2)
            + 50.0 * (-(t + 0.5).powi(2) - x2 - 0.5).powi(2);
        -(x1 * x1 + x2 * x2) - 2.0 / self.sigma * bracket
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenzKind {
    /// `f1`, product peak.
    ProductPeak,
    /// `f2`, corner peak.
    CornerPeak,
    /// `f3`, continuous.
    Continuous,
}

/// Genz integrand rescaled from the unit cube to a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Genz {
    pub kind: GenzKind,
    pub c: Vec<f64>,
    pub w: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl Genz {
    pub fn new(kind: GenzKind, c: Vec<f64>, w: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if c.len() != bounds.len() || w.len() != bounds.len() {
            return Err(Error::Parameter("c, w and box must share the dimension".into()));
        }
        Ok(Self { kind, c, w, bounds })
    }

    /// The instance used with [`DoubleBanana`].
    pub fn two_dim(kind: GenzKind) -> Self {
        Self {
            kind,
            c: vec![0.3, 0.6],
            w: vec![0.25, 0.7],
            bounds: DoubleBanana::BOUNDS.to_vec(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let u = x
            .iter()
            .zip(&self.bounds)
            .map(|(&xi, &(a, b))| (xi - a) / (b - a));
        match self.kind {
            GenzKind::ProductPeak => u
                .zip(self.c.iter().zip(&self.w))
                .map(|(u, (c, w))| 1.0 / (1.0 / (c * c) + (u + w).powi(2)))
                .product(),
            GenzKind::CornerPeak => {
                let s = self.c.len() as i32;
                let lin: f64 = u.zip(&self.c).map(|(u, c)| c * u).sum();
                (1.0 + lin).powi(-s - 1)
            }
            GenzKind::Continuous => {
                let e: f64 = u
                    .zip(self.c.iter().zip(&self.w))
                    .map(|(u, (c, w))| c * (u - w).abs())
                    .sum();
                (-e).exp()
            }
        }
    }
}

/// Parameters `(rho_P, K, alpha, rho_Q)` plus the fixed model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredPreyParams {
    pub rho_p: f64,
    pub capacity: f64,
    pub alpha: f64,
    pub rho_q: f64,
    pub p0: f64,
    pub q0: f64,
    pub u: f64,
    pub v: f64,
}

impl PredPreyParams {
    pub const LOWER: [f64; 4] = [0.36, 60.0, 15.0, 0.18];
    pub const UPPER: [f64; 4] = [0.96, 160.0, 40.0, 0.48];
    pub const TRUE: [f64; 4] = [0.6, 100.0, 25.0, 0.3];

    pub fn bounds() -> Vec<(f64, f64)> {
        Self::LOWER.iter().copied().zip(Self::UPPER).collect()
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            rho_p: x[0],
            capacity: x[1],
            alpha: x[2],
            rho_q: x[3],
            p0: 50.0,
            q0: 5.0,
            u: 1.2,
            v: 0.5,
        }
    }

    pub fn in_prior_box(x: &[f64]) -> bool {
        x.len() == 4 && (0..4).all(|j| x[j] >= Self::LOWER[j] && x[j] <= Self::UPPER[j])
    }

    #[inline(always)]
    fn rk4_step(&self, y0: f64, y1: f64, dt: f64) -> (f64, f64) {
        let (k1p, k1q) = self.rhs(y0, y1);
        let (k2p, k2q) = self.rhs(y0 + 0.5 * dt * k1p, y1 + 0.5 * dt * k1q);
        let (k3p, k3q) = self.rhs(y0 + 0.5 * dt * k2p, y1 + 0.5 * dt * k2q);
        let (k4p, k4q) = self.rhs(y0 + dt * k3p, y1 + dt * k3q);
        (
            y0 + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
            y1 + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
        )
    }

    #[inline(always)]
    fn rhs(&self, p: f64, q: f64) -> (f64, f64) {
        let inter = p * q / (self.alpha + p);
        (
            self.rho_p * p * (1.0 - p / self.capacity) - self.u * inter,
            self.v * inter - self.rho_q * q,
        )
    }
}

/// Default step; observation times fall on step boundaries.
pub const ODE_STEP: f64 = 25.0 / 600.0;

/// Classical RK4 with a fixed step. Returns `(P, Q)` at every requested time;
/// times must be non-decreasing multiples of `dt` (up to rounding).
pub fn solve_ode(p: &PredPreyParams, times: &[f64], dt: f64) -> Result<Vec<(f64, f64)>> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {dt}")));
    }
    let mut out = Vec::with_capacity(times.len());
    let (mut y0, mut y1) = (p.p0, p.q0);
    let mut step = 0u64;
    for &t in times {
        let target = (t / dt).round() as u64;
        if target < step {
            return Err(Error::Parameter("output times must be non-decreasing".into()));
        }
        while step < target {
            (y0, y1) = p.rk4_step(y0, y1, dt);
            step += 1;
            if !(y0.is_finite() && y1.is_finite()) {
                return Err(Error::Blowup {
                    time: step as f64 * dt,
                });
            }
        }
        out.push((y0, y1));
    }
    Ok(out)
}

/// Number of observation times.
pub const N_OBS: usize = 13;
/// Seed of the shipped dataset.
pub const DATASET_SEED: u64 = 20_230_417;
/// Prediction horizon for the quantities of interest.
pub const HORIZON: f64 = 120.0;
pub const TAU_P: f64 = 25.0;
pub const TAU_Q: f64 = 15.0;

pub fn observation_times() -> Vec<f64> {
    (0..N_OBS).map(|i| i as f64 * 25.0 / 6.0).collect()
}

/// Forward model: `(P(t_i), Q(t_i))` interleaved by time.
pub fn forward(x: &[f64], times: &[f64], dt: f64) -> Result<Vec<f64>> {
    let traj = solve_ode(&PredPreyParams::from_slice(x), times, dt)?;
    Ok(traj.into_iter().flat_map(|(p, q)| [p, q]).collect())
}

/// Observations for the posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub t_i: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub x_true: Vec<f64>,
}

/// `G(x_true)` plus seeded i.i.d. normal noise.
pub fn synth_data(x_true: &[f64], sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("noise level must be >= 0, got {sigma}")));
    }
    let t_i = observation_times();
    let mut y = forward(x_true, &t_i, ODE_STEP)?;
    if sigma > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
        for v in &mut y {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Dataset {
        t_i,
        y,
        sigma,
        seed,
        x_true: x_true.to_vec(),
    })
}

impl Dataset {
    /// The repo-pinned dataset.
    pub fn standard() -> Self {
        synth_data(&PredPreyParams::TRUE, 2f64.sqrt(), DATASET_SEED).expect("true parameters integrate")
    }
}

/// Unnormalized posterior with a uniform prior on the parameter box.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub data: Dataset,
    pub dt: f64,
}

impl Posterior {
    pub fn new(data: Dataset) -> Self {
        Self { data, dt: ODE_STEP }
    }

    /// Squared misfit `||G(x) - y||^2`.
    pub fn misfit(&self, x: &[f64]) -> Result<f64> {
        let g = forward(x, &self.data.t_i, self.dt)?;
        Ok(g.iter().zip(&self.data.y).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Density value; zero outside the prior box or when the solver blows up.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if !PredPreyParams::in_prior_box(x) {
            return 0.0;
        }
        match self.misfit(x) {
            Ok(m) => (-m / (2.0 * self.data.sigma * self.data.sigma)).exp(),
            Err(e) => {
                log::warn!("posterior set to zero at {x:?}: {e}");
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Qoi {
    RiskP,
    RiskQ,
    MomentP(u32),
    MomentQ(u32),
}

impl Qoi {
    /// The eight quantities reported for the predator-prey study.
    pub const ALL: [Qoi; 8] = [
        Qoi::RiskP,
        Qoi::RiskQ,
        Qoi::MomentP(1),
        Qoi::MomentP(2),
        Qoi::MomentP(3),
        Qoi::MomentQ(1),
        Qoi::MomentQ(2),
        Qoi::MomentQ(3),
    ];

    /// Value given the state `(P, Q)` at the horizon.
    pub fn from_state(&self, p: f64, q: f64) -> f64 {
        match *self {
            Qoi::RiskP => f64::from(u8::from(p <= TAU_P)),
            Qoi::RiskQ => f64::from(u8::from(q <= TAU_Q)),
            Qoi::MomentP(r) => p.powi(r as i32),
            Qoi::MomentQ(r) => q.powi(r as i32),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (p, q) = horizon_state(x)?;
        Ok(self.from_state(p, q))
    }

    pub fn name(&self) -> String {
        match self {
            Qoi::RiskP => "risk_P".into(),
            Qoi::RiskQ => "risk_Q".into(),
            Qoi::MomentP(r) => format!("moment_P{r}"),
            Qoi::MomentQ(r) => format!("moment_Q{r}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|q| q.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown quantity of interest '{s}'")))
    }
}

/// Solves advanced together by [`horizon_states`].
const LANES: usize = 8;

/// `(P, Q)` at the horizon for parameter vectors stored back to back, `None`
/// where the solver blows up. Interleaving independent solves hides the
/// latency of the serial RK4 chain; values match [`horizon_state`] exactly.
pub fn horizon_states(xs: &[f64]) -> Vec<Option<(f64, f64)>> {
    let steps = (HORIZON / ODE_STEP).round() as u64;
    let mut res = Vec::with_capacity(xs.len() / 4);
    for chunk in xs.chunks(4 * LANES) {
        let m = chunk.len() / 4;
        let mut prm = [PredPreyParams::from_slice(&PredPreyParams::TRUE); LANES];
        for (p, x) in prm.iter_mut().zip(chunk.chunks_exact(4)) {
            *p = PredPreyParams::from_slice(x);
        }
        let mut y0 = prm.map(|p| p.p0);
        let mut y1 = prm.map(|p| p.q0);
        for _ in 0..steps {
            for l in 0..LANES {
                (y0[l], y1[l]) = prm[l].rk4_step(y0[l], y1[l], ODE_STEP);
            }
        }
        // Non-finite values never return to finite ones under these updates.
        res.extend((0..m).map(|l| (y0[l].is_finite() && y1[l].is_finite()).then_some((y0[l], y1[l]))));
    }
    res
}

/// `(P, Q)` at the prediction horizon.
pub fn horizon_state(x: &[f64]) -> Result<(f64, f64)> {
    Ok(solve_ode(&PredPreyParams::from_slice(x), &[HORIZON], ODE_STEP)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn banana_value_at_origin() {
        let d = DoubleBanana::default();
        // 2 * (9/4 + 50 * 9/16 + 9/4 + 50 * 9/16) = 121.5
        assert!((d.log_density(&[0.0, 0.0]) + 121.5).abs() < 1e-12);
        let d10 = DoubleBanana::new(10.0).unwrap();
        assert!((d10.log_density(&[0.0, 0.0]) + 12.15).abs() < 1e-12);
        assert!(DoubleBanana::new(0.0).is_err());
    }

    #[test]
    fn banana_is_centrally_symmetric() {
        let d = DoubleBanana::new(3.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let a = d.log_density(&x);
            let b = d.log_density(&[-x[0], -x[1]]);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        // the reflection x1 -> -x1 alone is not a symmetry
        let x = [1.0, 0.5];
        assert!((d.log_density(&x) - d.log_density(&[-1.0, 0.5])).abs() > 1.0);
    }

    #[test]
    fn genz_examples() {
        let f2 = Genz::two_dim(GenzKind::CornerPeak);
        assert_eq!(f2.eval(&[-5.0, -5.0]), 1.0);
        let f3 = Genz::two_dim(GenzKind::Continuous);
        // (x + 5) / 10 = w
        assert_eq!(f3.eval(&[-2.5, 2.0]), 1.0);
        let f1 = Genz::two_dim(GenzKind::ProductPeak);
        let expect = 1.0 / (1.0 / 0.09 + 0.5f64.powi(2)) / (1.0 / 0.36 + 1.4f64.powi(2));
        assert!((f1.eval(&[-2.5, 2.0]) - expect).abs() < 1e-15);
        assert!(Genz::new(GenzKind::CornerPeak, vec![1.0], vec![0.0, 0.0], vec![(0.0, 1.0)]).is_err());
    }

    #[test]
    fn genz_sanity_bounds() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let f1 = Genz::two_dim(GenzKind::ProductPeak);
        let f2 = Genz::two_dim(GenzKind::CornerPeak);
        let f3 = Genz::two_dim(GenzKind::Continuous);
        for _ in 0..1000 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            assert!(f1.eval(&x) > 0.0 && f1.eval(&x) <= 0.09 * 0.36);
            assert!(f3.eval(&x) > 0.0 && f3.eval(&x) <= 1.0);
            let shifted = [x[0] + 0.01, x[1]];
            assert!(f2.eval(&shifted) < f2.eval(&x));
        }
    }

    #[test]
    fn logistic_without_predator() {
        let mut p = PredPreyParams::from_slice(&PredPreyParams::TRUE);
        p.q0 = 0.0;
        let times: Vec<f64> = (1..=12).map(|i| i as f64 * 10.0).collect();
        let out = solve_ode(&p, &times, 1e-3).unwrap();
        for (t, (pp, qq)) in times.iter().zip(out) {
            let e = (p.rho_p * t).exp();
            let exact = p.capacity * p.p0 * e / (p.capacity + p.p0 * (e - 1.0));
            assert!((pp - exact).abs() < 1e-6, "{pp} vs {exact}");
            assert_eq!(qq, 0.0);
        }
    }

    #[test]
    fn predator_decays_without_prey() {
        let mut p = PredPreyParams::from_slice(&PredPreyParams::TRUE);
        p.p0 = 0.0;
        let times = [10.0, 50.0, 120.0];
        for (t, (pp, qq)) in times.iter().zip(solve_ode(&p, &times, ODE_STEP).unwrap()) {
            assert_eq!(pp, 0.0);
            let exact = p.q0 * (-p.rho_q * t).exp();
            assert!((qq - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = PredPreyParams::from_slice(&PredPreyParams::TRUE);
        let run = |dt: f64| solve_ode(&p, &[HORIZON], dt).unwrap()[0];
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let e1 = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let e2 = ((b.0 - c.0).powi(2) + (b.1 - c.1).powi(2)).sqrt();
        assert!((e1 / e2).log2() >= 3.5, "order {}", (e1 / e2).log2());

        let t = 25.0 / 6.0;
        let coarse = solve_ode(&p, &[t], ODE_STEP).unwrap()[0];
        let fine = solve_ode(&p, &[t], ODE_STEP / 2.0).unwrap()[0];
        assert!(((coarse.0 - fine.0) / fine.0).abs() < 1e-6);
        assert!(((coarse.1 - fine.1) / fine.1).abs() < 1e-6);
    }

    #[test]
    fn synthetic_data_properties() {
        let exact = synth_data(&PredPreyParams::TRUE, 0.0, 5).unwrap();
        let clean = forward(&PredPreyParams::TRUE, &observation_times(), ODE_STEP).unwrap();
        assert_eq!(exact.y, clean);
        assert_eq!(exact.y.len(), 2 * N_OBS);
        let a = synth_data(&PredPreyParams::TRUE, 2f64.sqrt(), 9).unwrap();
        let b = synth_data(&PredPreyParams::TRUE, 2f64.sqrt(), 9).unwrap();
        assert_eq!(a, b);

        let mut sq = 0.0;
        let mut n = 0.0;
        for seed in 0..400 {
            let d = synth_data(&PredPreyParams::TRUE, 2f64.sqrt(), seed).unwrap();
            for (y, c) in d.y.iter().zip(&clean) {
                sq += (y - c).powi(2);
                n += 1.0;
            }
        }
        assert!((sq / n - 2.0).abs() < 0.1, "{}", sq / n);
    }

    #[test]
    fn posterior_values() {
        let clean = synth_data(&PredPreyParams::TRUE, 0.0, 0).unwrap();
        let post = Posterior::new(Dataset { sigma: 2f64.sqrt(), ..clean });
        assert_eq!(post.eval(&PredPreyParams::TRUE), 1.0);

        let data = Dataset::standard();
        let clean = forward(&PredPreyParams::TRUE, &data.t_i, ODE_STEP).unwrap();
        let eta2: f64 = data.y.iter().zip(&clean).map(|(y, c)| (y - c).powi(2)).sum();
        let post = Posterior::new(data);
        let v = post.eval(&PredPreyParams::TRUE);
        assert!((v - (-eta2 / 4.0).exp()).abs() <= 1e-14 * v);
        assert!(v > 0.0 && v <= 1.0);
        assert_eq!(post.eval(&[0.1, 100.0, 25.0, 0.3]), 0.0);

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4)
                .map(|j| rng.gen_range(PredPreyParams::LOWER[j]..PredPreyParams::UPPER[j]))
                .collect();
            let v = post.eval(&x);
            assert!(v.is_finite() && (0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn qoi_definitions() {
        assert_eq!(Qoi::RiskP.from_state(30.0, 0.0), 0.0);
        assert_eq!(Qoi::RiskP.from_state(25.0, 0.0), 1.0);
        assert_eq!(Qoi::RiskQ.from_state(0.0, 15.0), 1.0);
        assert_eq!(Qoi::MomentP(2).from_state(3.0, 7.0), 9.0);
        assert_eq!(Qoi::MomentQ(3).from_state(3.0, 2.0), 8.0);
        for q in Qoi::ALL {
            assert_eq!(Qoi::parse(&q.name()).unwrap(), q);
        }
        assert!(Qoi::parse("moment_P4").is_err());
    }

    #[test]
    fn batched_horizon_matches_single_solves() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        // 11 points: one full block of lanes plus a partial one.
        let xs: Vec<f64> = (0..11)
            .flat_map(|_| {
                (0..4)
                    .map(|j| rng.gen_range(PredPreyParams::LOWER[j]..PredPreyParams::UPPER[j]))
                    .collect::<Vec<_>>()
            })
            .collect();
        let batch = horizon_states(&xs);
        assert_eq!(batch.len(), 11);
        for (x, b) in xs.chunks(4).zip(&batch) {
            assert_eq!(*b, Some(horizon_state(x).unwrap()));
        }
    }
}
