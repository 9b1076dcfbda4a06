//! Shared fixtures for the criterion benchmarks.

use hatqmc::{run_to_convergence, DoubleBanana, PredPreyParams, TensorHatSurrogate};

/// Adaptive surrogate of the default double banana at threshold `epsilon`.
pub fn banana_surrogate(epsilon: f64) -> TensorHatSurrogate {
    let banana = DoubleBanana::new(1.0).expect("valid sigma");
    let (surrogate, _) = run_to_convergence(
        |x: &[f64]| banana.density(x),
        &DoubleBanana::BOUNDS,
        &[4, 4],
        epsilon,
        hatqmc::adaptgrid::DEFAULT_BUDGET,
    )
    .expect("surrogate builds");
    surrogate
}

/// `count` parameter vectors near the true predator-prey parameters, back to back.
pub fn predprey_batch(count: usize) -> Vec<f64> {
    (0..count)
        .flat_map(|i| {
            let scale = 1.0 + 0.01 * (i % 7) as f64;
            PredPreyParams::TRUE.iter().map(move |v| v * scale).collect::<Vec<_>>()
        })
        .collect()
}
