//! Weighted quasi-Monte Carlo integration against densities known up to a
//! normalizing constant.
//!
//! The building blocks are digital sequences ([`lowdisc`]), the mixture
//! sampling rule with Diophantine sample allocation ([`mixture`]), hat
//! function surrogates with closed-form inverse CDFs ([`hatbasis`]),
//! coordinate-wise adaptive refinement ([`adaptgrid`]) and a Gaussian
//! mixture partition of unity ([`pou`]). [`problems`] holds the two
//! benchmark targets and [`oracle`] the brute-force reference integrators.

pub mod adaptgrid;
pub mod error;
pub mod hatbasis;
pub mod lowdisc;
pub mod mixture;
pub mod numeric;
pub mod oracle;
pub mod pou;
pub mod problems;

pub use adaptgrid::{run_to_convergence, AdaptiveState, GridReport};
pub use error::{Error, Result};
pub use hatbasis::{build_uniform_surrogate, hat_eval, HatDensity1D, HatKind, Knots1D, TensorHatSurrogate};
pub use lowdisc::{is_net, load_direction_numbers, DigitalSequence, GeneratingMatrix, UnitPoint};
pub use mixture::{
    estimate, estimate_multi, g_diagnostic, select_and_allocate, weighted_sums, Allocation, DeltaRule, Density1D,
    EstimateReport, ProductComponent, UniformDensity,
};
pub use oracle::{reference_expectation, tensor_quadrature, GoldenEntry, GoldenValues, QuadratureSpec, Rule};
pub use pou::{
    build_partition_model, combined_estimate, combined_estimate_multi, em_fit, localized_target, EmFit,
    GaussianComponent, PartitionModel,
};
pub use problems::{Dataset, DoubleBanana, Genz, GenzKind, Posterior, PredPreyParams, Qoi};
