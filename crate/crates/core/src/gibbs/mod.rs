//! Gibbs sampler: conditional updates, the sweep, chains and a joint
//! distribution test.

mod chain;
mod geweke;
pub mod steps;

use nalgebra::DMatrix;
use rand::Rng;

pub use chain::{init_chain, run_chain, run_chains, ChainConfig, ChainFailure, ChainOutput, ProgressRecord};
pub use geweke::{geweke_self_consistency, geweke_test, toy_hyperparameters, GewekeReport, GewekeStatistic, ToyShape};
pub use steps::{
    update_community_params, update_dispersion, update_edge_counts, update_latent_states, update_loadings,
    update_mask, update_node_weights, update_obs_precision, update_pg_auxiliaries, update_scales,
    update_transition_weights,
};

use crate::error::Result;
use crate::kernel::{gamma, poisson, softplus, std_normal};
use crate::linalg;
use crate::model::{Hyperparameters, ModelState, ObservationNoise};

/// Switches for individual steps of the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepOptions {
    /// Redraw the mask `Z`. Turning this off breaks the sampler and exists
    /// to check that the joint-distribution test notices.
    pub update_mask: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { update_mask: true }
    }
}

/// One full sweep with default options.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    y: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    gibbs_sweep_with(state, y, hyper, &SweepOptions::default(), rng)
}

/// One full sweep:
/// `[ω] → x0, X → D → [η block | Φ] → W → Z → (M, split) → ρ, θ, τ, ψ, r → e, f, λ, φ`.
pub fn gibbs_sweep_with<R: Rng + ?Sized>(
    state: &mut ModelState,
    y: &DMatrix<f64>,
    hyper: &Hyperparameters,
    options: &SweepOptions,
    rng: &mut R,
) -> Result<()> {
    let count_model = matches!(state.obs.noise, ObservationNoise::NegativeBinomial { .. });
    if count_model {
        steps::update_pg_auxiliaries(state, y, rng)?;
    }
    steps::update_latent_states(state, y, hyper, rng)?;
    steps::update_loadings(state, y, rng)?;
    if count_model {
        steps::update_dispersion(state, y, hyper, rng)?;
    } else {
        steps::update_obs_precision(state, y, hyper, rng)?;
    }
    steps::update_transition_weights(state, rng);
    if options.update_mask {
        steps::update_mask(state, rng);
    }
    steps::update_edge_counts(state, rng);
    steps::update_rho(state, hyper, rng);
    steps::update_theta(state, rng);
    steps::update_tau(state, hyper, rng);
    steps::update_psi(state, rng);
    steps::update_r(state, hyper, rng);
    steps::update_scales(state, hyper, rng);
    Ok(())
}

/// Observation plus transition log density of the state given `y`, dropping
/// terms that do not involve the latent states or noise parameters
/// (for counts, the `ln Γ` normalizers).
pub fn log_joint_surrogate(state: &ModelState, y: &DMatrix<f64>) -> f64 {
    let xi = &state.obs.d * &state.traj.x;
    let t = y.ncols() as f64;
    let obs = match &state.obs.noise {
        ObservationNoise::Gaussian { precision } => {
            let resid = y - &xi;
            let log_det = linalg::cholesky(precision, "Phi")
                .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
                .unwrap_or(f64::NAN);
            let quad = (precision * &resid).component_mul(&resid).sum();
            0.5 * t * log_det - 0.5 * quad - 0.5 * (y.len() as f64) * (2.0 * std::f64::consts::PI).ln()
        }
        ObservationNoise::NegativeBinomial { eta, .. } => y
            .iter()
            .zip(xi.iter())
            .map(|(&yy, &x)| yy * x - (yy + eta) * softplus(x))
            .sum(),
    };
    let lagged = state.traj.lagged();
    let resid = &state.traj.x - state.trans.masked() * &lagged;
    let trans: f64 = (0..resid.nrows())
        .map(|i| {
            let lam = state.trans.lambda[i];
            0.5 * t * (lam.ln() - (2.0 * std::f64::consts::PI).ln()) - 0.5 * lam * resid.row(i).norm_squared()
        })
        .sum();
    obs + trans
}

/// Draw an observation matrix from the observation layer of `state`.
pub fn sample_observations<R: Rng + ?Sized>(state: &ModelState, rng: &mut R) -> Result<DMatrix<f64>> {
    let xi = &state.obs.d * &state.traj.x;
    let (v, t) = xi.shape();
    match &state.obs.noise {
        ObservationNoise::Gaussian { precision } => {
            let chol = linalg::cholesky(precision, "Phi")?;
            let mut y = xi;
            for c in 0..t {
                let eps = nalgebra::DVector::from_fn(v, |_, _| std_normal(rng));
                let noise = chol
                    .l_dirty()
                    .tr_solve_lower_triangular(&eps)
                    .expect("cholesky factor has a positive diagonal");
                let mut col = y.column_mut(c);
                col += noise;
            }
            Ok(y)
        }
        ObservationNoise::NegativeBinomial { eta, .. } => {
            // NB(η, logistic(ξ)) as a gamma mixture of Poissons with mean η e^ξ
            Ok(xi.map(|x| {
                let scale = x.exp().min(1e300);
                if scale > 0.0 {
                    poisson(gamma(*eta, scale, rng), rng) as f64
                } else {
                    0.0
                }
            }))
        }
    }
}
