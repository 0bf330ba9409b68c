//! Conditional updates. Each function redraws one block of the state from
//! its full conditional (or from a conditional with a neighbouring block
//! integrated out, where the sweep order makes that valid).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ggp::log_sum_exp;
use crate::kernel::{
    crt, gamma, logistic, multinomial_log_into, mvn_canonical, polya_gamma, sample_precision_from_inverse_wishart,
    softplus, std_normal, truncated_poisson,
};
use crate::linalg;
use crate::model::{Hyperparameters, ModelState, ObservationNoise};

/// Lower bound applied to gamma rate parameters before inversion.
pub const RATE_FLOOR: f64 = 1e-300;

#[inline]
fn scale_of(rate: f64) -> f64 {
    1.0 / rate.max(RATE_FLOOR)
}

fn check_data(state: &ModelState, y: &DMatrix<f64>) -> Result<()> {
    let v = state.obs.d.nrows();
    let t = state.traj.t();
    if y.shape() != (v, t) {
        return Err(Error::shape(format!(
            "data is {}x{}, state expects {v}x{t}",
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `ω_vt ~ PG(y_vt + η, D(v,:) x_t)`.
pub fn update_pg_auxiliaries<R: Rng + ?Sized>(state: &mut ModelState, y: &DMatrix<f64>, rng: &mut R) -> Result<()> {
    check_data(state, y)?;
    let xi = &state.obs.d * &state.traj.x;
    match &mut state.obs.noise {
        ObservationNoise::NegativeBinomial { eta, omega, .. } => {
            for (idx, w) in omega.iter_mut().enumerate() {
                *w = polya_gamma(y[idx] + *eta, xi[idx], rng);
            }
            Ok(())
        }
        ObservationNoise::Gaussian { .. } => Err(Error::Mode("Pólya-Gamma auxiliaries exist only for count models".into())),
    }
}

/// Precomputed transition terms `A = W ⊙ Z`, `Λ A` and `Aᵀ Λ`.
struct TransitionTerms {
    lam_a: DMatrix<f64>,
    at_lam: DMatrix<f64>,
    at_lam_a: DMatrix<f64>,
}

impl TransitionTerms {
    fn new(state: &ModelState) -> Self {
        let a = state.trans.masked();
        let lam = &state.trans.lambda;
        let lam_a = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| lam[i] * a[(i, j)]);
        let at_lam = lam_a.transpose();
        let at_lam_a = &at_lam * &a;
        Self { lam_a, at_lam, at_lam_a }
    }
}

/// Single-site draws of `x0` and then `x_1, …, x_T` in increasing order, each
/// given its current neighbours.
pub fn update_latent_states<R: Rng + ?Sized>(
    state: &mut ModelState,
    y: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    check_data(state, y)?;
    let tt = TransitionTerms::new(state);
    let t_len = state.traj.t();
    let s = state.traj.x.nrows();

    let prec0 = &hyper.h0 + &tt.at_lam_a;
    let h0 = &hyper.h0 * &hyper.m0 + &tt.at_lam * state.traj.x.column(0);
    let chol0 = linalg::cholesky(&prec0, "x0 conditional precision")?;
    state.traj.x0 = mvn_canonical(&chol0, &h0, rng);

    let lam = DMatrix::from_diagonal(&state.trans.lambda);
    let d = &state.obs.d;
    match &state.obs.noise {
        ObservationNoise::Gaussian { precision } => {
            let dt_phi = d.transpose() * precision;
            let data_prec = &dt_phi * d;
            let data_h = &dt_phi * y;
            let last = &data_prec + &lam;
            let interior = &last + &tt.at_lam_a;
            let chol_last = linalg::cholesky(&last, "x_T conditional precision")?;
            let chol_interior = if t_len > 1 {
                Some(linalg::cholesky(&interior, "x_t conditional precision")?)
            } else {
                None
            };
            for c in 0..t_len {
                let mut h: DVector<f64> = data_h.column(c).into_owned();
                h += &tt.lam_a * state.traj.previous(c);
                let chol = if c + 1 < t_len {
                    h += &tt.at_lam * state.traj.x.column(c + 1);
                    chol_interior.as_ref().expect("interior factor exists when T > 1")
                } else {
                    &chol_last
                };
                let x = mvn_canonical(chol, &h, rng);
                state.traj.x.set_column(c, &x);
            }
        }
        ObservationNoise::NegativeBinomial { eta, omega, .. } => {
            let v = d.nrows();
            let mut prec = DMatrix::zeros(s, s);
            let mut weighted = DMatrix::zeros(v, s);
            for c in 0..t_len {
                for vv in 0..v {
                    let w = omega[(vv, c)];
                    for k in 0..s {
                        weighted[(vv, k)] = w * d[(vv, k)];
                    }
                }
                prec.gemm_tr(1.0, d, &weighted, 0.0);
                prec += &lam;
                let kappa = DVector::from_fn(v, |vv, _| (y[(vv, c)] - eta) / 2.0);
                let mut h = d.transpose() * kappa;
                h += &tt.lam_a * state.traj.previous(c);
                if c + 1 < t_len {
                    prec += &tt.at_lam_a;
                    h += &tt.at_lam * state.traj.x.column(c + 1);
                }
                let chol = linalg::cholesky(&prec, "x_t conditional precision")?;
                let x = mvn_canonical(&chol, &h, rng);
                state.traj.x.set_column(c, &x);
            }
        }
    }
    Ok(())
}

/// Column-wise draws of the loading matrix `D`, each given the other columns.
pub fn update_loadings<R: Rng + ?Sized>(state: &mut ModelState, y: &DMatrix<f64>, rng: &mut R) -> Result<()> {
    check_data(state, y)?;
    let (v, s) = state.obs.d.shape();
    let prior_prec = (v as f64).sqrt();
    let x = &state.traj.x;
    match &state.obs.noise {
        ObservationNoise::Gaussian { precision } => {
            let mut resid = y - &state.obs.d * x;
            for col in 0..s {
                let xs = x.row(col);
                let sxx = xs.norm_squared();
                let d_old = state.obs.d.column(col).into_owned();
                resid.ger(1.0, &d_old, &xs.transpose(), 1.0);
                let rx = &resid * xs.transpose();
                let (prec, h) = loading_conditional(precision, sxx, &rx, prior_prec);
                let chol = linalg::cholesky(&prec, "loading conditional precision")?;
                let d_new = mvn_canonical(&chol, &h, rng);
                resid.ger(-1.0, &d_new, &xs.transpose(), 1.0);
                state.obs.d.set_column(col, &d_new);
            }
        }
        ObservationNoise::NegativeBinomial { eta, omega, .. } => {
            let t = x.ncols();
            let mut xi = &state.obs.d * x;
            for col in 0..s {
                for vv in 0..v {
                    let d_old = state.obs.d[(vv, col)];
                    let mut prec = prior_prec;
                    let mut h = 0.0;
                    for c in 0..t {
                        let xv = x[(col, c)];
                        let w = omega[(vv, c)];
                        let kappa = (y[(vv, c)] - eta) / 2.0;
                        prec += xv * xv * w;
                        h += xv * (kappa - w * (xi[(vv, c)] - d_old * xv));
                    }
                    let d_new = h / prec + std_normal(rng) / prec.sqrt();
                    for c in 0..t {
                        xi[(vv, c)] += (d_new - d_old) * x[(col, c)];
                    }
                    state.obs.d[(vv, col)] = d_new;
                }
            }
        }
    }
    Ok(())
}

/// Precision and information vector of one loading column in the Gaussian
/// model: `(Σ_t x_st²) Φ + √V I` and `Φ Σ_t x_st r_t`, where `r_t` is the
/// residual with column `s` removed.
pub fn loading_conditional(
    phi: &DMatrix<f64>,
    sum_x2: f64,
    resid_x: &DVector<f64>,
    prior_prec: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = phi.nrows();
    let prec = phi * sum_x2 + DMatrix::identity(n, n) * prior_prec;
    (prec, phi * resid_x)
}

/// Dispersion block of the count model: CRT auxiliaries, then `α_η` with
/// `η` integrated out, `η`, and `β_η`.
pub fn update_dispersion<R: Rng + ?Sized>(
    state: &mut ModelState,
    y: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    check_data(state, y)?;
    let xi = &state.obs.d * &state.traj.x;
    let ObservationNoise::NegativeBinomial { eta, alpha_eta, beta_eta, .. } = &mut state.obs.noise else {
        return Err(Error::Mode("dispersion exists only for count models".into()));
    };
    let l3: u64 = y.iter().map(|&yy| crt(yy as u64, *eta, rng)).sum();
    let l4 = crt(l3, *alpha_eta, rng);
    let zeta: f64 = xi.iter().map(|&x| softplus(x)).sum();
    let ln_one_minus_p = -(zeta / *beta_eta).ln_1p();
    *alpha_eta = gamma(hyper.alpha0 + l4 as f64, scale_of(hyper.beta0 - ln_one_minus_p), rng);
    *eta = gamma(*alpha_eta + l3 as f64, scale_of(*beta_eta + zeta), rng);
    *beta_eta = gamma(hyper.alpha0 + *alpha_eta, scale_of(hyper.beta0 + *eta), rng);
    Ok(())
}

/// `Φ ~ Wishart((G + V̄⁻¹)⁻¹, V + 2 + T)` with `G = Σ_t (y_t − D x_t)(y_t − D x_t)ᵀ`,
/// i.e. `Φ⁻¹ ~ IW(G + V̄⁻¹, V + 2 + T)`.
pub fn update_obs_precision<R: Rng + ?Sized>(
    state: &mut ModelState,
    y: &DMatrix<f64>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    check_data(state, y)?;
    if !matches!(state.obs.noise, ObservationNoise::Gaussian { .. }) {
        return Err(Error::Mode("observation precision exists only for Gaussian models".into()));
    }
    let resid = y - &state.obs.d * &state.traj.x;
    let (v, t) = resid.shape();
    let mut scale = &resid * resid.transpose();
    scale += linalg::spd_inverse(&hyper.wishart_scale, "wishart scale")?;
    let dof = (v + 2 + t) as f64;
    let phi = match sample_precision_from_inverse_wishart(&scale, dof, rng) {
        Ok(phi) => phi,
        Err(Error::Singular { .. }) => {
            log::warn!("inverse-wishart scale failed to factorize; retrying after symmetrization");
            sample_precision_from_inverse_wishart(&linalg::symmetrize(&scale), dof, rng)?
        }
        Err(e) => return Err(e),
    };
    state.obs.noise = ObservationNoise::Gaussian { precision: phi };
    Ok(())
}

/// Transposed lagged states (`T × S`, row `t` is `x_{t−1}`), their squared
/// column norms `T_j` and the transposed transition residual
/// `E_t = x_t − (W ⊙ Z) x_{t−1}`.
struct TransitionResidual {
    lag: DMatrix<f64>,
    t_j: Vec<f64>,
    e: DMatrix<f64>,
}

impl TransitionResidual {
    fn new(state: &ModelState) -> Self {
        let lagged = state.traj.lagged();
        let e = (&state.traj.x - state.trans.masked() * &lagged).transpose();
        let lag = lagged.transpose();
        let t_j = (0..lag.ncols()).map(|j| lag.column(j).norm_squared()).collect();
        Self { lag, t_j, e }
    }

    /// `Q_ij = Σ_t E_it x_{j,t−1} + a_ij T_j`
    fn q(&self, i: usize, j: usize, a_ij: f64) -> f64 {
        self.e.column(i).dot(&self.lag.column(j)) + a_ij * self.t_j[j]
    }

    /// Account for `a_ij` changing by `delta`.
    fn shift(&mut self, i: usize, j: usize, delta: f64) {
        if delta != 0.0 {
            let lag_j = self.lag.column(j).into_owned();
            self.e.column_mut(i).axpy(-delta, &lag_j, 1.0);
        }
    }
}

/// Mean and variance of `w_ij`: `τ = 1 / (z λ_i T_j + φ_ij)`, `μ = τ z λ_i Q_ij`.
pub fn weight_conditional(z: bool, lambda_i: f64, t_j: f64, q_ij: f64, varphi_ij: f64) -> (f64, f64) {
    let zf = if z { 1.0 } else { 0.0 };
    let var = 1.0 / (zf * lambda_i * t_j + varphi_ij);
    (var * zf * lambda_i * q_ij, var)
}

/// Cell-by-cell (row-major) draws of `W`.
pub fn update_transition_weights<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let mut res = TransitionResidual::new(state);
    let s = state.trans.s();
    for i in 0..s {
        let lam = state.trans.lambda[i];
        for j in 0..s {
            let z = state.trans.z[(i, j)];
            let varphi = state.trans.varphi[(i, j)];
            let w_old = state.trans.w[(i, j)];
            let a_old = if z { w_old } else { 0.0 };
            let q = if z { res.q(i, j, a_old) } else { 0.0 };
            let (mean, var) = weight_conditional(z, lam, res.t_j[j], q, varphi);
            let w_new = mean + var.sqrt() * std_normal(rng);
            state.trans.w[(i, j)] = w_new;
            if z {
                res.shift(i, j, w_new - w_old);
            }
        }
    }
}

/// `P(z_ij = 1 | −)` with `m_ij` integrated out:
/// `p1 = exp(−½ λ_i (w² T_j − 2 w Q_ij)) (1 − e^{−Λ_ij})`, `p0 = e^{−Λ_ij}`.
pub fn mask_probability(w: f64, lambda_i: f64, t_j: f64, q_ij: f64, rate: f64) -> f64 {
    let log_p1 = -0.5 * lambda_i * (w * w * t_j - 2.0 * w * q_ij) + (-(-rate).exp_m1()).ln();
    let log_p0 = -rate;
    logistic(log_p1 - log_p0)
}

fn log_rates(state: &ModelState) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let g = &state.ggp;
    (
        g.r.iter().map(|r| r.ln()).collect(),
        g.theta.map(f64::ln),
        g.psi.map(f64::ln),
    )
}

fn cell_log_weights(log_r: &[f64], log_theta: &DMatrix<f64>, log_psi: &DMatrix<f64>, i: usize, j: usize, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = log_r[k] + log_theta[(i, k)] + log_psi[(j, k)];
    }
}

/// Cell-by-cell (row-major) draws of the mask `Z`.
pub fn update_mask<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let mut res = TransitionResidual::new(state);
    let (s, k) = (state.trans.s(), state.ggp.k());
    let (log_r, log_theta, log_psi) = log_rates(state);
    let mut logw = vec![0.0; k];
    for i in 0..s {
        let lam = state.trans.lambda[i];
        for j in 0..s {
            cell_log_weights(&log_r, &log_theta, &log_psi, i, j, &mut logw);
            let rate = log_sum_exp(&logw).exp();
            let w = state.trans.w[(i, j)];
            let z_old = state.trans.z[(i, j)];
            let a_old = if z_old { w } else { 0.0 };
            let q = res.q(i, j, a_old);
            let p = mask_probability(w, lam, res.t_j[j], q, rate);
            let z_new = rng.random::<f64>() < p;
            if z_new != z_old {
                let a_new = if z_new { w } else { 0.0 };
                res.shift(i, j, a_new - a_old);
                state.trans.z[(i, j)] = z_new;
            }
        }
    }
}

/// `m_ij ~ z_ij Pois₊(Σκ r_κ θ_iκ ψ_jκ)` followed by the multinomial split
/// across communities.
pub fn update_edge_counts<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let (s, k) = (state.trans.s(), state.ggp.k());
    let (log_r, log_theta, log_psi) = log_rates(state);
    let mut logw = vec![0.0; k];
    let mut scratch = Vec::with_capacity(k);
    for i in 0..s {
        for j in 0..s {
            let start = (i * s + j) * k;
            let cell = &mut state.trans.m_split[start..start + k];
            if !state.trans.z[(i, j)] {
                state.trans.m[(i, j)] = 0;
                cell.fill(0);
                continue;
            }
            cell_log_weights(&log_r, &log_theta, &log_psi, i, j, &mut logw);
            let rate = log_sum_exp(&logw).exp().max(f64::MIN_POSITIVE);
            let n = truncated_poisson(rate, rng);
            state.trans.m[(i, j)] = n;
            multinomial_log_into(n, &logw, &mut scratch, cell, rng);
        }
    }
}

/// `(Σ_j m_ijκ, Σ_i m_ijκ)` as `S × K` matrices.
fn marginal_counts(state: &ModelState) -> (DMatrix<f64>, DMatrix<f64>) {
    let (s, k) = (state.trans.s(), state.ggp.k());
    let mut rows = DMatrix::zeros(s, k);
    let mut cols = DMatrix::zeros(s, k);
    for i in 0..s {
        for j in 0..s {
            for (kk, &m) in state.trans.split_cell(i, j).iter().enumerate() {
                if m > 0 {
                    rows[(i, kk)] += m as f64;
                    cols[(j, kk)] += m as f64;
                }
            }
        }
    }
    (rows, cols)
}

fn column_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|k| m.column(k).sum()).collect()
}

/// `ρ_i` with `θ_i·` integrated out, through `l_iκ ~ CRT(Σ_j m_ijκ, ρ_i)`:
/// `ρ_i ~ Gamma(γ0/S + Σκ l_iκ, 1 / (cρ + Σκ ln(1 + r_κ Σ_j ψ_jκ / e_κ)))`.
pub fn update_rho<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) {
    let (rows, _) = marginal_counts(state);
    let g = &mut state.ggp;
    let psi_sum = column_sums(&g.psi);
    let rate = hyper.c_rho
        + (0..g.k())
            .map(|k| (g.r[k] * psi_sum[k] / g.e[k]).ln_1p())
            .sum::<f64>();
    let s = g.s();
    for i in 0..s {
        let l: u64 = (0..g.k()).map(|k| crt(rows[(i, k)] as u64, g.rho[i], rng)).sum();
        g.rho[i] = gamma(hyper.gamma0 / s as f64 + l as f64, scale_of(rate), rng);
    }
}

/// `θ_iκ ~ Gamma(ρ_i + Σ_j m_ijκ, 1 / (e_κ + r_κ Σ_j ψ_jκ))`.
pub fn update_theta<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let (rows, _) = marginal_counts(state);
    let g = &mut state.ggp;
    let psi_sum = column_sums(&g.psi);
    for k in 0..g.k() {
        let scale = scale_of(g.e[k] + g.r[k] * psi_sum[k]);
        for i in 0..g.s() {
            g.theta[(i, k)] = gamma(g.rho[i] + rows[(i, k)], scale, rng);
        }
    }
}

/// `τ_j` with `ψ_j·` integrated out; mirror image of [`update_rho`] with
/// `f_κ` as the scale of `ψ`.
pub fn update_tau<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) {
    let (_, cols) = marginal_counts(state);
    let g = &mut state.ggp;
    let theta_sum = column_sums(&g.theta);
    let rate = hyper.c_tau
        + (0..g.k())
            .map(|k| (g.r[k] * theta_sum[k] / g.f[k]).ln_1p())
            .sum::<f64>();
    let s = g.s();
    for j in 0..s {
        let l: u64 = (0..g.k()).map(|k| crt(cols[(j, k)] as u64, g.tau[j], rng)).sum();
        g.tau[j] = gamma(hyper.gamma0 / s as f64 + l as f64, scale_of(rate), rng);
    }
}

/// `ψ_jκ ~ Gamma(τ_j + Σ_i m_ijκ, 1 / (f_κ + r_κ Σ_i θ_iκ))`.
pub fn update_psi<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    let (_, cols) = marginal_counts(state);
    let g = &mut state.ggp;
    let theta_sum = column_sums(&g.theta);
    for k in 0..g.k() {
        let scale = scale_of(g.f[k] + g.r[k] * theta_sum[k]);
        for j in 0..g.s() {
            g.psi[(j, k)] = gamma(g.tau[j] + cols[(j, k)], scale, rng);
        }
    }
}

/// `r_κ ~ Gamma(γ0/K + Σ_ij m_ijκ, 1 / (c + Σ_i θ_iκ Σ_j ψ_jκ))`.
pub fn update_r<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) {
    let totals = state.trans.community_totals();
    let g = &mut state.ggp;
    let theta_sum = column_sums(&g.theta);
    let psi_sum = column_sums(&g.psi);
    let k_len = g.k();
    for k in 0..k_len {
        let shape = hyper.gamma0 / k_len as f64 + totals[k] as f64;
        g.r[k] = gamma(shape, scale_of(hyper.c + theta_sum[k] * psi_sum[k]), rng);
    }
}

/// Affiliations and community weights: `θ`, `ψ`, then `r`.
pub fn update_community_params<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) {
    update_theta(state, rng);
    update_psi(state, rng);
    update_r(state, hyper, rng);
}

/// Node weights `ρ` and `τ`, each with its affiliations integrated out.
///
/// Because the affiliations are integrated out, these draws must be followed
/// by fresh draws of `θ` (after `ρ`) and `ψ` (after `τ`); [`super::gibbs_sweep`]
/// interleaves them as `ρ, θ, τ, ψ, r`.
pub fn update_node_weights<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) {
    update_rho(state, hyper, rng);
    update_tau(state, hyper, rng);
}

/// `e_κ`, `f_κ`, the state-noise precisions `λ_i` and the weight
/// precisions `φ_ij`.
pub fn update_scales<R: Rng + ?Sized>(state: &mut ModelState, hyper: &Hyperparameters, rng: &mut R) {
    let g = &mut state.ggp;
    let rho_sum = g.rho.sum();
    let tau_sum = g.tau.sum();
    for k in 0..g.k() {
        g.e[k] = gamma(hyper.alpha0 + rho_sum, scale_of(hyper.beta0 + g.theta.column(k).sum()), rng);
        g.f[k] = gamma(hyper.alpha0 + tau_sum, scale_of(hyper.beta0 + g.psi.column(k).sum()), rng);
    }

    let lagged = state.traj.lagged();
    let resid = &state.traj.x - state.trans.masked() * &lagged;
    let t = resid.ncols() as f64;
    for i in 0..state.trans.s() {
        let ss = resid.row(i).norm_squared();
        state.trans.lambda[i] = gamma(hyper.a + t / 2.0, scale_of(hyper.b + ss / 2.0), rng);
    }
    for (phi, &w) in state.trans.varphi.iter_mut().zip(state.trans.w.iter()) {
        *phi = gamma(hyper.alpha0 + 0.5, scale_of(hyper.beta0 + w * w / 2.0), rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_random, GgpState, LatentTrajectory, ObservationKind, ObservationState, TransitionState};
    use crate::rng::RngStream;

    fn scalar_state(kind: ObservationKind, t: usize) -> (ModelState, Hyperparameters) {
        let hyper = Hyperparameters::new(1, kind).with_truncation(1, 1);
        let noise = match kind {
            ObservationKind::Gaussian => ObservationNoise::Gaussian { precision: DMatrix::identity(1, 1) },
            ObservationKind::NegativeBinomial => ObservationNoise::NegativeBinomial {
                eta: 1.0,
                alpha_eta: 1.0,
                beta_eta: 1.0,
                omega: DMatrix::from_element(1, t, 0.25),
            },
        };
        let state = ModelState {
            ggp: GgpState {
                r: DVector::from_element(1, 1.0),
                theta: DMatrix::from_element(1, 1, 1.0),
                psi: DMatrix::from_element(1, 1, 1.0),
                rho: DVector::from_element(1, 1.0),
                tau: DVector::from_element(1, 1.0),
                e: DVector::from_element(1, 1.0),
                f: DVector::from_element(1, 1.0),
            },
            trans: TransitionState {
                w: DMatrix::from_element(1, 1, 0.0),
                z: DMatrix::from_element(1, 1, false),
                m: DMatrix::from_element(1, 1, 0),
                m_split: vec![0],
                varphi: DMatrix::from_element(1, 1, 1.0),
                lambda: DVector::from_element(1, 1.0),
            },
            obs: ObservationState { d: DMatrix::from_element(1, 1, 1.0), noise },
            traj: LatentTrajectory { x: DMatrix::zeros(1, t), x0: DVector::zeros(1) },
        };
        (state, hyper)
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn pg_auxiliaries_follow_counts() {
        let (mut st, _) = scalar_state(ObservationKind::NegativeBinomial, 2);
        let mut rng = RngStream::new(1, 0);
        // ξ = 0 in column 0 with y = 0, ξ = 1 in column 1 with y = 3 and η = 2
        st.traj.x = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        if let ObservationNoise::NegativeBinomial { eta, .. } = &mut st.obs.noise {
            *eta = 2.0;
        }
        let y = DMatrix::from_row_slice(1, 2, &[0.0, 3.0]);
        let n = 50_000;
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            update_pg_auxiliaries(&mut st, &y, &mut rng).unwrap();
            let ObservationNoise::NegativeBinomial { omega, .. } = &st.obs.noise else { unreachable!() };
            a.push(omega[(0, 0)]);
            b.push(omega[(0, 1)]);
        }
        // PG(2, 0) mean 1/2; PG(5, 1) mean 5/2 tanh(1/2)
        assert!((mean_var(&a).0 / 0.5 - 1.0).abs() < 0.01);
        assert!((mean_var(&b).0 / (2.5 * 0.5f64.tanh()) - 1.0).abs() < 0.01);
    }

    #[test]
    fn pg_auxiliaries_reject_gaussian() {
        let (mut st, _) = scalar_state(ObservationKind::Gaussian, 2);
        let y = DMatrix::zeros(1, 2);
        assert!(matches!(update_pg_auxiliaries(&mut st, &y, &mut RngStream::new(0, 0)), Err(Error::Mode(_))));
    }

    #[test]
    fn last_state_scalar_conditional() {
        // Φ = Λ = 1, A = 0, d = 1, y_T = 2: x_T ~ N(1, 0.5)
        let (mut st, hyper) = scalar_state(ObservationKind::Gaussian, 2);
        let y = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let mut rng = RngStream::new(2, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                update_latent_states(&mut st, &y, &hyper, &mut rng).unwrap();
                st.traj.x[(0, 1)]
            })
            .collect();
        let (m, v) = mean_var(&xs);
        assert!((m - 1.0).abs() < 0.01, "mean {m}");
        assert!((v - 0.5).abs() < 0.01, "var {v}");
    }

    #[test]
    fn last_state_without_loadings_is_transition_prior() {
        let (mut st, hyper) = scalar_state(ObservationKind::Gaussian, 2);
        st.obs.d[(0, 0)] = 0.0;
        st.trans.w[(0, 0)] = 0.5;
        st.trans.z[(0, 0)] = true;
        st.trans.lambda[0] = 4.0;
        let y = DMatrix::from_row_slice(1, 2, &[5.0, 5.0]);
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let (mut diff, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            update_latent_states(&mut st, &y, &hyper, &mut rng).unwrap();
            let r = st.traj.x[(0, 1)] - 0.5 * st.traj.x[(0, 0)];
            diff += r;
            sq += r * r;
        }
        assert!((diff / n as f64).abs() < 0.01);
        assert!((sq / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn x0_without_coupling_is_prior() {
        let (mut st, hyper) = scalar_state(ObservationKind::Gaussian, 2);
        let y = DMatrix::zeros(1, 2);
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                update_latent_states(&mut st, &y, &hyper, &mut rng).unwrap();
                st.traj.x0[0]
            })
            .collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.02);
    }

    #[test]
    fn loading_scalar_conditional() {
        let phi = DMatrix::identity(1, 1);
        let (prec, h) = loading_conditional(&phi, 4.0, &DVector::from_element(1, 2.0), 1.0);
        let var = 1.0 / prec[(0, 0)];
        assert!((var - 0.2).abs() < 1e-15);
        assert!((var * h[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn loadings_fall_back_to_prior() {
        for kind in [ObservationKind::Gaussian, ObservationKind::NegativeBinomial] {
            let mut rng = RngStream::new(5, 0);
            let hyper = Hyperparameters::new(4, kind).with_truncation(2, 2);
            let mut st = init_random(&hyper, (4, 3), &mut rng);
            st.traj.x.fill(0.0);
            let y = DMatrix::from_element(4, 3, 1.0);
            let n = 20_000;
            let mut acc = 0.0;
            for _ in 0..n {
                update_loadings(&mut st, &y, &mut rng).unwrap();
                acc += st.obs.d.norm_squared();
            }
            // 8 entries with variance 1 / √4
            let mean = acc / n as f64 / 8.0;
            assert!((mean - 0.5).abs() < 0.02, "{kind:?} {mean}");
        }
    }

    #[test]
    fn obs_precision_scalar_mean() {
        // residuals (1, 1), V̄ = 1: Φ⁻¹ ~ IW(3, 5), mean 1
        let (mut st, hyper) = scalar_state(ObservationKind::Gaussian, 2);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let mut rng = RngStream::new(6, 0);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            update_obs_precision(&mut st, &y, &hyper, &mut rng).unwrap();
            acc += 1.0 / st.obs.precision().unwrap()[(0, 0)];
        }
        // IW(3, 5) in one dimension is inverse-gamma(5/2, 3/2): sd = √2 → SE ≈ 0.003
        assert!((acc / n as f64 - 1.0).abs() < 0.02, "{}", acc / n as f64);
    }

    #[test]
    fn obs_precision_rejects_counts() {
        let (mut st, hyper) = scalar_state(ObservationKind::NegativeBinomial, 2);
        let y = DMatrix::zeros(1, 2);
        assert!(update_obs_precision(&mut st, &y, &hyper, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn dispersion_all_zero_counts() {
        let (mut st, hyper) = scalar_state(ObservationKind::NegativeBinomial, 3);
        let y = DMatrix::zeros(1, 3);
        let mut rng = RngStream::new(7, 0);
        update_dispersion(&mut st, &y, &hyper, &mut rng).unwrap();
        let eta = st.obs.eta().unwrap();
        assert!(eta > 0.0 && eta.is_finite());
    }

    #[test]
    fn weight_conditional_cases() {
        let (m, v) = weight_conditional(true, 1.0, 4.0, 2.0, 1.0);
        assert!((v - 0.2).abs() < 1e-15 && (m - 0.4).abs() < 1e-15);
        let (m, v) = weight_conditional(false, 1.0, 4.0, 2.0, 3.0);
        assert_eq!((m, v), (0.0, 1.0 / 3.0));
    }

    #[test]
    fn weights_without_mask_follow_prior() {
        let (mut st, _) = scalar_state(ObservationKind::Gaussian, 4);
        st.traj.x = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        st.trans.varphi[(0, 0)] = 4.0;
        let mut rng = RngStream::new(8, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                update_transition_weights(&mut st, &mut rng);
                st.trans.w[(0, 0)]
            })
            .collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.005 && (v - 0.25).abs() < 0.005);
    }

    #[test]
    fn mask_probability_cases() {
        let p = mask_probability(0.0, 1.0, 3.0, 1.0, 1.0);
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!(mask_probability(0.0, 1.0, 1.0, 1.0, 1e-12) < 1e-11);
        // w² T λ − 2 w λ Q = 2 with w = 1, λ = 1, T = 2, Q = 0
        let p = mask_probability(1.0, 1.0, 2.0, 0.0, 1.0);
        let e1 = (-1.0f64).exp();
        let expected = e1 * (1.0 - e1) / (e1 * (1.0 - e1) + e1);
        assert!((expected - 0.3873).abs() < 1e-4);
        assert!((p - expected).abs() < 1e-12);
    }

    #[test]
    fn edge_counts_follow_mask() {
        let mut rng = RngStream::new(9, 0);
        let hyper = Hyperparameters::new(2, ObservationKind::Gaussian).with_truncation(1, 2);
        let mut st = init_random(&hyper, (2, 3), &mut rng);
        st.ggp.r[0] = 1.0;
        st.ggp.theta.fill(1.0);
        st.ggp.psi.fill(1.0);
        st.trans.z = DMatrix::from_row_slice(2, 2, &[true, false, true, true]);
        let n = 50_000;
        let mut acc = 0.0;
        for _ in 0..n {
            update_edge_counts(&mut st, &mut rng);
            assert_eq!(st.trans.m[(0, 1)], 0);
            assert_eq!(st.trans.split(1, 0, 0), st.trans.m[(1, 0)]);
            acc += st.trans.m[(0, 0)] as f64;
        }
        let expected = 1.0 / (1.0 - (-1.0f64).exp());
        assert!((acc / n as f64 - expected).abs() < 0.015);
    }

    #[test]
    fn theta_conditional_with_counts() {
        // Σ_j m_ijκ = 3, ρ = 1, e = 1, r = 1, Σψ = 2 → Gamma(4, 1/3)
        let (mut st, _) = scalar_state(ObservationKind::Gaussian, 2);
        st.ggp.psi[(0, 0)] = 2.0;
        st.trans.m[(0, 0)] = 3;
        st.trans.z[(0, 0)] = true;
        st.trans.m_split[0] = 3;
        let mut rng = RngStream::new(10, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                update_theta(&mut st, &mut rng);
                st.ggp.theta[(0, 0)]
            })
            .collect();
        let (m, v) = mean_var(&xs);
        assert!((m - 4.0 / 3.0).abs() < 0.01 && (v - 4.0 / 9.0).abs() < 0.01);
    }

    #[test]
    fn node_weight_rate_uses_log1p() {
        // r = 1, Σψ = 1, e = 1 and no counts: ρ ~ Gamma(γ0/S, 1/(cρ + ln 2))
        let (mut st, hyper) = scalar_state(ObservationKind::Gaussian, 2);
        let mut rng = RngStream::new(11, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                update_rho(&mut st, &hyper, &mut rng);
                st.ggp.rho[0]
            })
            .collect();
        let (m, _) = mean_var(&xs);
        let expected = 1.0 / (1.0 + 2f64.ln());
        assert!((m - expected).abs() < 0.015, "{m}");
    }

    #[test]
    fn scales_conditionals() {
        let mut rng = RngStream::new(12, 0);
        let hyper = Hyperparameters::new(1, ObservationKind::Gaussian).with_truncation(1, 2);
        let mut st = init_random(&hyper, (1, 10), &mut rng);
        st.ggp.rho = DVector::from_column_slice(&[1.5, 0.5]);
        st.ggp.theta = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        st.trans.w.fill(0.0);
        st.trans.z.fill(false);
        st.traj.x.fill(0.0);
        st.traj.x0.fill(0.0);
        let n = 100_000;
        let (mut e, mut lam, mut phi) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            update_scales(&mut st, &hyper, &mut rng);
            e.push(st.ggp.e[0]);
            lam.push(st.trans.lambda[0]);
            phi.push(st.trans.varphi[(0, 0)]);
        }
        // Gamma(3, 1/4), Gamma(6, 10), Gamma(3/2, 1)
        assert!((mean_var(&e).0 - 0.75).abs() < 0.01);
        assert!((mean_var(&lam).0 - 60.0).abs() < 0.3);
        assert!((mean_var(&phi).0 - 1.5).abs() < 0.015);
    }
}
