//! Typed containers for every model quantity, prior initialization and
//! invariant checking.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ggp;
use crate::kernel::{self, gamma, std_normal};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObservationKind {
    Gaussian,
    NegativeBinomial,
}

impl ObservationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationKind::Gaussian => "gaussian",
            ObservationKind::NegativeBinomial => "negative_binomial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "lds" => Ok(ObservationKind::Gaussian),
            "negative_binomial" | "nbds" => Ok(ObservationKind::NegativeBinomial),
            other => Err(Error::Config(format!("unknown observation kind `{other}`"))),
        }
    }
}

/// Fixed scalars of the hierarchical model plus truncation levels and the
/// chain schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    /// Community truncation.
    pub k: usize,
    /// Latent state truncation.
    pub s: usize,
    /// Observation dimension.
    pub v: usize,
    pub gamma0: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub c: f64,
    pub c_rho: f64,
    pub c_tau: f64,
    /// Shape of the state-noise precision prior.
    pub a: f64,
    /// Rate of the state-noise precision prior.
    pub b: f64,
    pub wishart_scale: DMatrix<f64>,
    pub m0: DVector<f64>,
    /// Prior precision of `x0`.
    pub h0: DMatrix<f64>,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub observation_kind: ObservationKind,
}

impl Hyperparameters {
    /// Defaults: `γ0 = α0 = β0 = c = cρ = cτ = 1`, `a = 1`, `b = 0.1`,
    /// `K = 16`, `S = 30`, 6000 iterations with 3000 burn-in and thinning 60.
    pub fn new(v: usize, observation_kind: ObservationKind) -> Self {
        let s = 30;
        Self {
            k: 16,
            s,
            v,
            gamma0: 1.0,
            alpha0: 1.0,
            beta0: 1.0,
            c: 1.0,
            c_rho: 1.0,
            c_tau: 1.0,
            a: 1.0,
            b: 0.1,
            wishart_scale: DMatrix::identity(v, v),
            m0: DVector::zeros(s),
            h0: DMatrix::identity(s, s),
            iters: 6000,
            burnin: 3000,
            thin: 60,
            seed: 0,
            observation_kind,
        }
    }

    /// Change `K` and `S`, resetting `m0` and `H0` to their defaults.
    pub fn with_truncation(mut self, k: usize, s: usize) -> Self {
        self.k = k;
        self.s = s;
        self.m0 = DVector::zeros(s);
        self.h0 = DMatrix::identity(s, s);
        self
    }

    pub fn with_schedule(mut self, iters: usize, burnin: usize, thin: usize) -> Self {
        self.iters = iters;
        self.burnin = burnin;
        self.thin = thin;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of snapshots a chain emits under the schedule.
    pub fn n_samples(&self) -> usize {
        if self.thin == 0 || self.burnin >= self.iters {
            0
        } else {
            (self.iters - self.burnin) / self.thin
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.s == 0 || self.v == 0 {
            return Err(Error::Config("K, S and V must be positive".into()));
        }
        let scalars = [
            ("gamma0", self.gamma0),
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("c", self.c),
            ("c_rho", self.c_rho),
            ("c_tau", self.c_tau),
            ("a", self.a),
            ("b", self.b),
        ];
        for (name, v) in scalars {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.iters == 0 || self.burnin >= self.iters {
            return Err(Error::Config(format!(
                "burnin ({}) must be smaller than iters ({})",
                self.burnin, self.iters
            )));
        }
        if self.wishart_scale.shape() != (self.v, self.v) {
            return Err(Error::shape(format!("wishart scale must be {}x{}", self.v, self.v)));
        }
        if self.m0.len() != self.s || self.h0.shape() != (self.s, self.s) {
            return Err(Error::shape(format!("m0 and H0 must have dimension S = {}", self.s)));
        }
        linalg::cholesky(&self.wishart_scale, "wishart scale")?;
        linalg::cholesky(&self.h0, "H0")?;
        Ok(())
    }
}

/// Community weights, affiliations and their scales.
#[derive(Clone, Debug, PartialEq)]
pub struct GgpState {
    pub r: DVector<f64>,
    /// `S × K`, incoming affiliations.
    pub theta: DMatrix<f64>,
    /// `S × K`, outgoing affiliations.
    pub psi: DMatrix<f64>,
    pub rho: DVector<f64>,
    pub tau: DVector<f64>,
    pub e: DVector<f64>,
    pub f: DVector<f64>,
}

impl GgpState {
    pub fn k(&self) -> usize {
        self.r.len()
    }

    pub fn s(&self) -> usize {
        self.rho.len()
    }

    /// `Σκ r_κ θ_iκ ψ_jκ`
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        (0..self.k()).map(|k| self.r[k] * self.theta[(i, k)] * self.psi[(j, k)]).sum()
    }

    /// Matrix of total Poisson rates `Θ diag(r) Ψᵀ`.
    pub fn rate_matrix(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.s(), self.k(), |i, k| self.theta[(i, k)] * self.r[k]);
        scaled * self.psi.transpose()
    }
}

/// Transition weights, spike-and-slab mask and the latent edge counts.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionState {
    pub w: DMatrix<f64>,
    pub z: DMatrix<bool>,
    pub m: DMatrix<u64>,
    /// Community split of `m`, flattened as `(i·S + j)·K + κ`.
    pub m_split: Vec<u64>,
    pub varphi: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl TransitionState {
    pub fn s(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.m_split.len().checked_div(self.s() * self.s()).unwrap_or(0)
    }

    #[inline]
    pub fn split_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.s() + j) * self.k() + k
    }

    pub fn split(&self, i: usize, j: usize, k: usize) -> u64 {
        self.m_split[self.split_index(i, j, k)]
    }

    /// Counts of cell `(i, j)` across communities.
    pub fn split_cell(&self, i: usize, j: usize) -> &[u64] {
        let start = self.split_index(i, j, 0);
        &self.m_split[start..start + self.k()]
    }

    /// `W ⊙ Z`
    pub fn masked(&self) -> DMatrix<f64> {
        self.w.zip_map(&self.z, |w, z| if z { w } else { 0.0 })
    }

    /// `‖M_κ‖₁` for every community.
    pub fn community_totals(&self) -> Vec<u64> {
        let k = self.k();
        let mut out = vec![0; k];
        for (idx, &m) in self.m_split.iter().enumerate() {
            out[idx % k] += m;
        }
        out
    }

    /// Communities carrying at least one edge.
    pub fn active_communities(&self) -> usize {
        self.community_totals().iter().filter(|&&m| m > 0).count()
    }

    pub fn edge_count(&self) -> usize {
        self.z.iter().filter(|&&z| z).count()
    }

    /// States with at least one incoming or outgoing edge (self loops count).
    pub fn nonzero_degree(&self) -> Vec<bool> {
        let s = self.s();
        (0..s)
            .map(|i| (0..s).any(|j| self.z[(i, j)] || self.z[(j, i)]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservationNoise {
    Gaussian {
        /// Observation precision `Φ`.
        precision: DMatrix<f64>,
    },
    NegativeBinomial {
        eta: f64,
        alpha_eta: f64,
        beta_eta: f64,
        /// Pólya-Gamma auxiliaries, `V × T`.
        omega: DMatrix<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationState {
    /// Loading matrix, `V × S`.
    pub d: DMatrix<f64>,
    pub noise: ObservationNoise,
}

impl ObservationState {
    pub fn kind(&self) -> ObservationKind {
        match self.noise {
            ObservationNoise::Gaussian { .. } => ObservationKind::Gaussian,
            ObservationNoise::NegativeBinomial { .. } => ObservationKind::NegativeBinomial,
        }
    }

    pub fn precision(&self) -> Option<&DMatrix<f64>> {
        match &self.noise {
            ObservationNoise::Gaussian { precision } => Some(precision),
            _ => None,
        }
    }

    pub fn eta(&self) -> Option<f64> {
        match self.noise {
            ObservationNoise::NegativeBinomial { eta, .. } => Some(eta),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    /// `S × T`; column `t` holds `x_{t+1}`.
    pub x: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl LatentTrajectory {
    pub fn t(&self) -> usize {
        self.x.ncols()
    }

    /// `x_{t−1}` for column `t` of `x`, with `x0` before the first column.
    pub fn previous(&self, t: usize) -> DVector<f64> {
        if t == 0 {
            self.x0.clone()
        } else {
            self.x.column(t - 1).into_owned()
        }
    }

    /// `[x0, x_1, …, x_{T−1}]`, the inputs of the `T` transitions.
    pub fn lagged(&self) -> DMatrix<f64> {
        let (s, t) = self.x.shape();
        DMatrix::from_fn(s, t, |i, c| if c == 0 { self.x0[i] } else { self.x[(i, c - 1)] })
    }
}

/// The complete mutable state of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub ggp: GgpState,
    pub trans: TransitionState,
    pub obs: ObservationState,
    pub traj: LatentTrajectory,
}

/// An immutable snapshot of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSample {
    state: ModelState,
    iteration: usize,
    chain: usize,
}

impl PosteriorSample {
    pub fn new(state: ModelState, iteration: usize, chain: usize) -> Self {
        Self { state, iteration, chain }
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn ggp(&self) -> &GgpState {
        &self.state.ggp
    }

    pub fn trans(&self) -> &TransitionState {
        &self.state.trans
    }

    pub fn obs(&self) -> &ObservationState {
        &self.state.obs
    }

    pub fn traj(&self) -> &LatentTrajectory {
        &self.state.traj
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn chain(&self) -> usize {
        self.chain
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Real,
    Count,
}

/// An observed multivariate series, `V × T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesData {
    pub y: DMatrix<f64>,
    pub kind: DataKind,
    pub labels: Vec<String>,
    pub time_index: Vec<String>,
}

impl TimeSeriesData {
    /// Real-valued data with labels `y0, y1, …` and time index `1..=T`.
    pub fn real(y: DMatrix<f64>) -> Self {
        Self::with_defaults(y, DataKind::Real)
    }

    /// Count data; every entry must be a non-negative integer.
    pub fn counts(y: DMatrix<f64>) -> Result<Self> {
        if let Some(((v, t), x)) = y
            .iter()
            .enumerate()
            .map(|(idx, x)| ((idx % y.nrows(), idx / y.nrows()), x))
            .find(|(_, x)| !is_count(**x))
        {
            return Err(Error::Parse {
                row: t + 1,
                col: v + 1,
                msg: format!("`{x}` is not a non-negative integer count"),
            });
        }
        Ok(Self::with_defaults(y, DataKind::Count))
    }

    fn with_defaults(y: DMatrix<f64>, kind: DataKind) -> Self {
        let labels = (0..y.nrows()).map(|v| format!("y{v}")).collect();
        let time_index = (1..=y.ncols()).map(|t| t.to_string()).collect();
        Self { y, kind, labels, time_index }
    }

    pub fn v(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    /// First `t` time steps.
    pub fn head(&self, t: usize) -> Self {
        let t = t.min(self.t());
        Self {
            y: self.y.columns(0, t).into_owned(),
            kind: self.kind,
            labels: self.labels.clone(),
            time_index: self.time_index[..t].to_vec(),
        }
    }

    /// Time steps from `start` to the end.
    pub fn tail_from(&self, start: usize) -> Self {
        let start = start.min(self.t());
        Self {
            y: self.y.columns(start, self.t() - start).into_owned(),
            kind: self.kind,
            labels: self.labels.clone(),
            time_index: self.time_index[start..].to_vec(),
        }
    }
}

pub(crate) fn is_count(x: f64) -> bool {
    x >= 0.0 && x.fract() == 0.0 && x.is_finite()
}

/// Draw every latent variable from the prior.
///
/// The graph (`M`, its community split and `Z`) comes from the gamma-process
/// prior given the drawn `(r, θ, ψ)`, `W` from its spike-and-slab prior, and
/// the trajectory from the state equation started at `x0 ~ N(m0, H0⁻¹)`.
pub fn init_random<R: Rng + ?Sized>(hyper: &Hyperparameters, data_shape: (usize, usize), rng: &mut R) -> ModelState {
    let (v, t) = data_shape;
    let (k, s) = (hyper.k, hyper.s);

    let e = DVector::from_fn(k, |_, _| gamma(hyper.alpha0, 1.0 / hyper.beta0, rng));
    let f = DVector::from_fn(k, |_, _| gamma(hyper.alpha0, 1.0 / hyper.beta0, rng));
    let r = DVector::from_fn(k, |_, _| gamma(hyper.gamma0 / k as f64, 1.0 / hyper.c, rng));
    let rho = DVector::from_fn(s, |_, _| gamma(hyper.gamma0 / s as f64, 1.0 / hyper.c_rho, rng));
    let tau = DVector::from_fn(s, |_, _| gamma(hyper.gamma0 / s as f64, 1.0 / hyper.c_tau, rng));
    let theta = DMatrix::from_fn(s, k, |i, kk| gamma(rho[i], 1.0 / e[kk], rng));
    let psi = DMatrix::from_fn(s, k, |j, kk| gamma(tau[j], 1.0 / f[kk], rng));
    let ggp_state = GgpState { r, theta, psi, rho, tau, e, f };

    let graph = ggp::sample_prior_graph(&ggp_state, rng);
    let varphi = DMatrix::from_fn(s, s, |_, _| gamma(hyper.alpha0, 1.0 / hyper.beta0, rng));
    let w = DMatrix::from_fn(s, s, |i, j| std_normal(rng) / varphi[(i, j)].sqrt());
    let lambda = DVector::from_fn(s, |_, _| gamma(hyper.a, 1.0 / hyper.b, rng));
    let trans = TransitionState {
        w,
        z: graph.z,
        m: graph.m,
        m_split: graph.m_split,
        varphi,
        lambda,
    };

    let d_sd = (v as f64).powf(-0.25);
    let d = DMatrix::from_fn(v, s, |_, _| d_sd * std_normal(rng));
    let noise = match hyper.observation_kind {
        ObservationKind::Gaussian => {
            let chol = linalg::cholesky(&hyper.wishart_scale, "wishart scale").expect("validated scale");
            ObservationNoise::Gaussian {
                precision: kernel::wishart_with_root(&chol.l(), (v + 2) as f64, rng),
            }
        }
        ObservationKind::NegativeBinomial => {
            let alpha_eta = gamma(hyper.alpha0, 1.0 / hyper.beta0, rng);
            let beta_eta = gamma(hyper.alpha0, 1.0 / hyper.beta0, rng);
            let eta = gamma(alpha_eta, 1.0 / beta_eta, rng);
            let omega = DMatrix::from_fn(v, t, |_, _| kernel::polya_gamma(1.0, 0.0, rng));
            ObservationNoise::NegativeBinomial { eta, alpha_eta, beta_eta, omega }
        }
    };
    let obs = ObservationState { d, noise };

    let h0 = linalg::cholesky(&hyper.h0, "H0").expect("validated H0");
    let x0 = kernel::mvn_canonical(&h0, &(&hyper.h0 * &hyper.m0), rng);
    let a = trans.masked();
    let mut x = DMatrix::zeros(s, t);
    let mut prev = x0.clone();
    for c in 0..t {
        let mean = &a * &prev;
        for i in 0..s {
            x[(i, c)] = mean[i] + std_normal(rng) / trans.lambda[i].sqrt();
        }
        prev = x.column(c).into_owned();
    }
    let traj = LatentTrajectory { x, x0 };

    ModelState { ggp: ggp_state, trans, obs, traj }
}

/// A violated type invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

/// Every violated invariant of `sample`; empty when the sample is valid.
pub fn validate(sample: &PosteriorSample) -> Vec<Violation> {
    validate_state(sample.state())
}

pub fn validate_state(state: &ModelState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |invariant: &'static str, detail: String| out.push(Violation { invariant, detail });

    let g = &state.ggp;
    let (k, s) = (g.r.len(), g.rho.len());
    let shapes_ok = g.theta.shape() == (s, k)
        && g.psi.shape() == (s, k)
        && g.tau.len() == s
        && g.e.len() == k
        && g.f.len() == k
        && state.trans.w.shape() == (s, s)
        && state.trans.z.shape() == (s, s)
        && state.trans.m.shape() == (s, s)
        && state.trans.varphi.shape() == (s, s)
        && state.trans.lambda.len() == s
        && state.trans.m_split.len() == s * s * k
        && state.obs.d.ncols() == s
        && state.traj.x.nrows() == s
        && state.traj.x0.len() == s;
    if !shapes_ok {
        push("shape", "component dimensions disagree on K or S".into());
        return out;
    }

    let positives: [(&'static str, Vec<f64>); 9] = [
        ("r", g.r.as_slice().to_vec()),
        ("theta", g.theta.as_slice().to_vec()),
        ("psi", g.psi.as_slice().to_vec()),
        ("rho", g.rho.as_slice().to_vec()),
        ("tau", g.tau.as_slice().to_vec()),
        ("e", g.e.as_slice().to_vec()),
        ("f", g.f.as_slice().to_vec()),
        ("varphi", state.trans.varphi.as_slice().to_vec()),
        ("lambda", state.trans.lambda.as_slice().to_vec()),
    ];
    for (name, xs) in &positives {
        if let Some(bad) = first_non_positive(xs) {
            push("positivity", format!("{name} contains non-positive value {bad}"));
        }
    }

    let tr = &state.trans;
    for i in 0..s {
        for j in 0..s {
            if tr.z[(i, j)] != (tr.m[(i, j)] >= 1) {
                push(
                    "z_m_coupling",
                    format!("Z[{i}][{j}] = {} but M[{i}][{j}] = {}", tr.z[(i, j)] as u8, tr.m[(i, j)]),
                );
            }
            let split: u64 = tr.split_cell(i, j).iter().sum();
            if split != tr.m[(i, j)] {
                push(
                    "split_sum",
                    format!("sum of m_split[{i}][{j}] is {split} but M[{i}][{j}] = {}", tr.m[(i, j)]),
                );
            }
        }
    }

    let v = state.obs.d.nrows();
    match &state.obs.noise {
        ObservationNoise::Gaussian { precision } => {
            if precision.shape() != (v, v) {
                push("shape", format!("Phi must be {v}x{v}"));
            } else if linalg::cholesky(precision, "Phi").is_err() {
                push("spd", "Phi is not symmetric positive definite".into());
            }
        }
        ObservationNoise::NegativeBinomial { eta, alpha_eta, beta_eta, omega } => {
            if let Some(bad) = first_non_positive(&[*eta, *alpha_eta, *beta_eta]) {
                push("positivity", format!("dispersion parameters contain {bad}"));
            }
            if omega.shape() != (v, state.traj.t()) {
                push("shape", format!("omega must be {v}x{}", state.traj.t()));
            }
            if let Some(bad) = first_non_positive(omega.as_slice()) {
                push("positivity", format!("omega contains non-positive value {bad}"));
            }
        }
    }

    if state.traj.t() < 2 {
        push("trajectory_length", format!("T = {} but at least 2 steps are required", state.traj.t()));
    }
    if state.traj.x.iter().chain(state.traj.x0.iter()).any(|x| !x.is_finite()) {
        push("finite", "trajectory contains non-finite values".into());
    }
    out
}

fn first_non_positive(xs: &[f64]) -> Option<f64> {
    xs.iter().cloned().find(|x| !(*x > 0.0) || !x.is_finite())
}
