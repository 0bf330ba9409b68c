//! The graph gamma process: prior graph simulation, edge-count bounds,
//! relative community strengths, per-community sub-sequences and the block
//! reordering used for visualization.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{multinomial_log_into, poisson};
use crate::model::{GgpState, Hyperparameters, LatentTrajectory, ObservationState, TransitionState};

/// Edge counts drawn from the gamma-process prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorGraph {
    pub m: DMatrix<u64>,
    /// Flattened as `(i·S + j)·K + κ`.
    pub m_split: Vec<u64>,
    pub z: DMatrix<bool>,
}

/// Draw `m_ijκ ~ Pois(r_κ θ_iκ ψ_jκ)`, `M = Σκ m_ijκ` and `Z = 1(M ≥ 1)`.
///
/// The total `M_ij` is drawn as one Poisson with the summed rate and then
/// split multinomially, which is equal in distribution and costs one Poisson
/// draw per cell instead of `K`.
pub fn sample_prior_graph<R: Rng + ?Sized>(ggp: &GgpState, rng: &mut R) -> PriorGraph {
    let (s, k) = (ggp.s(), ggp.k());
    let mut m = DMatrix::zeros(s, s);
    let mut m_split = vec![0; s * s * k];
    let mut logw = vec![0.0; k];
    let mut scratch = Vec::with_capacity(k);
    let log_r: Vec<f64> = ggp.r.iter().map(|r| r.ln()).collect();
    for i in 0..s {
        for j in 0..s {
            for kk in 0..k {
                logw[kk] = log_r[kk] + ggp.theta[(i, kk)].ln() + ggp.psi[(j, kk)].ln();
            }
            let rate = log_sum_exp(&logw).exp();
            let n = poisson(rate, rng);
            m[(i, j)] = n;
            if n > 0 {
                let start = (i * s + j) * k;
                multinomial_log_into(n, &logw, &mut scratch, &mut m_split[start..start + k], rng);
            }
        }
    }
    let z = m.map(|c| c >= 1);
    PriorGraph { m, m_split, z }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Plug-in upper bound on the expected number of edges of the composed graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeBound {
    pub value: f64,
    pub formula: &'static str,
}

pub const EDGE_BOUND_FORMULA: &str = "gamma0 * gamma_rho * gamma_tau / (c * e * f)";

/// `γ0 γρ γτ / (c e f)` with the prior means of the truncated model plugged
/// in: `γρ = γ0 / cρ`, `γτ = γ0 / cτ` (the means of `Σ ρ_i` and `Σ τ_j`) and
/// `e = f = α0 / β0`.
pub fn edge_count_bound(hyper: &Hyperparameters) -> EdgeBound {
    let scale = hyper.alpha0 / hyper.beta0;
    edge_count_bound_with(
        hyper.gamma0,
        hyper.gamma0 / hyper.c_rho,
        hyper.gamma0 / hyper.c_tau,
        hyper.c,
        scale,
        scale,
    )
}

/// The bound for explicit masses and scales.
pub fn edge_count_bound_with(gamma0: f64, gamma_rho: f64, gamma_tau: f64, c: f64, e: f64, f: f64) -> EdgeBound {
    EdgeBound {
        value: gamma0 * gamma_rho * gamma_tau / (c * e * f),
        formula: EDGE_BOUND_FORMULA,
    }
}

/// `A_κ[i][j] = r_κ θ_iκ ψ_jκ / Σκ' r_κ' θ_iκ' ψ_jκ'`, one `S × S` matrix per
/// community. Computed as a softmax of log rates so that very small rates do
/// not underflow to `0 / 0`.
pub fn community_strength(ggp: &GgpState) -> Result<Vec<DMatrix<f64>>> {
    let (s, k) = (ggp.s(), ggp.k());
    let mut out = vec![DMatrix::zeros(s, s); k];
    let mut logw = vec![0.0; k];
    for i in 0..s {
        for j in 0..s {
            for kk in 0..k {
                logw[kk] = ggp.r[kk].ln() + ggp.theta[(i, kk)].ln() + ggp.psi[(j, kk)].ln();
            }
            let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Invariant(format!("community rates at ({i}, {j}) are not positive")));
            }
            let total: f64 = logw.iter().map(|l| (l - max).exp()).sum();
            for kk in 0..k {
                out[kk][(i, j)] = (logw[kk] - max).exp() / total;
            }
        }
    }
    Ok(out)
}

/// Per-community latent and data-space sub-sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    /// `S × T` per community.
    pub x_hat: Vec<DMatrix<f64>>,
    /// `V × T` per community, `D x̂`.
    pub y_hat: Vec<DMatrix<f64>>,
}

impl Decomposition {
    pub fn superposition_x(&self) -> DMatrix<f64> {
        sum_all(&self.x_hat)
    }

    /// Sum of the data-space sub-sequences (the Gaussian reconstruction).
    pub fn superposition_y(&self) -> DMatrix<f64> {
        sum_all(&self.y_hat)
    }

    /// `η · exp(Σκ ŷ^(κ))`, the count-model reconstruction.
    pub fn superposition_counts(&self, eta: f64) -> DMatrix<f64> {
        self.superposition_y().map(|v| eta * v.exp())
    }
}

fn sum_all(ms: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut it = ms.iter();
    let first = it.next().cloned().unwrap_or_else(|| DMatrix::zeros(0, 0));
    it.fold(first, |acc, m| acc + m)
}

/// `x̂_t^(κ) = [(W ⊙ Z) ⊙ A_κ] x_{t−1}` and `ŷ_t^(κ) = D x̂_t^(κ)` for
/// `t = 1..T`. The sub-sequences add up to `(W ⊙ Z) x_{t−1}`.
pub fn decompose(
    traj: &LatentTrajectory,
    trans: &TransitionState,
    obs: &ObservationState,
    strength: &[DMatrix<f64>],
) -> Result<Decomposition> {
    let masked = trans.masked();
    let mats: Vec<DMatrix<f64>> = strength
        .iter()
        .map(|a| {
            if a.shape() != masked.shape() {
                Err(Error::shape(format!(
                    "strength matrix is {}x{}, transition is {}x{}",
                    a.nrows(),
                    a.ncols(),
                    masked.nrows(),
                    masked.ncols()
                )))
            } else {
                Ok(masked.component_mul(a))
            }
        })
        .collect::<Result<_>>()?;
    apply(traj, obs, &mats)
}

/// `x̂_t^(κ) = (W ⊙ Z^(κ)) x_{t−1}` with community masks `Z^(κ)`.
///
/// Where masks overlap, the corresponding weight is counted once per
/// community, so the superposition reconstructs `(W ⊙ Z) x_{t−1}` only when
/// the masks partition `Z`.
pub fn decompose_masked(
    traj: &LatentTrajectory,
    trans: &TransitionState,
    obs: &ObservationState,
    masks: &[DMatrix<bool>],
) -> Result<Decomposition> {
    let mats: Vec<DMatrix<f64>> = masks
        .iter()
        .map(|z| {
            if z.shape() != trans.w.shape() {
                Err(Error::shape("community mask does not match W"))
            } else {
                Ok(trans.w.zip_map(z, |w, on| if on { w } else { 0.0 }))
            }
        })
        .collect::<Result<_>>()?;
    apply(traj, obs, &mats)
}

fn apply(traj: &LatentTrajectory, obs: &ObservationState, mats: &[DMatrix<f64>]) -> Result<Decomposition> {
    let lagged = traj.lagged();
    if obs.d.ncols() != lagged.nrows() {
        return Err(Error::shape(format!(
            "D has {} columns but the trajectory has {} states",
            obs.d.ncols(),
            lagged.nrows()
        )));
    }
    let mut x_hat = Vec::with_capacity(mats.len());
    let mut y_hat = Vec::with_capacity(mats.len());
    for a in mats {
        if a.ncols() != lagged.nrows() {
            return Err(Error::shape("transition does not match the trajectory"));
        }
        let x = a * &lagged;
        y_hat.push(&obs.d * &x);
        x_hat.push(x);
    }
    Ok(Decomposition { x_hat, y_hat })
}

/// `Z^(κ) = 1(m_ijκ ≥ 1)` for every community.
pub fn community_masks(trans: &TransitionState) -> Vec<DMatrix<bool>> {
    let s = trans.s();
    (0..trans.k())
        .map(|k| DMatrix::from_fn(s, s, |i, j| trans.split(i, j, k) >= 1))
        .collect()
}

/// Row and column orderings that group states by their primary community.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reordering {
    /// `row_perm[p]` is the original row shown at position `p`.
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    /// Primary community of each row; `None` for rows without counts.
    pub pi_row: Vec<Option<usize>>,
    pub pi_col: Vec<Option<usize>>,
    /// Communities by decreasing `‖M_κ‖₁`.
    pub community_rank: Vec<usize>,
}

/// Order rows by primary community (`argmax_κ Σ_j m_ijκ`, lowest index on
/// ties). Blocks follow communities by decreasing `‖M_κ‖₁`; inside a block
/// rows go by decreasing count in their primary community. Rows with no
/// counts form a final block in index order. Columns are handled the same way
/// with `Σ_i m_ijκ`.
pub fn reorder(m_split: &[u64], s: usize, k: usize) -> Result<Reordering> {
    if m_split.len() != s * s * k {
        return Err(Error::shape(format!(
            "m_split has {} entries, expected {s}x{s}x{k}",
            m_split.len()
        )));
    }
    let at = |i: usize, j: usize, kk: usize| m_split[(i * s + j) * k + kk];
    let mut totals = vec![0u64; k];
    let mut row_sums = vec![vec![0u64; k]; s];
    let mut col_sums = vec![vec![0u64; k]; s];
    for i in 0..s {
        for j in 0..s {
            for kk in 0..k {
                let m = at(i, j, kk);
                totals[kk] += m;
                row_sums[i][kk] += m;
                col_sums[j][kk] += m;
            }
        }
    }
    let mut community_rank: Vec<usize> = (0..k).collect();
    community_rank.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));
    let mut rank_of = vec![0; k];
    for (pos, &kk) in community_rank.iter().enumerate() {
        rank_of[kk] = pos;
    }

    let order = |sums: &[Vec<u64>]| -> (Vec<usize>, Vec<Option<usize>>) {
        let pi: Vec<Option<usize>> = sums
            .iter()
            .map(|row| {
                let mut best: Option<usize> = None;
                for (kk, &v) in row.iter().enumerate() {
                    if v > 0 && best.is_none_or(|b| v > row[b]) {
                        best = Some(kk);
                    }
                }
                best
            })
            .collect();
        let mut perm: Vec<usize> = (0..sums.len()).collect();
        perm.sort_by_key(|&i| match pi[i] {
            Some(kk) => (0, rank_of[kk], u64::MAX - sums[i][kk], i),
            None => (1, 0, 0, i),
        });
        (perm, pi)
    };
    let (row_perm, pi_row) = order(&row_sums);
    let (col_perm, pi_col) = order(&col_sums);
    Ok(Reordering { row_perm, col_perm, pi_row, pi_col, community_rank })
}

/// `out[p][q] = m[rows[p]][cols[q]]`
pub fn permute<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |p, q| m[(rows[p], cols[q])])
}

/// `1 − exp(−Σκ r_κ θ_iκ ψ_jκ)`, the marginal edge probability.
pub fn edge_probability(ggp: &GgpState) -> DMatrix<f64> {
    ggp.rate_matrix().map(|x| -(-x).exp_m1())
}

/// Write a matrix as a header-less numeric CSV grid.
pub fn write_grid(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready grids for one sample: the reordered mask, edge probabilities,
/// `Θ`, `diag(r)`, `Ψᵀ` and the strengths of the `top` heaviest communities.
#[derive(Clone, Debug)]
pub struct GraphGrids {
    pub reordering: Reordering,
    pub z: DMatrix<f64>,
    pub edge_probability: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub r_diag: DMatrix<f64>,
    pub psi_t: DMatrix<f64>,
    /// `(community, A_κ)` pairs, strongest first.
    pub strengths: Vec<(usize, DMatrix<f64>)>,
}

pub fn graph_grids(ggp: &GgpState, trans: &TransitionState, top: usize) -> Result<GraphGrids> {
    let (s, k) = (ggp.s(), ggp.k());
    let ro = reorder(&trans.m_split, s, k)?;
    let z = permute(&trans.z.map(|b| b as u8 as f64), &ro.row_perm, &ro.col_perm);
    let edge_probability = permute(&edge_probability(ggp), &ro.row_perm, &ro.col_perm);
    let theta = permute(&ggp.theta, &ro.row_perm, &ro.community_rank);
    let psi_t = permute(&ggp.psi, &ro.col_perm, &ro.community_rank).transpose();
    let r_ranked = DVector::from_iterator(k, ro.community_rank.iter().map(|&kk| ggp.r[kk]));
    let r_diag = DMatrix::from_diagonal(&r_ranked);
    let a = community_strength(ggp)?;
    let strengths = ro
        .community_rank
        .iter()
        .take(top)
        .map(|&kk| (kk, permute(&a[kk], &ro.row_perm, &ro.col_perm)))
        .collect();
    Ok(GraphGrids { reordering: ro, z, edge_probability, theta, r_diag, psi_t, strengths })
}
