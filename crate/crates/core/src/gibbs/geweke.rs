//! Joint-distribution ("getting it right") test of the sweep.
//!
//! Marginal-conditional runs draw the state from the prior and data from the
//! observation layer. Successive-conditional runs alternate a data draw with
//! one sweep. Both produce draws from the joint, so every monitored
//! statistic must agree up to Monte-Carlo error.

use nalgebra::DMatrix;

use super::{gibbs_sweep_with, sample_observations, SweepOptions};
use crate::error::Result;
use crate::model::{init_random, Hyperparameters, ModelState, ObservationKind, ObservationNoise};
use crate::rng::RngStream;

/// Dimensions of the toy problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyShape {
    pub v: usize,
    pub s: usize,
    pub k: usize,
    pub t: usize,
}

impl Default for ToyShape {
    fn default() -> Self {
        Self { v: 2, s: 3, k: 2, t: 8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeStatistic {
    pub name: &'static str,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub sc_mean: f64,
    pub sc_se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeReport {
    pub rounds: usize,
    pub statistics: Vec<GewekeStatistic>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.statistics.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

const BATCHES: usize = 50;

/// Hyperparameters for the toy problem. Transition weights are kept small
/// (`φ` near 20) so the latent trajectory has well behaved moments, and
/// `γ0` is large enough that most mask entries are switched on.
pub fn toy_hyperparameters(kind: ObservationKind) -> Hyperparameters {
    let shape = ToyShape::default();
    let mut h = Hyperparameters::new(shape.v, kind).with_truncation(shape.k, shape.s);
    h.a = 5.0;
    h.b = 1.0;
    h.gamma0 = 20.0;
    h.alpha0 = 20.0;
    h.beta0 = 1.0;
    h
}

fn toy_hyper(hyper: &Hyperparameters, shape: ToyShape) -> Hyperparameters {
    let mut h = hyper.clone().with_truncation(shape.k, shape.s);
    h.v = shape.v;
    if h.wishart_scale.shape() != (shape.v, shape.v) {
        h.wishart_scale = DMatrix::identity(shape.v, shape.v);
    }
    h
}

fn names(kind: ObservationKind) -> Vec<&'static str> {
    let mut n = vec![
        "mean_z", "sum_m", "mean_lambda", "mean_r", "mean_x2", "mean_w2", "mean_d2", "mean_theta", "mean_rho", "mean_e",
    ];
    match kind {
        ObservationKind::Gaussian => n.push("mean_phi_diag"),
        ObservationKind::NegativeBinomial => n.push("mean_eta"),
    }
    n
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn statistics(st: &ModelState) -> Vec<f64> {
    let mut out = vec![
        mean(st.trans.z.iter().map(|&z| z as u8 as f64)),
        st.trans.m.iter().sum::<u64>() as f64,
        mean(st.trans.lambda.iter().cloned()),
        mean(st.ggp.r.iter().cloned()),
        mean(st.traj.x.iter().map(|x| x * x)),
        mean(st.trans.w.iter().map(|w| w * w)),
        mean(st.obs.d.iter().map(|d| d * d)),
        mean(st.ggp.theta.iter().cloned()),
        mean(st.ggp.rho.iter().cloned()),
        mean(st.ggp.e.iter().cloned()),
    ];
    out.push(match &st.obs.noise {
        ObservationNoise::Gaussian { precision } => mean(precision.diagonal().iter().cloned()),
        ObservationNoise::NegativeBinomial { eta, .. } => *eta,
    });
    out
}

/// Mean and standard error; batch means when `batched`.
fn mean_se(xs: &[f64], batched: bool) -> (f64, f64) {
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    if batched && n >= 2 * BATCHES {
        let size = n / BATCHES;
        let bm: Vec<f64> = (0..BATCHES)
            .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
            .collect();
        let bmean = bm.iter().sum::<f64>() / BATCHES as f64;
        let var = bm.iter().map(|x| (x - bmean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        (m, (var / BATCHES as f64).sqrt())
    } else {
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, (var / n as f64).sqrt())
    }
}

fn marginal_conditional(hyper: &Hyperparameters, shape: ToyShape, rounds: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let st = init_random(hyper, (shape.v, shape.t), rng);
        sample_observations(&st, rng)?;
        out.push(statistics(&st));
    }
    Ok(out)
}

fn successive_conditional(
    hyper: &Hyperparameters,
    shape: ToyShape,
    rounds: usize,
    options: &SweepOptions,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    let mut st = init_random(hyper, (shape.v, shape.t), rng);
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let y = sample_observations(&st, rng)?;
        gibbs_sweep_with(&mut st, &y, hyper, options, rng)?;
        out.push(statistics(&st));
    }
    Ok(out)
}

fn compare(kind: ObservationKind, a: &[Vec<f64>], a_batched: bool, b: &[Vec<f64>], b_batched: bool) -> GewekeReport {
    let statistics = names(kind)
        .into_iter()
        .enumerate()
        .map(|(idx, name)| {
            let xa: Vec<f64> = a.iter().map(|r| r[idx]).collect();
            let xb: Vec<f64> = b.iter().map(|r| r[idx]).collect();
            let (mc_mean, mc_se) = mean_se(&xa, a_batched);
            let (sc_mean, sc_se) = mean_se(&xb, b_batched);
            let denom = (mc_se * mc_se + sc_se * sc_se).sqrt();
            let diff = mc_mean - sc_mean;
            let z = if denom > 0.0 {
                diff / denom
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(diff)
            };
            GewekeStatistic { name, mc_mean, mc_se, sc_mean, sc_se, z }
        })
        .collect();
    GewekeReport { rounds: a.len().min(b.len()), statistics }
}

/// Compare `n_rounds` marginal-conditional draws against `n_rounds`
/// successive-conditional iterations of the sweep configured by `options`.
/// The two simulations run on separate threads with streams `(seed, 0)` and
/// `(seed, 1)`.
pub fn geweke_test(
    hyper: &Hyperparameters,
    shape: ToyShape,
    n_rounds: usize,
    seed: u64,
    options: &SweepOptions,
) -> Result<GewekeReport> {
    let h = toy_hyper(hyper, shape);
    h.validate()?;
    let (mc, sc) = std::thread::scope(|scope| {
        let mc = scope.spawn(|| marginal_conditional(&h, shape, n_rounds, &mut RngStream::new(seed, 0)));
        let sc = scope.spawn(|| successive_conditional(&h, shape, n_rounds, options, &mut RngStream::new(seed, 1)));
        (mc.join().expect("geweke thread panicked"), sc.join().expect("geweke thread panicked"))
    });
    Ok(compare(h.observation_kind, &mc?, false, &sc?, true))
}

/// Two independent marginal-conditional runs compared with each other.
pub fn geweke_self_consistency(hyper: &Hyperparameters, shape: ToyShape, n_rounds: usize, seed: u64) -> Result<GewekeReport> {
    let h = toy_hyper(hyper, shape);
    h.validate()?;
    let a = marginal_conditional(&h, shape, n_rounds, &mut RngStream::new(seed, 2))?;
    let b = marginal_conditional(&h, shape, n_rounds, &mut RngStream::new(seed, 3))?;
    Ok(compare(h.observation_kind, &a, false, &b, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_hyper(kind: ObservationKind) -> Hyperparameters {
        toy_hyperparameters(kind)
    }

    #[test]
    fn self_consistency() {
        for kind in [ObservationKind::Gaussian, ObservationKind::NegativeBinomial] {
            let r = geweke_self_consistency(&test_hyper(kind), ToyShape::default(), 5_000, 1).unwrap();
            assert!(r.max_abs_z() < 4.0, "{r:#?}");
        }
    }

    #[test]
    fn short_joint_test() {
        for kind in [ObservationKind::Gaussian, ObservationKind::NegativeBinomial] {
            let r = geweke_test(&test_hyper(kind), ToyShape::default(), 20_000, 2, &SweepOptions::default()).unwrap();
            assert!(r.max_abs_z() < 4.5, "{kind:?} {r:#?}");
        }
    }

    #[test]
    fn frozen_mask_is_detected() {
        let options = SweepOptions { update_mask: false };
        let r = geweke_test(&test_hyper(ObservationKind::Gaussian), ToyShape::default(), 20_000, 2, &options).unwrap();
        assert!(r.max_abs_z() > 6.0, "{r:#?}");
    }
}
