use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use super::{gibbs_sweep_with, log_joint_surrogate, SweepOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    init_random, DataKind, Hyperparameters, ModelState, ObservationKind, ObservationNoise, PosteriorSample,
    TimeSeriesData,
};
use crate::rng::RngStream;

/// One line of the chain progress log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgressRecord {
    pub chain: usize,
    pub iteration: usize,
    pub log_joint: f64,
    pub edges: usize,
    pub active_communities: usize,
}

#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub chain: usize,
    /// Emit a progress record every this many iterations (0 disables).
    pub progress_every: usize,
    pub sweep: SweepOptions,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            chain: 0,
            progress_every: 10,
            sweep: SweepOptions::default(),
        }
    }
}

/// A chain stopped by a numeric failure. Holds the state as it was before
/// the failing sweep.
#[derive(Debug)]
pub struct ChainFailure {
    pub chain: usize,
    pub iteration: usize,
    pub source: Error,
    /// `None` when the chain failed before its first sweep.
    pub last_valid: Option<Box<ModelState>>,
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chain {} failed at iteration {}: {}", self.chain, self.iteration, self.source)
    }
}

impl std::error::Error for ChainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<ChainFailure> for Error {
    fn from(f: ChainFailure) -> Self {
        f.source
    }
}

fn check_inputs(data: &TimeSeriesData, hyper: &Hyperparameters) -> Result<()> {
    hyper.validate()?;
    if data.v() != hyper.v {
        return Err(Error::shape(format!("data has {} dimensions, model expects {}", data.v(), hyper.v)));
    }
    if data.t() < 2 {
        return Err(Error::shape("at least two time steps are required"));
    }
    if data.y.iter().any(|y| !y.is_finite()) {
        return Err(Error::domain("data contains non-finite values"));
    }
    if hyper.observation_kind == ObservationKind::NegativeBinomial
        && (data.kind != DataKind::Count || data.y.iter().any(|&y| !crate::model::is_count(y)))
    {
        return Err(Error::Mode("the negative binomial model needs non-negative integer counts".into()));
    }
    if hyper.observation_kind == ObservationKind::Gaussian && data.kind == DataKind::Count {
        log::warn!("fitting the Gaussian model to count data");
    }
    Ok(())
}

/// Prior draw of every variable except the trajectory, which starts at a
/// ridge projection of the data onto the drawn loadings. A trajectory drawn
/// from the state equation can grow without bound over long series.
pub fn init_chain<R: Rng + ?Sized>(data: &TimeSeriesData, hyper: &Hyperparameters, rng: &mut R) -> Result<ModelState> {
    let mut state = init_random(hyper, (data.v(), data.t()), rng);
    let d = &state.obs.d;
    let s = d.ncols();
    let (gram, target) = match &state.obs.noise {
        ObservationNoise::Gaussian { precision } => {
            let dt_phi = d.transpose() * precision;
            (&dt_phi * d, &dt_phi * &data.y)
        }
        ObservationNoise::NegativeBinomial { eta, .. } => {
            let pseudo = data.y.map(|y| ((y + 0.5) / eta).ln());
            (d.transpose() * d, d.transpose() * pseudo)
        }
    };
    let chol = linalg::cholesky(&(gram + DMatrix::<f64>::identity(s, s)), "initial projection")?;
    state.traj.x = chol.solve(&target);
    state.traj.x0 = DVector::zeros(s);
    Ok(state)
}

/// Run one chain: `iters` sweeps, keeping every `thin`-th state after the
/// first `burnin`. Samples carry the (1-based) iteration that produced them.
pub fn run_chain<R: Rng + ?Sized>(
    data: &TimeSeriesData,
    hyper: &Hyperparameters,
    rng: &mut R,
    config: &ChainConfig,
    on_progress: &mut dyn FnMut(&ProgressRecord),
) -> std::result::Result<Vec<PosteriorSample>, ChainFailure> {
    let fail = |source: Error, iteration: usize, state: Option<ModelState>| ChainFailure {
        chain: config.chain,
        iteration,
        source,
        last_valid: state.map(Box::new),
    };
    let mut state = check_inputs(data, hyper)
        .and_then(|_| init_chain(data, hyper, rng))
        .map_err(|e| fail(e, 0, None))?;
    let mut samples = Vec::with_capacity(hyper.n_samples());
    for it in 1..=hyper.iters {
        let backup = state.clone();
        if let Err(e) = gibbs_sweep_with(&mut state, &data.y, hyper, &config.sweep, rng) {
            return Err(fail(e, it, Some(backup)));
        }
        if state.traj.x.iter().any(|x| !x.is_finite()) {
            return Err(fail(Error::Invariant("latent trajectory became non-finite".into()), it, Some(backup)));
        }
        if config.progress_every > 0 && (it % config.progress_every == 0 || it == hyper.iters) {
            on_progress(&ProgressRecord {
                chain: config.chain,
                iteration: it,
                log_joint: log_joint_surrogate(&state, &data.y),
                edges: state.trans.edge_count(),
                active_communities: state.trans.active_communities(),
            });
        }
        if it > hyper.burnin && (it - hyper.burnin).is_multiple_of(hyper.thin) {
            samples.push(PosteriorSample::new(state.clone(), it, config.chain));
        }
    }
    Ok(samples)
}

/// Samples and progress records of one finished chain.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub chain: usize,
    pub samples: Vec<PosteriorSample>,
    pub progress: Vec<ProgressRecord>,
}

/// Run `n_chains` chains concurrently. Chain `c` draws from the stream
/// `(hyper.seed, c)`, so results do not depend on scheduling.
pub fn run_chains(
    data: &TimeSeriesData,
    hyper: &Hyperparameters,
    n_chains: usize,
    progress_every: usize,
    sweep: SweepOptions,
) -> std::result::Result<Vec<ChainOutput>, ChainFailure> {
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| {
                scope.spawn(move || {
                    let mut rng = RngStream::new(hyper.seed, c as u64);
                    let config = ChainConfig { chain: c, progress_every, sweep };
                    let mut progress = Vec::new();
                    let samples = run_chain(data, hyper, &mut rng, &config, &mut |p| progress.push(p.clone()))?;
                    Ok(ChainOutput { chain: c, samples, progress })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    results.into_iter().collect()
}
