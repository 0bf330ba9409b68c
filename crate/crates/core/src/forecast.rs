//! Mean forecasts, one-step-ahead filtering and error metrics.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelState, ObservationNoise, PosteriorSample};

/// Noise-free rollout of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `V × horizon`
    pub y: DMatrix<f64>,
    /// `S × horizon`
    pub x: DMatrix<f64>,
}

/// Maps latent states to the observation mean: `D x` for real data,
/// `η exp(D x)` for counts.
pub fn observation_mean(state: &ModelState, x: &DMatrix<f64>) -> DMatrix<f64> {
    let xi = &state.obs.d * x;
    match &state.obs.noise {
        ObservationNoise::Gaussian { .. } => xi,
        ObservationNoise::NegativeBinomial { eta, .. } => xi.map(|v| eta * v.exp()),
    }
}

/// In-sample reconstruction of the training series.
pub fn reconstruction(sample: &PosteriorSample) -> DMatrix<f64> {
    observation_mean(sample.state(), &sample.traj().x)
}

/// `x̂_{T+h} = (W ⊙ Z) x̂_{T+h-1}` starting from the last latent state.
pub fn rollout_forecast(sample: &PosteriorSample, horizon: usize) -> Result<Rollout> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let st = sample.state();
    let a = st.trans.masked();
    let t = st.traj.t();
    let mut cur: DVector<f64> = if t > 0 { st.traj.x.column(t - 1).into_owned() } else { st.traj.x0.clone() };
    let mut x = DMatrix::zeros(cur.len(), horizon);
    for h in 0..horizon {
        cur = &a * cur;
        x.set_column(h, &cur);
    }
    Ok(Rollout { y: observation_mean(st, &x), x })
}

/// Point forecast with an empirical 95% band.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub mean: DMatrix<f64>,
    pub lo: DMatrix<f64>,
    pub hi: DMatrix<f64>,
    /// Per-sample predictions, in input order.
    pub members: Vec<DMatrix<f64>>,
}

/// Nearest-rank quantile of a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

impl Ensemble {
    pub fn from_members(members: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::Config("ensemble needs at least one sample".into()))?;
        let (r, c) = first.shape();
        if members.iter().any(|m| m.shape() != (r, c)) {
            return Err(Error::shape("ensemble members differ in shape"));
        }
        let n = members.len() as f64;
        let mut mean = DMatrix::zeros(r, c);
        for m in &members {
            mean += m;
        }
        mean /= n;
        let mut lo = DMatrix::zeros(r, c);
        let mut hi = DMatrix::zeros(r, c);
        let mut buf = Vec::with_capacity(members.len());
        for j in 0..c {
            for i in 0..r {
                buf.clear();
                buf.extend(members.iter().map(|m| m[(i, j)]));
                buf.sort_by(f64::total_cmp);
                lo[(i, j)] = quantile(&buf, 0.025);
                hi[(i, j)] = quantile(&buf, 0.975);
            }
        }
        Ok(Self { mean, lo, hi, members })
    }

    pub fn horizon(&self) -> usize {
        self.mean.ncols()
    }
}

/// Rollout of every sample, summarized by mean and 2.5/97.5% quantiles.
pub fn ensemble_forecast(samples: &[&PosteriorSample], horizon: usize) -> Result<Ensemble> {
    if samples.is_empty() {
        return Err(Error::Config("ensemble needs at least one sample".into()));
    }
    let members = samples
        .iter()
        .map(|s| rollout_forecast(s, horizon).map(|r| r.y))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::from_members(members)
}

fn gaussian_precision(state: &ModelState) -> Result<&DMatrix<f64>> {
    state
        .obs
        .precision()
        .ok_or_else(|| Error::Mode("filtering needs the Gaussian observation model".into()))
}

/// Kalman update of the state mean after observing `y_obs`, holding all
/// parameters fixed.
pub fn filter_step(sample: &PosteriorSample, x_prev: &DVector<f64>, y_obs: &DVector<f64>) -> Result<DVector<f64>> {
    let st = sample.state();
    let phi = gaussian_precision(st)?;
    let d = &st.obs.d;
    if x_prev.len() != d.ncols() || y_obs.len() != d.nrows() {
        return Err(Error::shape(format!(
            "filter_step expects x of length {} and y of length {}",
            d.ncols(),
            y_obs.len().max(d.nrows())
        )));
    }
    let lambda = &st.trans.lambda;
    let prior_mean = st.trans.masked() * x_prev;
    let dt_phi = d.transpose() * phi;
    let p = DMatrix::from_diagonal(lambda) + &dt_phi * d;
    let h = prior_mean.component_mul(lambda) + dt_phi * y_obs;
    Ok(linalg::cholesky(&p, "filter precision")?.solve(&h))
}

/// One-step-ahead predictions over `y_future` (`V × H`): predict, then filter
/// on the revealed observation, per sample. Gaussian model only.
pub fn one_step_at_a_time(samples: &[&PosteriorSample], y_future: &DMatrix<f64>) -> Result<Ensemble> {
    if samples.is_empty() {
        return Err(Error::Config("ensemble needs at least one sample".into()));
    }
    let horizon = y_future.ncols();
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut members = Vec::with_capacity(samples.len());
    for s in samples {
        let st = s.state();
        gaussian_precision(st)?;
        if y_future.nrows() != st.obs.d.nrows() {
            return Err(Error::shape(format!(
                "future observations have {} rows, model has {}",
                y_future.nrows(),
                st.obs.d.nrows()
            )));
        }
        let a = st.trans.masked();
        let t = st.traj.t();
        let mut x: DVector<f64> = if t > 0 { st.traj.x.column(t - 1).into_owned() } else { st.traj.x0.clone() };
        let mut pred = DMatrix::zeros(y_future.nrows(), horizon);
        for h in 0..horizon {
            pred.set_column(h, &(&st.obs.d * (&a * &x)));
            x = filter_step(s, &x, &y_future.column(h).into_owned())?;
        }
        members.push(pred);
    }
    Ensemble::from_members(members)
}

fn check_same(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<()> {
    if y.shape() != y_hat.shape() {
        return Err(Error::shape(format!("truth is {:?}, prediction is {:?}", y.shape(), y_hat.shape())));
    }
    if y.nrows() == 0 {
        return Err(Error::shape("no dimensions to compare"));
    }
    Ok(())
}

/// Mean absolute error of each column.
pub fn mae(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_same(y, y_hat)?;
    let v = y.nrows() as f64;
    Ok((0..y.ncols())
        .map(|j| (y.column(j) - y_hat.column(j)).abs().sum() / v)
        .collect())
}

/// Mean absolute relative error of each column, `|y - ŷ| / (y + 1)`.
pub fn mare(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_same(y, y_hat)?;
    let v = y.nrows() as f64;
    Ok((0..y.ncols())
        .map(|j| {
            y.column(j)
                .iter()
                .zip(y_hat.column(j).iter())
                .map(|(a, b)| (a - b).abs() / (a + 1.0))
                .sum::<f64>()
                / v
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Mae,
    Mare,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Mare => "mare",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(Metric::Mae),
            "mare" => Ok(Metric::Mare),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }

    pub fn eval(self, y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            Metric::Mae => mae(y, y_hat),
            Metric::Mare => mare(y, y_hat),
        }
    }
}

/// Write `horizon,dimension,point,lo,hi` rows, horizons counted from 1.
pub fn write_predictions(path: impl AsRef<Path>, ens: &Ensemble, labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["horizon", "dimension", "point", "lo", "hi"])?;
    for h in 0..ens.horizon() {
        for v in 0..ens.mean.nrows() {
            let label = labels.get(v).cloned().unwrap_or_else(|| v.to_string());
            w.write_record([
                (h + 1).to_string(),
                label,
                ens.mean[(v, h)].to_string(),
                ens.lo[(v, h)].to_string(),
                ens.hi[(v, h)].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Point forecasts from a prediction file as a `V × H` matrix, with the
/// dimension labels in order of first appearance.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut r = csv::Reader::from_path(path)?;
    let expected = ["horizon", "dimension", "point", "lo", "hi"];
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse { row: 0, col: 0, msg: format!("expected header {}", expected.join(",")) });
    }
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let h: usize = rec[0]
            .trim()
            .parse()
            .ok()
            .filter(|&h| h >= 1)
            .ok_or_else(|| Error::Parse { row, col: 1, msg: format!("bad horizon `{}`", &rec[0]) })?;
        let label = rec[1].trim().to_string();
        let v = labels.iter().position(|l| *l == label).unwrap_or_else(|| {
            labels.push(label);
            labels.len() - 1
        });
        let p: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { row, col: 3, msg: format!("bad number `{}`", &rec[2]) })?;
        cells.push((v, h - 1, p));
    }
    let horizon = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    let mut out = DMatrix::from_element(labels.len(), horizon, f64::NAN);
    for (v, h, p) in cells {
        out[(v, h)] = p;
    }
    if out.iter().any(|x| x.is_nan()) {
        return Err(Error::shape("prediction file does not cover every horizon and dimension"));
    }
    Ok((out, labels))
}

/// Write `horizon,metric,value` rows.
pub fn write_metrics(path: impl AsRef<Path>, metric: Metric, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["horizon", "metric", "value"])?;
    for (h, v) in values.iter().enumerate() {
        w.write_record([(h + 1).to_string(), metric.as_str().to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_random, Hyperparameters, ObservationKind};
    use crate::rng::RngStream;

    fn scalar_sample(kind: ObservationKind, a: f64, x_t: f64, d: f64, lambda: f64, phi: f64) -> PosteriorSample {
        let hyper = Hyperparameters::new(1, kind).with_truncation(1, 1);
        let mut st = init_random(&hyper, (1, 3), &mut RngStream::new(0, 0));
        st.trans.w[(0, 0)] = a;
        st.trans.z[(0, 0)] = true;
        st.trans.m[(0, 0)] = 1;
        st.trans.m_split = vec![1];
        st.trans.lambda[0] = lambda;
        st.traj.x[(0, 2)] = x_t;
        st.obs.d[(0, 0)] = d;
        if let ObservationNoise::Gaussian { precision } = &mut st.obs.noise {
            precision[(0, 0)] = phi;
        }
        PosteriorSample::new(st, 1, 0)
    }

    fn random_sample(kind: ObservationKind, seed: u64) -> PosteriorSample {
        let hyper = Hyperparameters::new(3, kind).with_truncation(2, 4);
        PosteriorSample::new(init_random(&hyper, (3, 6), &mut RngStream::new(seed, 0)), 1, 0)
    }

    #[test]
    fn geometric_rollout() {
        let s = scalar_sample(ObservationKind::Gaussian, 0.5, 2.0, 3.0, 1.0, 1.0);
        let r = rollout_forecast(&s, 3).unwrap();
        assert_eq!(r.y.as_slice(), &[3.0, 1.5, 0.75]);
    }

    #[test]
    fn dead_transition_rolls_out_to_zero() {
        for kind in [ObservationKind::Gaussian, ObservationKind::NegativeBinomial] {
            let mut s = random_sample(kind, 2).into_state();
            s.trans.z.fill(false);
            let s = PosteriorSample::new(s, 1, 0);
            let r = rollout_forecast(&s, 4).unwrap();
            assert!(r.x.iter().all(|&x| x == 0.0));
            let expect = s.obs().eta().unwrap_or(0.0);
            assert!(r.y.iter().all(|&y| y == expect));
        }
    }

    #[test]
    fn rollout_is_linear_in_the_start() {
        let s = random_sample(ObservationKind::Gaussian, 3);
        let mut scaled = s.clone().into_state();
        scaled.traj.x *= 2.5;
        let scaled = PosteriorSample::new(scaled, 1, 0);
        let a = rollout_forecast(&s, 5).unwrap();
        let b = rollout_forecast(&scaled, 5).unwrap();
        assert!((a.x * 2.5 - b.x).abs().max() < 1e-12);
    }

    #[test]
    fn zero_horizon_is_rejected() {
        assert!(rollout_forecast(&random_sample(ObservationKind::Gaussian, 1), 0).is_err());
    }

    #[test]
    fn ensemble_band() {
        let a = scalar_sample(ObservationKind::Gaussian, 1.0, 1.0, 1.0, 1.0, 1.0);
        let b = scalar_sample(ObservationKind::Gaussian, 1.0, 3.0, 1.0, 1.0, 1.0);
        let e = ensemble_forecast(&[&a, &b], 1).unwrap();
        assert_eq!((e.mean[(0, 0)], e.lo[(0, 0)], e.hi[(0, 0)]), (2.0, 1.0, 3.0));
        let same = vec![&a; 50];
        let e = ensemble_forecast(&same, 3).unwrap();
        assert_eq!(e.lo, e.hi);
        assert_eq!(e.mean, rollout_forecast(&a, 3).unwrap().y);
        assert!(ensemble_forecast(&[], 3).is_err());
    }

    #[test]
    fn scalar_kalman() {
        let s = scalar_sample(ObservationKind::Gaussian, 0.0, 5.0, 1.0, 1.0, 1.0);
        let x = filter_step(&s, &DVector::from_element(1, 5.0), &DVector::from_element(1, 2.0)).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
        let s = scalar_sample(ObservationKind::Gaussian, 0.0, 5.0, 1.0, 1.0, 1e8);
        let x = filter_step(&s, &DVector::from_element(1, 5.0), &DVector::from_element(1, 2.0)).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-7);
        let s = scalar_sample(ObservationKind::Gaussian, 0.7, 5.0, 0.0, 1.0, 1.0);
        let x = filter_step(&s, &DVector::from_element(1, 5.0), &DVector::from_element(1, 2.0)).unwrap();
        assert!((x[0] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn filter_interpolates() {
        let mut rng = RngStream::new(9, 0);
        use rand::Rng;
        for _ in 0..200 {
            let (a, xp, d, lam, phi, y) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.2..2.0),
                rng.random_range(0.1..5.0),
                rng.random_range(0.1..5.0),
                rng.random_range(-3.0..3.0),
            );
            let s = scalar_sample(ObservationKind::Gaussian, a, 0.0, d, lam, phi);
            let x = filter_step(&s, &DVector::from_element(1, xp), &DVector::from_element(1, y)).unwrap()[0];
            let (lo, hi) = if a * xp < y / d { (a * xp, y / d) } else { (y / d, a * xp) };
            assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
        }
    }

    #[test]
    fn filter_refuses_counts() {
        let s = random_sample(ObservationKind::NegativeBinomial, 1);
        let err = filter_step(&s, &DVector::zeros(4), &DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::Mode(_)));
        assert!(matches!(one_step_at_a_time(&[&s], &DMatrix::zeros(3, 2)), Err(Error::Mode(_))));
    }

    #[test]
    fn first_step_matches_rollout() {
        let s = random_sample(ObservationKind::Gaussian, 4);
        let future = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let a = one_step_at_a_time(&[&s], &future).unwrap();
        let b = ensemble_forecast(&[&s], 4).unwrap();
        assert_eq!(a.mean.column(0), b.mean.column(0));
    }

    #[test]
    fn precise_observations_collapse_the_filter() {
        let hyper = Hyperparameters::new(2, ObservationKind::Gaussian).with_truncation(1, 2);
        let mut st = init_random(&hyper, (2, 3), &mut RngStream::new(5, 0));
        st.obs.d = DMatrix::identity(2, 2);
        st.obs.noise = ObservationNoise::Gaussian { precision: DMatrix::identity(2, 2) * 1e10 };
        let a = st.trans.masked();
        let s = PosteriorSample::new(st, 1, 0);
        let future = DMatrix::from_fn(2, 5, |i, j| 1.0 + i as f64 - 0.3 * j as f64);
        let pred = one_step_at_a_time(&[&s], &future).unwrap().mean;
        for h in 1..5 {
            let expect = &a * future.column(h - 1);
            assert!((pred.column(h) - expect).abs().max() < 1e-6);
        }
    }

    #[test]
    fn perfect_model_has_no_one_step_error() {
        let s = random_sample(ObservationKind::Gaussian, 6);
        let st = s.state();
        let a = st.trans.masked();
        let mut x = st.traj.x.column(5).into_owned();
        let mut future = DMatrix::zeros(3, 6);
        for h in 0..6 {
            x = &a * x;
            future.set_column(h, &(&st.obs.d * &x));
        }
        let pred = one_step_at_a_time(&[&s], &future).unwrap().mean;
        assert!(mae(&future, &pred).unwrap().iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn metric_hand_cases() {
        let y = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let p = DMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        assert_eq!(mae(&y, &p).unwrap(), vec![1.5]);
        assert_eq!(mae(&y, &y).unwrap(), vec![0.0]);
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        assert_eq!(mare(&one(0.0), &one(1.0)).unwrap(), vec![1.0]);
        assert_eq!(mare(&one(9.0), &one(4.0)).unwrap(), vec![0.5]);
        assert_eq!(mae(&one(-2.0), &one(1.5)).unwrap(), vec![3.5]);
        assert!(matches!(mae(&y, &one(1.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn prediction_files_round_trip() {
        let s = random_sample(ObservationKind::Gaussian, 8);
        let e = ensemble_forecast(&[&s], 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        write_predictions(&p, &e, &["a".into(), "b".into(), "c".into()]).unwrap();
        let (back, labels) = read_predictions(&p).unwrap();
        assert_eq!(back, e.mean);
        assert_eq!(labels, vec!["a", "b", "c"]);
        let m = dir.path().join("metrics.csv");
        write_metrics(&m, Metric::Mae, &[1.5, 2.0]).unwrap();
        let text = std::fs::read_to_string(&m).unwrap();
        assert_eq!(text, "horizon,metric,value\n1,mae,1.5\n2,mae,2\n");
    }
}
