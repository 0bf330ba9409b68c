//! Synthetic benchmarks and CSV input/output.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::std_normal;
use crate::linalg;
use crate::model::{is_count, DataKind, TimeSeriesData};

/// Classical fourth-order Runge-Kutta. Returns `T` columns, the first being
/// the state after `burnin` steps.
pub fn rk4<F>(f: F, x_init: &[f64], t: usize, dt: f64, burnin: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    if t < 2 {
        return Err(Error::Config("at least two time points are required".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {dt}")));
    }
    let n = x_init.len();
    let mut x = x_init.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut step = |x: &mut Vec<f64>| {
        f(x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        f(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        f(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        f(&tmp, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    };
    let check = |x: &[f64], s: usize| {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence { step: s })
        }
    };
    check(&x, 0)?;
    for s in 1..=burnin {
        step(&mut x);
        check(&x, s)?;
    }
    let mut out = DMatrix::zeros(n, t);
    out.set_column(0, &DVector::from_column_slice(&x));
    for c in 1..t {
        step(&mut x);
        check(&x, burnin + c)?;
        out.set_column(c, &DVector::from_column_slice(&x));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lorenz {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Lorenz {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0, gamma: 1.0 }
    }
}

impl Lorenz {
    pub fn derivative(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.alpha * (x[1] - x[0]);
        out[1] = x[0] * (self.beta - x[2]) - x[1];
        out[2] = x[0] * x[1] - self.gamma * x[2];
    }

    /// The two nontrivial equilibria `(±√(γ(β-1)), ±√(γ(β-1)), β-1)`, when
    /// they exist.
    pub fn equilibria(&self) -> Option<[[f64; 3]; 2]> {
        let q = self.gamma * (self.beta - 1.0);
        (q > 0.0).then(|| {
            let r = q.sqrt();
            [[r, r, self.beta - 1.0], [-r, -r, self.beta - 1.0]]
        })
    }
}

/// Lorenz trajectory `3 × T`.
pub fn lorenz_generate(params: &Lorenz, x_init: [f64; 3], t: usize, dt: f64, burnin: usize) -> Result<DMatrix<f64>> {
    rk4(|x, o| params.derivative(x, o), &x_init, t, dt, burnin)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitzHughNagumo {
    pub i: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for FitzHughNagumo {
    fn default() -> Self {
        Self { i: 0.3, a: 0.7, b: 0.8, c: 0.7 }
    }
}

impl FitzHughNagumo {
    pub fn derivative(&self, x: &[f64], out: &mut [f64]) {
        let (v, w) = (x[0], x[1]);
        out[0] = v - v * v * v / 3.0 - w + self.i;
        out[1] = self.c * (v + self.a - self.b * w);
    }

    /// Intersection of the nullclines, by Newton's method on
    /// `v - v³/3 - (v + a)/b + I = 0`. Requires `b > 0`.
    pub fn equilibrium(&self) -> [f64; 2] {
        let g = |v: f64| v - v * v * v / 3.0 - (v + self.a) / self.b + self.i;
        let dg = |v: f64| 1.0 - v * v - 1.0 / self.b;
        let mut v = 0.0;
        for _ in 0..100 {
            let step = g(v) / dg(v);
            v -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        [v, (v + self.a) / self.b]
    }
}

/// FitzHugh-Nagumo trajectory `2 × T` (rows `v`, `w`).
pub fn fhn_generate(params: &FitzHughNagumo, v_init: f64, w_init: f64, t: usize, dt: f64) -> Result<DMatrix<f64>> {
    rk4(|x, o| params.derivative(x, o), &[v_init, w_init], t, dt, 0)
}

/// Observation noise added by [`project_observations`].
#[derive(Clone, Debug, PartialEq)]
pub enum Noise {
    None,
    /// Isotropic, with this standard deviation.
    Std(f64),
    Precision(DMatrix<f64>),
}

/// `Y = D_true · latent + noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub y: DMatrix<f64>,
    pub d_true: DMatrix<f64>,
}

/// Draw `D_true` with standard normal entries and project.
pub fn project_observations<R: Rng + ?Sized>(
    latent: &DMatrix<f64>,
    obs_dim: usize,
    noise: &Noise,
    rng: &mut R,
) -> Result<Projection> {
    if obs_dim < latent.nrows() {
        return Err(Error::Config(format!(
            "observation dimension {obs_dim} is below the latent dimension {}",
            latent.nrows()
        )));
    }
    let d_true = DMatrix::from_fn(obs_dim, latent.nrows(), |_, _| std_normal(rng));
    let y = project_with(latent, &d_true, noise, rng)?;
    Ok(Projection { y, d_true })
}

/// Projection through a given loading matrix.
pub fn project_with<R: Rng + ?Sized>(latent: &DMatrix<f64>, d: &DMatrix<f64>, noise: &Noise, rng: &mut R) -> Result<DMatrix<f64>> {
    if d.ncols() != latent.nrows() {
        return Err(Error::shape(format!("loadings have {} columns, latent has {} rows", d.ncols(), latent.nrows())));
    }
    let mut y = d * latent;
    let v = y.nrows();
    match noise {
        Noise::None => {}
        Noise::Std(s) => {
            if !(*s >= 0.0 && s.is_finite()) {
                return Err(Error::domain(format!("noise std must be non-negative, got {s}")));
            }
            y.iter_mut().for_each(|x| *x += s * std_normal(rng));
        }
        Noise::Precision(p) => {
            if p.shape() != (v, v) {
                return Err(Error::shape(format!("noise precision must be {v}x{v}")));
            }
            let chol = linalg::cholesky(p, "noise precision")?;
            for mut col in y.column_iter_mut() {
                let eps = DVector::from_fn(v, |_, _| std_normal(rng));
                col += chol
                    .l_dirty()
                    .tr_solve_lower_triangular(&eps)
                    .expect("cholesky factor has a positive diagonal");
            }
        }
    }
    Ok(y)
}

/// A generated benchmark: latent path, noisy observations and the loadings
/// that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub latent: DMatrix<f64>,
    pub data: TimeSeriesData,
    pub d_true: DMatrix<f64>,
}

fn benchmark<R: Rng + ?Sized>(latent: DMatrix<f64>, obs_dim: usize, noise: &Noise, rng: &mut R) -> Result<Benchmark> {
    let Projection { y, d_true } = project_observations(&latent, obs_dim, noise, rng)?;
    let mut data = TimeSeriesData::real(y);
    data.labels = (1..=obs_dim).map(|i| format!("y{i}")).collect();
    Ok(Benchmark { latent, data, d_true })
}

/// Lorenz benchmark: a random start in `[-init_range, init_range]³`,
/// projected to `obs_dim` dimensions with isotropic noise.
///
/// With `(α, β, γ) = (1, 2, 1)` the flow spirals into one of two stable
/// equilibria, so the step is kept small and nothing is discarded; the
/// emitted series is the transient.
#[derive(Clone, Debug, PartialEq)]
pub struct LorenzSetup {
    pub params: Lorenz,
    pub t: usize,
    pub dt: f64,
    pub burnin: usize,
    pub obs_dim: usize,
    pub noise_std: f64,
    pub init_range: f64,
}

impl Default for LorenzSetup {
    fn default() -> Self {
        Self { params: Lorenz::default(), t: 578, dt: 0.01, burnin: 0, obs_dim: 10, noise_std: 0.1, init_range: 10.0 }
    }
}

impl LorenzSetup {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Benchmark> {
        let r = self.init_range;
        let x0 = [0; 3].map(|_| rng.random_range(-r..=r));
        let latent = lorenz_generate(&self.params, x0, self.t, self.dt, self.burnin)?;
        benchmark(latent, self.obs_dim, &Noise::Std(self.noise_std), rng)
    }
}

/// FitzHugh-Nagumo benchmark: a random start with `v, w ∈ [-2, 2]`, two
/// observed dimensions, noise covariance `noise_std² I`.
#[derive(Clone, Debug, PartialEq)]
pub struct FhnSetup {
    pub params: FitzHughNagumo,
    pub t: usize,
    pub dt: f64,
    pub obs_dim: usize,
    pub noise_std: f64,
}

impl Default for FhnSetup {
    fn default() -> Self {
        Self { params: FitzHughNagumo::default(), t: 800, dt: 0.1, obs_dim: 2, noise_std: 0.1 }
    }
}

impl FhnSetup {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Benchmark> {
        let v0 = rng.random_range(-2.0..=2.0);
        let w0 = rng.random_range(-2.0..=2.0);
        let latent = fhn_generate(&self.params, v0, w0, self.t, self.dt)?;
        benchmark(latent, self.obs_dim, &Noise::Std(self.noise_std), rng)
    }
}

fn parse_error(row: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse { row, col, msg: msg.into() }
}

/// Read a series stored as `t,<label>...` with one row per time step.
/// Rows and columns in errors are 1-based file positions (the header is
/// row 1). With `kind = None` the file is treated as counts when every cell
/// is a non-negative integer.
pub fn load_csv(path: impl AsRef<Path>, kind: Option<DataKind>) -> Result<TimeSeriesData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut records = rdr.records();
    let header = records.next().ok_or_else(|| parse_error(1, 1, "file is empty"))??;
    if header.len() < 2 {
        return Err(parse_error(1, header.len().max(1), "header needs a time column and at least one series"));
    }
    let labels: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let v = labels.len();
    let mut time_index = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != v + 1 {
            return Err(parse_error(row, rec.len().min(v + 1), format!("expected {} cells, found {}", v + 1, rec.len())));
        }
        time_index.push(rec[0].trim().to_string());
        for c in 1..=v {
            let cell = rec[c].trim();
            let x: f64 = cell
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| parse_error(row, c + 1, format!("`{cell}` is not a finite number")))?;
            if kind == Some(DataKind::Count) && !is_count(x) {
                return Err(parse_error(row, c + 1, format!("`{cell}` is not a non-negative integer count")));
            }
            values.push(x);
        }
    }
    let t = time_index.len();
    if t == 0 {
        return Err(parse_error(2, 1, "file has no data rows"));
    }
    let y = DMatrix::from_vec(v, t, values);
    let kind = kind.unwrap_or_else(|| if y.iter().all(|&x| is_count(x)) { DataKind::Count } else { DataKind::Real });
    Ok(TimeSeriesData { y, kind, labels, time_index })
}

/// Write `data` in the layout read by [`load_csv`]. Numbers are written in
/// their shortest exact form.
pub fn save_csv(data: &TimeSeriesData, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let labels: Vec<String> = (0..data.v())
        .map(|i| data.labels.get(i).cloned().unwrap_or_else(|| format!("y{}", i + 1)))
        .collect();
    let mut header = vec!["t".to_string()];
    header.extend(labels);
    w.write_record(&header)?;
    for c in 0..data.t() {
        let mut rec = vec![data.time_index.get(c).cloned().unwrap_or_else(|| (c + 1).to_string())];
        rec.extend(data.y.column(c).iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn order_of_convergence(run: impl Fn(f64, usize) -> DMatrix<f64>, dt: f64, steps: usize) -> f64 {
        let end = |m: DMatrix<f64>| m.column(m.ncols() - 1).into_owned();
        let coarse = end(run(dt, steps + 1));
        let fine = end(run(dt / 2.0, 2 * steps + 1));
        let finer = end(run(dt / 4.0, 4 * steps + 1));
        ((coarse - &fine).norm() / (fine - finer).norm()).log2()
    }

    #[test]
    fn lorenz_equilibria_are_fixed() {
        let p = Lorenz::default();
        let eq = p.equilibria().unwrap();
        assert_eq!(eq[0], [1.0, 1.0, 1.0]);
        assert_eq!(eq[1], [-1.0, -1.0, 1.0]);
        for e in eq {
            let x = lorenz_generate(&p, e, 1000, 0.01, 0).unwrap();
            for c in x.column_iter() {
                assert!((c - DVector::from_column_slice(&e)).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = Lorenz::default();
        let o = order_of_convergence(|dt, t| lorenz_generate(&p, [3.0, -2.0, 4.0], t, dt, 0).unwrap(), 0.1, 50);
        assert!(o >= 3.8, "lorenz order {o}");
        let f = FitzHughNagumo::default();
        let o = order_of_convergence(|dt, t| fhn_generate(&f, -1.5, 0.5, t, dt).unwrap(), 0.2, 50);
        assert!(o >= 3.8, "fhn order {o}");
    }

    #[test]
    fn fhn_equilibrium_and_frozen_recovery() {
        let p = FitzHughNagumo::default();
        let [v, w] = p.equilibrium();
        let mut d = [0.0; 2];
        p.derivative(&[v, w], &mut d);
        assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12);
        let x = fhn_generate(&p, v, w, 1000, 0.1).unwrap();
        assert!(x.column_iter().all(|c| (c[0] - v).abs() < 1e-8 && (c[1] - w).abs() < 1e-8));
        let frozen = FitzHughNagumo { c: 0.0, ..p };
        let x = fhn_generate(&frozen, 1.0, 0.25, 200, 0.1).unwrap();
        assert!(x.row(1).iter().all(|&w| w == 0.25));
    }

    #[test]
    fn divergence_is_reported() {
        let blowup = |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0];
        match rk4(blowup, &[1.0], 1000, 0.5, 0) {
            Err(Error::Divergence { step }) => assert!(step > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_integration_arguments() {
        let p = Lorenz::default();
        assert!(lorenz_generate(&p, [1.0; 3], 1, 0.1, 0).is_err());
        assert!(lorenz_generate(&p, [1.0; 3], 10, 0.0, 0).is_err());
    }

    #[test]
    fn noiseless_projection_has_latent_rank() {
        let mut rng = RngStream::new(1, 0);
        let latent = lorenz_generate(&Lorenz::default(), [2.0, -3.0, 5.0], 200, 0.05, 0).unwrap();
        let p = project_observations(&latent, 10, &Noise::None, &mut rng).unwrap();
        assert_eq!(p.y.shape(), (10, 200));
        assert_eq!(p.y.rank(1e-8), 3);
        let y = project_with(&latent, &DMatrix::identity(3, 3), &Noise::None, &mut rng).unwrap();
        assert_eq!(y, latent);
        assert!(project_observations(&latent, 2, &Noise::None, &mut rng).is_err());
    }

    #[test]
    fn projection_noise_matches_precision() {
        let mut rng = RngStream::new(2, 0);
        let latent = DMatrix::zeros(2, 20_000);
        let prec = DMatrix::identity(2, 2) * 100.0;
        let y = project_with(&latent, &DMatrix::identity(2, 2), &Noise::Precision(prec), &mut rng).unwrap();
        let var = y.row(0).iter().map(|x| x * x).sum::<f64>() / 20_000.0;
        assert!((var - 0.01).abs() < 4.0 * 0.01 * (2.0f64 / 20_000.0).sqrt(), "{var}");
    }

    #[test]
    fn setups_are_reproducible() {
        let a = LorenzSetup::default().generate(&mut RngStream::new(7, 0)).unwrap();
        let b = LorenzSetup::default().generate(&mut RngStream::new(7, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data.y.shape(), (10, 578));
        assert_eq!(a.d_true.shape(), (10, 3));
        let f = FhnSetup::default().generate(&mut RngStream::new(1, 0)).unwrap();
        assert_eq!(f.data.y.shape(), (2, 800));
        assert_eq!(f.latent.nrows(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "t,px,py\n1,0.1,2\n2,-3.5e-7,4\n3,1e300,0.30000000000000004\n").unwrap();
        let d = load_csv(&path, None).unwrap();
        assert_eq!(d.y.shape(), (2, 3));
        assert_eq!(d.labels, vec!["px", "py"]);
        assert_eq!(d.kind, DataKind::Real);
        let out = dir.path().join("e.csv");
        save_csv(&d, &out).unwrap();
        assert_eq!(load_csv(&out, None).unwrap(), d);
    }

    #[test]
    fn csv_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "t,a\n1,3\n2,0\n").unwrap();
        assert_eq!(load_csv(&path, None).unwrap().kind, DataKind::Count);
        std::fs::write(&path, "t,a,b\n1,3,4\n2,0,-1\n").unwrap();
        match load_csv(&path, Some(DataKind::Count)) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 3)),
            other => panic!("{other:?}"),
        }
        assert_eq!(load_csv(&path, None).unwrap().kind, DataKind::Real);
    }

    #[test]
    fn csv_errors_locate_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,a,b\n1,3,4\n2,x,1\n").unwrap();
        assert!(matches!(load_csv(&path, None), Err(Error::Parse { row: 3, col: 2, .. })));
        std::fs::write(&path, "t,a,b\n1,3,4\n2,1\n").unwrap();
        assert!(matches!(load_csv(&path, None), Err(Error::Parse { row: 3, .. })));
        std::fs::write(&path, "t,a\n").unwrap();
        assert!(matches!(load_csv(&path, None), Err(Error::Parse { .. })));
    }
}
