//! `ggplds`: simulate benchmarks, train, forecast and decompose.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ggplds::datasets::{self, FhnSetup, LorenzSetup};
use ggplds::forecast::{self, Metric};
use ggplds::ggp;
use ggplds::gibbs::{run_chains, SweepOptions};
use ggplds::nalgebra::DMatrix;
use ggplds::{DataKind, Error, Hyperparameters, ObservationKind, Posterior, PosteriorSample, RngStream, TimeSeriesData};

/// Fallback for `--out` when the flag is omitted.
const OUT_DIR_ENV: &str = "GGPLDS_OUT_DIR";

#[derive(Parser)]
#[command(name = "ggplds", version, about = "Graph gamma process dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark: observations, latent path and loadings.
    Simulate(SimulateArgs),
    /// Run Gibbs chains and write a posterior document.
    Train(TrainArgs),
    /// Predict ahead of the training series.
    Forecast(ForecastArgs),
    /// Export graph grids and community sub-sequences of one sample.
    Decompose(DecomposeArgs),
    /// Score a prediction file against the truth.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum System {
    Lorenz,
    Fhn,
}

#[derive(clap::Args)]
struct SimulateArgs {
    system: System,
    /// Number of time points [default: 578 for lorenz, 800 for fhn]
    #[arg(long)]
    t: Option<usize>,
    /// Integration step [default: 0.01 for lorenz, 0.1 for fhn]
    #[arg(long)]
    dt: Option<f64>,
    /// Observed dimensions [default: 10 for lorenz, 2 for fhn]
    #[arg(long)]
    obs_dim: Option<usize>,
    /// Standard deviation of the observation noise
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, env = OUT_DIR_ENV)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Lds,
    Nbds,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "lds")]
    model: Model,
    /// Community truncation
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Number of latent states
    #[arg(long, default_value_t = 30)]
    s: usize,
    #[arg(long, default_value_t = 6000)]
    iters: usize,
    #[arg(long, default_value_t = 3000)]
    burnin: usize,
    #[arg(long, default_value_t = 60)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Train on the first N time steps only
    #[arg(long)]
    train_len: Option<usize>,
    /// Progress record interval in iterations (0 disables the log)
    #[arg(long, default_value_t = 10)]
    progress_every: usize,
    /// Posterior document; `$GGPLDS_OUT_DIR/posterior.json` when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Rollout,
    Filter,
}

#[derive(clap::Args)]
struct ForecastArgs {
    #[arg(long)]
    posterior: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    horizon: u64,
    #[arg(long, value_enum, default_value = "rollout")]
    mode: Mode,
    /// Observed values after the training series (required for `filter`)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Rows of the truth file to skip. Defaults to the training length when
    /// the file also covers the training series, 0 otherwise.
    #[arg(long)]
    skip: Option<usize>,
    /// Use one chain only
    #[arg(long)]
    chain: Option<usize>,
    #[arg(long, env = OUT_DIR_ENV)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct DecomposeArgs {
    #[arg(long)]
    posterior: PathBuf,
    /// Sample index within the selected chains, or `last`
    #[arg(long, default_value = "last")]
    sample: String,
    /// Number of strongest communities to export
    #[arg(long, default_value_t = 4)]
    top: usize,
    #[arg(long)]
    chain: Option<usize>,
    /// Observed series, appended to the superposition file
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, env = OUT_DIR_ENV)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Mae,
    Mare,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value = "mae")]
    metric: MetricArg,
    /// Rows of the truth file to skip
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Also write the table here
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Mode(_) => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Forecast(a) => run_forecast(a),
        Command::Decompose(a) => decompose(a),
        Command::Report(a) => report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn matrix_labels(n: usize, prefix: &str) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn simulate(a: SimulateArgs) -> CliResult {
    let mut rng = RngStream::new(a.seed, 0);
    let bench = match a.system {
        System::Lorenz => {
            let d = LorenzSetup::default();
            LorenzSetup {
                t: a.t.unwrap_or(d.t),
                dt: a.dt.unwrap_or(d.dt),
                obs_dim: a.obs_dim.unwrap_or(d.obs_dim),
                noise_std: a.noise_std,
                ..d
            }
            .generate(&mut rng)?
        }
        System::Fhn => {
            let d = FhnSetup::default();
            FhnSetup {
                t: a.t.unwrap_or(d.t),
                dt: a.dt.unwrap_or(d.dt),
                obs_dim: a.obs_dim.unwrap_or(d.obs_dim),
                noise_std: a.noise_std,
                ..d
            }
            .generate(&mut rng)?
        }
    };
    fs::create_dir_all(&a.out)?;
    datasets::save_csv(&bench.data, a.out.join("observations.csv"))?;
    let mut latent = TimeSeriesData::real(bench.latent.clone());
    latent.labels = matrix_labels(bench.latent.nrows(), "x");
    datasets::save_csv(&latent, a.out.join("latent.csv"))?;
    ggp::write_grid(&a.out.join("d_true.csv"), &bench.d_true)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn default_out(file: &str) -> Result<PathBuf, Failure> {
    std::env::var_os(OUT_DIR_ENV)
        .map(|d| PathBuf::from(d).join(file))
        .ok_or_else(|| usage(format!("--out is required (or set {OUT_DIR_ENV})")))
}

fn progress_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".progress.jsonl");
    PathBuf::from(p)
}

fn train(a: TrainArgs) -> CliResult {
    let out = match a.out {
        Some(p) => p,
        None => default_out("posterior.json")?,
    };
    if a.chains == 0 {
        return Err(usage("--chains must be at least 1"));
    }
    let kind = match a.model {
        Model::Lds => ObservationKind::Gaussian,
        Model::Nbds => ObservationKind::NegativeBinomial,
    };
    let mut data = datasets::load_csv(&a.data, None)?;
    if let Some(n) = a.train_len {
        if n < 2 || n > data.t() {
            return Err(usage(format!("--train-len must lie in 2..={}", data.t())));
        }
        data = data.head(n);
    }
    let hyper = Hyperparameters::new(data.v(), kind)
        .with_truncation(a.k, a.s)
        .with_schedule(a.iters, a.burnin, a.thin)
        .with_seed(a.seed);
    hyper.validate()?;
    let outputs = run_chains(&data, &hyper, a.chains, a.progress_every, SweepOptions::default()).map_err(|f| {
        let msg = f.to_string();
        Failure { msg, ..Failure::from(Error::from(f)) }
    })?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    if a.progress_every > 0 {
        let mut log = std::io::BufWriter::new(fs::File::create(progress_path(&out))?);
        for o in &outputs {
            for p in &o.progress {
                writeln!(log, "{}", serde_json::to_string(p).expect("progress record serializes"))?;
            }
        }
        log.flush()?;
    }
    let samples = outputs.into_iter().flat_map(|o| o.samples).collect();
    let post = Posterior::new(hyper, data.t(), samples);
    post.save(&out)?;
    println!("wrote {} ({} samples)", out.display(), post.samples.len());
    Ok(())
}

fn selected(post: &Posterior, chain: Option<usize>) -> Result<Vec<&PosteriorSample>, Failure> {
    let s = post.select(chain);
    if s.is_empty() {
        return Err(usage(match chain {
            Some(c) => format!("posterior has no samples from chain {c} (chains: {:?})", post.chains()),
            None => "posterior has no samples".to_string(),
        }));
    }
    Ok(s)
}

fn metric_for(kind: ObservationKind) -> Metric {
    match kind {
        ObservationKind::Gaussian => Metric::Mae,
        ObservationKind::NegativeBinomial => Metric::Mare,
    }
}

fn print_metrics(metric: Metric, values: &[f64]) {
    println!("horizon,metric,value");
    for (h, v) in values.iter().enumerate() {
        println!("{},{},{}", h + 1, metric.as_str(), v);
    }
}

/// Columns `skip..skip + horizon` of the truth file.
fn truth_window(truth: &TimeSeriesData, skip: usize, horizon: usize) -> Result<DMatrix<f64>, Failure> {
    if skip + horizon > truth.t() {
        return Err(Failure {
            code: 1,
            msg: format!("truth has {} rows; {} are needed after skipping {skip}", truth.t(), horizon),
        });
    }
    Ok(truth.y.columns(skip, horizon).into_owned())
}

fn run_forecast(a: ForecastArgs) -> CliResult {
    let post = Posterior::load(&a.posterior)?;
    let samples = selected(&post, a.chain)?;
    let horizon = a.horizon as usize;
    let kind = post.hyper.observation_kind;
    if a.mode == Mode::Filter && kind != ObservationKind::Gaussian {
        return Err(Error::Mode("filter mode needs a Gaussian (lds) posterior".into()).into());
    }
    let truth = a
        .truth
        .as_ref()
        .map(|p| datasets::load_csv(p, None))
        .transpose()?;
    let future = match &truth {
        Some(t) => {
            if t.v() != post.hyper.v {
                return Err(Error::Shape(format!("truth has {} dimensions, posterior {}", t.v(), post.hyper.v)).into());
            }
            let skip = a.skip.unwrap_or(if t.t() >= post.t + horizon { post.t } else { 0 });
            Some(truth_window(t, skip, horizon)?)
        }
        None => None,
    };
    let ens = match a.mode {
        Mode::Rollout => forecast::ensemble_forecast(&samples, horizon)?,
        Mode::Filter => {
            let future = future.as_ref().ok_or_else(|| usage("--mode filter needs --truth"))?;
            forecast::one_step_at_a_time(&samples, future)?
        }
    };
    fs::create_dir_all(&a.out)?;
    let labels = truth.as_ref().map(|t| t.labels.clone()).unwrap_or_else(|| matrix_labels(post.hyper.v, "y"));
    forecast::write_predictions(a.out.join("predictions.csv"), &ens, &labels)?;
    if let Some(future) = future {
        let metric = metric_for(kind);
        let values = metric.eval(&future, &ens.mean)?;
        forecast::write_metrics(a.out.join("metrics.csv"), metric, &values)?;
        print_metrics(metric, &values);
    }
    Ok(())
}

fn decompose(a: DecomposeArgs) -> CliResult {
    let post = Posterior::load(&a.posterior)?;
    let samples = selected(&post, a.chain)?;
    let idx = if a.sample == "last" {
        samples.len() - 1
    } else {
        let i: usize = a.sample.parse().map_err(|_| usage(format!("--sample must be an index or `last`, got `{}`", a.sample)))?;
        if i >= samples.len() {
            return Err(usage(format!("sample {i} is out of range; {} samples available", samples.len())));
        }
        i
    };
    let sample = samples[idx];
    let st = sample.state();
    let grids = ggp::graph_grids(&st.ggp, &st.trans, a.top)?;
    fs::create_dir_all(&a.out)?;
    ggp::write_grid(&a.out.join("z_reordered.csv"), &grids.z)?;
    ggp::write_grid(&a.out.join("edge_probability.csv"), &grids.edge_probability)?;
    ggp::write_grid(&a.out.join("theta.csv"), &grids.theta)?;
    ggp::write_grid(&a.out.join("r_diag.csv"), &grids.r_diag)?;
    ggp::write_grid(&a.out.join("psi_t.csv"), &grids.psi_t)?;

    let strength = ggp::community_strength(&st.ggp)?;
    let top: Vec<usize> = grids.strengths.iter().map(|(k, _)| *k).collect();
    let chosen: Vec<_> = top.iter().map(|&k| strength[k].clone()).collect();
    let dec = ggp::decompose(&st.traj, &st.trans, &st.obs, &chosen)?;
    let observed = a.data.as_ref().map(|p| datasets::load_csv(p, None)).transpose()?;
    let t = st.traj.t();
    let time_index: Vec<String> = match &observed {
        Some(o) if o.t() >= t => o.time_index[..t].to_vec(),
        _ => (1..=t).map(|i| i.to_string()).collect(),
    };
    let v = st.obs.d.nrows();
    let labels = observed
        .as_ref()
        .filter(|o| o.v() == v)
        .map(|o| o.labels.clone())
        .unwrap_or_else(|| matrix_labels(v, "y"));
    let as_series = |y: DMatrix<f64>, labels: Vec<String>| TimeSeriesData {
        y,
        kind: DataKind::Real,
        labels,
        time_index: time_index.clone(),
    };
    for ((rank, (k, a_k)), y) in grids.strengths.iter().enumerate().zip(&dec.y_hat) {
        ggp::write_grid(&a.out.join(format!("strength_{}_k{}.csv", rank + 1, k)), a_k)?;
        datasets::save_csv(&as_series(y.clone(), labels.clone()), a.out.join(format!("subsequence_{}_k{}.csv", rank + 1, k)))?;
    }
    let sup = match st.obs.eta() {
        None => dec.superposition_y(),
        Some(eta) => dec.superposition_counts(eta),
    };
    let sup = if sup.nrows() == 0 { DMatrix::zeros(v, t) } else { sup };
    let (y, all_labels) = match observed.as_ref().filter(|o| o.v() == v && o.t() >= t) {
        Some(o) => {
            let mut y = DMatrix::zeros(2 * v, t);
            y.rows_mut(0, v).copy_from(&sup);
            y.rows_mut(v, v).copy_from(&o.y.columns(0, t));
            let mut l = labels.clone();
            l.extend(labels.iter().map(|s| format!("observed_{s}")));
            (y, l)
        }
        None => {
            if observed.is_some() {
                log::warn!("observed series does not match the posterior shape; not appended");
            }
            (sup, labels.clone())
        }
    };
    datasets::save_csv(&as_series(y, all_labels), a.out.join("superposition.csv"))?;
    println!(
        "sample {idx} (chain {}, iteration {}): communities {:?}",
        sample.chain(),
        sample.iteration(),
        top
    );
    Ok(())
}

fn report(a: ReportArgs) -> CliResult {
    let (pred, labels) = forecast::read_predictions(&a.pred)?;
    let truth = datasets::load_csv(&a.truth, None)?;
    let metric = match a.metric {
        MetricArg::Mae => Metric::Mae,
        MetricArg::Mare => Metric::Mare,
    };
    if metric == Metric::Mare && truth.kind != DataKind::Count {
        log::warn!("mare on non-count truth; computing it anyway");
    }
    if pred.nrows() != truth.v() {
        return Err(Error::Shape(format!("prediction has {} dimensions, truth {}", pred.nrows(), truth.v())).into());
    }
    // match dimensions by label when every label is present, else by position
    let order: Vec<usize> = match labels.iter().map(|l| truth.labels.iter().position(|t| t == l)).collect::<Option<Vec<_>>>() {
        Some(o) => o,
        None => (0..pred.nrows()).collect(),
    };
    let window = truth_window(&truth, a.skip, pred.ncols())?;
    let aligned = DMatrix::from_fn(pred.nrows(), pred.ncols(), |v, h| window[(order[v], h)]);
    let values = metric.eval(&aligned, &pred)?;
    print_metrics(metric, &values);
    if let Some(out) = a.out {
        forecast::write_metrics(out, metric, &values)?;
    }
    Ok(())
}
