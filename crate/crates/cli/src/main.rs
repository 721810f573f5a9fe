//! `synthdyna` command-line tool.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use synthdyna::hallway::{Regime, Schedule, ValueOracle};
use synthdyna::harness::{
    aggregate, export, grid_search, run_trials, theorem_demo, Aggregate, Algorithm, GridSpec,
    HarnessError, HyperParam, Summary, TrialConfig, SCORE_WINDOW,
};
use synthdyna::stats::TestKind;
use synthdyna::verify::gradient_report;

#[derive(Parser)]
#[command(name = "synthdyna", version, about = "Dyna-style prediction experiments in a windy hallway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm for N trials and write a metrics CSV and summary JSON.
    Run(RunArgs),
    /// Run all four algorithms and write per-algorithm CSVs, curves and pairwise tests.
    Compare(CompareArgs),
    /// Grid-search hyperparameters for one algorithm.
    Grid(GridArgs),
    /// Write the exact value table for both regimes.
    Oracle(OracleArgs),
    /// Count model calls for an environment model versus an aggregating model.
    DemoTheorem(TheoremArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Modelfree,
    Allexp,
    Stableexp,
    Synthdyna,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Modelfree => Algorithm::ModelFree,
            AlgoArg::Allexp => Algorithm::AllExperience,
            AlgoArg::Stableexp => Algorithm::StableExperience,
            AlgoArg::Synthdyna => Algorithm::SynthDyna,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    PlusTop,
    MinusBottom,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::PlusTop => Regime::PlusTop,
            RegimeArg::MinusBottom => Regime::MinusBottom,
        }
    }
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Preset {
    /// Grid-searched settings.
    #[default]
    Tuned,
    /// Hand-set defaults shared by all algorithms.
    Defaults,
}

/// Keys accepted both as flags and in the config file. Unset keys fall
/// through to the next layer: flags, then the algorithm section, then
/// `[defaults]`, then the preset.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    /// Number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Episodes per trial.
    #[arg(long)]
    episodes: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for running trials.
    #[arg(long)]
    workers: Option<usize>,
    /// Episodes between regime switches.
    #[arg(long)]
    period: Option<usize>,
    /// Veridical TD step size.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Planning step size.
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Inner-loop step size of the meta-loss.
    #[arg(long, allow_negative_numbers = true)]
    zeta: Option<f64>,
    /// Planning updates per step.
    #[arg(long)]
    k: Option<usize>,
    /// Generator hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Generator noise dimension.
    #[arg(long)]
    noise_dim: Option<usize>,
    /// Meta-update batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate of the generator.
    #[arg(long, allow_negative_numbers = true)]
    meta_lr: Option<f64>,
    /// Environment steps between meta-updates.
    #[arg(long)]
    meta_every: Option<usize>,
}

impl Settings {
    /// `self` wins where both are set.
    fn over(&self, lower: &Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: self.$f.or(lower.$f)),* } };
        }
        pick!(trials, episodes, seed, workers, period, alpha, beta, zeta, k, hidden, noise_dim, batch, meta_lr, meta_every)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    defaults: Settings,
    #[serde(default)]
    modelfree: Settings,
    #[serde(default)]
    allexp: Settings,
    #[serde(default)]
    stableexp: Settings,
    #[serde(default)]
    synthdyna: Settings,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    fn section(&self, algo: Algorithm) -> &Settings {
        match algo {
            Algorithm::ModelFree => &self.modelfree,
            Algorithm::AllExperience => &self.allexp,
            Algorithm::StableExperience => &self.stableexp,
            Algorithm::SynthDyna => &self.synthdyna,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML config with optional [defaults] and per-algorithm sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point before config and flags are applied.
    #[arg(long, value_enum, default_value_t)]
    preset: Preset,
    /// Keep one regime for the whole run instead of switching.
    #[arg(long, value_enum)]
    stationary: Option<RegimeArg>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    show_config: bool,
    #[command(flatten)]
    settings: Settings,
}

/// A fully resolved per-algorithm configuration.
struct Resolved {
    config: TrialConfig,
    trials: usize,
    workers: usize,
}

impl Common {
    fn resolve(&self, algo: Algorithm, file: &ConfigFile) -> Result<Resolved> {
        let s = self.settings.over(&file.section(algo).over(&file.defaults));
        let base = match self.preset {
            Preset::Tuned => TrialConfig::tuned(algo),
            Preset::Defaults => TrialConfig::new(algo),
        };
        let mut c = TrialConfig {
            episodes: s.episodes.unwrap_or(base.episodes),
            seed: s.seed.unwrap_or(base.seed),
            alpha: s.alpha.unwrap_or(base.alpha),
            beta: s.beta.unwrap_or(base.beta),
            zeta: s.zeta.unwrap_or(base.zeta),
            k: s.k.unwrap_or(base.k),
            hidden: s.hidden.unwrap_or(base.hidden),
            noise_dim: s.noise_dim.unwrap_or(base.noise_dim),
            batch: s.batch.unwrap_or(base.batch),
            meta_lr: s.meta_lr.unwrap_or(base.meta_lr),
            meta_every: s.meta_every.unwrap_or(base.meta_every),
            ..base
        };
        if let Some(period) = s.period {
            c.schedule = Schedule::Switching { period };
        }
        if let Some(r) = self.stationary {
            c.schedule = Schedule::Stationary(r.into());
        }
        c.validate().map_err(flag_error)?;
        let trials = s.trials.unwrap_or(30);
        if trials == 0 {
            bail!("invalid --trials 0: must be positive");
        }
        Ok(Resolved {
            config: c,
            trials,
            workers: s.workers.unwrap_or(1).max(1),
        })
    }
}

/// Names the offending flag for configuration errors.
fn flag_error(e: HarnessError) -> anyhow::Error {
    match e {
        HarnessError::InvalidConfig { name, value, reason } => {
            anyhow::anyhow!("invalid --{} {}: {}", name.replace('_', "-"), value, reason)
        }
        other => other.into(),
    }
}

fn show_config(resolved: &[Resolved]) -> Result<()> {
    #[derive(Serialize)]
    struct Flat {
        trials: usize,
        workers: usize,
        episodes: usize,
        seed: u64,
        schedule: String,
        alpha: f64,
        beta: f64,
        zeta: f64,
        k: usize,
        hidden: usize,
        noise_dim: usize,
        batch: usize,
        meta_lr: f64,
        meta_every: usize,
    }
    let mut doc = BTreeMap::new();
    for r in resolved {
        let c = &r.config;
        let schedule = match c.schedule {
            Schedule::Switching { period } => format!("switching every {period}"),
            Schedule::Stationary(regime) => format!("stationary {regime}"),
        };
        doc.insert(
            c.algorithm.as_str(),
            Flat {
                trials: r.trials,
                workers: r.workers,
                episodes: c.episodes,
                seed: c.seed,
                schedule,
                alpha: c.alpha,
                beta: c.beta,
                zeta: c.zeta,
                k: c.k,
                hidden: c.hidden,
                noise_dim: c.noise_dim,
                batch: c.batch,
                meta_lr: c.meta_lr,
                meta_every: c.meta_every,
            },
        );
    }
    print!("{}", toml::to_string(&doc)?);
    Ok(())
}

#[derive(Args)]
struct RunArgs {
    /// Algorithm to run.
    #[arg(long, value_enum)]
    algo: AlgoArg,
    /// Metrics CSV path.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Summary JSON path (default: the CSV path with a .summary.json suffix).
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompareArgs {
    /// Output directory.
    #[arg(long, default_value = "compare")]
    out: PathBuf,
    /// Use Welch's unequal-variance test instead of the pooled test.
    #[arg(long)]
    welch: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GridArgs {
    /// Algorithm to tune.
    #[arg(long, value_enum)]
    algo: AlgoArg,
    /// Axis as name=v1,v2,... (alpha, beta, zeta, k, hidden, noise_dim, batch, meta_lr, meta_every). Repeatable.
    #[arg(long = "axis", value_parser = parse_axis)]
    axes: Vec<(HyperParam, Vec<f64>)>,
    /// Episodes at the end of each trial that make up the score.
    #[arg(long, default_value_t = SCORE_WINDOW)]
    window: usize,
    /// Report CSV path.
    #[arg(long, default_value = "grid.csv")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn parse_axis(s: &str) -> Result<(HyperParam, Vec<f64>), String> {
    let (name, values) = s.split_once('=').ok_or("expected name=v1,v2,...")?;
    let param = HyperParam::from_name(name.trim()).ok_or_else(|| format!("unknown hyperparameter `{name}`"))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad value `{v}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((param, values))
}

#[derive(Args)]
struct OracleArgs {
    /// Output CSV path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoremArgs {
    /// Number of duplicate states.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// TD step size.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    alpha: f64,
    /// Convergence tolerance on max |θ_i − 1|.
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    eps: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the random test points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inner planning steps in the meta-loss.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("metrics".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.summary.json"))
}

fn run(args: &RunArgs) -> Result<()> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let r = args.common.resolve(args.algo.into(), &file)?;
    if args.common.show_config {
        return show_config(&[r]);
    }
    let trials = run_trials(&r.config, r.trials, r.workers)?;
    export::save_metrics(&args.out, &trials).with_context(|| format!("cannot write {}", args.out.display()))?;
    let agg = aggregate(&trials, SCORE_WINDOW)?;
    let mut summary = Summary::new(SCORE_WINDOW);
    summary.insert(r.config.algorithm.as_str(), &agg);
    let path = args.summary.clone().unwrap_or_else(|| summary_path(&args.out));
    export::save_summary(&path, &summary)?;
    println!(
        "{}: {} trials, mean last-{} MSE {:.6}",
        r.config.algorithm,
        r.trials,
        SCORE_WINDOW,
        agg.mean_score()
    );
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let resolved = Algorithm::ALL
        .iter()
        .map(|&a| args.common.resolve(a, &file))
        .collect::<Result<Vec<_>>>()?;
    if args.common.show_config {
        return show_config(&resolved);
    }
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut aggs: Vec<(Algorithm, Aggregate)> = Vec::new();
    for r in &resolved {
        let algo = r.config.algorithm;
        let trials = run_trials(&r.config, r.trials, r.workers)?;
        export::save_metrics(&args.out.join(format!("{algo}.csv")), &trials)?;
        let agg = aggregate(&trials, SCORE_WINDOW)?;
        println!("{algo}: mean last-{SCORE_WINDOW} MSE {:.6}", agg.mean_score());
        aggs.push((algo, agg));
    }

    let kind = if args.welch { TestKind::Welch } else { TestKind::Student };
    let mut summary = Summary::new(SCORE_WINDOW);
    for (algo, agg) in &aggs {
        summary.insert(algo.as_str(), agg);
    }
    for (i, (a, agg_a)) in aggs.iter().enumerate() {
        for (b, agg_b) in &aggs[i + 1..] {
            summary.compare((a.as_str(), agg_a), (b.as_str(), agg_b), kind)?;
        }
    }
    export::save_summary(&args.out.join("summary.json"), &summary)?;

    let mut curves = BufWriter::new(File::create(args.out.join("curves.csv"))?);
    writeln!(curves, "algorithm,episode,mean,half_width")?;
    for (algo, agg) in &aggs {
        for p in &agg.curve {
            let hw = p.half_width.map_or(String::new(), |h| h.to_string());
            writeln!(curves, "{algo},{},{},{hw}", p.episode, p.mean)?;
        }
    }
    curves.flush()?;
    Ok(())
}

fn grid(args: &GridArgs) -> Result<()> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let r = args.common.resolve(args.algo.into(), &file)?;
    if args.common.show_config {
        return show_config(&[r]);
    }
    let spec = GridSpec {
        base: r.config,
        axes: args.axes.clone(),
        trials: r.trials,
        window: args.window,
    };
    let report = grid_search(&spec, r.workers)?;
    report.write_csv(BufWriter::new(
        File::create(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?,
    ))?;
    for cell in &report.cells {
        let c = &cell.config;
        let score = match &cell.score {
            Ok(s) => format!("{s:.6}"),
            Err(e) => format!("failed: {e}"),
        };
        println!(
            "alpha={} beta={} zeta={} k={} hidden={} meta_lr={} -> {score}",
            c.alpha, c.beta, c.zeta, c.k, c.hidden, c.meta_lr
        );
    }
    match report.best_config() {
        Some(c) => println!(
            "best: alpha={} beta={} zeta={} k={} hidden={} noise_dim={} batch={} meta_lr={} meta_every={}",
            c.alpha, c.beta, c.zeta, c.k, c.hidden, c.noise_dim, c.batch, c.meta_lr, c.meta_every
        ),
        None => bail!("every grid cell failed"),
    }
    Ok(())
}

fn oracle(args: &OracleArgs) -> Result<()> {
    let oracle = ValueOracle::default();
    match &args.out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
            export::write_oracle(BufWriter::new(f), &oracle)?;
        }
        None => export::write_oracle(io::stdout().lock(), &oracle)?,
    }
    Ok(())
}

fn demo_theorem(args: &TheoremArgs) -> Result<()> {
    let d = theorem_demo(args.k, args.alpha, args.eps).map_err(flag_error)?;
    println!("env_calls={} agg_calls={}", d.env_calls, d.agg_calls);
    println!("k={} alpha={} eps={} max_fixed_point_error={:.3e}", d.k, d.alpha, d.epsilon, d.max_fixed_point_error());
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    if !(args.step.is_finite() && args.step > 0.0) {
        bail!("invalid --step {}: must be finite and positive", args.step);
    }
    let lines = gradient_report(args.seed, args.k, args.step)?;
    let mut failed = 0;
    for l in &lines {
        let status = if l.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!l.passed());
        println!("{status} {:<42} max_rel_error={:.3e} tol={:.0e}", l.name, l.max_rel_error, l.tolerance);
    }
    if failed > 0 {
        bail!("{failed} gradient check(s) failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Grid(a) => grid(a),
        Command::Oracle(a) => oracle(a),
        Command::DemoTheorem(a) => demo_theorem(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
