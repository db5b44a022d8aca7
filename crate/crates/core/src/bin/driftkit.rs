use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use driftkit::data::write_csv;
use driftkit::pipeline::{self, parse_settings, DetectConfig, RunConfig};
use driftkit::synth::{self, Experiment};
use driftkit::{Error, ErrorClass, Hypothesis, Result};

#[derive(Parser)]
#[command(name = "driftkit", version, about = "Detect and localize dataset shift between two samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the five KL divergences and test each shift hypothesis.
    Run(Box<RunArgs>),
    /// Write a synthetic source/target pair as CSV.
    Synth(SynthArgs),
    /// Monte Carlo rejection rates on synthetic data, one JSON object per line.
    Power(PowerArgs),
}

#[derive(Args)]
struct RunArgs {
    /// File of `key = value` settings; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Name of the label column.
    #[arg(long)]
    label: Option<String>,
    /// classification or regression
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Number of resampling replicates.
    #[arg(long = "B", visible_alias = "b")]
    b: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long, visible_alias = "test-frac")]
    test_fraction: Option<String>,
    /// Label bins for the X|Y test on a continuous label (0 disables it).
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    /// Comma-separated penalties to choose from on an inner validation split.
    #[arg(long)]
    l2_grid: Option<String>,
    /// Comma-separated subset of D,F,R,C1,C2.
    #[arg(long, visible_alias = "shifts")]
    hypotheses: Option<String>,
    #[arg(long)]
    noise_variance: Option<String>,
    /// plugin or classifier
    #[arg(long)]
    y_estimator: Option<String>,
    /// Fit the joint model on (p(target | x), y) instead of (x, y).
    #[arg(long)]
    reduce_joint: bool,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print a plain-text table to stdout (after the JSON when there is no --out).
    #[arg(long)]
    summary: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// 1 (classification) or 2 (regression).
    #[arg(long)]
    experiment: u8,
    /// Comma-separated key=value pairs, e.g. `delta=0.1,gamma=0.5,n=1000`.
    #[arg(long, default_value = "")]
    params: String,
    /// Rows per population; overrides `n` in --params.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output files are `<prefix>source.csv` and `<prefix>target.csv`.
    #[arg(long, default_value = "")]
    out_prefix: String,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long)]
    experiment: u8,
    #[arg(long, default_value = "")]
    params: String,
    /// Rows per population; overrides `n` in --params.
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo runs per point.
    #[arg(long, default_value_t = 100)]
    mc: usize,
    #[arg(long = "B", visible_alias = "b", default_value_t = 100)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    test_fraction: f64,
    #[arg(long, visible_alias = "hypothesis", default_value = "D,F,R,C1,C2")]
    hypotheses: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep both shift parameters over the default 5 x 5 grid.
    #[arg(long)]
    surface: bool,
    /// Test Y|X shift against the true source conditional instead of a fitted one.
    #[arg(long)]
    oracle_conditional: bool,
}

fn run_command(args: RunArgs) -> Result<()> {
    let mut settings: BTreeMap<String, String> = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
            parse_settings(&text)?
        }
        None => BTreeMap::new(),
    };
    let overrides = [
        ("source", args.source),
        ("target", args.target),
        ("label", args.label),
        ("task", args.task),
        ("seed", args.seed),
        ("b", args.b),
        ("alpha", args.alpha),
        ("test-fraction", args.test_fraction),
        ("bins", args.bins),
        ("l2", args.l2),
        ("l2-grid", args.l2_grid),
        ("hypotheses", args.hypotheses),
        ("noise-variance", args.noise_variance),
        ("y-estimator", args.y_estimator),
        ("max-iter", args.max_iter),
        ("tol", args.tol),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            settings.insert(key.to_owned(), v);
        }
    }
    if args.reduce_joint {
        settings.insert("reduce-joint".into(), "true".into());
    }
    let config = RunConfig::from_settings(&settings)?;
    let report = pipeline::run(&config)?;

    match &args.out {
        Some(path) => {
            pipeline::write_report(&report, path)?;
            if args.summary {
                print!("{}", pipeline::render_summary(&report));
            }
        }
        None => {
            print!("{}", pipeline::report_json(&report)?);
            if args.summary {
                print!("{}", pipeline::render_summary(&report));
            }
        }
    }
    for w in &report.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn parse_experiment(experiment: u8, params: &str, n: Option<usize>) -> Result<Experiment> {
    match n {
        Some(n) => Experiment::parse(experiment, &format!("{params},n={n}")),
        None => Experiment::parse(experiment, params),
    }
}

fn synth_command(args: SynthArgs) -> Result<()> {
    let exp = parse_experiment(args.experiment, &args.params, args.n)?;
    let (source, target) = synth::sample_pair(&exp, args.seed);
    write_csv(&PathBuf::from(format!("{}source.csv", args.out_prefix)), &source, "label")?;
    write_csv(&PathBuf::from(format!("{}target.csv", args.out_prefix)), &target, "label")?;
    Ok(())
}

fn power_command(args: PowerArgs) -> Result<()> {
    let base = parse_experiment(args.experiment, &args.params, args.n)?;
    let detect = DetectConfig {
        b: args.b,
        alpha: args.alpha,
        test_fraction: args.test_fraction,
        hypotheses: Hypothesis::parse_list(&args.hypotheses)?,
        ..DetectConfig::default()
    };
    if args.surface && args.oracle_conditional {
        return Err(Error::Usage("--oracle-conditional applies to a single point, not a surface".into()));
    }
    let points = if args.surface {
        synth::power_surface(&base, None, &detect, args.mc, args.seed)?
    } else {
        let oracle = args.oracle_conditional.then(|| synth::null_conditional(&base));
        let estimates = synth::estimate_power_all_with(&base, &detect, args.mc, args.seed, oracle.as_ref())?;
        vec![synth::SurfacePoint { experiment: base, estimates }]
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for p in points {
        let line = serde_json::to_string(&p).map_err(|e| Error::Usage(e.to_string()))?;
        writeln!(out, "{line}").map_err(|source| Error::Io { path: "stdout".into(), source })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run_command(*a),
        Command::Synth(a) => synth_command(a),
        Command::Power(a) => power_command(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Usage => ExitCode::from(1),
                ErrorClass::Data => ExitCode::from(2),
            }
        }
    }
}
