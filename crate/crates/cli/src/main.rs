use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use commands::CliError;
use settings::Settings;

/// Out-of-sample inference studies and MDH tests.
#[derive(Parser)]
#[command(name = "oos-infer", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lasso interval coverage study.
    Coverage(StudyArgs),
    /// Size and power of the MDH tests on simulated series.
    Power(PowerArgs),
    /// MDH tests on a price series read from CSV.
    Mdh(MdhArgs),
    /// Per-replication Δ and ER samples for histograms.
    ErHist(StudyArgs),
    /// Zero-mean-score diagnostic on a residual series.
    DiagnoseScore(ScoreArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// Flat key=value file; flags take precedence.
    #[arg(long, allow_hyphen_values = true)]
    config: Option<PathBuf>,
    /// Comma-separated designs: fast-rates, decreasing-sparsity, multicollinear.
    #[arg(long, allow_hyphen_values = true)]
    dgp: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long = "T", allow_hyphen_values = true)]
    t: Option<String>,
    /// Comma-separated out-of-sample to in-sample ratios.
    #[arg(long, allow_hyphen_values = true)]
    pi: Option<String>,
    /// Comma-separated significance levels.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    reps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long, allow_hyphen_values = true)]
    out: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    threads: Option<String>,
    /// csv or json.
    #[arg(long, allow_hyphen_values = true)]
    format: Option<String>,
    /// Multiplier c in λ = c·√(log p / R).
    #[arg(long = "lambda-scale", allow_hyphen_values = true)]
    lambda_scale: Option<String>,
    /// auto or a fixed lag count.
    #[arg(long, allow_hyphen_values = true)]
    bandwidth: Option<String>,
}

impl StudyArgs {
    fn flags(self) -> (Vec<(&'static str, Option<String>)>, Option<PathBuf>) {
        (
            vec![
                ("dgp", self.dgp),
                ("T", self.t),
                ("pi", self.pi),
                ("alpha", self.alpha),
                ("reps", self.reps),
                ("seed", self.seed),
                ("out", self.out),
                ("threads", self.threads),
                ("format", self.format),
                ("lambda-scale", self.lambda_scale),
                ("bandwidth", self.bandwidth),
            ],
            self.config,
        )
    }
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long, allow_hyphen_values = true)]
    config: Option<PathBuf>,
    /// Comma-separated designs: garch, ar1-garch, exp1, nlma, ar4-exp1.
    #[arg(long, allow_hyphen_values = true)]
    dgp: Option<String>,
    #[arg(long = "T", allow_hyphen_values = true)]
    t: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pi: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// Comma-separated methods: ols, ridge, ap.
    #[arg(long, allow_hyphen_values = true)]
    methods: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    reps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    out: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    threads: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    format: Option<String>,
    /// Number of lags in the feature set.
    #[arg(long, allow_hyphen_values = true)]
    lags: Option<String>,
    /// Standardize features by their in-sample moments (true/false).
    #[arg(long, allow_hyphen_values = true)]
    standardize: Option<String>,
    #[arg(long = "ap-max-lag", allow_hyphen_values = true)]
    ap_max_lag: Option<String>,
}

impl PowerArgs {
    fn flags(self) -> (Vec<(&'static str, Option<String>)>, Option<PathBuf>) {
        (
            vec![
                ("dgp", self.dgp),
                ("T", self.t),
                ("pi", self.pi),
                ("alpha", self.alpha),
                ("methods", self.methods),
                ("reps", self.reps),
                ("seed", self.seed),
                ("out", self.out),
                ("threads", self.threads),
                ("format", self.format),
                ("lags", self.lags),
                ("standardize", self.standardize),
                ("ap-max-lag", self.ap_max_lag),
            ],
            self.config,
        )
    }
}

#[derive(Args)]
struct MdhArgs {
    #[arg(long, allow_hyphen_values = true)]
    config: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long, allow_hyphen_values = true)]
    input: Option<String>,
    /// Column name or zero-based index.
    #[arg(long, allow_hyphen_values = true)]
    column: Option<String>,
    /// increments, log-returns or none.
    #[arg(long, allow_hyphen_values = true)]
    transform: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pi: Option<String>,
    /// Comma-separated: ols, ridge, ap.
    #[arg(long, allow_hyphen_values = true)]
    learner: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lags: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// Label for the output row; defaults to the file stem.
    #[arg(long, allow_hyphen_values = true)]
    pair: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    standardize: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    out: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    format: Option<String>,
}

impl MdhArgs {
    fn flags(self) -> (Vec<(&'static str, Option<String>)>, Option<PathBuf>) {
        (
            vec![
                ("input", self.input),
                ("column", self.column),
                ("transform", self.transform),
                ("pi", self.pi),
                ("learner", self.learner),
                ("lags", self.lags),
                ("alpha", self.alpha),
                ("pair", self.pair),
                ("standardize", self.standardize),
                ("out", self.out),
                ("format", self.format),
            ],
            self.config,
        )
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, allow_hyphen_values = true)]
    config: Option<PathBuf>,
    /// CSV file holding residuals.
    #[arg(long, allow_hyphen_values = true)]
    input: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    column: Option<String>,
    /// mspe, mad, huber, asmspe, logcosh.
    #[arg(long, allow_hyphen_values = true)]
    loss: Option<String>,
    /// Studentized magnitude that flags a violation.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<String>,
    /// Huber kink.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    /// ASMSPE weight on positive errors.
    #[arg(long = "asym-alpha", allow_hyphen_values = true)]
    asym_alpha: Option<String>,
    /// ASMSPE weight on negative errors.
    #[arg(long = "asym-beta", allow_hyphen_values = true)]
    asym_beta: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    out: Option<String>,
}

impl ScoreArgs {
    fn flags(self) -> (Vec<(&'static str, Option<String>)>, Option<PathBuf>) {
        (
            vec![
                ("input", self.input),
                ("column", self.column),
                ("loss", self.loss),
                ("threshold", self.threshold),
                ("delta", self.delta),
                ("asym-alpha", self.asym_alpha),
                ("asym-beta", self.asym_beta),
                ("out", self.out),
            ],
            self.config,
        )
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let (name, (flags, config)) = match command {
        Command::Coverage(a) => ("coverage", a.flags()),
        Command::Power(a) => ("power", a.flags()),
        Command::Mdh(a) => ("mdh", a.flags()),
        Command::ErHist(a) => ("er-hist", a.flags()),
        Command::DiagnoseScore(a) => ("diagnose-score", a.flags()),
    };
    let settings = Settings::resolve(flags, config.as_deref())?;
    match name {
        "coverage" => commands::coverage(settings, false),
        "er-hist" => commands::coverage(settings, true),
        "power" => commands::power(settings),
        "mdh" => commands::mdh(settings),
        _ => commands::diagnose_score(settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("usage error"));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
