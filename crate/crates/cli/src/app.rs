//! Command-line interface.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dico_core::engine::decode;
use dico_core::theory::{verify_theorem, VerifyParams};
use dico_core::{
    DecodeAbort, DecodeConfig, DecodeMetrics, DecodeMode, DecodeResult, Error, MarkovOracle, MaskPredictor,
    Strategy, TokenId,
};
use serde::Serialize;

use crate::bridge::ServerProcess;
use crate::compare::{render_table, run_batch, BatchParams};
use crate::export::{self, Format};
use crate::source::{greedy_prefix, parse_tokens, OracleSource};
use crate::strategy::{self, Ablation, StrategySpec};
use crate::{config_file, trace_io};

/// A failed command: `Usage` exits with 2, `Runtime` with 1.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn classify_core(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(_) => Failure::Usage(e.into()),
        _ => Failure::Runtime(e.into()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "dico", version, about = "Divide, Conquer and Finalize decoding for masked diffusion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one response and report its metrics.
    Run(RunArgs),
    /// Compare strategies over a batch of random chains.
    Compare(CompareArgs),
    /// Check the total-variation bound against exact enumeration.
    VerifyTheorem(VerifyArgs),
    /// Turn a trace into plot-ready CSV.
    ExportTrace(ExportArgs),
    /// Answer bridge requests on stdin from a chain oracle.
    Serve(ServeArgs),
}

/// Hyperparameters shared by `run` and `compare`. Flags override the config
/// file, which overrides the defaults. Semi-autoregressive mode defaults to
/// four seeds.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` file; see the README for keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DICO_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub tau3: Option<f64>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub r_gate: Option<f64>,
    /// `non-ar` or `semi-ar`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Trajectory weight fixed at 1.
    #[arg(long)]
    pub no_tg: bool,
    /// Finalize without the logit-margin rule.
    #[arg(long)]
    pub no_lm: bool,
    /// Threshold rule instead of the adaptive parallel set in Conquer.
    #[arg(long, value_name = "THRESHOLD")]
    pub fixed_parallel: Option<f64>,
}

impl ConfigArgs {
    pub fn build(&self) -> anyhow::Result<DecodeConfig> {
        let mut assignments = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                config_file::parse(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => Vec::new(),
        };
        let mut flag = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                assignments.push((0, key.to_string(), v));
            }
        };
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("alpha", self.alpha.map(|v| v.to_string()));
        flag("beta", self.beta.map(|v| v.to_string()));
        flag("tau1", self.tau1.map(|v| v.to_string()));
        flag("tau2", self.tau2.map(|v| v.to_string()));
        flag("tau3", self.tau3.map(|v| v.to_string()));
        flag("n_seeds", self.n_seeds.map(|v| v.to_string()));
        flag("t_max", self.t_max.map(|v| v.to_string()));
        flag("r_gate", self.r_gate.map(|v| v.to_string()));
        flag("mode", self.mode.clone());
        flag("block_size", self.block_size.map(|v| v.to_string()));

        let mut mode = DecodeMode::NonAutoregressive;
        for (_, key, value) in assignments.iter().filter(|a| a.1 == "mode") {
            mode = config_file::parse_mode(value).with_context(|| key.to_string())?;
        }
        let mut cfg = match mode {
            DecodeMode::NonAutoregressive => DecodeConfig::default(),
            DecodeMode::SemiAutoregressive => DecodeConfig::semi_autoregressive(),
        };
        for (line, key, value) in &assignments {
            config_file::apply(&mut cfg, key, value).with_context(|| match line {
                0 => format!("--{}", key.replace('_', "-")),
                l => format!("config line {l}"),
            })?;
        }
        if self.no_tg {
            Ablation::NoTrajectoryGuidance.apply(&mut cfg);
        }
        if self.no_lm {
            Ablation::NoLogitMargin.apply(&mut cfg);
        }
        if let Some(t) = self.fixed_parallel {
            Ablation::FixedParallel(t).apply(&mut cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Plain `dico` runs block-wise when the configured mode is semi-AR.
fn effective(mut spec: StrategySpec, cfg: &DecodeConfig) -> StrategySpec {
    if spec.strategy == Strategy::Dico && cfg.mode == DecodeMode::SemiAutoregressive {
        spec.strategy = Strategy::SemiAr {
            inner: Box::new(Strategy::Dico),
            block_size: cfg.block_size,
        };
    }
    spec
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `gen:V=4,n=32,kappa=8[,seed=S][,m=M]`, `file:<path>` or `bridge:<command>`.
    #[arg(long)]
    pub oracle: String,
    /// `vanilla`, `topk:<k>`, `fixed[:<t>]`, `dico[:<ablations>]` or `semi-ar:<inner>`.
    #[arg(long, default_value = "dico")]
    pub strategy: String,
    /// k for a bare `topk`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Threshold for a bare `fixed`.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Comma-separated prompt token ids.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Response length; required for a bridge.
    #[arg(long)]
    pub length: Option<usize>,
    /// Write the trace here as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Write a generated chain here as an oracle file.
    #[arg(long)]
    pub save_oracle: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub strategy: String,
    pub prompt: Vec<TokenId>,
    pub response_length: usize,
    pub final_sequence: Vec<TokenId>,
    #[serde(flatten)]
    pub metrics: DecodeMetrics,
}

fn run_strategy_spec(args: &RunArgs, cfg: &DecodeConfig) -> anyhow::Result<StrategySpec> {
    let text = match (args.strategy.as_str(), args.k, args.threshold) {
        ("topk", Some(k), _) => format!("topk:{k}"),
        ("fixed", _, Some(t)) => format!("fixed:{t}"),
        (_, Some(_), _) if !args.strategy.starts_with("topk") => bail!("--k applies to topk only"),
        (_, _, Some(_)) if !args.strategy.starts_with("fixed") => bail!("--threshold applies to fixed only"),
        (s, _, _) => s.to_string(),
    };
    Ok(effective(strategy::parse(&text, cfg.block_size)?, cfg))
}

enum Predictor {
    Oracle(MarkovOracle),
    Bridge(ServerProcess),
}

impl Predictor {
    fn as_dyn(&self) -> &dyn MaskPredictor {
        match self {
            Predictor::Oracle(o) => o,
            Predictor::Bridge(b) => b,
        }
    }
}

/// Predictor, prompt and response length for `run`.
fn resolve_source(args: &RunArgs, cfg: &DecodeConfig) -> Result<(Predictor, Vec<TokenId>, usize), Failure> {
    let source: OracleSource = args.oracle.parse().usage()?;
    let prompt = args.prompt.as_deref().map(parse_tokens).transpose().usage()?;
    match source {
        OracleSource::Generated(mut spec) => {
            if let Some(p) = &prompt {
                if spec.prompt_len != 0 && spec.prompt_len != p.len() {
                    return Err(Failure::Usage(anyhow!(
                        "--prompt has {} tokens but the generator has m={}",
                        p.len(),
                        spec.prompt_len
                    )));
                }
                spec.prompt_len = p.len();
            }
            if args.length.is_some_and(|n| n != spec.length) {
                return Err(Failure::Usage(anyhow!("--length conflicts with the generator's n")));
            }
            let oracle = spec.build(cfg.rng_seed).usage()?;
            let prompt = prompt.unwrap_or_else(|| greedy_prefix(&oracle, spec.prompt_len));
            if let Some(path) = &args.save_oracle {
                trace_io::save_oracle(path, &oracle).runtime()?;
            }
            Ok((Predictor::Oracle(oracle), prompt, spec.length))
        }
        OracleSource::File(path) => {
            let oracle = trace_io::load_oracle(&path).runtime()?;
            let prompt = prompt.unwrap_or_default();
            let n = match args.length {
                Some(n) => n,
                None => oracle.length().checked_sub(prompt.len()).filter(|&n| n > 0).ok_or_else(|| {
                    Failure::Usage(anyhow!("oracle of length {} leaves no response after the prompt", oracle.length()))
                })?,
            };
            if prompt.len() + n != oracle.length() {
                return Err(Failure::Usage(anyhow!(
                    "prompt {} + response {n} does not match oracle length {}",
                    prompt.len(),
                    oracle.length()
                )));
            }
            Ok((Predictor::Oracle(oracle), prompt, n))
        }
        OracleSource::Bridge(command) => {
            let n = args
                .length
                .ok_or_else(|| Failure::Usage(anyhow!("a bridge oracle needs --length")))?;
            let server = ServerProcess::spawn(&command)
                .with_context(|| format!("starting {command:?}"))
                .runtime()?;
            Ok((Predictor::Bridge(server), prompt.unwrap_or_default(), n))
        }
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(target: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut out: Box<dyn Write> = match target {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<RunReport, Failure> {
    let cfg = args.config.build().usage()?;
    let spec = run_strategy_spec(args, &cfg).usage()?;
    let cfg = spec.config(&cfg);
    cfg.validate().usage()?;
    let (predictor, prompt, n) = resolve_source(args, &cfg)?;
    let outcome = decode(&spec.strategy, &prompt, n, predictor.as_dyn(), &cfg);
    let mut result: DecodeResult = match outcome {
        Ok(r) => r,
        Err(DecodeAbort { error, partial_trace }) => {
            if let Some(path) = &args.trace {
                trace_io::save_trace(path, &partial_trace).runtime()?;
            }
            return Err(classify_core(error));
        }
    };
    if let Predictor::Oracle(oracle) = &predictor {
        result.score_with(oracle, &prompt).runtime()?;
    }
    if let Some(path) = &args.trace {
        trace_io::save_trace(path, &result.trace).runtime()?;
    }
    let report = RunReport {
        strategy: spec.label,
        prompt,
        response_length: n,
        final_sequence: result.final_sequence,
        metrics: result.metrics,
    };
    write_json(args.metrics.as_deref(), &report).runtime()?;
    Ok(report)
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 4)]
    pub vocab: usize,
    /// Response length.
    #[arg(long, default_value_t = 32)]
    pub length: usize,
    #[arg(long, default_value_t = 8.0)]
    pub kappa: f64,
    /// Prompt length; prompts are the chain's greedy path.
    #[arg(long, default_value_t = 0)]
    pub prompt_len: usize,
    /// Comma-separated strategy specs.
    #[arg(long, default_value = "vanilla,topk:8,fixed,dico")]
    pub strategies: String,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    let cfg = args.config.build().usage()?;
    let specs: Vec<StrategySpec> = strategy::parse_list(&args.strategies, cfg.block_size)
        .usage()?
        .into_iter()
        .map(|s| effective(s, &cfg))
        .collect();
    for s in &specs {
        s.config(&cfg).validate().with_context(|| s.label.clone()).usage()?;
    }
    let params = BatchParams {
        trials: args.trials,
        seed: cfg.rng_seed,
        vocab: args.vocab,
        n: args.length,
        kappa: args.kappa,
        prompt_len: args.prompt_len,
    };
    if params.trials == 0 {
        return Err(Failure::Usage(anyhow!("--trials must be at least 1")));
    }
    if params.vocab < 2 || params.n == 0 || params.prompt_len + params.n < 2 || !(params.kappa > 0.0) {
        return Err(Failure::Usage(anyhow!("need vocab >= 2, length >= 1 and kappa > 0")));
    }
    let report = run_batch(&params, &specs, &cfg).runtime()?;
    print!("{}", render_table(&report));
    if let Some(path) = &args.json {
        write_json(Some(path), &report).runtime()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, env = "DICO_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub vocab_min: usize,
    #[arg(long, default_value_t = 5)]
    pub vocab_max: usize,
    #[arg(long, default_value_t = 2)]
    pub length_min: usize,
    #[arg(long, default_value_t = 8)]
    pub length_max: usize,
    /// JSON-lines report; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine<'a> {
    Trial(&'a dico_core::theory::TrialRecord),
    Sweep(&'a dico_core::theory::SweepRecord),
    Summary {
        trials: usize,
        violations: usize,
        max_tvd_over_bound: f64,
        sweep_pass: bool,
        pass: bool,
    },
}

/// Runs the check; `Ok(true)` when every trial and the sweep pass.
pub fn cmd_verify(args: &VerifyArgs) -> Result<bool, Failure> {
    let params = VerifyParams {
        trials: args.trials,
        vocab: (args.vocab_min, args.vocab_max),
        length: (args.length_min, args.length_max),
        seed: args.seed,
    };
    params.validate().usage()?;
    let report = verify_theorem(&params).map_err(classify_core)?;
    let max_ratio = report
        .trials
        .iter()
        .filter(|t| t.bound > 0.0)
        .map(|t| t.tvd / t.bound)
        .fold(0.0, f64::max);
    let mut out: Box<dyn Write> = match &args.report {
        Some(path) => Box::new(create(path).runtime()?),
        None => Box::new(io::stdout().lock()),
    };
    let mut line = |l: &ReportLine| -> anyhow::Result<()> {
        serde_json::to_writer(&mut out, l)?;
        writeln!(out)?;
        Ok(())
    };
    for t in &report.trials {
        line(&ReportLine::Trial(t)).runtime()?;
    }
    for s in &report.sweep {
        line(&ReportLine::Sweep(s)).runtime()?;
    }
    line(&ReportLine::Summary {
        trials: report.trials.len(),
        violations: report.violations(),
        max_tvd_over_bound: max_ratio,
        sweep_pass: report.sweep_pass,
        pass: report.all_pass(),
    })
    .runtime()?;
    out.flush().runtime()?;
    eprintln!(
        "{} trials, {} violations, max tvd/bound {:.4}, sweep {}",
        report.trials.len(),
        report.violations(),
        max_ratio,
        if report.sweep_pass { "converges" } else { "does not converge" }
    );
    Ok(report.all_pass())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportFormat {
    Scatter,
    Heatmap,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Trace file written by `run --trace`.
    pub trace: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Scatter)]
    pub format: ExportFormat,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_export(args: &ExportArgs) -> Result<(), Failure> {
    let trace = trace_io::load_trace(&args.trace).runtime()?;
    let format = match args.format {
        ExportFormat::Scatter => Format::Scatter,
        ExportFormat::Heatmap => Format::Heatmap,
    };
    // validate before touching the output file
    export::response_length(&trace).runtime()?;
    match &args.out {
        Some(path) => export::write(create(path).runtime()?, &trace, format),
        None => export::write(io::stdout().lock(), &trace, format),
    }
    .runtime()
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// `gen:...` or `file:<path>`.
    #[arg(long)]
    pub oracle: String,
    #[arg(long, env = "DICO_SEED", default_value_t = 0)]
    pub seed: u64,
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), Failure> {
    let oracle = match args.oracle.parse::<OracleSource>().usage()? {
        OracleSource::Generated(spec) => spec.build(args.seed).usage()?,
        OracleSource::File(path) => trace_io::load_oracle(&path).runtime()?,
        OracleSource::Bridge(_) => return Err(Failure::Usage(anyhow!("serve needs a chain oracle"))),
    };
    crate::bridge::serve(io::stdin().lock(), io::stdout().lock(), &oracle).runtime()?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<ExitCode, Failure> {
    match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| ExitCode::SUCCESS),
        Command::Compare(a) => cmd_compare(a).map(|_| ExitCode::SUCCESS),
        Command::VerifyTheorem(a) => cmd_verify(a).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(1) }),
        Command::ExportTrace(a) => cmd_export(a).map(|_| ExitCode::SUCCESS),
        Command::Serve(a) => cmd_serve(a).map(|_| ExitCode::SUCCESS),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code())
        }
    }
}
