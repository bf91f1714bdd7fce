use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stlth_cli::commands::{cmd_compare, cmd_imp, cmd_rewind_sweep, cmd_stylize, cmd_train, StylizeArgs};
use stlth_cli::config::{EncoderInit, Mode, Model, ScopeArg, StrategyArg};
use stlth_cli::report::pct;
use stlth_cli::{CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "stlth", version, about = "Lottery-ticket pruning experiments on toy style-transfer networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense model and score it.
    Train(Overrides),
    /// Iterative magnitude pruning with rewinding.
    Imp(Overrides),
    /// Compare pruning strategies from shared dense runs.
    Compare(Overrides),
    /// IMP at rewind points 0, 10, 20, 30 and 40 percent of training.
    RewindSweep(Overrides),
    /// Stylize one content/style pair with a saved model.
    Stylize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Flags override the TOML file, which overrides the defaults.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    scope: Option<ScopeArg>,
    /// Repeat or comma-separate for several strategies.
    #[arg(long, value_enum, value_delimiter = ',')]
    strategy: Vec<StrategyArg>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    rewind_frac: Option<f64>,
    #[arg(long)]
    prune_frac: Option<f64>,
    #[arg(long)]
    target_sparsity: Option<f64>,
    /// Grid rounds reported by `compare`.
    #[arg(long, value_delimiter = ',')]
    rounds: Vec<u32>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Image folder with content/ and style/ subfolders, or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    width_divisor: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    pretrain_iters: Option<usize>,
    #[arg(long, value_enum)]
    encoder_init: Option<EncoderInit>,
    #[arg(long)]
    test_pairs: Option<usize>,
    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,
}

macro_rules! apply {
    ($cfg:ident, $o:ident: $($field:ident),*) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
    };
}

impl Overrides {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let o = self;
        apply!(cfg, o: model, mode, scope, iters, rewind_frac, prune_frac, target_sparsity, trials, seed, data, out,
            image_size, width_divisor, batch_size, lr, pretrain_iters, encoder_init, test_pairs);
        if !o.strategy.is_empty() {
            cfg.strategies = o.strategy.clone();
        }
        if !o.rounds.is_empty() {
            cfg.rounds = o.rounds.clone();
        }
        cfg.svg |= o.svg;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(o) => {
            let cfg = o.resolve()?;
            let s = cmd_train(&cfg)?;
            for (t, r) in s.reports.iter().enumerate() {
                println!("trial {t}: content {:.4} style {:.4} total {:.4}", r.content_error, r.style_error, r.total);
            }
        }
        Command::Imp(o) => {
            let s = cmd_imp(&o.resolve()?)?;
            println!("E_Best(Sparsity) {}  S_Extreme {}%", s.e_best, pct(s.s_extreme));
        }
        Command::Compare(o) => {
            let s = cmd_compare(&o.resolve()?)?;
            println!("full model total {:.3}", s.full.total);
        }
        Command::RewindSweep(o) => {
            for row in cmd_rewind_sweep(&o.resolve()?)? {
                println!(
                    "rewind {:.0}%: E_Best {}  S_Extreme {}%",
                    100.0 * row.ratio,
                    row.summary.e_best,
                    pct(row.summary.s_extreme)
                );
            }
        }
        Command::Stylize { checkpoint, mask, content, style, output } => {
            cmd_stylize(&StylizeArgs { checkpoint, mask, content, style, output })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
