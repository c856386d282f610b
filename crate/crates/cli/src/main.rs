//! Command-line front end.
//!
//! Four subcommands: `kb-select` previews knowledge selection for a
//! paragraph file, `train` fits a model and writes its artifacts, `eval`
//! scores a checkpoint, `predict` decodes unlabeled inputs. Diagnostics go
//! to stderr; results go to stdout and, when `--out` is set, to files.
//! `ROOFER_LOG=quiet|info|debug` sets verbosity.

mod config;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "roofer",
    version,
    about = "Knowledge-fused dual-encoder: selection preview, training, evaluation, prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show selected triples, verbalized units, and token stats per paragraph
    KbSelect {
        #[command(flatten)]
        common: CommonOpts,
        /// Report every selection x expansion combination (6 sections)
        #[arg(long)]
        sweep: bool,
    },
    /// Train and write checkpoint, loss log, vocabulary, resolved config
    Train {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Score a checkpoint on a labeled dataset
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint to score (default: <out>/model.ckpt)
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Emit predictions for unlabeled inputs
    Predict {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint to load (default: <out>/model.ckpt)
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonOpts {
    /// Config file: one dotted `key = value` per line
    #[arg(long)]
    config: Option<PathBuf>,
    /// Knowledge base: head, relation, tail per line, tab separated
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Dataset (JSONL; plain paragraphs for kb-select)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for init and shuffling
    #[arg(long)]
    seed: Option<u64>,
    /// Triple verbalization: exp0 | exp1 | exp2
    #[arg(long)]
    expansion: Option<String>,
    /// Triple selection: no_tail | has_tail
    #[arg(long)]
    selection: Option<String>,
    /// Segment-id scheme: type1 | type2
    #[arg(long)]
    segmentation: Option<String>,
    /// Fusion layer: linear | recurrent | te
    #[arg(long)]
    fusion: Option<String>,
    /// Fusion stack depth
    #[arg(long, value_name = "K")]
    fusion_depth: Option<usize>,
    /// Fusion-group learning-rate multiplier
    #[arg(long, value_name = "X")]
    fusion_lr_mult: Option<f64>,
    /// Freeze the knowledge encoder and cache unit encodings
    #[arg(long, value_name = "BOOL")]
    cached_kb: Option<bool>,
}

impl CommonOpts {
    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::desk_default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        for (key, value) in [
            ("model.expansion", &self.expansion),
            ("model.selection", &self.selection),
            ("model.seg", &self.segmentation),
            ("model.fusion", &self.fusion),
        ] {
            if let Some(value) = value {
                cfg.apply(key, value)?;
            }
        }
        if let Some(seed) = self.seed {
            cfg.apply("train.seed", &seed.to_string())?;
        }
        if let Some(k) = self.fusion_depth {
            cfg.apply("model.fusion_depth", &k.to_string())?;
        }
        if let Some(x) = self.fusion_lr_mult {
            cfg.apply("train.fusion_lr_multiplier", &x.to_string())?;
        }
        if let Some(b) = self.cached_kb {
            cfg.apply("model.cached_kb", &b.to_string())?;
        }
        if let Some(p) = &self.kb {
            cfg.kb = Some(p.clone());
        }
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
        }
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        Ok(cfg)
    }
}

mod logging {
    use std::sync::OnceLock;

    fn level() -> u8 {
        static LEVEL: OnceLock<u8> = OnceLock::new();
        *LEVEL.get_or_init(|| match std::env::var("ROOFER_LOG").as_deref() {
            Ok("quiet") => 0,
            Ok("debug") => 2,
            _ => 1,
        })
    }

    pub fn info(msg: String) {
        if level() >= 1 {
            eprintln!("[info] {msg}");
        }
    }

    pub fn debug(msg: String) {
        if level() >= 2 {
            eprintln!("[debug] {msg}");
        }
    }
}

fn run_cli() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::KbSelect { common, sweep } => run::kb_select(&common.resolve()?, sweep),
        Command::Train { common } => run::train_cmd(&common.resolve()?),
        Command::Eval { common, ckpt } => run::eval_cmd(&common.resolve()?, ckpt.as_deref()),
        Command::Predict { common, ckpt } => run::predict_cmd(&common.resolve()?, ckpt.as_deref()),
    }
}

fn main() {
    if let Err(err) = run_cli() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
