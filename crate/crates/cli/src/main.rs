use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pshape::config::{Experiment, ExperimentConfig, CONFIG_KEYS};
use pshape::pipeline::{Pipeline, Stage, StageReport};
use pshape::rl::FeatureMode;
use pshape::shaping::SchemeKind;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "pshape", version, about = "Predictive-coding reward shaping experiments")]
#[command(after_long_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Random-exploration trajectories.
    Collect(StageArgs),
    /// Train the predictive-coding encoder.
    TrainCpc(StageArgs),
    /// Cluster embeddings and mark the goal cluster.
    Cluster(StageArgs),
    /// Train a PPO policy under the configured reward scheme.
    TrainRl(StageArgs),
    /// Run an evaluation experiment.
    Eval(StageArgs),
    /// List every config key.
    Keys,
}

#[derive(Args, Debug, Clone)]
struct StageArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long, env = "PSHAPE_OUT")]
    out: Option<PathBuf>,
    /// Comma-separated seeds; several seeds run as parallel processes.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    #[arg(long, value_parser = parse_feature_mode)]
    feature_mode: Option<FeatureMode>,
    #[arg(long)]
    total_steps: Option<usize>,
}

fn parse_feature_mode(s: &str) -> Result<FeatureMode, String> {
    match s {
        "raw" => Ok(FeatureMode::Raw),
        "embedding" => Ok(FeatureMode::Embedding),
        _ => Err(format!("unknown feature mode `{s}` (raw|embedding)")),
    }
}

impl StageArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(e) = self.experiment {
            c.eval.experiment = e;
        }
        if let Some(k) = self.scheme {
            c.scheme.kind = k;
        }
        if let Some(m) = self.feature_mode {
            c.ppo.feature_mode = m;
        }
        if let Some(t) = self.total_steps {
            c.ppo.total_steps = t;
        }
        c.validate()?;
        Ok(c)
    }
}

fn stage_of(cmd: &Cmd) -> Option<(Stage, &StageArgs)> {
    match cmd {
        Cmd::Collect(a) => Some((Stage::Collect, a)),
        Cmd::TrainCpc(a) => Some((Stage::TrainCpc, a)),
        Cmd::Cluster(a) => Some((Stage::Cluster, a)),
        Cmd::TrainRl(a) => Some((Stage::TrainRl, a)),
        Cmd::Eval(a) => Some((Stage::Eval, a)),
        Cmd::Keys => None,
    }
}

fn run_stage(stage: Stage, args: &StageArgs) -> Result<Vec<StageReport>> {
    let config = args.load()?;
    let out = match (&args.out, &config.out) {
        (Some(o), _) | (None, Some(o)) => o.clone(),
        (None, None) => bail!("no output directory: pass --out, set PSHAPE_OUT or `out` in the config"),
    };
    // The compare experiment loops over seeds itself.
    let seeds = args.seeds.clone().unwrap_or_else(|| config.seeds.clone());
    if stage == Stage::Eval && config.eval.experiment == Experiment::Compare {
        let mut c = config;
        c.seeds = seeds;
        let first = c.seeds[0];
        return Ok(vec![Pipeline::new(c, out, first)?.run(stage)?]);
    }
    if let [seed] = seeds[..] {
        return Ok(vec![Pipeline::new(config, out, seed)?.run(stage)?]);
    }
    // Fail fast before spawning anything.
    for &s in &seeds {
        Pipeline::new(config.clone(), &out, s)?.check_inputs(stage)?;
    }
    let exe = std::env::current_exe().context("locating own executable")?;
    let forwarded: Vec<String> = std::env::args().skip(1).collect();
    let children = seeds
        .iter()
        .map(|s| {
            let mut argv = strip_seeds(&forwarded);
            argv.extend(["--seeds".into(), s.to_string(), "--out".into(), out.display().to_string()]);
            Command::new(&exe).args(argv).stdout(std::process::Stdio::piped()).spawn().with_context(|| format!("spawning seed {s}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (seed, child) in seeds.iter().zip(children) {
        let output = child.wait_with_output()?;
        if !output.status.success() {
            failed.push(*seed);
            continue;
        }
        for line in String::from_utf8_lossy(&output.stdout).lines() {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(line) {
                reports.push(v);
            }
        }
    }
    if !failed.is_empty() {
        bail!("{} failed for seeds {failed:?}", stage.name());
    }
    for r in reports {
        println!("{r}");
    }
    Ok(Vec::new())
}

/// Drops `--seeds X` / `--seeds=X` and `--out X` / `--out=X` from forwarded args.
fn strip_seeds(args: &[String]) -> Vec<String> {
    let mut v = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--seeds" || a == "--out" {
            skip = true;
        } else if !(a.starts_with("--seeds=") || a.starts_with("--out=")) {
            v.push(a.clone());
        }
    }
    v
}

fn error_json(stage: Option<Stage>, e: &anyhow::Error) -> serde_json::Value {
    let kind = match e.downcast_ref::<pshape::Error>() {
        Some(pshape::Error::MissingArtifact { stage, path }) => {
            return json!({"error": "missing-artifact", "stage": stage, "path": path, "message": format!("{e:#}")});
        }
        Some(pshape::Error::Config(_)) => "config",
        Some(pshape::Error::Diverged(_)) => "diverged",
        Some(pshape::Error::Io(_)) => "io",
        Some(_) => "invalid",
        None => "error",
    };
    json!({"error": kind, "stage": stage.map(Stage::name), "message": format!("{e:#}")})
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let Some((stage, args)) = stage_of(&cli.command) else {
        let _ = writeln!(std::io::stdout(), "{CONFIG_KEYS}");
        return ExitCode::SUCCESS;
    };
    match run_stage(stage, args) {
        Ok(reports) => {
            for r in reports {
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(Some(stage), &e));
            ExitCode::FAILURE
        }
    }
}
