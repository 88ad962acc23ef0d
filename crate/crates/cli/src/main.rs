//! `xtypes`: batch pipeline for answer type prediction.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xtypes_core::clustering::SWEEP_KS;
use xtypes_core::evaluate::{render_table, TableRow};
use xtypes_core::fixtures::{generate_fixture, FixtureSpec};
use xtypes_core::kg_store::ntriples::{convert_ntriples, ConvertConfig};
use xtypes_core::pipeline::{
    cmd_evaluate, cmd_sweep, ConfigOverrides, Pipeline, PipelineConfig, PipelineError, Stage,
};
use xtypes_core::{EvalMode, Metric, ReprKind};

#[derive(Parser)]
#[command(name = "xtypes", version, about = "Answer type prediction over knowledge graph type hierarchies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert N-Triples dumps into the KG tables.
    ConvertNt(ConvertArgs),
    /// Load and validate the KG and question files.
    Ingest(StageArgs),
    /// Build the type representation matrix and description documents.
    BuildRepr(StageArgs),
    /// Cluster the type representations.
    Cluster(StageArgs),
    /// Train the category, matcher, ranker and fusion models.
    Train(StageArgs),
    /// Predict answer types for the test questions.
    Predict(StageArgs),
    /// Score predictions against gold answers.
    Evaluate(EvaluateArgs),
    /// Validation metric for several cluster counts.
    Sweep(SweepArgs),
    /// Every stage from ingest to evaluate.
    Run(StageArgs),
    /// Write a synthetic KG, question files and a config.
    Fixture(FixtureArgs),
}

#[derive(Args, Clone, Default)]
struct StageArgs {
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// question_tfidf, jaccard, loaded_embedding or description_embedding.
    #[arg(long)]
    repr: Option<ReprKind>,
    #[arg(long)]
    k: Option<usize>,
    /// Clusters opened per question.
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Cluster score file replacing the built-in matcher.
    #[arg(long)]
    external_scores: Option<PathBuf>,
    /// ndcg or mrr.
    #[arg(long)]
    metric: Option<Metric>,
    /// type_only or end_to_end.
    #[arg(long)]
    mode: Option<EvalMode>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Output directory for the TSV tables.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with predicate lists, language and prefixes.
    #[arg(long, conflicts_with = "wikidata")]
    predicates: Option<PathBuf>,
    /// Use instance-of / subclass-of direct claims.
    #[arg(long)]
    wikidata: bool,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Score this predictions file instead of running the pipeline.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Gold file; defaults to the configured test file.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// KG directory; defaults to the configured one.
    #[arg(long)]
    kg_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML fixture spec; defaults to the 27-type tree.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl StageArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            representation: self.repr,
            k: self.k,
            b: self.b,
            seed: self.seed,
            artifacts: self.artifacts.clone(),
            external_scores: self.external_scores.clone(),
            metric: self.metric,
            mode: self.mode,
        }
    }

    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

fn config_error(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn data_error(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn run_stage(args: &StageArgs, last: Stage) -> Result<Pipeline, PipelineError> {
    let mut p = Pipeline::open(args.load()?)?;
    p.run_until(last)?;
    for (stage, status) in p.statuses() {
        println!("{stage}: {status}");
    }
    Ok(p)
}

fn print_report(p: &Pipeline) -> Result<(), PipelineError> {
    let report = p.load_report()?;
    let table = render_table(
        report.metric,
        &[TableRow {
            method: report.method.clone(),
            type_only: Some(&report.type_only),
            end_to_end: Some(&report.end_to_end),
        }],
    );
    print!("{table}");
    let chosen = match p.config().eval.mode {
        EvalMode::TypeOnly => &report.type_only,
        EvalMode::EndToEnd => &report.end_to_end,
    };
    println!("{} {}: {:.4}", chosen.mode, report.metric, chosen.headline());
    println!("artifacts: {}", p.dir().display());
    Ok(())
}

fn convert(args: &ConvertArgs) -> Result<(), PipelineError> {
    let cfg = match (&args.predicates, args.wikidata) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(config_error)?;
            toml::from_str::<ConvertConfig>(&text).map_err(config_error)?
        }
        (None, true) => ConvertConfig::wikidata(),
        (None, false) => ConvertConfig::default(),
    };
    let report = convert_ntriples(&args.inputs, &cfg, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(data_error)?);
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<(), PipelineError> {
    let Some(predictions) = &args.predictions else {
        let p = run_stage(&args.stage, Stage::Evaluate)?;
        return print_report(&p);
    };
    let cfg = args.stage.load()?;
    let gold = args
        .gold
        .clone()
        .or(cfg.paths.test.clone())
        .ok_or_else(|| config_error("--gold or paths.test is required"))?;
    let kg_dir = args.kg_dir.clone().unwrap_or(cfg.paths.kg_dir.clone());
    let report = cmd_evaluate(&kg_dir, predictions, &gold, cfg.eval.mode, cfg.eval.metric)?;
    let row = TableRow {
        method: predictions
            .file_name()
            .map_or_else(|| predictions.display().to_string(), |n| n.to_string_lossy().into_owned()),
        type_only: (cfg.eval.mode == EvalMode::TypeOnly).then_some(&report),
        end_to_end: (cfg.eval.mode == EvalMode::EndToEnd).then_some(&report),
    };
    print!("{}", render_table(cfg.eval.metric, &[row]));
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), PipelineError> {
    let cfg = args.stage.load()?;
    let ks = args.ks.clone().unwrap_or(SWEEP_KS.to_vec());
    if ks.is_empty() || ks.contains(&0) {
        return Err(config_error("--ks needs positive cluster counts"));
    }
    let report = cmd_sweep(cfg, &ks)?;
    print!("{}", report.render());
    Ok(())
}

fn fixture(args: &FixtureArgs) -> Result<(), PipelineError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(config_error)?;
            toml::from_str::<FixtureSpec>(&text).map_err(config_error)?
        }
        None => FixtureSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let paths = generate_fixture(&spec, &args.out).map_err(config_error)?;
    let mut cfg = PipelineConfig::default();
    cfg.paths.test = Some(PathBuf::from("test.json"));
    let config_path = args.out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()).map_err(data_error)?;
    println!("kg: {}", paths.kg_dir.display());
    println!("train: {}", paths.train.display());
    println!("test: {}", paths.test.display());
    println!("manifest: {}", paths.manifest.display());
    println!("config: {}", config_path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), PipelineError> {
    let stage = |args: &StageArgs, last| run_stage(args, last).map(drop);
    match &cli.command {
        Command::ConvertNt(args) => convert(args),
        Command::Ingest(args) => stage(args, Stage::Ingest),
        Command::BuildRepr(args) => stage(args, Stage::BuildRepr),
        Command::Cluster(args) => stage(args, Stage::Cluster),
        Command::Train(args) => stage(args, Stage::Train),
        Command::Predict(args) => stage(args, Stage::Predict),
        Command::Evaluate(args) => evaluate(args),
        Command::Sweep(args) => sweep(args),
        Command::Run(args) => {
            let p = run_stage(args, Stage::Evaluate)?;
            print_report(&p)
        }
        Command::Fixture(args) => fixture(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
