use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use medner::formats::{GoldFile, LogitFile, PredictionFile};
use medner::grouping::GroupingStrategy;
use medner::linking::MappingTable;
use medner::metrics::EvalMode;
use medner::pipeline::{
    evaluate, group_files, grouped_file_name, link_predictions, run_pipeline, stack_predict, stack_train, vote_files,
    Annotator, DictionaryModel, Ensemble, PipelineConfig, TieBreakKind, TokenModel, VoteKind,
};
use medner::stacking::{FeatureMode, MetaNet};
use medner::{Error, Result};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "medner", version, about = "Word-level ensembling, evaluation and linking for medication NER")]
pub struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice (vote tie-breaks, stacking init and shuffling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group subword logits into word predictions, one file per model.
    Group(GroupArgs),
    /// Combine word prediction files by voting.
    Vote(VoteArgs),
    /// Train a stacking meta-network on word prediction files.
    StackTrain(StackTrainArgs),
    /// Label word prediction files with a trained meta-network.
    StackPredict(StackPredictArgs),
    /// Score a prediction file against gold labels.
    Eval(EvalArgs),
    /// Link drug mentions to SNOMED-CT and BNF.
    Link(LinkArgs),
    /// Run the HTTP annotation service.
    Serve(ServeArgs),
    /// Group, vote and evaluate in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    #[arg(required = true, value_name = "LOGIT_FILE")]
    pub logit_files: Vec<PathBuf>,
    #[arg(long)]
    pub strategy: Option<GroupingStrategy>,
    /// Gold file whose word counts every model must cover.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PolicyArg {
    Max,
    Majority,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TieBreakArg {
    Alphabetical,
    Random,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    #[arg(required = true, value_name = "WORD_FILE")]
    pub word_files: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Votes needed under the majority policy (default: half the models, rounded up).
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long, value_enum)]
    pub tie_break: Option<TieBreakArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FeatureArg {
    OneHot,
    Logits,
}

#[derive(Debug, Args)]
pub struct StackTrainArgs {
    #[arg(required = true, value_name = "WORD_FILE")]
    pub word_files: Vec<PathBuf>,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<FeatureArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Serialized meta-network output.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StackPredictArgs {
    #[arg(required = true, value_name = "WORD_FILE")]
    pub word_files: Vec<PathBuf>,
    #[arg(long)]
    pub metanet: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// bio-strict or collapsed.
    #[arg(long)]
    pub mode: Option<EvalMode>,
    #[arg(long)]
    pub exclude_o_from_macro: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["term", "text", "pred"])))]
pub struct LinkArgs {
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// A single search term.
    #[arg(long)]
    pub term: Option<String>,
    /// Raw text, labeled with the dictionary labeler before linking.
    #[arg(long)]
    pub text: Option<String>,
    /// Prediction file; words come from `--words`.
    #[arg(long, requires = "words")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub words: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address, e.g. 127.0.0.1:8080
    #[arg(long)]
    pub bind: Option<String>,
    /// Drug mapping CSV; /link answers 503 without one
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Meta-network for ensemble=stacked
    #[arg(long)]
    pub metanet: Option<PathBuf>,
    /// Directory served for paths that match no endpoint
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(required = true, value_name = "LOGIT_FILE")]
    pub logit_files: Vec<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let config = match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let mut config: PipelineConfig =
                toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?;
            // relative paths in a config file are relative to that file
            let base = p.parent().unwrap_or(Path::new(""));
            for path in
                [&mut config.linking.mapping_path, &mut config.service.metanet_path, &mut config.service.static_dir]
                    .into_iter()
                    .flatten()
            {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
            config
        }
        None => PipelineConfig::default(),
    };
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn load_all<T>(paths: &[PathBuf], load: impl Fn(&Path) -> Result<T>) -> Result<Vec<T>> {
    paths.iter().map(|p| load(p)).collect()
}

fn print_stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn emit(value: &serde_json::Value) -> Result<()> {
    print_stdout(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => print_stdout(text),
    }
}

fn mapping_table(flag: Option<&PathBuf>, config: &PipelineConfig) -> Result<MappingTable> {
    let path = flag
        .or(config.linking.mapping_path.as_ref())
        .ok_or_else(|| Error::InvalidConfig("no mapping table: pass --mapping or set linking.mapping_path".into()))?;
    Ok(MappingTable::load_csv(path)?.0)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Group(a) => {
            let strategy = a.strategy.unwrap_or(config.grouping);
            let files = load_all(&a.logit_files, |p| LogitFile::load(p))?;
            let gold = a.gold.as_deref().map(GoldFile::load).transpose()?;
            let grouped = group_files(&files, strategy, gold.as_ref())?;
            fs::create_dir_all(&a.out_dir)?;
            let mut outputs = Vec::new();
            for (i, f) in grouped.iter().enumerate() {
                let path = a.out_dir.join(grouped_file_name(i, &f.model_id));
                f.save(&path)?;
                outputs.push(path);
            }
            emit(&json!({ "command": "group", "strategy": strategy, "outputs": outputs }))
        }
        Command::Vote(a) => {
            if let Some(p) = a.policy {
                config.vote.kind = match p {
                    PolicyArg::Max => VoteKind::Max,
                    PolicyArg::Majority => VoteKind::Majority,
                };
            }
            if a.threshold.is_some() {
                config.vote.threshold = a.threshold;
            }
            if let Some(t) = a.tie_break {
                config.vote.tie_break = match t {
                    TieBreakArg::Alphabetical => TieBreakKind::Alphabetical,
                    TieBreakArg::Random => TieBreakKind::Random,
                };
            }
            let files = load_all(&a.word_files, |p| PredictionFile::load(p))?;
            let policy = config.vote.policy(files.len())?;
            let out = vote_files(&files, &policy)?;
            out.save(&a.out)?;
            emit(&json!({ "command": "vote", "policy": policy, "output": a.out }))
        }
        Command::StackTrain(a) => {
            let st = &mut config.stacking;
            if let Some(m) = a.mode {
                st.feature_mode = match m {
                    FeatureArg::OneHot => FeatureMode::OneHot,
                    FeatureArg::Logits => FeatureMode::Logits,
                };
            }
            let t = &mut st.train;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
            t.hidden_width = a.hidden_width.unwrap_or(t.hidden_width);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            let files = load_all(&a.word_files, |p| PredictionFile::load(p))?;
            let gold = GoldFile::load(&a.gold)?;
            let (net, report) = stack_train(&files, &gold, &config.stacking)?;
            net.save(&a.out)?;
            let summary = json!({
                "command": "stack-train",
                "config": config.stacking,
                "seed": config.stacking.train.seed,
                "report": report,
                "output": a.out,
            });
            if let Some(p) = &a.report {
                fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")?;
            }
            emit(&json!({
                "command": "stack-train",
                "n_train": report.n_train,
                "n_test": report.n_test,
                "final_loss": report.epoch_losses.last(),
                "train_accuracy": report.train_accuracy,
                "test_accuracy": report.test_accuracy,
                "output": a.out,
            }))
        }
        Command::StackPredict(a) => {
            let net = MetaNet::load(&a.metanet)?;
            let files = load_all(&a.word_files, |p| PredictionFile::load(p))?;
            let out = stack_predict(&files, &net)?;
            out.save(&a.out)?;
            emit(&json!({ "command": "stack-predict", "output": a.out }))
        }
        Command::Eval(a) => {
            if let Some(m) = a.mode {
                config.metrics.mode = m;
            }
            if a.exclude_o_from_macro {
                config.metrics.include_o_in_macro = false;
            }
            let pred = PredictionFile::load(&a.pred)?;
            let gold = GoldFile::load(&a.gold)?;
            let eval = evaluate(&pred, &gold, &config.metrics)?;
            let text = match a.format {
                FormatArg::Text => eval.render(),
                FormatArg::Json => serde_json::to_string_pretty(&eval)? + "\n",
            };
            write_or_print(a.out.as_deref(), &text)
        }
        Command::Link(a) => {
            if let Some(t) = a.threshold {
                config.linking.options.threshold = t;
            }
            let table = mapping_table(a.mapping.as_ref(), &config)?;
            let options = &config.linking.options;
            let value = if let Some(term) = &a.term {
                serde_json::to_value(medner::linking::fuzzy_link(term, &table, options)?)?
            } else if let Some(text) = &a.text {
                let model: Box<dyn TokenModel> = Box::new(DictionaryModel::new("dictionary").with_drugs_from(&table));
                let annotator = Annotator::new(vec![model], config.chunking.clone())?;
                let policy = config.vote.policy(1)?;
                let annotation = annotator.annotate(text, config.grouping, Ensemble::Vote(policy))?;
                let links = medner::linking::link_document(&annotation.words, &annotation.labels, &table, options)?;
                json!({ "annotation": annotation, "links": links })
            } else {
                let pred = PredictionFile::load(a.pred.as_ref().expect("clap group"))?;
                let words = GoldFile::load(a.words.as_ref().expect("clap requires"))?;
                serde_json::to_value(link_predictions(&pred, &words, &table, options)?)?
            };
            write_or_print(a.out.as_deref(), &(serde_json::to_string_pretty(&value)? + "\n"))
        }
        Command::Serve(a) => {
            if let Some(b) = a.bind {
                config.service.bind = b;
            }
            if a.mapping.is_some() {
                config.linking.mapping_path = a.mapping;
            }
            if a.metanet.is_some() {
                config.service.metanet_path = a.metanet;
            }
            if a.static_dir.is_some() {
                config.service.static_dir = a.static_dir;
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::service::serve(&config))
        }
        Command::Pipeline(a) => {
            let files = load_all(&a.logit_files, |p| LogitFile::load(p))?;
            let gold = a.gold.as_deref().map(GoldFile::load).transpose()?;
            let summary = run_pipeline(&config, &files, gold.as_ref(), &a.out_dir)?;
            emit(&json!({ "command": "pipeline", "outputs": summary }))
        }
    }
}
