use std::path::PathBuf;

use bookend_core::corpus::{load_corpus, CorpusFormat};
use bookend_core::metrics::bleu::Smoothing;
use bookend_core::metrics::{evaluate_corpus, render_table, AggregateReport, EvalOptions};
use clap::Args;
use serde::Serialize;
use serde_json::json;

use crate::config::{BackendArgs, BackendConfig, FileConfig, MarkerArgs, SmoothingKind};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Story file to score; repeatable, one table row each.
    #[arg(long = "stories", required = true)]
    pub stories: Vec<PathBuf>,
    /// Row label per --stories file, in order. Defaults to the file stem.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Reference stories aligned with every --stories file, enables BLEU.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// JSON report path.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub smoothing: Option<SmoothingKind>,
    #[command(flatten)]
    pub markers: MarkerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    command: &'static str,
    references: Option<&'a PathBuf>,
    options: EvalOptions,
    backend: &'a BackendConfig,
}

#[derive(Serialize)]
struct Row {
    label: String,
    stories: PathBuf,
    report: AggregateReport,
}

fn load(path: &PathBuf) -> CliResult<Vec<bookend_core::Story>> {
    load_corpus(path, CorpusFormat::from_path(path)).map_err(CliError::corpus(path))
}

pub fn run(args: EvalArgs, file: &FileConfig) -> CliResult<()> {
    if args.labels.len() > args.stories.len() {
        return Err(CliError::Usage(format!(
            "{} labels for {} story files",
            args.labels.len(),
            args.stories.len()
        )));
    }
    let markers = args.markers.resolve(file)?;
    let backend = args.backend.resolve(file, &markers)?;
    let smoothing = match args.smoothing.or(file.eval.smoothing).unwrap_or(SmoothingKind::None) {
        SmoothingKind::None => Smoothing::None,
        SmoothingKind::AddOne => Smoothing::AddOne,
    };
    let options = EvalOptions { smoothing };
    let references = args.references.as_ref().map(load).transpose()?;

    let mut rows = Vec::new();
    for (i, path) in args.stories.iter().enumerate() {
        let stories = load(path)?;
        let report = evaluate_corpus(
            &stories,
            references.as_deref(),
            backend.suite.sentence_embedder.as_ref(),
            backend.suite.parser.as_ref(),
            options,
        )?;
        let label = args.labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("run-{i}"))
        });
        rows.push(Row {
            label,
            stories: path.clone(),
            report,
        });
    }

    let table: Vec<(&str, &AggregateReport)> = rows.iter().map(|r| (r.label.as_str(), &r.report)).collect();
    print!("{}", render_table(&table));
    if let Some(out) = &args.out {
        let config = EffectiveConfig {
            command: "eval",
            references: args.references.as_ref(),
            options,
            backend: &backend,
        };
        crate::write_json(out, &json!({ "config": config, "rows": rows }))?;
    }
    Ok(())
}
