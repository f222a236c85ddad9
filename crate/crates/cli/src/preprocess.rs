use std::path::{Path, PathBuf};

use bookend_core::corpus::{load_corpus, split_train_val, CorpusFormat};
use bookend_core::preprocessing::{build_all, write_samples, PreprocessConfig, DEFAULT_GAMMA};
use bookend_core::Story;
use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BackendArgs, BackendConfig, FileConfig, MarkerArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Story corpus (.csv with sentence1..5 columns, or JSON-lines).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Overrides the format guessed from the extension.
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    /// Output directory for the sample files and manifest.json.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Cosine threshold for phrase extraction, in (0, 1).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Negative position samples per story.
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Train fraction; writes train/ and validation/ subdirectories.
    #[arg(long)]
    pub split: Option<f64>,
    #[command(flatten)]
    pub markers: MarkerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    command: &'static str,
    corpus: &'a Path,
    format: CorpusFormat,
    split: Option<f64>,
    preprocess: &'a PreprocessConfig,
    backend: &'a BackendConfig,
}

const FAMILIES: [&str; 4] = ["phrase_list", "stop", "position", "infill"];

pub fn run(args: PreprocessArgs, file: &FileConfig) -> CliResult<()> {
    let markers = args.markers.resolve(file)?;
    let backend = args.backend.resolve(file, &markers)?;
    let config = PreprocessConfig {
        gamma: args.gamma.or(file.preprocess.gamma).unwrap_or(DEFAULT_GAMMA),
        seed: args.seed.or(file.seed).unwrap_or(0),
        markers,
        negatives_per_story: args.negatives.or(file.preprocess.negatives).unwrap_or(1),
    };
    let split = args.split.or(file.preprocess.split);
    let format = args.format.unwrap_or_else(|| CorpusFormat::from_path(&args.corpus));

    let corpus = load_corpus(&args.corpus, format).map_err(CliError::corpus(&args.corpus))?;
    log::info!("loaded {} stories from {}", corpus.len(), args.corpus.display());
    let parts: Vec<(&str, Vec<Story>)> = match split {
        Some(ratio) => {
            let s = split_train_val(&corpus, ratio, config.seed)?;
            vec![("train", s.train), ("validation", s.validation)]
        }
        None => vec![("", corpus)],
    };

    let mut outputs = serde_json::Map::new();
    for (name, stories) in &parts {
        let dir = args.out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let families = build_all(stories, backend.suite.token_embedder.as_ref(), &config)?;
        let records = [
            &families.phrase_lists,
            &families.stops,
            &families.positions,
            &families.infills,
        ];
        let mut counts = serde_json::Map::new();
        for (family, recs) in FAMILIES.iter().zip(records) {
            write_samples(dir.join(format!("{family}.jsonl")), recs)?;
            counts.insert(family.to_string(), json!(recs.len()));
        }
        let skipped: Vec<Value> = families
            .skipped
            .iter()
            .map(|(i, reason)| json!({ "story": i, "reason": reason }))
            .collect();
        let key = if name.is_empty() { "all" } else { name };
        outputs.insert(
            key.to_string(),
            json!({ "stories": stories.len(), "counts": counts, "skipped": skipped }),
        );
    }

    let manifest = json!({
        "config": EffectiveConfig {
            command: "preprocess",
            corpus: &args.corpus,
            format,
            split,
            preprocess: &config,
            backend: &backend,
        },
        "outputs": outputs,
    });
    crate::write_json(&args.out.join("manifest.json"), &manifest)?;
    println!("{}", serde_json::to_string(&manifest["outputs"]).expect("json"));
    Ok(())
}
