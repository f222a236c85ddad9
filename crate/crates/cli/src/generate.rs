use std::path::{Path, PathBuf};

use bookend_core::corpus::{load_corpus, write_stories, CorpusFormat};
use bookend_core::endpoint::{generate_endpoints, LmConfig};
use bookend_core::infill::infill_story;
use bookend_core::llm::{
    ablation_story_llm, baseline_story_llm, generate_long_story_llm, generate_story_llm, LlmConfig, PromptMethod,
    CLEANING_RULES_VERSION,
};
use bookend_core::preprocessing::story_seed;
use bookend_core::text::split_sentences;
use bookend_core::{GenerationParams, Markers, Sentence, Story};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BackendArgs, BackendConfig, FileConfig, MarkerArgs, SchemeKind, VariantKind};
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeKind>,
    /// Endpoint prompting method for the llm scheme, 1..6.
    #[arg(long)]
    pub method: Option<u8>,
    /// Story shape for the llm scheme.
    #[arg(long, value_enum)]
    pub variant: Option<VariantKind>,
    /// A start sentence; repeatable.
    #[arg(
        long = "start",
        required_unless_present = "starts_file",
        conflicts_with = "starts_file"
    )]
    pub start: Vec<String>,
    /// Start sentences: a .csv or .jsonl corpus, or plain text with one per line.
    #[arg(long = "starts")]
    pub starts_file: Option<PathBuf>,
    /// Story length in sentences.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads across starts.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub system_prompt: Option<String>,
    /// Stories file; the run record goes next to it as <out>.run.json.
    #[arg(long, short)]
    pub out: PathBuf,
    /// JSON-lines file for per-story infill traces or prompt transcripts.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub markers: MarkerArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    command: &'static str,
    scheme: SchemeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<u8>,
    variant: VariantKind,
    n: usize,
    seed: u64,
    jobs: usize,
    markers: &'a Markers,
    params: &'a GenerationParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    system_prompt: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cleaning_rules_version: Option<u32>,
    starts: usize,
    backend: &'a BackendConfig,
}

struct Plan {
    scheme: SchemeKind,
    method: Option<PromptMethod>,
    variant: VariantKind,
    n: usize,
    seed: u64,
    markers: Markers,
    params: GenerationParams,
    system_prompt: String,
    backend: BackendConfig,
}

struct StartItem {
    id: String,
    sentence: Sentence,
}

/// One start's result: the story plus its trace or transcript record.
type Outcome = Result<(Story, Value), (&'static str, String)>;

impl Plan {
    fn run_one(&self, index: usize, item: &StartItem) -> Outcome {
        let params = self.params.clone().with_seed(Some(story_seed(self.seed, index)));
        let suite = &self.backend.suite;
        let start = item.sentence.clone();
        match self.scheme {
            SchemeKind::Lm => {
                let cfg = LmConfig {
                    markers: self.markers.clone(),
                    params,
                };
                let ends = generate_endpoints(
                    &start,
                    suite.phrase_generator.as_ref(),
                    suite.stop_generator.as_ref(),
                    &cfg,
                )
                .map_err(|e| ("endpoint_failed", e.to_string()))?;
                let out = infill_story(
                    start,
                    ends.stop.clone(),
                    self.n,
                    suite.scorer.as_ref(),
                    suite.infill_generator.as_ref(),
                    &cfg,
                )
                .map_err(|e| ("infill_failed", e.to_string()))?;
                let record = json!({
                    "phrase_list": ends.phrase_list,
                    "stop": ends.stop,
                    "trace": out.trace,
                });
                Ok((out.story, record))
            }
            SchemeKind::Llm => {
                let cfg = LlmConfig {
                    system_prompt: self.system_prompt.clone(),
                    params,
                };
                let chat = suite.chat.as_ref();
                let method = self.method.expect("validated");
                let result = match self.variant {
                    VariantKind::Bookend => generate_story_llm(method, &start, self.n, chat, &cfg),
                    VariantKind::Long => generate_long_story_llm(method, &start, chat, &cfg),
                    VariantKind::Baseline => baseline_story_llm(&start, self.n, chat, &cfg),
                    VariantKind::Ablation => ablation_story_llm(&start, self.n, chat, &cfg),
                };
                let (story, transcript) = result.map_err(|e| ("llm_failed", e.to_string()))?;
                Ok((story, json!({ "transcript": transcript })))
            }
        }
    }
}

fn read_starts(args: &GenerateArgs) -> CliResult<Vec<StartItem>> {
    let raw: Vec<(Option<String>, String)> = match &args.starts_file {
        None => args.start.iter().map(|s| (None, s.clone())).collect(),
        Some(path) => match path.extension().and_then(|e| e.to_str()) {
            Some("csv" | "jsonl") => load_corpus(path, CorpusFormat::from_path(path))
                .map_err(CliError::corpus(path))?
                .into_iter()
                .map(|s| (s.id().map(String::from), s.start().text().to_string()))
                .collect(),
            _ => std::fs::read_to_string(path)
                .map_err(|e| CliError::io(path, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| (None, l.to_string()))
                .collect(),
        },
    };
    if raw.is_empty() {
        return Err(CliError::Usage("no start sentences given".into()));
    }
    raw.into_iter()
        .enumerate()
        .map(|(i, (id, text))| {
            let pieces = split_sentences(&text);
            if pieces.len() != 1 {
                return Err(CliError::Usage(format!(
                    "start {i} must be exactly one sentence, found {}: {text:?}",
                    pieces.len()
                )));
            }
            let sentence = Sentence::new(&pieces[0]).map_err(|e| CliError::Usage(format!("start {i}: {e}")))?;
            Ok(StartItem {
                id: id.unwrap_or_else(|| format!("gen-{i}")),
                sentence,
            })
        })
        .collect()
}

fn plan(args: &GenerateArgs, file: &FileConfig) -> CliResult<Plan> {
    let g = &file.generate;
    let scheme = args.scheme.or(g.scheme).unwrap_or(SchemeKind::Lm);
    let variant = args.variant.or(g.variant).unwrap_or(VariantKind::Bookend);
    let method = args.method.or(g.method);
    let n = args.n.or(g.n).unwrap_or(5);
    let method = match (scheme, variant, method) {
        (SchemeKind::Lm, VariantKind::Bookend, None) => None,
        (SchemeKind::Lm, VariantKind::Bookend, Some(_)) => {
            return Err(CliError::Usage("--method applies to --scheme llm only".into()));
        }
        (SchemeKind::Lm, v, _) => {
            return Err(CliError::Usage(
                format!("--variant {v:?} needs --scheme llm").to_lowercase(),
            ));
        }
        (SchemeKind::Llm, VariantKind::Bookend | VariantKind::Long, None) => {
            return Err(CliError::Usage("--scheme llm needs --method 1..6".into()));
        }
        (SchemeKind::Llm, _, m) => m
            .map(PromptMethod::new)
            .transpose()
            .map_err(|e| CliError::Usage(e.to_string()))?,
    };
    if n < 2 {
        return Err(CliError::Usage(format!("--n must be at least 2, got {n}")));
    }
    let markers = args.markers.resolve(file)?;
    let backend = args.backend.resolve(file, &markers)?;
    let llm = LlmConfig::default();
    let mut params = match scheme {
        SchemeKind::Lm => GenerationParams::default(),
        SchemeKind::Llm => llm.params,
    };
    if let Some(m) = args.max_new_tokens.or(g.max_new_tokens) {
        params.max_new_tokens = m;
    }
    if let Some(t) = args.temperature.or(g.temperature) {
        params.temperature = t;
    }
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Plan {
        scheme,
        method,
        variant,
        n,
        seed: args.seed.or(file.seed).unwrap_or(0),
        markers,
        params,
        system_prompt: args
            .system_prompt
            .clone()
            .or_else(|| g.system_prompt.clone())
            .unwrap_or(llm.system_prompt),
        backend,
    })
}

fn write_jsonl(path: &Path, rows: &[Value]) -> CliResult<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("json"));
        out.push('\n');
    }
    crate::create_parent(path)?;
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn run(args: GenerateArgs, file: &FileConfig) -> CliResult<()> {
    let plan = plan(&args, file)?;
    let starts = read_starts(&args)?;
    let mut jobs = args.jobs.or(file.generate.jobs).unwrap_or(1).max(1);
    if jobs > 1 && !plan.backend.suite.concurrency_safe() {
        log::warn!("backends are not safe to call concurrently, running with --jobs 1");
        jobs = 1;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        starts
            .par_iter()
            .enumerate()
            .map(|(i, item)| plan.run_one(i, item))
            .collect()
    });

    let mut stories = Vec::new();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (i, (item, outcome)) in starts.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok((story, mut record)) => {
                stories.push(story.with_id(Some(item.id.clone())));
                record["index"] = json!(i);
                record["id"] = json!(item.id);
                traces.push(record);
            }
            Err((code, message)) => {
                log::error!("start {i} failed: {message}");
                failures.push(json!({
                    "index": i,
                    "id": item.id,
                    "start": item.sentence,
                    "error": { "code": code, "message": message },
                }));
            }
        }
    }

    let format = CorpusFormat::from_path(&args.out);
    crate::create_parent(&args.out)?;
    write_stories(&stories, &args.out, format).map_err(CliError::corpus(&args.out))?;
    if let Some(path) = &args.trace {
        write_jsonl(path, &traces)?;
    }
    let config = EffectiveConfig {
        command: "generate",
        scheme: plan.scheme,
        method: plan.method.map(PromptMethod::id),
        variant: plan.variant,
        n: plan.n,
        seed: plan.seed,
        jobs,
        markers: &plan.markers,
        params: &plan.params,
        system_prompt: (plan.scheme == SchemeKind::Llm).then_some(plan.system_prompt.as_str()),
        cleaning_rules_version: (plan.scheme == SchemeKind::Llm).then_some(CLEANING_RULES_VERSION),
        starts: starts.len(),
        backend: &plan.backend,
    };
    let run_path = sidecar(&args.out);
    let summary = json!({
        "config": config,
        "stories": args.out,
        "trace": args.trace,
        "written": stories.len(),
        "failures": failures,
    });
    crate::write_json(&run_path, &summary)?;
    println!(
        "{}",
        json!({ "stories": args.out, "written": stories.len(), "failed": failures.len(), "run": run_path })
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial {
            failed: failures.len(),
            total: starts.len(),
            report: run_path,
        })
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    out.with_file_name(name)
}
