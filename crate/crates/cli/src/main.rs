use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use soceval::analysis::{
    dispatch_reasoning, name_attribute_probe, reasoning_probe_prompts, Analysis, Attribute,
    REASONING_SEEDS,
};
use soceval::config::RunConfig;
use soceval::corpus::{expected_count, CorpusDigest, Prompt};
use soceval::lexicon::Domain;
use soceval::metrics::{rows_to_csv, Policy};
use soceval::pipeline::{analyze_scorer, build_backend, build_scorer, Inputs, ScorerSpec};
use soceval::report::{
    file_stem, write_report, ProbeEntry, Report, RunMeta, ScorerMeta, PROBE_METHOD_NOTE,
};
use soceval::scorer::{run_scoring, Mode, RunOptions, ScoreStore};
use soceval::templates::{validate_template, Category};
use soceval::Error;

#[derive(Parser)]
#[command(name = "soceval", version, about = "Socioeconomic bias evaluation for language models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    /// Irrelevant-word list for LMCS.
    #[arg(long, global = true)]
    irrelevant: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "SOCEVAL_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[arg(long, global = true)]
    policy: Option<Policy>,
    #[arg(long, global = true, action = ArgAction::Set, value_name = "BOOL")]
    els_normalizer: Option<bool>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Prompt subset, e.g. "domain=gender;limit=100".
    #[arg(long, global = true)]
    slice: Option<String>,
    /// Pair names with plural templates too (literal templates x terms).
    #[arg(long, global = true)]
    names_all_templates: bool,
    #[arg(long, global = true)]
    exclude_possessive_composites: bool,
    /// Score store path (default: <out>/scores.jsonl).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build templates and the prompt corpus and print their counts.
    Gen {
        /// Write the corpus here (JSON Lines, gzipped for .gz).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Check templates (and optional extra template texts) for placement errors.
    Validate {
        /// File with one template per line, as plain text or JSON with a "text" field.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score prompts into the store.
    Score {
        /// ideal, random, full-bias-poor, full-bias-rich, table:<file>, stub:<file> or http.
        #[arg(long)]
        scorer: String,
        /// Name for model-backed scorers.
        #[arg(long)]
        scorer_id: Option<String>,
        /// Continue a previous run for the same scorer.
        #[arg(long)]
        resume: bool,
        /// Stop after this many prompts.
        #[arg(long)]
        max_prompts: Option<usize>,
    },
    /// Compute metrics, matrices, extremes and name groups from the store.
    Analyze {
        /// Scorer ids to analyze (default: every scorer in the store).
        #[arg(long = "scorer-id")]
        scorer_ids: Vec<String>,
    },
    /// Render the report directory from the analysis and probe results.
    Report,
    /// Predict gender or race from names with a constrained choice.
    ProbeNames {
        /// http or stub:<file>.
        #[arg(long)]
        scorer: String,
        #[arg(long)]
        scorer_id: Option<String>,
        #[arg(long, value_enum, default_value_t = ProbeAttribute::Both)]
        attribute: ProbeAttribute,
    },
    /// Build "rich ... poor, because" prompts from extremes and generate continuations.
    ReasoningProbe {
        /// http or stub:<file>; omit with --dry-run.
        #[arg(long)]
        scorer: Option<String>,
        /// Analysis whose extremes are used (default: the first analyzed scorer).
        #[arg(long)]
        scorer_id: Option<String>,
        #[arg(long, default_value_t = 64)]
        max_tokens: u32,
        /// Print the prompts without generating.
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeAttribute {
    Gender,
    Race,
    Both,
}

fn run_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.lexicon, cfg.lexicon_dir);
    set!(c.templates, cfg.templates_dir);
    set!(c.irrelevant, cfg.irrelevant_path);
    set!(c.out, cfg.out_dir);
    set!(c.mode, cfg.scorer.mode);
    set!(c.concurrency, cfg.scorer.max_concurrency);
    set!(c.policy, cfg.policy);
    set!(c.els_normalizer, cfg.els_normalizer);
    set!(c.seed, cfg.seed);
    if c.endpoint.is_some() {
        cfg.scorer.endpoint = c.endpoint.clone();
    }
    if c.slice.is_some() {
        cfg.slice = c.slice.clone();
    }
    if c.store.is_some() {
        cfg.scorer.cache_path = c.store.clone();
    }
    cfg.names_all_templates |= c.names_all_templates;
    cfg.exclude_possessive_composites |= c.exclude_possessive_composites;
    cfg.scorer.seed = cfg.seed;
    Ok(cfg)
}

fn store_path(cfg: &RunConfig) -> PathBuf {
    cfg.scorer
        .cache_path
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("scores.jsonl"))
}

/// RFC 3339 time of `SOURCE_DATE_EPOCH` when set, else now.
fn timestamp() -> Result<String, Error> {
    let t = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(s) => {
            let secs: u64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("SOURCE_DATE_EPOCH `{s}` is not an integer")))?;
            UNIX_EPOCH + Duration::from_secs(secs)
        }
        Err(_) => SystemTime::now(),
    };
    Ok(humantime::format_rfc3339_seconds(t).to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gen(cfg: &RunConfig, corpus: Option<PathBuf>) -> Result<(), Error> {
    let inputs = Inputs::load(cfg)?;
    let mut failures = Vec::new();
    for c in Category::ALL {
        println!("{}: {}", c.as_str(), inputs.templates.count(c));
    }
    failures.extend(inputs.templates.default_count_mismatches().iter().map(|e| e.to_string()));
    failures.extend(inputs.lexicon.manifest()?.default_count_mismatches());

    let templates = inputs.templates.templates();
    let literal = templates.len() * inputs.targets.len();
    println!("templates: {}, prompts: {literal}", templates.len());
    let expected_literal = Category::ALL.iter().map(|c| c.default_count()).sum::<usize>() * 1135;
    if literal != expected_literal {
        failures.push(format!("literal prompt count {literal}, expected {expected_literal}"));
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("lexicon_manifest.json"), inputs.lexicon.manifest()?.to_json())?;
    write_json(&cfg.out_dir.join("template_manifest.json"), &inputs.templates.manifest())?;

    let slice = cfg.slice()?;
    let plan = inputs.plan(&slice)?;
    let digest = match corpus.or_else(|| cfg.corpus_path.clone()) {
        Some(path) => {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            plan.write(&path)?
        }
        None => CorpusDigest {
            count: plan.len(),
            sha256: plan.digest(),
        },
    };
    if slice.is_empty() && digest.count != expected_count(templates, &inputs.targets, inputs.expand) {
        failures.push("expanded corpus size differs from templates x terms".into());
    }
    println!(
        "corpus: {} prompts ({}), sha256 {}",
        digest.count,
        if cfg.names_all_templates {
            "literal expansion"
        } else {
            "names in singular-agreement templates only"
        },
        digest.sha256
    );
    for w in &inputs.templates.warnings {
        log::warn!("{w}");
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("count mismatch: {f}");
        }
        return Err(Error::Config(format!("{} count mismatch(es) with shipped data", failures.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct Finding {
    source: String,
    text: String,
    violations: Vec<&'static str>,
    warnings: Vec<&'static str>,
}

fn validate(cfg: &RunConfig, input: Option<PathBuf>) -> Result<(), Error> {
    let mut texts: Vec<(String, String)> = Vec::new();
    match input {
        Some(path) => {
            let body = std::fs::read_to_string(&path)?;
            for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let text = match serde_json::from_str::<serde_json::Value>(line) {
                    Ok(serde_json::Value::Object(o)) => o
                        .get("text")
                        .and_then(|t| t.as_str())
                        .map(str::to_string)
                        .ok_or_else(|| Error::Config(format!("{}:{}: no \"text\" field", path.display(), i + 1)))?,
                    _ => line.to_string(),
                };
                texts.push((format!("{}:{}", path.display(), i + 1), text));
            }
        }
        None => {
            let inputs = Inputs::load(cfg)?;
            texts.extend(
                inputs
                    .templates
                    .templates()
                    .iter()
                    .map(|t| (t.id.clone(), t.text.clone())),
            );
        }
    }
    let findings: Vec<Finding> = texts
        .into_iter()
        .filter_map(|(source, text)| {
            let v = validate_template(&text);
            (!v.violations.is_empty() || !v.warnings.is_empty()).then(|| Finding {
                source,
                text,
                violations: v.violations.iter().map(|x| x.code()).collect(),
                warnings: v.warnings.iter().map(|x| x.code()).collect(),
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&findings).expect("findings serialize"));
    let bad = findings.iter().filter(|f| !f.violations.is_empty()).count();
    if bad > 0 {
        return Err(Error::Config(format!("{bad} template(s) violate placement rules")));
    }
    Ok(())
}

fn score(
    cfg: &RunConfig,
    spec: &str,
    scorer_id: Option<&str>,
    resume: bool,
    max_prompts: Option<usize>,
) -> Result<(), Error> {
    let inputs = Inputs::load(cfg)?;
    let spec: ScorerSpec = spec.parse()?;
    let scorer = build_scorer(&spec, cfg, &inputs.fills, scorer_id)?;
    let path = store_path(cfg);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let store = ScoreStore::open(&path)?;
    if !resume && store.scorer_ids().iter().any(|s| s == scorer.id()) {
        return Err(Error::Config(format!(
            "{} already holds scores for {}; pass --resume to continue",
            path.display(),
            scorer.id()
        )));
    }
    let plan = inputs.plan(&cfg.slice()?)?;
    let stats = run_scoring(
        scorer.as_ref(),
        plan.prompts(),
        &inputs.fills,
        &store,
        &RunOptions {
            concurrency: cfg.scorer.max_concurrency,
            max_prompts,
        },
    )?;
    store.flush()?;
    println!(
        "scorer {}: scored {}, skipped {} (already complete), failed {}",
        scorer.id(),
        stats.scored,
        stats.skipped,
        stats.failed.len()
    );
    for (pid, msg) in stats.failed.iter().take(10) {
        eprintln!("failed {pid}: {msg}");
    }
    if !stats.failed.is_empty() {
        return Err(soceval::scorer::ScoreError::Protocol(format!(
            "{} prompt(s) failed; rerun with --resume",
            stats.failed.len()
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct AnalysisBundle {
    corpus: CorpusDigest,
    scorers: Vec<ScorerMeta>,
    analyses: Vec<Analysis>,
    config: RunConfig,
}

fn analyze(cfg: &RunConfig, scorer_ids: Vec<String>) -> Result<(), Error> {
    let inputs = Inputs::load(cfg)?;
    let store = ScoreStore::open(&store_path(cfg))?;
    let ids = if scorer_ids.is_empty() {
        store.scorer_ids()
    } else {
        scorer_ids
    };
    if ids.is_empty() {
        return Err(Error::Config("the score store is empty; run `score` first".into()));
    }
    let plan = inputs.plan(&cfg.slice()?)?;
    let corpus = CorpusDigest {
        count: plan.len(),
        sha256: plan.digest(),
    };
    let prompts: Vec<Prompt> = plan.prompts().collect();
    let mut analyses = Vec::new();
    let mut scorers = Vec::new();
    let by_id: BTreeSet<String> = ids.into_iter().collect();
    for id in &by_id {
        let a = analyze_scorer(&inputs, &prompts, &store, id, cfg)?;
        let stem = file_stem(id);
        std::fs::create_dir_all(&cfg.out_dir)?;
        std::fs::write(cfg.out_dir.join(format!("metrics_{stem}_domain.csv")), rows_to_csv(&a.domains))?;
        std::fs::write(cfg.out_dir.join(format!("metrics_{stem}_subgroup.csv")), rows_to_csv(&a.subgroups))?;
        std::fs::write(cfg.out_dir.join(format!("metrics_{stem}_term.csv")), rows_to_csv(&a.terms))?;
        for r in &a.domains {
            println!(
                "{id} {:<12} n={:<7} LMCS={:.3} PAR={:.3} ELS={:.3}",
                r.group, r.n, r.lmcs, r.par, r.els
            );
        }
        let scores = store.by_prompt(id);
        let first = scores.values().flatten().next();
        scorers.push(ScorerMeta {
            scorer_id: id.clone(),
            model_id: first.and_then(|s| s.model_id.clone()),
            mode: first.map(|s| s.mode).unwrap_or_default(),
        });
        analyses.push(a);
    }
    write_json(
        &cfg.out_dir.join("analysis.json"),
        &AnalysisBundle {
            corpus,
            scorers,
            analyses,
            config: cfg.clone(),
        },
    )
}

fn report(cfg: &RunConfig) -> Result<(), Error> {
    let started = timestamp()?;
    let inputs = Inputs::load(cfg)?;
    let bundle: AnalysisBundle = read_json(&cfg.out_dir.join("analysis.json"))?;
    let probe_path = cfg.out_dir.join("probe.json");
    let probes: Vec<ProbeEntry> = if probe_path.exists() {
        read_json(&probe_path)?
    } else {
        Vec::new()
    };
    let meta = RunMeta {
        scorers: bundle.scorers,
        policy: bundle.config.policy,
        els_normalizer: bundle.config.els_normalizer,
        corpus: Some(bundle.corpus),
        seed: bundle.config.seed,
        started_at: Some(started),
        finished_at: Some(timestamp()?),
        config: serde_json::to_value(&bundle.config).expect("config serializes"),
        notes: vec![PROBE_METHOD_NOTE.to_string()],
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let report = Report::build(meta, &bundle.analyses, probes, &inputs.lexicon)?;
    let dir = cfg.out_dir.join("report");
    let written = write_report(&dir, &report)?;
    println!("wrote {} files to {}", written.len(), dir.display());
    Ok(())
}

fn probe_names(
    cfg: &RunConfig,
    spec: &str,
    scorer_id: Option<&str>,
    which: ProbeAttribute,
) -> Result<(), Error> {
    let inputs = Inputs::load(cfg)?;
    let spec: ScorerSpec = spec.parse()?;
    let backend = build_backend(&spec, cfg, &inputs.fills)?;
    let id = scorer_id.map(str::to_string).unwrap_or_else(|| match &spec {
        ScorerSpec::Http => format!("http:{}", cfg.scorer.endpoint.as_deref().unwrap_or("")),
        _ => "stub".into(),
    });
    let attributes = match which {
        ProbeAttribute::Gender => vec![Attribute::Gender],
        ProbeAttribute::Race => vec![Attribute::Race],
        ProbeAttribute::Both => vec![Attribute::Gender, Attribute::Race],
    };
    let path = cfg.out_dir.join("probe.json");
    let mut entries: Vec<ProbeEntry> = if path.exists() { read_json(&path)? } else { Vec::new() };
    for attribute in attributes {
        let r = name_attribute_probe(inputs.lexicon.names(), backend.as_ref(), attribute, None)?;
        println!("{id} {}: accuracy {:.3} over {} names", attribute.as_str(), r.accuracy, r.results.len());
        entries.retain(|e| !(e.scorer_id == id && e.report.attribute == attribute));
        entries.push(ProbeEntry {
            scorer_id: id.clone(),
            report: r,
        });
    }
    entries.sort_by(|a, b| {
        (a.scorer_id.as_str(), a.report.attribute.as_str()).cmp(&(b.scorer_id.as_str(), b.report.attribute.as_str()))
    });
    write_json(&path, &entries)
}

fn reasoning_probe(
    cfg: &RunConfig,
    spec: Option<&str>,
    scorer_id: Option<&str>,
    max_tokens: u32,
    dry_run: bool,
) -> Result<(), Error> {
    let inputs = Inputs::load(cfg)?;
    let bundle: AnalysisBundle = read_json(&cfg.out_dir.join("analysis.json"))?;
    let analysis = match scorer_id {
        Some(id) => bundle.analyses.iter().find(|a| a.scorer_id == id),
        None => bundle.analyses.first(),
    }
    .ok_or_else(|| Error::Config("no matching analysis in analysis.json".into()))?;
    let extremes: Vec<_> = [Domain::Gender, Domain::Marital, Domain::Race, Domain::Religion]
        .into_iter()
        .filter_map(|d| {
            analysis
                .extremes
                .iter()
                .find(|e| e.scope == d.as_str())
                .map(|e| (d, e.clone()))
        })
        .collect();
    let prompts = reasoning_probe_prompts(&extremes, &inputs.lexicon)?;
    if dry_run {
        for p in &prompts {
            println!("{}\t{}", p.domain, p.prompt);
        }
        return Ok(());
    }
    let spec: ScorerSpec = spec
        .ok_or_else(|| Error::Config("--scorer is required unless --dry-run is given".into()))?
        .parse()?;
    let backend = build_backend(&spec, cfg, &inputs.fills)?;
    let records = dispatch_reasoning(&prompts, backend.as_ref(), &REASONING_SEEDS, max_tokens)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    let path = cfg.out_dir.join("reasoning.jsonl");
    std::fs::write(&path, out)?;
    println!("wrote {} generations to {}", records.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = run_config(&cli.common)?;
    match cli.command {
        Command::Gen { corpus } => gen(&cfg, corpus),
        Command::Validate { input } => validate(&cfg, input),
        Command::Score {
            scorer,
            scorer_id,
            resume,
            max_prompts,
        } => score(&cfg, &scorer, scorer_id.as_deref(), resume, max_prompts),
        Command::Analyze { scorer_ids } => analyze(&cfg, scorer_ids),
        Command::Report => report(&cfg),
        Command::ProbeNames {
            scorer,
            scorer_id,
            attribute,
        } => probe_names(&cfg, &scorer, scorer_id.as_deref(), attribute),
        Command::ReasoningProbe {
            scorer,
            scorer_id,
            max_tokens,
            dry_run,
        } => reasoning_probe(&cfg, scorer.as_deref(), scorer_id.as_deref(), max_tokens, dry_run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
