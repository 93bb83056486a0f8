//! Glue shared by the command-line driver and end-to-end tests: loading the
//! configured inputs, selecting prompts and constructing scorers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::analysis::{analyze, collect_metrics, Analysis};
use crate::config::{RunConfig, Slice};
use crate::corpus::{load_irrelevant, CorpusPlan, ExpandOptions, FillSet, Prompt};
use crate::error::Error;
use crate::lexicon::{load_lexicon, Lexicon, TargetOptions, Term};
use crate::scorer::{
    Backend, Direction, FullBiasLm, HttpBackend, IdealLm, ModelScorer, RandomLm, ScoreStore, Scorer,
    StubBackend, TableLm, TableWeights,
};
use crate::templates::{load_template_set, TemplateSet};

/// Lexicon, templates, targets and fills for one configuration.
pub struct Inputs {
    pub lexicon: Lexicon,
    pub templates: TemplateSet,
    pub targets: Vec<Term>,
    pub fills: FillSet,
    pub expand: ExpandOptions,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Inputs, Error> {
        cfg.check_inputs()?;
        let lexicon = load_lexicon(&cfg.lexicon_dir)?;
        let templates = load_template_set(&cfg.templates_dir)?;
        let targets = lexicon.target_terms(&TargetOptions {
            exclude_possessive_composites: cfg.exclude_possessive_composites,
        })?;
        let irrelevant = load_irrelevant(&cfg.irrelevant_path)?;
        let fills = FillSet::from_lexicon(&lexicon, &irrelevant)?;
        Ok(Inputs {
            lexicon,
            templates,
            targets,
            fills,
            expand: ExpandOptions {
                names_all_templates: cfg.names_all_templates,
            },
        })
    }

    /// The corpus restricted to `slice`, in prompt-id order.
    pub fn plan(&self, slice: &Slice) -> Result<CorpusPlan<'_>, Error> {
        let mut plan = CorpusPlan::new(self.templates.templates(), &self.targets, self.expand)?;
        plan.retain(|tpl, term| slice.matches_template(tpl) && slice.matches_term(term));
        if let Some(n) = slice.limit {
            plan.truncate(n);
        }
        Ok(plan)
    }
}

/// Scorer selection as given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    Ideal,
    /// Seeded from the run seed.
    Random,
    FullBias(Direction),
    Table(PathBuf),
    /// Model service at the configured endpoint.
    Http,
    /// In-process stub backend from a mass file.
    Stub(PathBuf),
}

impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "ideal" => ScorerSpec::Ideal,
            "random" => ScorerSpec::Random,
            "full-bias-poor" => ScorerSpec::FullBias(Direction::Poor),
            "full-bias-rich" => ScorerSpec::FullBias(Direction::Rich),
            "http" => ScorerSpec::Http,
            _ => match s.split_once(':') {
                Some(("table", p)) if !p.is_empty() => ScorerSpec::Table(p.into()),
                Some(("stub", p)) if !p.is_empty() => ScorerSpec::Stub(p.into()),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown scorer `{s}` (expected ideal, random, full-bias-poor, \
                         full-bias-rich, table:<file>, stub:<file> or http)"
                    )))
                }
            },
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Stub backend from a JSON map of fill surface or fill class to mass.
pub fn load_stub(path: &PathBuf, fills: &FillSet) -> Result<StubBackend, Error> {
    let masses: BTreeMap<String, f64> = read_json(path)?;
    let classes = fills
        .fills()
        .iter()
        .map(|f| (f.surface.clone(), f.class.as_str().to_string()))
        .collect();
    Ok(StubBackend::new(masses).with_classes(classes))
}

/// Backend for probes and model scoring. Only `http` and `stub:` specs have one.
pub fn build_backend(spec: &ScorerSpec, cfg: &RunConfig, fills: &FillSet) -> Result<Box<dyn Backend>, Error> {
    match spec {
        ScorerSpec::Http => {
            let endpoint = cfg
                .scorer
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Config("no endpoint configured (--endpoint or SOCEVAL_ENDPOINT)".into()))?;
            Ok(Box::new(HttpBackend::new(endpoint, cfg.scorer.timeout(), cfg.scorer.retry.clone())?))
        }
        ScorerSpec::Stub(p) => Ok(Box::new(load_stub(p, fills)?)),
        other => Err(Error::Config(format!("scorer {other:?} has no model backend"))),
    }
}

/// Builds a scorer. `id_override` names model-backed scorers.
pub fn build_scorer(
    spec: &ScorerSpec,
    cfg: &RunConfig,
    fills: &FillSet,
    id_override: Option<&str>,
) -> Result<Box<dyn Scorer>, Error> {
    Ok(match spec {
        ScorerSpec::Ideal => Box::new(IdealLm),
        ScorerSpec::Random => Box::new(RandomLm::new(cfg.seed)),
        ScorerSpec::FullBias(d) => Box::new(FullBiasLm::new(*d)),
        ScorerSpec::Table(p) => Box::new(TableLm::new(read_json::<TableWeights>(p)?)?),
        ScorerSpec::Http | ScorerSpec::Stub(_) => {
            let default_id = match spec {
                ScorerSpec::Http => format!("http:{}", cfg.scorer.endpoint.as_deref().unwrap_or("")),
                _ => "stub".to_string(),
            };
            let id = id_override.map(str::to_string).unwrap_or(default_id);
            Box::new(ModelScorer::new(id, cfg.scorer.mode, build_backend(spec, cfg, fills)?))
        }
    })
}

/// Metrics and analyses of `prompts` for one scorer in `store`.
pub fn analyze_scorer(
    inputs: &Inputs,
    prompts: &[Prompt],
    store: &ScoreStore,
    scorer_id: &str,
    cfg: &RunConfig,
) -> Result<Analysis, Error> {
    let metrics = collect_metrics(prompts, store, scorer_id, &inputs.fills, cfg.els_normalizer)?;
    Ok(analyze(scorer_id, &metrics, &inputs.lexicon, cfg.metric_config())?)
}
