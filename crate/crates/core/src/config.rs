//! Run configuration and prompt slices.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Prompt;
use crate::error::Error;
use crate::lexicon::{Domain, Term};
use crate::metrics::{MetricConfig, Policy};
use crate::scorer::ScorerConfig;
use crate::templates::{Category, Template};

/// Everything a run depends on. Loaded from one JSON file; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lexicon_dir: PathBuf,
    pub templates_dir: PathBuf,
    pub irrelevant_path: PathBuf,
    /// Written by `gen`; `score` regenerates prompts when absent.
    pub corpus_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub scorer: ScorerConfig,
    pub policy: Policy,
    pub els_normalizer: bool,
    pub names_all_templates: bool,
    pub exclude_possessive_composites: bool,
    pub slice: Option<String>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lexicon_dir: crate::default_lexicon_dir(),
            templates_dir: crate::default_templates_dir(),
            irrelevant_path: crate::default_irrelevant_path(),
            corpus_path: None,
            out_dir: PathBuf::from("out"),
            scorer: ScorerConfig::default(),
            policy: Policy::Macro,
            els_normalizer: true,
            names_all_templates: false,
            exclude_possessive_composites: false,
            slice: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.lexicon_dir);
        fix(&mut cfg.templates_dir);
        fix(&mut cfg.irrelevant_path);
        fix(&mut cfg.out_dir);
        if let Some(p) = cfg.corpus_path.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.scorer.cache_path.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            policy: self.policy,
            els_normalizer: self.els_normalizer,
        }
    }

    /// Fails unless every input path exists.
    pub fn check_inputs(&self) -> Result<(), Error> {
        for (what, p) in [
            ("lexicon_dir", &self.lexicon_dir),
            ("templates_dir", &self.templates_dir),
            ("irrelevant_path", &self.irrelevant_path),
        ] {
            if !p.exists() {
                return Err(Error::Config(format!("{what} {} does not exist", p.display())));
            }
        }
        self.scorer
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = &self.slice {
            s.parse::<Slice>()?;
        }
        Ok(())
    }

    pub fn slice(&self) -> Result<Slice, Error> {
        match &self.slice {
            Some(s) => s.parse(),
            None => Ok(Slice::default()),
        }
    }
}

/// Prompt subset, written as `;`-separated clauses `key=v1|v2`.
///
/// Keys: `domain`, `term`, `subgroup`, `category`, `limit`. A prompt matches
/// when it matches every clause. `limit` keeps the first N prompts in
/// prompt-id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Slice {
    pub domains: Vec<Domain>,
    pub terms: Vec<String>,
    pub subgroups: Vec<String>,
    pub categories: Vec<Category>,
    pub limit: Option<usize>,
}

impl FromStr for Slice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Slice::default();
        for clause in s.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            let (key, values) = clause
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("slice clause `{clause}` is not key=value")))?;
            let values = values.split('|').map(str::trim);
            let bad = |e: String| Error::Config(format!("slice clause `{clause}`: {e}"));
            match key.trim() {
                "domain" => {
                    for v in values {
                        out.domains.push(v.parse().map_err(bad)?);
                    }
                }
                "term" => out.terms.extend(values.map(String::from)),
                "subgroup" => out.subgroups.extend(values.map(String::from)),
                "category" => {
                    for v in values {
                        out.categories.push(v.parse().map_err(bad)?);
                    }
                }
                "limit" => {
                    let v: Vec<&str> = values.collect();
                    let n = match v.as_slice() {
                        [n] => n.parse().map_err(|_| bad("limit must be an integer".into()))?,
                        _ => return Err(bad("limit takes one value".into())),
                    };
                    out.limit = Some(n);
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(out)
    }
}

impl Slice {
    pub fn is_empty(&self) -> bool {
        *self == Slice::default()
    }

    pub fn matches_template(&self, t: &Template) -> bool {
        self.categories.is_empty() || self.categories.contains(&t.category)
    }

    pub fn matches_term(&self, t: &Term) -> bool {
        (self.domains.is_empty() || self.domains.contains(&t.domain))
            && (self.terms.is_empty() || self.terms.contains(&t.id))
            && (self.subgroups.is_empty() || t.labels().iter().any(|l| self.subgroups.contains(l)))
    }

    pub fn matches(&self, p: &Prompt) -> bool {
        (self.domains.is_empty() || self.domains.contains(&p.group_keys.domain))
            && (self.terms.is_empty() || self.terms.contains(&p.term_id))
            && (self.subgroups.is_empty()
                || p.group_keys.subgroups.iter().any(|s| self.subgroups.contains(s)))
    }
}
