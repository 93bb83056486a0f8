//! Seed templates and the perturbed template set.
//!
//! Mechanical perturbations (adverbs, quantifiers, grammatical forms) are
//! generated from the seeds by rule. Shortened, reordered and paraphrased
//! templates are curated data files whose sizes are enforced on load.

mod perturb;
mod validate;

pub use perturb::{
    grammar_variant, perturb_adverbs, perturb_grammar, perturb_quantifiers, GrammarForm,
    ADVERB_REPLACEMENTS, SEED_ADVERB,
};
pub use validate::{validate_template, Validation, Violation, Warning, MASK, TARGET};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

pub const SEEDS_FILE: &str = "seeds.jsonl";
pub const GRAMMAR_OVERRIDES_FILE: &str = "grammar_overrides.jsonl";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("seed `{seed_id}` has no adverb \"often\"")]
    AdverbNotFound { seed_id: String },
    #[error("{category} transform not applicable to seed `{seed_id}`")]
    TransformationNotApplicable { seed_id: String, category: Category },
    #[error("{category}: expected {expected} templates, found {found}")]
    CountMismatch {
        category: Category,
        expected: usize,
        found: usize,
    },
    #[error("template fails validation ({}): {text}", codes.join(", "))]
    ValidationFailure { text: String, codes: Vec<String> },
    #[error("seed `{seed_id}` text does not match its verb frame rendering `{rendered}`")]
    FrameMismatch { seed_id: String, rendered: String },
    #[error("template id `{id}` does not match its content (expected `{expected}`)")]
    IdMismatch { id: String, expected: String },
    #[error("duplicate template `{id}`: {text}")]
    DuplicateTemplate { id: String, text: String },
    #[error("malformed template file {} line {line}: {reason}", path.display())]
    MalformedFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("io error reading {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Main,
    LexicalAdverb,
    LexicalQuantifier,
    StructuralShort,
    StructuralReorder,
    GrammarSingular,
    GrammarFuture,
    GrammarPast,
    GrammarActive,
    SemanticParaphrase,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::Main,
        Category::LexicalAdverb,
        Category::LexicalQuantifier,
        Category::StructuralShort,
        Category::StructuralReorder,
        Category::GrammarSingular,
        Category::GrammarFuture,
        Category::GrammarPast,
        Category::GrammarActive,
        Category::SemanticParaphrase,
    ];

    /// Categories loaded from curated files.
    pub const CURATED: [Category; 3] = [
        Category::StructuralShort,
        Category::StructuralReorder,
        Category::SemanticParaphrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Main => "main",
            Category::LexicalAdverb => "lexical_adverb",
            Category::LexicalQuantifier => "lexical_quantifier",
            Category::StructuralShort => "structural_short",
            Category::StructuralReorder => "structural_reorder",
            Category::GrammarSingular => "grammar_singular",
            Category::GrammarFuture => "grammar_future",
            Category::GrammarPast => "grammar_past",
            Category::GrammarActive => "grammar_active",
            Category::SemanticParaphrase => "semantic_paraphrase",
        }
    }

    /// Size of the category in the shipped template set.
    pub fn default_count(self) -> usize {
        match self {
            Category::Main => 50,
            Category::LexicalAdverb => 250,
            Category::LexicalQuantifier => 100,
            Category::StructuralShort => 21,
            Category::StructuralReorder => 124,
            Category::GrammarSingular
            | Category::GrammarFuture
            | Category::GrammarPast
            | Category::GrammarActive => 50,
            Category::SemanticParaphrase => 98,
        }
    }

    /// File name of a curated category.
    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown template category `{s}`"))
    }
}

/// Number agreement required of the target surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Number {
    Plural,
    Singular,
}

/// What the finite verb agrees with: the target itself or a singular
/// subject phrase containing it ("The financial status of [TARGET]").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Target,
    Singular,
}

/// Annotated verb frame of a seed: `{lead}{subject} {aux} {participle} {complement}.`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub lead: String,
    pub subject: String,
    pub agreement: Agreement,
    pub participle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<String>,
    pub complement: String,
}

impl Frame {
    pub fn passive(&self, aux: &str) -> String {
        format!(
            "{}{} {aux} {} {}.",
            self.lead, self.subject, self.participle, self.complement
        )
    }

    /// The seed sentence this frame describes.
    pub fn seed_text(&self, adverb: &str) -> String {
        let copula = match self.agreement {
            Agreement::Target => "are",
            Agreement::Singular => "is",
        };
        self.passive(&format!("{copula} {adverb}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    #[serde(default)]
    pub id: String,
    pub seed_id: String,
    pub text: String,
    pub category: Category,
    pub number: Number,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adverb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<Frame>,
}

/// Deterministic template id over seed, category and text.
pub fn template_id(seed_id: &str, category: Category, text: &str) -> String {
    format!("tpl-{}", &sha256_hex(&[seed_id, category.as_str(), text])[..16])
}

fn checked(text: &str) -> Result<(), TemplateError> {
    let v = validate_template(text);
    if v.is_ok() {
        Ok(())
    } else {
        Err(TemplateError::ValidationFailure {
            text: text.to_string(),
            codes: v.violations.iter().map(|c| c.code().to_string()).collect(),
        })
    }
}

impl Template {
    /// A validated main-category seed.
    pub fn seed(seed_id: &str, text: &str, frame: Option<Frame>) -> Result<Self, TemplateError> {
        checked(text)?;
        Ok(Template {
            id: template_id(seed_id, Category::Main, text),
            seed_id: seed_id.to_string(),
            text: text.to_string(),
            category: Category::Main,
            number: Number::Plural,
            adverb: find_adverb(text),
            frame,
        })
    }

    pub fn curated(
        seed_id: &str,
        category: Category,
        text: &str,
        number: Number,
        adverb: Option<&str>,
    ) -> Result<Self, TemplateError> {
        checked(text)?;
        Ok(Template {
            id: template_id(seed_id, category, text),
            seed_id: seed_id.to_string(),
            text: text.to_string(),
            category,
            number,
            adverb: adverb.map(str::to_string),
            frame: None,
        })
    }

    pub(crate) fn derived(
        seed: &Template,
        category: Category,
        text: String,
        number: Number,
        adverb: Option<&str>,
    ) -> Result<Self, TemplateError> {
        Template::curated(&seed.seed_id, category, &text, number, adverb)
    }

    /// Fills in a missing id and checks a present one; validates the text.
    fn normalized(mut self) -> Result<Self, TemplateError> {
        checked(&self.text)?;
        let expected = template_id(&self.seed_id, self.category, &self.text);
        if self.id.is_empty() {
            self.id = expected;
        } else if self.id != expected {
            return Err(TemplateError::IdMismatch {
                id: self.id,
                expected,
            });
        }
        Ok(self)
    }
}

fn find_adverb(text: &str) -> Option<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .any(|w| w == SEED_ADVERB)
        .then(|| SEED_ADVERB.to_string())
}

fn read_templates(path: &Path) -> Result<Vec<Template>, TemplateError> {
    let raw = fs::read_to_string(path).map_err(|source| TemplateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Template =
            serde_json::from_str(line).map_err(|e| TemplateError::MalformedFile {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.push(t.normalized()?);
    }
    Ok(out)
}

/// Seeds plus the curated overrides for grammatical forms their frames
/// cannot express.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds {
    pub seeds: Vec<Template>,
    pub grammar_overrides: Vec<Template>,
}

/// Loads `seeds.jsonl` and the optional `grammar_overrides.jsonl` from `dir`.
/// Each seed's text must equal its frame rendering.
pub fn load_seeds(dir: &Path) -> Result<Seeds, TemplateError> {
    let seeds = read_templates(&dir.join(SEEDS_FILE))?;
    for s in &seeds {
        if s.category != Category::Main {
            return Err(TemplateError::MalformedFile {
                path: dir.join(SEEDS_FILE),
                line: 0,
                reason: format!("seed `{}` has category {}", s.seed_id, s.category),
            });
        }
        if let Some(frame) = &s.frame {
            let rendered = frame.seed_text(s.adverb.as_deref().unwrap_or(SEED_ADVERB));
            if rendered != s.text {
                return Err(TemplateError::FrameMismatch {
                    seed_id: s.seed_id.clone(),
                    rendered,
                });
            }
        }
    }
    let overrides_path = dir.join(GRAMMAR_OVERRIDES_FILE);
    let grammar_overrides = if overrides_path.exists() {
        read_templates(&overrides_path)?
    } else {
        Vec::new()
    };
    Ok(Seeds {
        seeds,
        grammar_overrides,
    })
}

/// Loads a curated category file. Every record must carry `category` and pass
/// validation; `expected` enforces the record count.
pub fn load_curated(
    path: &Path,
    category: Category,
    expected: Option<usize>,
) -> Result<Vec<Template>, TemplateError> {
    let templates = read_templates(path)?;
    if let Some(t) = templates.iter().find(|t| t.category != category) {
        return Err(TemplateError::MalformedFile {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("record `{}` has category {}, expected {category}", t.text, t.category),
        });
    }
    if let Some(expected) = expected {
        if templates.len() != expected {
            return Err(TemplateError::CountMismatch {
                category,
                expected,
                found: templates.len(),
            });
        }
    }
    Ok(templates)
}

/// The full, id-sorted template set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<Template>,
    /// Non-fatal problems found while building, e.g. a missing curated file.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateManifest {
    pub categories: BTreeMap<String, usize>,
    pub total: usize,
}

impl TemplateSet {
    pub fn from_templates(mut templates: Vec<Template>) -> Result<Self, TemplateError> {
        templates.sort_by(|a, b| a.id.cmp(&b.id));
        for w in templates.windows(2) {
            if w[0].id == w[1].id {
                return Err(TemplateError::DuplicateTemplate {
                    id: w[1].id.clone(),
                    text: w[1].text.clone(),
                });
            }
        }
        Ok(TemplateSet {
            templates,
            warnings: Vec::new(),
        })
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn count(&self, category: Category) -> usize {
        self.templates.iter().filter(|t| t.category == category).count()
    }

    pub fn manifest(&self) -> TemplateManifest {
        let categories = Category::ALL
            .iter()
            .map(|c| (c.as_str().to_string(), self.count(*c)))
            .collect();
        TemplateManifest {
            categories,
            total: self.len(),
        }
    }

    /// Category sizes that differ from the shipped set.
    pub fn default_count_mismatches(&self) -> Vec<TemplateError> {
        let mut out = Vec::new();
        for c in Category::ALL {
            let found = self.count(c);
            if found != c.default_count() {
                out.push(TemplateError::CountMismatch {
                    category: c,
                    expected: c.default_count(),
                    found,
                });
            }
        }
        out
    }

    /// JSON Lines in id order; the canonical serialization.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.templates {
            out.push_str(&serde_json::to_string(t).expect("template serializes"));
            out.push('\n');
        }
        out
    }

    /// Keeps templates for which `keep` holds.
    pub fn filtered(&self, keep: impl Fn(&Template) -> bool) -> TemplateSet {
        TemplateSet {
            templates: self.templates.iter().filter(|t| keep(t)).cloned().collect(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Builds the template set from seeds and the curated files in `curated_dir`.
/// A missing curated file is reported as a warning and contributes nothing;
/// a present file with the wrong size is an error.
pub fn build_template_set(seeds: &Seeds, curated_dir: &Path) -> Result<TemplateSet, TemplateError> {
    let mut all = Vec::new();
    for seed in &seeds.seeds {
        all.push(seed.clone());
        all.extend(perturb_adverbs(seed)?);
        all.extend(perturb_quantifiers(seed)?);
        all.extend(perturb_grammar(seed, &seeds.grammar_overrides)?);
    }
    let mut warnings = Vec::new();
    for category in Category::CURATED {
        let path = curated_dir.join(category.file_name());
        if !path.exists() {
            warnings.push(
                TemplateError::CountMismatch {
                    category,
                    expected: category.default_count(),
                    found: 0,
                }
                .to_string(),
            );
            continue;
        }
        all.extend(load_curated(&path, category, Some(category.default_count()))?);
    }
    let mut set = TemplateSet::from_templates(all)?;
    set.warnings = warnings;
    Ok(set)
}

/// Loads seeds and curated files from one directory.
pub fn load_template_set(dir: &Path) -> Result<TemplateSet, TemplateError> {
    build_template_set(&load_seeds(dir)?, dir)
}

/// Source of paraphrases for regenerating the semantic category. The default
/// build never calls one; the shipped file is curated.
pub trait ParaphraseProvider {
    fn paraphrase(&self, template: &Template, k: usize) -> Vec<String>;
}

/// Asks `provider` for `k` paraphrases per seed and keeps the valid, distinct
/// ones as semantic-paraphrase templates. Rejected texts are returned too.
pub fn regenerate_paraphrases(
    provider: &dyn ParaphraseProvider,
    seeds: &[Template],
    k: usize,
) -> (Vec<Template>, Vec<(String, Validation)>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for seed in seeds {
        for text in provider.paraphrase(seed, k) {
            let v = validate_template(&text);
            if !v.is_ok() {
                rejected.push((text, v));
                continue;
            }
            if !seen.insert(text.clone()) {
                continue;
            }
            if let Ok(t) = Template::curated(
                &seed.seed_id,
                Category::SemanticParaphrase,
                &text,
                seed.number,
                find_adverb(&text).as_deref(),
            ) {
                kept.push(t);
            }
        }
    }
    (kept, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_depend_on_all_three_parts() {
        let a = template_id("seed-01", Category::Main, "x [TARGET] y [MASK].");
        assert_eq!(a.len(), 20);
        assert_ne!(a, template_id("seed-02", Category::Main, "x [TARGET] y [MASK]."));
        assert_ne!(a, template_id("seed-01", Category::StructuralShort, "x [TARGET] y [MASK]."));
    }

    #[test]
    fn normalized_rejects_forged_ids() {
        let t = Template {
            id: "tpl-0000000000000000".into(),
            seed_id: "s".into(),
            text: "Banks see [TARGET] as [MASK].".into(),
            category: Category::SemanticParaphrase,
            number: Number::Plural,
            adverb: None,
            frame: None,
        };
        assert!(matches!(t.normalized(), Err(TemplateError::IdMismatch { .. })));
    }

    struct Echo;
    impl ParaphraseProvider for Echo {
        fn paraphrase(&self, t: &Template, _k: usize) -> Vec<String> {
            vec![
                t.text.replace("seen", "regarded"),
                "[MASK] [TARGET].".into(),
                t.text.replace("seen", "regarded"),
            ]
        }
    }

    #[test]
    fn provider_output_is_validated_and_deduplicated() {
        let seed = Template::seed("s", "In terms of income, [TARGET] are often seen as [MASK].", None)
            .unwrap();
        let (kept, rejected) = regenerate_paraphrases(&Echo, &[seed], 2);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].category, Category::SemanticParaphrase);
        assert_eq!(rejected.len(), 1);
    }
}
