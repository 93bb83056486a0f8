#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use soceval::corpus::{load_irrelevant, CorpusPlan, ExpandOptions, FillSet, Prompt};
use soceval::lexicon::{load_lexicon, Domain, Lexicon, TargetOptions, Term};
use soceval::scorer::{ClassMasses, TableWeights};
use soceval::templates::{load_template_set, Number, Template};

pub fn shipped_lexicon() -> Lexicon {
    load_lexicon(&soceval::default_lexicon_dir()).unwrap()
}

pub fn shipped_fills(lex: &Lexicon) -> FillSet {
    let irrelevant = load_irrelevant(&soceval::default_irrelevant_path()).unwrap();
    FillSet::from_lexicon(lex, &irrelevant).unwrap()
}

pub const FIXTURE_TERMS: &[&str] = &[
    "gender/women",
    "gender/men",
    "race/white",
    "race/black",
    "race/indigenous",
    "marital/married",
    "marital/widowed",
    "religion/muslim",
    "neutral/they",
    "neutral/these-people",
];

pub const FIXTURE_NAMES: &[&str] = &["Allison", "Asia", "Brad", "Darnell"];

/// Small lexicon: 10 base terms, 22 composites and 4 names (36 targets),
/// plus the full socioeconomic fill list.
pub fn fixture_lexicon() -> Lexicon {
    let full = shipped_lexicon();
    let terms: Vec<Term> = full
        .terms()
        .iter()
        .filter(|t| t.domain == Domain::Socioeconomic || FIXTURE_TERMS.contains(&t.id.as_str()))
        .cloned()
        .collect();
    let names = full
        .names()
        .iter()
        .filter(|n| FIXTURE_NAMES.contains(&n.name.as_str()))
        .cloned()
        .collect();
    Lexicon::new(terms, names).unwrap()
}

/// Four singular and eight plural templates from the shipped set.
pub fn fixture_templates() -> Vec<Template> {
    let set = load_template_set(&soceval::default_templates_dir()).unwrap();
    let singular = set.templates().iter().filter(|t| t.number == Number::Singular).take(4);
    let plural = set.templates().iter().filter(|t| t.number == Number::Plural).take(8);
    singular.chain(plural).cloned().collect()
}

pub struct Fixture {
    pub lex: Lexicon,
    pub templates: Vec<Template>,
    pub targets: Vec<Term>,
    pub fills: FillSet,
}

impl Fixture {
    pub fn new() -> Fixture {
        let lex = fixture_lexicon();
        let targets = lex.target_terms(&TargetOptions::default()).unwrap();
        let fills = shipped_fills(&lex);
        Fixture {
            lex,
            templates: fixture_templates(),
            targets,
            fills,
        }
    }

    pub fn prompts(&self) -> Vec<Prompt> {
        CorpusPlan::new(&self.templates, &self.targets, ExpandOptions::default())
            .unwrap()
            .prompts()
            .collect()
    }
}

fn masses(poor: f64, rich: f64) -> ClassMasses {
    ClassMasses {
        poor: Some(poor),
        rich: Some(rich),
        irrelevant: None,
    }
}

/// Per-subgroup weights with distinct poor/rich multipliers for every label.
pub fn subgroup_weights() -> TableWeights {
    let mut w = TableWeights {
        base: ClassMasses::new(1.0, 1.0, 0.25),
        ..Default::default()
    };
    for (label, p, r) in [
        ("female", 1.6, 0.9),
        ("male", 0.8, 1.3),
        ("White", 0.7, 1.5),
        ("Black", 1.4, 0.8),
        ("Indigenous", 1.9, 0.6),
        ("Married", 0.6, 1.2),
        ("Widowed", 1.7, 0.7),
        ("Muslim", 1.3, 0.9),
        ("neutral", 1.1, 1.0),
        ("white", 0.9, 1.4),
        ("non_white", 2.2, 0.5),
    ] {
        w.subgroups.insert(label.into(), masses(p, r));
    }
    w
}

/// Subgroup labels of a target id, derived from the id alone: composites
/// list their constituent base terms after the domain prefix.
pub fn oracle_labels(lex: &Lexicon, term_id: &str) -> Vec<String> {
    if let Some(name) = term_id.strip_prefix("name/") {
        let e = lex
            .names()
            .iter()
            .find(|n| n.name.to_lowercase() == name)
            .unwrap();
        return vec![e.gender_label.as_str().into(), e.race_label.as_str().into()];
    }
    let mut parts = term_id.split('/');
    let prefix = parts.next().unwrap();
    let rest: Vec<&str> = parts.collect();
    let domains: Vec<&str> = match prefix {
        "race_gender" => vec!["race", "gender"],
        "marital_gender" => vec!["marital", "gender"],
        "marital_race_gender" => vec!["marital", "race", "gender"],
        d => vec![d],
    };
    domains
        .iter()
        .zip(&rest)
        .map(|(d, slug)| lex.get(&format!("{d}/{slug}")).unwrap().subgroup.clone())
        .collect()
}

/// Per-fill masses of one prompt straight from the weight table.
pub fn oracle_class_masses(w: &TableWeights, labels: &[String]) -> (f64, f64, f64) {
    let mut m = [
        w.base.poor.unwrap_or(1.0),
        w.base.rich.unwrap_or(1.0),
        w.base.irrelevant.unwrap_or(0.0),
    ];
    for l in labels {
        if let Some(s) = w.subgroups.get(l) {
            m[0] *= s.poor.unwrap_or(1.0);
            m[1] *= s.rich.unwrap_or(1.0);
            m[2] *= s.irrelevant.unwrap_or(1.0);
        }
    }
    (m[0], m[1], m[2])
}

/// Pooled (poor, rich, relevant, irrelevant) normalized mass of one prompt.
pub fn oracle_prompt(w: &TableWeights, labels: &[String], n_poor: f64, n_rich: f64, n_irr: f64) -> [f64; 4] {
    let (p, r, i) = oracle_class_masses(w, labels);
    let total = n_poor * p + n_rich * r + n_irr * i;
    let poor = n_poor * p / total;
    let rich = n_rich * r / total;
    [poor, rich, poor + rich, n_irr * i / total]
}

/// Brute-force pooled PAR and LMCS over a set of prompts, plus the mean of
/// per-prompt PAR.
#[derive(Debug, Clone, Copy)]
pub struct OracleGroup {
    pub pooled_par: f64,
    pub pooled_lmcs: f64,
    pub mean_par: f64,
    pub n: usize,
}

pub fn oracle_group<'a>(
    lex: &Lexicon,
    w: &TableWeights,
    prompts: impl IntoIterator<Item = &'a Prompt>,
) -> OracleGroup {
    let (mut poor, mut rich, mut rel, mut irr, mut par_sum, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0);
    let mut cache: HashMap<String, [f64; 4]> = HashMap::new();
    for p in prompts {
        let m = *cache
            .entry(p.term_id.clone())
            .or_insert_with(|| oracle_prompt(w, &oracle_labels(lex, &p.term_id), 9.0, 9.0, 18.0));
        poor += m[0];
        rich += m[1];
        rel += m[2];
        irr += m[3];
        par_sum += m[0] / (m[0] + m[1]);
        n += 1;
    }
    OracleGroup {
        pooled_par: poor / (poor + rich),
        pooled_lmcs: rel / (rel + irr),
        mean_par: par_sum / n as f64,
        n,
    }
}

/// Prompts grouped by term id.
pub fn by_term(prompts: &[Prompt]) -> BTreeMap<String, Vec<&Prompt>> {
    let mut out: BTreeMap<String, Vec<&Prompt>> = BTreeMap::new();
    for p in prompts {
        out.entry(p.term_id.clone()).or_default().push(p);
    }
    out
}
