//! Term inventories: demographic domains, neutral terms, names, socioeconomic
//! fill words, and the intersectional composites built from them.
//!
//! Term files are UTF-8 JSON Lines, one [`Term`] per line. The names file
//! (`names.jsonl`) holds [`NameEntry`] records instead. Number forms are
//! curated in the files; nothing here pluralizes or lemmatizes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const NAMES_FILE: &str = "names.jsonl";
const HEAD_NOUN: &str = "people";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("duplicate term `{id}` in {}", path.display())]
    DuplicateTerm { id: String, path: PathBuf },
    #[error("term `{id}` has no singular form")]
    MissingSingularForm { id: String },
    #[error("malformed lexicon file {} line {line}: {reason}", path.display())]
    MalformedFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("unsupported domain combination: {0}")]
    UnsupportedDomainCombination(String),
    #[error("attribute term `{id}` does not end in the head noun \"people\"")]
    MissingHeadNoun { id: String },
    #[error("io error reading {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Domain a term belongs to. The three composite domains hold the
/// intersectional terms produced by [`compose_intersections`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Gender,
    Marital,
    Race,
    Religion,
    Neutral,
    Name,
    Socioeconomic,
    RaceGender,
    MaritalGender,
    MaritalRaceGender,
}

impl Domain {
    pub const ALL: [Domain; 10] = [
        Domain::Gender,
        Domain::Marital,
        Domain::Race,
        Domain::Religion,
        Domain::Neutral,
        Domain::Name,
        Domain::Socioeconomic,
        Domain::RaceGender,
        Domain::MaritalGender,
        Domain::MaritalRaceGender,
    ];

    /// The four single-attribute demographic domains.
    pub const DEMOGRAPHIC: [Domain; 4] =
        [Domain::Gender, Domain::Marital, Domain::Race, Domain::Religion];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Gender => "gender",
            Domain::Marital => "marital",
            Domain::Race => "race",
            Domain::Religion => "religion",
            Domain::Neutral => "neutral",
            Domain::Name => "name",
            Domain::Socioeconomic => "socioeconomic",
            Domain::RaceGender => "race_gender",
            Domain::MaritalGender => "marital_gender",
            Domain::MaritalRaceGender => "marital_race_gender",
        }
    }

    pub fn is_composite(self) -> bool {
        matches!(
            self,
            Domain::RaceGender | Domain::MaritalGender | Domain::MaritalRaceGender
        )
    }

    /// Constituent domains of a composite, in composition order.
    pub fn constituents(self) -> Option<&'static [Domain]> {
        COMPOSITION_RULES
            .iter()
            .find(|(d, _)| *d == self)
            .map(|(_, parts)| *parts)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

/// Permitted composite domains and their ordered constituents. The last
/// constituent always supplies the head noun.
pub const COMPOSITION_RULES: [(Domain, &[Domain]); 3] = [
    (Domain::RaceGender, &[Domain::Race, Domain::Gender]),
    (Domain::MaritalGender, &[Domain::Marital, Domain::Gender]),
    (
        Domain::MaritalRaceGender,
        &[Domain::Marital, Domain::Race, Domain::Gender],
    ),
];

fn is_false(b: &bool) -> bool {
    !*b
}

/// A lexicon entry substituted for `[TARGET]` or `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub id: String,
    pub surface_plural: String,
    #[serde(default)]
    pub surface_singular: String,
    pub domain: Domain,
    pub subgroup: String,
    #[serde(default)]
    pub possessive: bool,
    /// Entry added beyond the seed examples.
    #[serde(default, skip_serializing_if = "is_false")]
    pub curated: bool,
    /// Constituent term ids, for composites.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<String>,
    /// Subgroup labels used for grouping; defaults to `[subgroup]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl Term {
    pub fn labels(&self) -> &[String] {
        if self.labels.is_empty() {
            std::slice::from_ref(&self.subgroup)
        } else {
            &self.labels
        }
    }

    pub fn is_composite(&self) -> bool {
        !self.parts.is_empty()
    }

    /// Trailing component of the id (`"gender/your-sons"` -> `"your-sons"`).
    pub fn slug(&self) -> &str {
        self.id.rsplit('/').next().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderLabel {
    Female,
    Male,
}

impl GenderLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Female => "female",
            GenderLabel::Male => "male",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceLabel {
    White,
    NonWhite,
}

impl RaceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RaceLabel::White => "white",
            RaceLabel::NonWhite => "non_white",
        }
    }
}

/// A personal name with its reference gender and race labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameEntry {
    pub name: String,
    pub gender_label: GenderLabel,
    pub race_label: RaceLabel,
    #[serde(default, skip_serializing_if = "is_false")]
    pub curated: bool,
}

impl NameEntry {
    pub fn term_id(&self) -> String {
        format!("name/{}", self.name.to_lowercase())
    }

    /// Target term for the name. Names have no number inflection.
    pub fn to_term(&self) -> Term {
        Term {
            id: self.term_id(),
            surface_plural: self.name.clone(),
            surface_singular: self.name.clone(),
            domain: Domain::Name,
            subgroup: format!("{}_{}", self.race_label.as_str(), self.gender_label.as_str()),
            possessive: false,
            curated: self.curated,
            parts: Vec::new(),
            labels: vec![
                self.gender_label.as_str().to_string(),
                self.race_label.as_str().to_string(),
            ],
        }
    }
}

/// Options controlling which composites enter the target-term list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetOptions {
    /// Drop composites built on possessive gender terms ("your White sons").
    #[serde(default)]
    pub exclude_possessive_composites: bool,
}

/// Validated, immutable term inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    terms: Vec<Term>,
    names: Vec<NameEntry>,
}

impl Lexicon {
    /// Builds a lexicon from in-memory entries, applying the same validation
    /// as [`load_lexicon`].
    pub fn new(terms: Vec<Term>, names: Vec<NameEntry>) -> Result<Self, LexiconError> {
        let origin = PathBuf::from("<memory>");
        let mut seen = HashSet::new();
        let mut checked = Vec::with_capacity(terms.len());
        for term in terms {
            checked.push(validate_term(term, &origin, 0, &mut seen)?);
        }
        for entry in &names {
            if !seen.insert(entry.term_id()) {
                return Err(LexiconError::DuplicateTerm {
                    id: entry.term_id(),
                    path: origin.clone(),
                });
            }
        }
        Ok(Lexicon {
            terms: checked,
            names,
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn names(&self) -> &[NameEntry] {
        &self.names
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &Term> {
        self.terms.iter().filter(move |t| t.domain == domain)
    }

    pub fn get(&self, id: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.id == id)
    }

    /// Socioeconomic fill terms, poor class first.
    pub fn fills(&self) -> Vec<&Term> {
        let mut poor: Vec<&Term> = self
            .domain(Domain::Socioeconomic)
            .filter(|t| t.subgroup == "poor")
            .collect();
        poor.extend(
            self.domain(Domain::Socioeconomic)
                .filter(|t| t.subgroup == "rich"),
        );
        poor
    }

    pub fn name_terms(&self) -> Vec<Term> {
        self.names.iter().map(NameEntry::to_term).collect()
    }

    /// Every term substituted for `[TARGET]`: demographic and neutral terms,
    /// the three composite families, then names.
    pub fn target_terms(&self, opts: &TargetOptions) -> Result<Vec<Term>, LexiconError> {
        let mut out: Vec<Term> = self
            .terms
            .iter()
            .filter(|t| t.domain != Domain::Socioeconomic)
            .cloned()
            .collect();
        for (_, parts) in COMPOSITION_RULES {
            let composites = compose_intersections(self, parts)?;
            out.extend(
                composites
                    .into_iter()
                    .filter(|t| !(opts.exclude_possessive_composites && t.possessive)),
            );
        }
        out.extend(self.name_terms());
        Ok(out)
    }

    pub fn manifest(&self) -> Result<LexiconManifest, LexiconError> {
        let mut domains = BTreeMap::new();
        for t in &self.terms {
            if t.domain != Domain::Socioeconomic {
                *domains.entry(t.domain.as_str().to_string()).or_insert(0) += 1;
            }
        }
        let mut composites = BTreeMap::new();
        for (domain, parts) in COMPOSITION_RULES {
            composites.insert(
                domain.as_str().to_string(),
                compose_intersections(self, parts)?.len(),
            );
        }
        let mut names = BTreeMap::new();
        for n in &self.names {
            *names
                .entry(format!("{}_{}", n.race_label.as_str(), n.gender_label.as_str()))
                .or_insert(0) += 1;
        }
        let mut fills = BTreeMap::new();
        for t in self.domain(Domain::Socioeconomic) {
            *fills.entry(t.subgroup.clone()).or_insert(0) += 1;
        }
        let totals = ManifestTotals {
            demographic_and_neutral: domains.values().sum(),
            composites: composites.values().sum(),
            names: self.names.len(),
            fills: fills.values().sum(),
            targets: domains.values().sum::<usize>()
                + composites.values().sum::<usize>()
                + self.names.len(),
        };
        Ok(LexiconManifest {
            domains,
            composites,
            names,
            fills,
            totals,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTotals {
    pub demographic_and_neutral: usize,
    pub composites: usize,
    pub names: usize,
    pub fills: usize,
    pub targets: usize,
}

/// Per-domain counts written alongside the term files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconManifest {
    pub domains: BTreeMap<String, usize>,
    pub composites: BTreeMap<String, usize>,
    pub names: BTreeMap<String, usize>,
    pub fills: BTreeMap<String, usize>,
    pub totals: ManifestTotals,
}

impl LexiconManifest {
    /// Pretty JSON with a trailing newline; key order is fixed by the maps.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Differences from the reference inventory sizes; empty when they match.
    pub fn default_count_mismatches(&self) -> Vec<String> {
        let expected_domains = [
            ("gender", 16),
            ("marital", 6),
            ("race", 8),
            ("religion", 8),
            ("neutral", 17),
        ];
        let expected_composites = [
            ("race_gender", 128),
            ("marital_gender", 96),
            ("marital_race_gender", 768),
        ];
        let expected_names = [
            ("white_female", 22),
            ("non_white_female", 22),
            ("white_male", 22),
            ("non_white_male", 22),
        ];
        let expected_fills = [("poor", 9), ("rich", 9)];
        let mut out = Vec::new();
        let mut check = |section: &str, map: &BTreeMap<String, usize>, expected: &[(&str, usize)]| {
            for (key, want) in expected {
                let got = map.get(*key).copied().unwrap_or(0);
                if got != *want {
                    out.push(format!("{section}.{key}: expected {want}, found {got}"));
                }
            }
        };
        check("domains", &self.domains, &expected_domains);
        check("composites", &self.composites, &expected_composites);
        check("names", &self.names, &expected_names);
        check("fills", &self.fills, &expected_fills);
        out
    }
}

fn validate_term(
    mut term: Term,
    path: &Path,
    line: usize,
    seen: &mut HashSet<String>,
) -> Result<Term, LexiconError> {
    if term.id.is_empty() || term.surface_plural.trim().is_empty() {
        return Err(LexiconError::MalformedFile {
            path: path.to_path_buf(),
            line,
            reason: format!("term `{}` has an empty id or plural surface", term.id),
        });
    }
    if term.domain != Domain::Socioeconomic && term.surface_singular.trim().is_empty() {
        return Err(LexiconError::MissingSingularForm { id: term.id });
    }
    if term.domain == Domain::Socioeconomic && !matches!(term.subgroup.as_str(), "poor" | "rich")
    {
        return Err(LexiconError::MalformedFile {
            path: path.to_path_buf(),
            line,
            reason: format!(
                "socioeconomic term `{}` has subgroup `{}`, expected poor or rich",
                term.id, term.subgroup
            ),
        });
    }
    if !seen.insert(term.id.clone()) {
        return Err(LexiconError::DuplicateTerm {
            id: term.id,
            path: path.to_path_buf(),
        });
    }
    if term.labels.is_empty() && term.domain != Domain::Name {
        term.labels = Vec::new();
    }
    Ok(term)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, LexiconError> {
    let raw = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| LexiconError::MalformedFile {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

/// Loads every `*.jsonl` term file in `dir` (sorted by file name) plus the
/// optional `names.jsonl`.
pub fn load_lexicon(dir: &Path) -> Result<Lexicon, LexiconError> {
    let entries = fs::read_dir(dir).map_err(|source| LexiconError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();

    let mut seen = HashSet::new();
    let mut terms = Vec::new();
    let mut names = Vec::new();
    let mut term_files = 0;
    for path in &files {
        if path.file_name().is_some_and(|n| n == NAMES_FILE) {
            for (line, entry) in read_lines::<NameEntry>(path)? {
                let entry: NameEntry = entry;
                if entry.name.trim().is_empty() {
                    return Err(LexiconError::MalformedFile {
                        path: path.clone(),
                        line,
                        reason: "empty name".into(),
                    });
                }
                if !seen.insert(entry.term_id()) {
                    return Err(LexiconError::DuplicateTerm {
                        id: entry.term_id(),
                        path: path.clone(),
                    });
                }
                names.push(entry);
            }
            continue;
        }
        term_files += 1;
        for (line, term) in read_lines::<Term>(path)? {
            terms.push(validate_term(term, path, line, &mut seen)?);
        }
    }
    if term_files == 0 || terms.is_empty() {
        return Err(LexiconError::MalformedFile {
            path: dir.to_path_buf(),
            line: 0,
            reason: "directory contains no term entries".into(),
        });
    }
    Ok(Lexicon { terms, names })
}

/// Strips the trailing head noun from an attribute term ("White people" -> "White").
fn attribute_adjective<'a>(surface: &'a str, id: &str) -> Result<&'a str, LexiconError> {
    surface
        .strip_suffix(HEAD_NOUN)
        .map(str::trim_end)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| LexiconError::MissingHeadNoun { id: id.to_string() })
}

/// Splits a possessive surface into its determiner and noun phrase
/// ("your sons" -> ("your", "sons")).
fn split_possessive(surface: &str) -> (&str, &str) {
    match surface.split_once(' ') {
        Some((det, rest)) => (det, rest),
        None => ("", surface),
    }
}

fn attach(adjectives: &str, head: &str, possessive: bool) -> String {
    if possessive {
        let (det, noun) = split_possessive(head);
        format!("{det} {adjectives} {noun}")
    } else {
        format!("{adjectives} {head}")
    }
}

/// Builds the composite terms for an ordered domain list. Attribute terms lose
/// their head noun "people" and their adjectives are prefixed, in order, to
/// the gender term; a possessive determiner moves to the front.
pub fn compose_intersections(
    lex: &Lexicon,
    domains: &[Domain],
) -> Result<Vec<Term>, LexiconError> {
    let (composite, _) = COMPOSITION_RULES
        .iter()
        .find(|(_, parts)| *parts == domains)
        .ok_or_else(|| {
            LexiconError::UnsupportedDomainCombination(
                domains
                    .iter()
                    .map(|d| d.as_str())
                    .collect::<Vec<_>>()
                    .join(" x "),
            )
        })?;

    let (heads, attrs) = domains.split_last().expect("rules are non-empty");
    let mut combos: Vec<Vec<&Term>> = vec![Vec::new()];
    for domain in attrs {
        let members: Vec<&Term> = lex.domain(*domain).collect();
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                members.iter().map(move |m| {
                    let mut next = prefix.clone();
                    next.push(*m);
                    next
                })
            })
            .collect();
    }

    let gender: Vec<&Term> = lex.domain(*heads).collect();
    let mut out = Vec::with_capacity(combos.len() * gender.len());
    for combo in &combos {
        let mut adjectives = Vec::with_capacity(combo.len());
        let mut adjectives_singular = Vec::with_capacity(combo.len());
        for attr in combo {
            adjectives.push(attribute_adjective(&attr.surface_plural, &attr.id)?);
            adjectives_singular.push(attribute_adjective_singular(attr)?);
        }
        let adjectives = adjectives.join(" ");
        let adjectives_singular = adjectives_singular.join(" ");
        for head in &gender {
            if head.surface_singular.is_empty() {
                return Err(LexiconError::MissingSingularForm {
                    id: head.id.clone(),
                });
            }
            let mut parts: Vec<&Term> = combo.clone();
            parts.push(head);
            let id = format!(
                "{}/{}",
                composite.as_str(),
                parts.iter().map(|t| t.slug()).collect::<Vec<_>>().join("/")
            );
            let labels: Vec<String> = parts.iter().map(|t| t.subgroup.clone()).collect();
            out.push(Term {
                id,
                surface_plural: attach(&adjectives, &head.surface_plural, head.possessive),
                surface_singular: attach(
                    &adjectives_singular,
                    &head.surface_singular,
                    head.possessive,
                ),
                domain: *composite,
                subgroup: labels.join("+"),
                possessive: head.possessive,
                curated: false,
                parts: parts.iter().map(|t| t.id.clone()).collect(),
                labels,
            });
        }
    }
    Ok(out)
}

/// The adjective taken from an attribute's singular surface ("Married person"
/// -> "Married"). Falls back to the plural-derived adjective.
fn attribute_adjective_singular(attr: &Term) -> Result<&str, LexiconError> {
    match attr.surface_singular.strip_suffix("person") {
        Some(adj) if !adj.trim().is_empty() => Ok(adj.trim_end()),
        _ => attribute_adjective(&attr.surface_plural, &attr.id),
    }
}

/// The curated singular surface of a non-socioeconomic term.
pub fn singular_form(term: &Term) -> Result<&str, LexiconError> {
    if term.domain == Domain::Socioeconomic || term.surface_singular.trim().is_empty() {
        return Err(LexiconError::MissingSingularForm {
            id: term.id.clone(),
        });
    }
    Ok(&term.surface_singular)
}
