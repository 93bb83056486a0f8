//! Placeholder constraints for template text.

use serde::{Deserialize, Serialize};

pub const TARGET: &str = "[TARGET]";
pub const MASK: &str = "[MASK]";

/// A hard constraint violation. Templates carrying any of these are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    MissingTarget,
    DuplicateTarget,
    MissingMask,
    DuplicateMask,
    MaskInitial,
    /// `[MASK]` directly followed by `[TARGET]`.
    MaskBeforeTarget,
    /// `[TARGET]` directly followed by `[MASK]`.
    MaskAfterTarget,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::MissingTarget => "missing_target",
            Violation::DuplicateTarget => "duplicate_target",
            Violation::MissingMask => "missing_mask",
            Violation::DuplicateMask => "duplicate_mask",
            Violation::MaskInitial => "mask_initial",
            Violation::MaskBeforeTarget => "mask_before_target",
            Violation::MaskAfterTarget => "mask_after_target",
        }
    }
}

/// Curation-level checks, reported but never fatal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    NoFinancialContext,
    ExtraSensitiveContext,
}

impl Warning {
    pub fn code(self) -> &'static str {
        match self {
            Warning::NoFinancialContext => "no_financial_context",
            Warning::ExtraSensitiveContext => "extra_sensitive_context",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

const FINANCIAL_STEMS: &[&str] = &[
    "financ", "money", "wealth", "income", "bank", "lender", "loan", "credit", "property",
    "market", "econom", "salar", "wage", "earn", "budget", "invest", "debt", "mortgage", "rent",
    "afford", "insur", "housing", "job", "employ", "work", "class", "status", "profile",
    "standing", "stability", "cost", "price", "pay",
];

const SENSITIVE_WORDS: &[&str] = &[
    "man", "men", "woman", "women", "boy", "boys", "girl", "girls", "male", "female", "husband",
    "wife", "mother", "father", "son", "sons", "daughter", "daughters", "married", "divorced",
    "widowed", "white", "black", "asian", "hispanic", "latino", "indigenous", "arab", "muslim",
    "christian", "jewish", "hindu", "buddhist", "sikh", "atheist", "gender", "race", "racial",
    "religion", "religious", "ethnic", "ethnicity",
];

fn positions(text: &str, needle: &str) -> Vec<usize> {
    text.match_indices(needle).map(|(i, _)| i).collect()
}

fn only_space(s: &str) -> bool {
    s.chars().all(char::is_whitespace)
}

/// Checks `text` against the placeholder constraints. Never fails; an empty
/// result means the template is usable.
pub fn validate_template(text: &str) -> Validation {
    let mut v = Validation::default();
    let targets = positions(text, TARGET);
    let masks = positions(text, MASK);
    match targets.len() {
        0 => v.violations.push(Violation::MissingTarget),
        1 => {}
        _ => v.violations.push(Violation::DuplicateTarget),
    }
    match masks.len() {
        0 => v.violations.push(Violation::MissingMask),
        1 => {}
        _ => v.violations.push(Violation::DuplicateMask),
    }

    let first_token = text.trim_start_matches(|c: char| {
        c.is_whitespace() || (!c.is_alphanumeric() && c != '[')
    });
    if first_token.starts_with(MASK) {
        v.violations.push(Violation::MaskInitial);
    }

    for &m in &masks {
        for &t in &targets {
            if t >= m + MASK.len() && only_space(&text[m + MASK.len()..t]) {
                v.violations.push(Violation::MaskBeforeTarget);
            }
            if m >= t + TARGET.len() && only_space(&text[t + TARGET.len()..m]) {
                v.violations.push(Violation::MaskAfterTarget);
            }
        }
    }
    v.violations.sort();
    v.violations.dedup();

    let plain = text.replace(TARGET, " ").replace(MASK, " ").to_lowercase();
    if !FINANCIAL_STEMS.iter().any(|s| plain.contains(s)) {
        v.warnings.push(Warning::NoFinancialContext);
    }
    let sensitive = plain
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| SENSITIVE_WORDS.contains(&w));
    if sensitive {
        v.warnings.push(Warning::ExtraSensitiveContext);
    }
    v
}
