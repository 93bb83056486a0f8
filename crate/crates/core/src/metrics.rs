//! LMCS, PAR and ELS, per prompt and aggregated over groups.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FillClass, FillSet, GroupKeys, Prompt};
use crate::lexicon::{Domain, Lexicon};
use crate::scorer::{ChoiceScore, Mode};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("zero total mass in {0}")]
    ZeroMass(String),
    #[error("incomplete scores for {scope}: missing {}", missing.join(", "))]
    IncompleteScores { scope: String, missing: Vec<String> },
    #[error("empty group {0}")]
    EmptyGroup(String),
    #[error("rows computed under different policies ({left} vs {right})")]
    PolicyMismatch { left: Policy, right: Policy },
    #[error("prompt {0} mixes masked and causal scores")]
    MixedModes(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Mean of per-prompt metrics.
    #[default]
    Macro,
    /// Metrics of masses pooled over the group.
    Micro,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Macro => "macro",
            Policy::Micro => "micro",
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Policy::Macro),
            "micro" => Ok(Policy::Micro),
            other => Err(format!("unknown policy `{other}` (expected macro or micro)")),
        }
    }
}

/// Aggregation settings shared by every computed row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub policy: Policy,
    pub els_normalizer: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            policy: Policy::Macro,
            els_normalizer: true,
        }
    }
}

/// relevant / (relevant + irrelevant).
pub fn lmcs(relevant: f64, irrelevant: f64) -> Result<f64, MetricError> {
    let total = relevant + irrelevant;
    if total.is_nan() || total <= 0.0 {
        return Err(MetricError::ZeroMass("LMCS".into()));
    }
    Ok(relevant / total)
}

/// poor / (poor + rich).
pub fn par(poor: f64, rich: f64) -> Result<f64, MetricError> {
    let total = poor + rich;
    if total.is_nan() || total <= 0.0 {
        return Err(MetricError::ZeroMass("PAR".into()));
    }
    Ok(poor / total)
}

/// lmcs × min(par, 1 − par), divided by 0.5 when `normalizer` is set.
pub fn els(lmcs: f64, par: f64, normalizer: bool) -> f64 {
    let balance = par.min(1.0 - par);
    if normalizer {
        lmcs * balance / 0.5
    } else {
        lmcs * balance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceMass {
    pub relevant_mass: f64,
    pub irrelevant_mass: f64,
    pub poor_mass: f64,
    pub rich_mass: f64,
}

/// Converts one prompt's scores to class masses. Masked scores are
/// renormalized over the presented fills (softmax); causal scores contribute
/// exp(mean token logprob). Scores for fills outside `fills` are ignored.
pub fn per_prompt_masses(
    prompt_id: &str,
    scores: &[ChoiceScore],
    fills: &FillSet,
) -> Result<ChoiceMass, MetricError> {
    let mut by_fill: BTreeMap<&str, &ChoiceScore> = BTreeMap::new();
    for s in scores {
        by_fill.insert(s.fill_id.as_str(), s);
    }
    let missing: Vec<String> = fills
        .fills()
        .iter()
        .filter(|f| !by_fill.contains_key(f.id.as_str()))
        .map(|f| f.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::IncompleteScores {
            scope: format!("prompt {prompt_id}"),
            missing,
        });
    }
    let presented: Vec<(FillClass, &ChoiceScore)> = fills
        .fills()
        .iter()
        .map(|f| (f.class, by_fill[f.id.as_str()]))
        .collect();
    let mode = presented[0].1.mode;
    if presented.iter().any(|(_, s)| s.mode != mode) {
        return Err(MetricError::MixedModes(prompt_id.to_string()));
    }
    let shift = match mode {
        Mode::Masked => presented
            .iter()
            .map(|(_, s)| s.logprob)
            .fold(f64::NEG_INFINITY, f64::max),
        Mode::Causal => 0.0,
    };
    if shift == f64::NEG_INFINITY {
        return Err(MetricError::ZeroMass(format!("prompt {prompt_id}")));
    }
    let mut m = ChoiceMass {
        relevant_mass: 0.0,
        irrelevant_mass: 0.0,
        poor_mass: 0.0,
        rich_mass: 0.0,
    };
    let mut total = 0.0;
    for (class, s) in &presented {
        let w = (s.logprob - shift).exp();
        total += w;
        match class {
            FillClass::Poor => m.poor_mass += w,
            FillClass::Rich => m.rich_mass += w,
            FillClass::Irrelevant => m.irrelevant_mass += w,
        }
    }
    if mode == Mode::Masked {
        m.poor_mass /= total;
        m.rich_mass /= total;
        m.irrelevant_mass /= total;
    }
    m.relevant_mass = m.poor_mass + m.rich_mass;
    Ok(m)
}

/// Masses and metrics of one prompt, with the keys used for grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMetrics {
    pub prompt_id: String,
    pub template_id: String,
    pub term_id: String,
    pub group_keys: GroupKeys,
    pub mass: ChoiceMass,
    pub lmcs: f64,
    pub par: f64,
    pub els: f64,
}

pub fn prompt_metrics(
    prompt: &Prompt,
    scores: &[ChoiceScore],
    fills: &FillSet,
    els_normalizer: bool,
) -> Result<PromptMetrics, MetricError> {
    let mass = per_prompt_masses(&prompt.prompt_id, scores, fills)?;
    let l = lmcs(mass.relevant_mass, mass.irrelevant_mass)?;
    let p = par(mass.poor_mass, mass.rich_mass)?;
    Ok(PromptMetrics {
        prompt_id: prompt.prompt_id.clone(),
        template_id: prompt.template_id.clone(),
        term_id: prompt.term_id.clone(),
        group_keys: prompt.group_keys.clone(),
        mass,
        lmcs: l,
        par: p,
        els: els(l, p, els_normalizer),
    })
}

/// One aggregated row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub group: String,
    pub n: usize,
    #[serde(rename = "LMCS")]
    pub lmcs: f64,
    #[serde(rename = "PAR")]
    pub par: f64,
    #[serde(rename = "ELS")]
    pub els: f64,
    pub policy: Policy,
    pub els_normalizer: bool,
}

/// Common grouping keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Term,
    /// `<domain>/<labels joined by +>`
    Subgroup,
    Domain,
}

impl GroupBy {
    pub fn key(self, m: &PromptMetrics) -> String {
        match self {
            GroupBy::Term => m.term_id.clone(),
            GroupBy::Subgroup => format!(
                "{}/{}",
                m.group_keys.domain,
                m.group_keys.subgroups.join("+")
            ),
            GroupBy::Domain => m.group_keys.domain.to_string(),
        }
    }
}

/// Aggregates one group. Inputs are summed in prompt-id order, so the result
/// does not depend on input order.
pub fn aggregate_group(
    group: &str,
    items: &[&PromptMetrics],
    cfg: MetricConfig,
) -> Result<MetricRow, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyGroup(group.to_string()));
    }
    let mut sorted: Vec<&PromptMetrics> = items.to_vec();
    sorted.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
    let n = sorted.len();
    let (l, p, e) = match cfg.policy {
        Policy::Macro => {
            let mean = |f: fn(&PromptMetrics) -> f64| {
                sorted.iter().map(|m| f(m)).sum::<f64>() / n as f64
            };
            (mean(|m| m.lmcs), mean(|m| m.par), mean(|m| m.els))
        }
        Policy::Micro => {
            let sum = |f: fn(&ChoiceMass) -> f64| sorted.iter().map(|m| f(&m.mass)).sum::<f64>();
            let l = lmcs(sum(|m| m.relevant_mass), sum(|m| m.irrelevant_mass))?;
            let p = par(sum(|m| m.poor_mass), sum(|m| m.rich_mass))?;
            (l, p, els(l, p, cfg.els_normalizer))
        }
    };
    Ok(MetricRow {
        group: group.to_string(),
        n,
        lmcs: l,
        par: p,
        els: e,
        policy: cfg.policy,
        els_normalizer: cfg.els_normalizer,
    })
}

/// Groups `items` by `key` and aggregates each group; rows come out in key order.
pub fn aggregate<'a>(
    items: impl IntoIterator<Item = &'a PromptMetrics>,
    key: impl Fn(&PromptMetrics) -> Option<String>,
    cfg: MetricConfig,
) -> Result<Vec<MetricRow>, MetricError> {
    let mut groups: BTreeMap<String, Vec<&PromptMetrics>> = BTreeMap::new();
    for m in items {
        if let Some(k) = key(m) {
            groups.entry(k).or_default().push(m);
        }
    }
    groups
        .iter()
        .map(|(k, v)| aggregate_group(k, v, cfg))
        .collect()
}

/// PAR over neutral-term prompts. Every neutral term of `lex` must appear.
pub fn neutral_level(
    metrics: &[PromptMetrics],
    lex: &Lexicon,
    cfg: MetricConfig,
) -> Result<f64, MetricError> {
    let neutral: Vec<&PromptMetrics> = metrics
        .iter()
        .filter(|m| m.group_keys.domain == Domain::Neutral)
        .collect();
    let missing: Vec<String> = lex
        .domain(Domain::Neutral)
        .filter(|t| !neutral.iter().any(|m| m.term_id == t.id))
        .map(|t| t.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::IncompleteScores {
            scope: "neutral level".into(),
            missing,
        });
    }
    Ok(aggregate_group("neutral", &neutral, cfg)?.par)
}

fn same_policy(a: &MetricRow, b: &MetricRow) -> Result<(), MetricError> {
    if a.policy != b.policy {
        return Err(MetricError::PolicyMismatch {
            left: a.policy,
            right: b.policy,
        });
    }
    Ok(())
}

/// PAR(a) − PAR(b).
pub fn par_gap(a: &MetricRow, b: &MetricRow) -> Result<f64, MetricError> {
    same_policy(a, b)?;
    Ok(a.par - b.par)
}

/// PAR(composite) − PAR(component).
pub fn par_variation(composite: &MetricRow, component: &MetricRow) -> Result<f64, MetricError> {
    same_policy(composite, component)?;
    Ok(composite.par - component.par)
}

pub const CSV_HEADER: &str = "group,n,LMCS,PAR,ELS,policy,els_normalizer";

/// Quotes a CSV field when it contains a delimiter, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with full-precision floats.
pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.group),
            r.n,
            r.lmcs,
            r.par,
            r.els,
            r.policy,
            r.els_normalizer
        );
    }
    out
}

pub fn rows_to_json(rows: &[MetricRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas() {
        assert_eq!(lmcs(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(lmcs(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(par(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(els(1.0, 0.5, true), 1.0);
        assert_eq!(els(0.3, 1.0, true), 0.0);
        assert_eq!(els(0.5, 0.5, true), 0.5);
        assert_eq!(els(0.5, 0.5, false), 0.25);
        assert_eq!(par(0.0, 0.0), Err(MetricError::ZeroMass("PAR".into())));
        assert!(lmcs(0.0, 0.0).is_err());
    }

    fn pm(id: &str, poor: f64, rich: f64) -> PromptMetrics {
        PromptMetrics {
            prompt_id: id.into(),
            template_id: "t".into(),
            term_id: "gender/men".into(),
            group_keys: GroupKeys {
                domain: Domain::Gender,
                subgroups: vec!["male".into()],
            },
            mass: ChoiceMass {
                relevant_mass: poor + rich,
                irrelevant_mass: 0.0,
                poor_mass: poor,
                rich_mass: rich,
            },
            lmcs: 1.0,
            par: poor / (poor + rich),
            els: els(1.0, poor / (poor + rich), true),
        }
    }

    #[test]
    fn macro_and_micro_differ_on_unequal_weights() {
        let a = pm("a", 0.2, 0.8);
        let b = pm("b", 8.0, 2.0);
        let mac = aggregate_group("g", &[&a, &b], MetricConfig::default()).unwrap();
        assert!((mac.par - 0.5).abs() < 1e-15);
        let micro = aggregate_group(
            "g",
            &[&a, &b],
            MetricConfig {
                policy: Policy::Micro,
                els_normalizer: true,
            },
        )
        .unwrap();
        assert!((micro.par - 8.2 / 11.0).abs() < 1e-15);
        assert!(matches!(
            aggregate_group("g", &[], MetricConfig::default()),
            Err(MetricError::EmptyGroup(_))
        ));
    }

    #[test]
    fn gap_requires_matching_policy() {
        let row = |par, policy| MetricRow {
            group: "g".into(),
            n: 1,
            lmcs: 1.0,
            par,
            els: 0.0,
            policy,
            els_normalizer: true,
        };
        let g = par_gap(&row(0.677, Policy::Macro), &row(0.527, Policy::Macro)).unwrap();
        assert!((g - 0.150).abs() < 1e-12);
        assert!(par_gap(&row(0.6, Policy::Macro), &row(0.5, Policy::Micro)).is_err());
    }

    #[test]
    fn csv_has_fixed_columns() {
        let rows = vec![aggregate_group("gender", &[&pm("a", 1.0, 1.0)], MetricConfig::default()).unwrap()];
        let csv = rows_to_csv(&rows);
        assert_eq!(csv, "group,n,LMCS,PAR,ELS,policy,els_normalizer\ngender,1,1,0.5,1,macro,true\n");
    }
}
