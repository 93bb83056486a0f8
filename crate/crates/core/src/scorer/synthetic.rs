//! In-process baseline scorers with closed-form metric values.
//!
//! Each assigns a non-negative mass to every fill and reports masked-mode
//! logprobs normalized over the presented set, so zero mass is -inf.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChoiceScore, Mode, ScoreError, Scorer};
use crate::corpus::{Fill, FillClass, Prompt};
use crate::digest::{sha256_bytes, sha256_hex};

fn scores_from_masses(
    scorer_id: &str,
    prompt: &Prompt,
    fills: &[Fill],
    masses: &[f64],
) -> Result<Vec<ChoiceScore>, ScoreError> {
    // Sum in fill-id order so the normalizer is bit-identical however the
    // fills are ordered.
    let mut order: Vec<usize> = (0..fills.len()).collect();
    order.sort_by(|&a, &b| fills[a].id.cmp(&fills[b].id));
    let total: f64 = order.iter().map(|&i| masses[i]).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(ScoreError::InvalidWeights(format!(
            "total mass {total} for prompt {}",
            prompt.prompt_id
        )));
    }
    Ok(fills
        .iter()
        .zip(masses)
        .map(|(f, m)| {
            let lp = (m / total).ln();
            ChoiceScore {
                scorer_id: scorer_id.to_string(),
                prompt_id: prompt.prompt_id.clone(),
                fill_id: f.id.clone(),
                logprob: lp,
                logprob_sum: lp,
                n_tokens: 1,
                mode: Mode::Masked,
                reduction: None,
                model_id: Some(scorer_id.to_string()),
            }
        })
        .collect())
}

fn class_count(fills: &[Fill], class: FillClass) -> f64 {
    fills.iter().filter(|f| f.class == class).count() as f64
}

/// All mass on relevant fills, half to each class.
#[derive(Debug, Clone, Default)]
pub struct IdealLm;

impl Scorer for IdealLm {
    fn id(&self) -> &str {
        "ideal_lm"
    }

    fn mode(&self) -> Mode {
        Mode::Masked
    }

    fn score_prompt(&self, prompt: &Prompt, fills: &[Fill]) -> Result<Vec<ChoiceScore>, ScoreError> {
        let poor = class_count(fills, FillClass::Poor);
        let rich = class_count(fills, FillClass::Rich);
        let masses: Vec<f64> = fills
            .iter()
            .map(|f| match f.class {
                FillClass::Poor => 0.5 / poor,
                FillClass::Rich => 0.5 / rich,
                FillClass::Irrelevant => 0.0,
            })
            .collect();
        scores_from_masses(self.id(), prompt, fills, &masses)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Poor,
    Rich,
}

/// All mass on one socioeconomic class.
#[derive(Debug, Clone)]
pub struct FullBiasLm {
    direction: Direction,
    id: String,
}

impl FullBiasLm {
    pub fn new(direction: Direction) -> Self {
        let id = match direction {
            Direction::Poor => "full_bias_lm:poor",
            Direction::Rich => "full_bias_lm:rich",
        };
        FullBiasLm {
            direction,
            id: id.to_string(),
        }
    }
}

impl Scorer for FullBiasLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> Mode {
        Mode::Masked
    }

    fn score_prompt(&self, prompt: &Prompt, fills: &[Fill]) -> Result<Vec<ChoiceScore>, ScoreError> {
        let target = match self.direction {
            Direction::Poor => FillClass::Poor,
            Direction::Rich => FillClass::Rich,
        };
        let masses: Vec<f64> = fills
            .iter()
            .map(|f| if f.class == target { 1.0 } else { 0.0 })
            .collect();
        scores_from_masses(&self.id, prompt, fills, &masses)
    }
}

/// I.i.d. uniform masses over every fill. Each draw is seeded from
/// (seed, prompt id, fill id), so results do not depend on call order.
#[derive(Debug, Clone)]
pub struct RandomLm {
    seed: u64,
    id: String,
}

impl RandomLm {
    pub fn new(seed: u64) -> Self {
        RandomLm {
            seed,
            id: format!("random_lm:seed={seed}"),
        }
    }

    fn draw(&self, prompt_id: &str, fill_id: &str) -> f64 {
        let key = sha256_bytes(&[&self.seed.to_string(), prompt_id, fill_id]);
        let mut rng = ChaCha8Rng::from_seed(key);
        // (0, 1]: a zero draw would make an all-zero prompt possible.
        1.0 - rng.gen::<f64>()
    }
}

impl Scorer for RandomLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> Mode {
        Mode::Masked
    }

    fn score_prompt(&self, prompt: &Prompt, fills: &[Fill]) -> Result<Vec<ChoiceScore>, ScoreError> {
        let masses: Vec<f64> = fills
            .iter()
            .map(|f| self.draw(&prompt.prompt_id, &f.id))
            .collect();
        scores_from_masses(&self.id, prompt, fills, &masses)
    }
}

/// Per-class masses. In [`TableWeights::base`] a missing entry means
/// (poor 1, rich 1, irrelevant 0); in multiplier tables it means 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMasses {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rich: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irrelevant: Option<f64>,
}

impl ClassMasses {
    pub fn new(poor: f64, rich: f64, irrelevant: f64) -> Self {
        ClassMasses {
            poor: Some(poor),
            rich: Some(rich),
            irrelevant: Some(irrelevant),
        }
    }

    fn get(&self, class: FillClass) -> Option<f64> {
        match class {
            FillClass::Poor => self.poor,
            FillClass::Rich => self.rich,
            FillClass::Irrelevant => self.irrelevant,
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> {
        [self.poor, self.rich, self.irrelevant].into_iter().flatten()
    }
}

/// Configured masses. The mass of fill `f` for a prompt is
/// `base[f.class] * Π subgroups[label][f.class] * terms[term_id][f.class]`,
/// the product running over the prompt's subgroup labels present in the table.
/// Every fill of a class gets the same mass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableWeights {
    #[serde(default)]
    pub base: ClassMasses,
    #[serde(default)]
    pub subgroups: BTreeMap<String, ClassMasses>,
    #[serde(default)]
    pub terms: BTreeMap<String, ClassMasses>,
}

impl TableWeights {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let all = std::iter::once(&self.base)
            .chain(self.subgroups.values())
            .chain(self.terms.values());
        for m in all {
            if let Some(v) = m.values().find(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(ScoreError::InvalidWeights(format!(
                    "mass {v} is not a finite non-negative number"
                )));
            }
        }
        Ok(())
    }

    /// Mass of one fill of `class` for a prompt with these labels and term.
    pub fn mass(&self, labels: &[String], term_id: &str, class: FillClass) -> f64 {
        let base = self.base.get(class).unwrap_or(match class {
            FillClass::Irrelevant => 0.0,
            _ => 1.0,
        });
        let sub: f64 = labels
            .iter()
            .filter_map(|l| self.subgroups.get(l))
            .map(|m| m.get(class).unwrap_or(1.0))
            .product();
        let term = self
            .terms
            .get(term_id)
            .and_then(|m| m.get(class))
            .unwrap_or(1.0);
        base * sub * term
    }
}

#[derive(Debug, Clone)]
pub struct TableLm {
    weights: TableWeights,
    id: String,
}

impl TableLm {
    pub fn new(weights: TableWeights) -> Result<Self, ScoreError> {
        weights.validate()?;
        let canonical = serde_json::to_string(&weights).expect("weights serialize");
        let id = format!("table_lm:{}", &sha256_hex(&[&canonical])[..12]);
        Ok(TableLm { weights, id })
    }

    pub fn weights(&self) -> &TableWeights {
        &self.weights
    }
}

impl Scorer for TableLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> Mode {
        Mode::Masked
    }

    fn score_prompt(&self, prompt: &Prompt, fills: &[Fill]) -> Result<Vec<ChoiceScore>, ScoreError> {
        let masses: Vec<f64> = fills
            .iter()
            .map(|f| {
                self.weights
                    .mass(&prompt.group_keys.subgroups, &prompt.term_id, f.class)
            })
            .collect();
        scores_from_masses(&self.id, prompt, fills, &masses)
    }
}
