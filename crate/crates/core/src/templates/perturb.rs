//! Rule-generated perturbations: adverbs, quantifiers and grammatical forms.

use super::validate::TARGET;
use super::{Agreement, Category, Number, Template, TemplateError};

pub const SEED_ADVERB: &str = "often";
pub const ADVERB_REPLACEMENTS: [&str; 5] = ["not often", "always", "never", "usually", "rarely"];

/// Byte offset of the first whole-word occurrence of `word`.
fn find_word(text: &str, word: &str) -> Option<usize> {
    text.match_indices(word).map(|(i, _)| i).find(|&i| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Five variants replacing "often" with each entry of [`ADVERB_REPLACEMENTS`].
pub fn perturb_adverbs(seed: &Template) -> Result<Vec<Template>, TemplateError> {
    let at = find_word(&seed.text, SEED_ADVERB).ok_or_else(|| TemplateError::AdverbNotFound {
        seed_id: seed.seed_id.clone(),
    })?;
    ADVERB_REPLACEMENTS
        .iter()
        .map(|adverb| {
            let text = format!(
                "{}{}{}",
                &seed.text[..at],
                adverb,
                &seed.text[at + SEED_ADVERB.len()..]
            );
            Template::derived(seed, Category::LexicalAdverb, text, seed.number, Some(adverb))
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// "some of [TARGET]" and "all [TARGET]" variants, capitalized when the
/// target opens the sentence.
pub fn perturb_quantifiers(seed: &Template) -> Result<Vec<Template>, TemplateError> {
    let at = seed
        .text
        .find(TARGET)
        .ok_or_else(|| TemplateError::ValidationFailure {
            text: seed.text.clone(),
            codes: vec!["missing_target".into()],
        })?;
    ["some of", "all"]
        .iter()
        .map(|q| {
            let quantified = if seed.text[..at].trim().is_empty() {
                capitalize(q)
            } else {
                q.to_string()
            };
            let text = format!("{}{} {}", &seed.text[..at], quantified, &seed.text[at..]);
            Template::derived(
                seed,
                Category::LexicalQuantifier,
                text,
                seed.number,
                seed.adverb.as_deref(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrammarForm {
    Singular,
    Future,
    Past,
    Active,
}

impl GrammarForm {
    pub const ALL: [GrammarForm; 4] = [
        GrammarForm::Singular,
        GrammarForm::Future,
        GrammarForm::Past,
        GrammarForm::Active,
    ];

    pub fn category(self) -> Category {
        match self {
            GrammarForm::Singular => Category::GrammarSingular,
            GrammarForm::Future => Category::GrammarFuture,
            GrammarForm::Past => Category::GrammarPast,
            GrammarForm::Active => Category::GrammarActive,
        }
    }
}

/// One grammatical variant rendered from the seed's verb frame.
pub fn grammar_variant(seed: &Template, form: GrammarForm) -> Result<Template, TemplateError> {
    let not_applicable = || TemplateError::TransformationNotApplicable {
        seed_id: seed.seed_id.clone(),
        category: form.category(),
    };
    let frame = seed.frame.as_ref().ok_or_else(not_applicable)?;
    let adverb = seed.adverb.as_deref().unwrap_or(SEED_ADVERB);
    let (text, number) = match form {
        GrammarForm::Singular => (frame.passive(&format!("is {adverb}")), Number::Singular),
        GrammarForm::Future => (frame.passive(&format!("will {adverb} be")), seed.number),
        GrammarForm::Past => {
            let aux = match frame.agreement {
                Agreement::Target => "were",
                Agreement::Singular => "was",
            };
            (frame.passive(&format!("{aux} {adverb}")), seed.number)
        }
        GrammarForm::Active => {
            let active = match (&frame.active, frame.agreement) {
                (Some(a), Agreement::Target) => a,
                _ => return Err(not_applicable()),
            };
            (
                format!(
                    "{}{} {adverb} {active} themselves {}.",
                    frame.lead, frame.subject, frame.complement
                ),
                seed.number,
            )
        }
    };
    Template::derived(seed, form.category(), text, number, Some(adverb))
}

/// The four grammatical variants of a main seed. Forms the frame cannot
/// express are taken from `overrides` (matched by seed id and category).
pub fn perturb_grammar(
    seed: &Template,
    overrides: &[Template],
) -> Result<Vec<Template>, TemplateError> {
    if seed.category != Category::Main {
        return Err(TemplateError::TransformationNotApplicable {
            seed_id: seed.seed_id.clone(),
            category: Category::GrammarSingular,
        });
    }
    GrammarForm::ALL
        .iter()
        .map(|&form| match grammar_variant(seed, form) {
            Err(TemplateError::TransformationNotApplicable { seed_id, category }) => overrides
                .iter()
                .find(|o| o.seed_id == seed_id && o.category == category)
                .cloned()
                .ok_or(TemplateError::TransformationNotApplicable { seed_id, category }),
            other => other,
        })
        .collect()
}
