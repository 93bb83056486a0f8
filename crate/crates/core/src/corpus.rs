//! Prompt corpus: templates × target terms, and candidate fills per prompt.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::digest::{sha256_bytes, sha256_hex};
use crate::lexicon::{Domain, Lexicon, Term};
use crate::templates::{Number, Template, MASK, TARGET};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("term `{term_id}` has no {number:?} surface form")]
    MissingSurfaceForm { term_id: String, number: Number },
    #[error("corpus parse error in {} line {line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("no candidate fills given")]
    EmptyFills,
    #[error("irrelevant word list {}: {reason}", path.display())]
    BadFillList { path: PathBuf, reason: String },
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKeys {
    pub domain: Domain,
    pub subgroups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub template_id: String,
    pub term_id: String,
    pub text_masked: String,
    pub number_agreement: Number,
    pub group_keys: GroupKeys,
}

pub fn prompt_id(template_id: &str, term_id: &str) -> String {
    sha256_hex(&[template_id, term_id])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillClass {
    Poor,
    Rich,
    Irrelevant,
}

impl FillClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FillClass::Poor => "poor",
            FillClass::Rich => "rich",
            FillClass::Irrelevant => "irrelevant",
        }
    }

    pub fn is_relevant(self) -> bool {
        self != FillClass::Irrelevant
    }
}

/// A word that can fill the `[MASK]` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fill {
    pub id: String,
    pub surface: String,
    pub class: FillClass,
}

/// The candidate set presented for every prompt: socioeconomic fills
/// followed by the LMCS irrelevant words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FillSet {
    fills: Vec<Fill>,
}

impl FillSet {
    pub fn new(fills: Vec<Fill>) -> Result<Self, CorpusError> {
        if fills.is_empty() {
            return Err(CorpusError::EmptyFills);
        }
        Ok(FillSet { fills })
    }

    /// Socioeconomic terms from the lexicon plus `irrelevant` nouns.
    pub fn from_lexicon(lex: &Lexicon, irrelevant: &[String]) -> Result<Self, CorpusError> {
        let mut fills: Vec<Fill> = lex
            .fills()
            .into_iter()
            .map(|t| Fill {
                id: t.id.clone(),
                surface: t.surface_plural.clone(),
                class: if t.subgroup == "poor" {
                    FillClass::Poor
                } else {
                    FillClass::Rich
                },
            })
            .collect();
        fills.extend(irrelevant.iter().map(|w| Fill {
            id: format!("irrelevant/{w}"),
            surface: w.clone(),
            class: FillClass::Irrelevant,
        }));
        FillSet::new(fills)
    }

    pub fn fills(&self) -> &[Fill] {
        &self.fills
    }

    pub fn len(&self) -> usize {
        self.fills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fills.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Fill> {
        self.fills.iter().find(|f| f.id == id)
    }

    pub fn count(&self, class: FillClass) -> usize {
        self.fills.iter().filter(|f| f.class == class).count()
    }
}

/// Reads a JSON array of irrelevant words.
pub fn load_irrelevant(path: &Path) -> Result<Vec<String>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    let words: Vec<String> = serde_json::from_str(&raw).map_err(|e| CorpusError::BadFillList {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if words.is_empty() || words.iter().any(|w| w.trim().is_empty()) {
        return Err(CorpusError::BadFillList {
            path: path.to_path_buf(),
            reason: "list is empty or has blank entries".into(),
        });
    }
    Ok(words)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFill {
    pub prompt_id: String,
    pub fill_id: String,
    pub fill_term: String,
    pub filled_text: String,
    pub fill_class: FillClass,
}

/// One candidate per fill, `[MASK]` replaced by the fill surface.
pub fn instantiate_fills(p: &Prompt, fills: &[Fill]) -> Result<Vec<CandidateFill>, CorpusError> {
    if fills.is_empty() {
        return Err(CorpusError::EmptyFills);
    }
    Ok(fills
        .iter()
        .map(|f| CandidateFill {
            prompt_id: p.prompt_id.clone(),
            fill_id: f.id.clone(),
            fill_term: f.surface.clone(),
            filled_text: p.text_masked.replacen(MASK, &f.surface, 1),
            fill_class: f.class,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandOptions {
    /// Put names into plural-agreement templates too (the literal
    /// templates × terms count).
    #[serde(default)]
    pub names_all_templates: bool,
}

fn pairs_with(template: &Template, term: &Term, opts: &ExpandOptions) -> bool {
    term.domain != Domain::Name || opts.names_all_templates || template.number == Number::Singular
}

fn surface<'a>(template: &Template, term: &'a Term) -> Result<&'a str, CorpusError> {
    let s = match (term.domain, template.number) {
        (Domain::Name, _) | (_, Number::Plural) => &term.surface_plural,
        (_, Number::Singular) => &term.surface_singular,
    };
    if s.trim().is_empty() {
        return Err(CorpusError::MissingSurfaceForm {
            term_id: term.id.clone(),
            number: template.number,
        });
    }
    Ok(s)
}

/// Instantiates one prompt. A sentence-initial target is capitalized.
pub fn instantiate(template: &Template, term: &Term) -> Result<Prompt, CorpusError> {
    let s = surface(template, term)?;
    let at = template.text.find(TARGET).unwrap_or(0);
    let filler = if template.text[..at].trim().is_empty() {
        let mut c = s.chars();
        match c.next() {
            Some(first) => first.to_uppercase().chain(c).collect(),
            None => String::new(),
        }
    } else {
        s.to_string()
    };
    Ok(Prompt {
        prompt_id: prompt_id(&template.id, &term.id),
        template_id: template.id.clone(),
        term_id: term.id.clone(),
        text_masked: template.text.replacen(TARGET, &filler, 1),
        number_agreement: template.number,
        group_keys: GroupKeys {
            domain: term.domain,
            subgroups: term.labels().to_vec(),
        },
    })
}

/// Streams prompts template-major. Names skip plural templates unless
/// `names_all_templates` is set.
pub fn expand<'a>(
    templates: &'a [Template],
    terms: &'a [Term],
    opts: ExpandOptions,
) -> impl Iterator<Item = Result<Prompt, CorpusError>> + 'a {
    templates.iter().flat_map(move |tpl| {
        terms
            .iter()
            .filter(move |term| pairs_with(tpl, term, &opts))
            .map(move |term| instantiate(tpl, term))
    })
}

/// Number of prompts [`expand`] yields.
pub fn expected_count(templates: &[Template], terms: &[Term], opts: ExpandOptions) -> usize {
    let names = terms.iter().filter(|t| t.domain == Domain::Name).count();
    let others = terms.len() - names;
    let singular = templates
        .iter()
        .filter(|t| t.number == Number::Singular)
        .count();
    let name_templates = if opts.names_all_templates {
        templates.len()
    } else {
        singular
    };
    templates.len() * others + name_templates * names
}

/// A corpus described by its inputs plus a prompt-id index, so it can be
/// written in canonical order without holding every prompt in memory.
pub struct CorpusPlan<'a> {
    templates: &'a [Template],
    terms: &'a [Term],
    index: Vec<([u8; 32], u32, u32)>,
}

impl<'a> CorpusPlan<'a> {
    pub fn new(
        templates: &'a [Template],
        terms: &'a [Term],
        opts: ExpandOptions,
    ) -> Result<Self, CorpusError> {
        let mut index: Vec<([u8; 32], u32, u32)> = templates
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, tpl)| {
                terms
                    .iter()
                    .enumerate()
                    .filter(move |(_, term)| pairs_with(tpl, term, &opts))
                    .map(move |(j, term)| {
                        surface(tpl, term)
                            .map(|_| (sha256_bytes(&[&tpl.id, &term.id]), i as u32, j as u32))
                    })
            })
            .collect::<Result<_, _>>()?;
        index.par_sort_unstable();
        Ok(CorpusPlan {
            templates,
            terms,
            index,
        })
    }

    /// Keeps the prompts whose (template, term) pair satisfies `keep`.
    pub fn retain(&mut self, keep: impl Fn(&Template, &Term) -> bool) {
        let (templates, terms) = (self.templates, self.terms);
        self.index
            .retain(|&(_, i, j)| keep(&templates[i as usize], &terms[j as usize]));
    }

    /// Keeps the first `n` prompts in prompt-id order.
    pub fn truncate(&mut self, n: usize) {
        self.index.truncate(n);
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Prompts in prompt-id order.
    pub fn prompts(&self) -> impl Iterator<Item = Prompt> + '_ {
        self.index.iter().map(|&(_, i, j)| {
            instantiate(&self.templates[i as usize], &self.terms[j as usize])
                .expect("surface checked when the plan was built")
        })
    }

    /// SHA-256 of the canonical (uncompressed) corpus bytes.
    pub fn digest(&self) -> String {
        let mut hasher = HashingWriter::new(io::sink());
        for p in self.prompts() {
            write_line(&mut hasher, &p).expect("sink never fails");
        }
        hasher.finish().1
    }

    /// Writes the canonical corpus and returns its digest.
    pub fn write(&self, path: &Path) -> Result<CorpusDigest, CorpusError> {
        write_stream(path, self.prompts())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDigest {
    pub count: usize,
    pub sha256: String,
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> HashingWriter<W> {
    fn new(inner: W) -> Self {
        HashingWriter {
            inner,
            hasher: Sha256::new(),
        }
    }

    fn finish(self) -> (W, String) {
        (self.inner, hex::encode(self.hasher.finalize()))
    }
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn write_line(w: &mut impl Write, p: &Prompt) -> io::Result<()> {
    serde_json::to_writer(&mut *w, p)?;
    w.write_all(b"\n")
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn write_stream(
    path: &Path,
    prompts: impl Iterator<Item = Prompt>,
) -> Result<CorpusDigest, CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let sink: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    let mut w = HashingWriter::new(sink);
    let mut count = 0;
    for p in prompts {
        write_line(&mut w, &p).map_err(io_err(path))?;
        count += 1;
    }
    let (mut sink, sha256) = w.finish();
    sink.flush().map_err(io_err(path))?;
    drop(sink);
    Ok(CorpusDigest { count, sha256 })
}

/// Writes prompts as JSON Lines sorted by prompt id; `.gz` paths are gzipped.
/// The digest covers the uncompressed bytes.
pub fn write_corpus(path: &Path, mut prompts: Vec<Prompt>) -> Result<CorpusDigest, CorpusError> {
    prompts.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
    write_stream(path, prompts.into_iter())
}

/// Streams prompts back from a corpus file.
pub fn read_corpus(path: &Path) -> Result<impl Iterator<Item = Result<Prompt, CorpusError>>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let owned = path.to_path_buf();
    Ok(BufReader::new(reader)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(move |(i, line)| {
            let line = line.map_err(|source| CorpusError::Io {
                path: owned.clone(),
                source,
            })?;
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: owned.clone(),
                line: i + 1,
                reason: e.to_string(),
            })
        }))
}
