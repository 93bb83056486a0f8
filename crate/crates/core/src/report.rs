//! Tables, bar data, heatmaps and summaries rendered from analysis results.
//!
//! Rendering is a pure function of [`Report`]: the same report always gives
//! the same bytes. Numbers are written at full precision next to 3-decimal
//! display columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Analysis, Extremes, IntersectionMatrix, NameGroupTable, ProbeReport, AGGREGATED};
use crate::corpus::CorpusDigest;
use crate::lexicon::{Domain, Lexicon};
use crate::metrics::{csv_field, par_gap, MetricError, MetricRow, Policy};
use crate::scorer::Mode;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report section `{0}` is missing")]
    MissingSection(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Recorded in metadata because the probe differs from free-form generation.
pub const PROBE_METHOD_NOTE: &str = "name attribute probe scores a constrained choice set \
(gender: female/male; race: White/non-White) instead of parsing generated text";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerMeta {
    pub scorer_id: String,
    pub model_id: Option<String>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scorers: Vec<ScorerMeta>,
    pub policy: Policy,
    pub els_normalizer: bool,
    pub corpus: Option<CorpusDigest>,
    pub seed: u64,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    /// Effective run configuration.
    pub config: serde_json::Value,
    pub notes: Vec<String>,
    pub tool_version: String,
}

/// One scorer's column of the domain table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainColumn {
    pub scorer_id: String,
    pub rows: Vec<MetricRow>,
}

/// Analytic baseline row. `None` means the value is not unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub name: String,
    pub els: f64,
    pub lmcs: f64,
    pub par: Option<f64>,
}

pub fn baseline_rows() -> Vec<BaselineRow> {
    vec![
        BaselineRow { name: "IdealLM".into(), els: 1.0, lmcs: 1.0, par: Some(0.5) },
        BaselineRow { name: "FullBiasLM".into(), els: 0.0, lmcs: 1.0, par: None },
        BaselineRow { name: "RandomLM".into(), els: 0.5, lmcs: 0.5, par: Some(0.5) },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub scorer_id: String,
    pub left: String,
    pub right: String,
    pub left_par: f64,
    pub right_par: f64,
    pub neutral: Option<f64>,
    /// `left_par - right_par`.
    pub gap: f64,
}

impl PairwiseRow {
    pub fn gap_abs(&self) -> f64 {
        self.gap.abs()
    }

    /// Unsigned gap at 3 decimals.
    pub fn gap_display(&self) -> String {
        display(self.gap_abs())
    }
}

/// Pairwise row of two aggregated groups.
pub fn pairwise(
    scorer_id: &str,
    left: &MetricRow,
    right: &MetricRow,
    neutral: Option<f64>,
) -> Result<PairwiseRow, ReportError> {
    Ok(PairwiseRow {
        scorer_id: scorer_id.to_string(),
        left: left.group.clone(),
        right: right.group.clone(),
        left_par: left.par,
        right_par: right.par,
        neutral,
        gap: par_gap(left, right)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTable {
    pub name: String,
    pub rows: Vec<PairwiseRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub scorer_id: String,
    pub matrix: IntersectionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesEntry {
    pub scorer_id: String,
    pub extremes: Extremes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamesEntry {
    pub scorer_id: String,
    pub table: NameGroupTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub scorer_id: String,
    pub report: ProbeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: RunMeta,
    pub domain_table: Vec<DomainColumn>,
    pub baselines: Vec<BaselineRow>,
    pub pairwise: Vec<PairwiseTable>,
    pub heatmaps: Vec<Heatmap>,
    pub extremes: Vec<ExtremesEntry>,
    pub names: Vec<NamesEntry>,
    pub probe: Vec<ProbeEntry>,
}

/// Order and display labels of the domain table rows.
pub const DOMAIN_TABLE_ROWS: [(&str, &str); 6] = [
    ("gender", "Birth-Assigned Gender"),
    ("marital", "Marital Status"),
    ("race", "Race"),
    ("religion", "Religion"),
    (AGGREGATED, "Aggregated"),
    ("neutral", "Neutral Level"),
];

fn find<'a>(rows: &'a [MetricRow], group: &str) -> Option<&'a MetricRow> {
    rows.iter().find(|r| r.group == group)
}

impl Report {
    /// Assembles every section from per-scorer analyses. Sections without
    /// inputs stay empty; their files are written with headers only.
    pub fn build(
        meta: RunMeta,
        analyses: &[Analysis],
        probes: Vec<ProbeEntry>,
        lex: &Lexicon,
    ) -> Result<Report, ReportError> {
        if analyses.is_empty() {
            return Err(ReportError::MissingSection("domain_table".into()));
        }
        let mut gender_gap = Vec::new();
        let mut gender_terms = Vec::new();
        let mut by_domain: BTreeMap<Domain, Vec<PairwiseRow>> = BTreeMap::new();
        for a in analyses {
            let f = find(&a.subgroups, "gender/female");
            let m = find(&a.subgroups, "gender/male");
            if let (Some(f), Some(m)) = (f, m) {
                gender_gap.push(pairwise(&a.scorer_id, f, m, a.neutral)?);
            }
            // Female and male gender terms pair up by position.
            let female: Vec<_> = lex.domain(Domain::Gender).filter(|t| t.subgroup == "female").collect();
            let male: Vec<_> = lex.domain(Domain::Gender).filter(|t| t.subgroup == "male").collect();
            for (ft, mt) in female.iter().zip(&male) {
                if let (Some(f), Some(m)) = (find(&a.terms, &ft.id), find(&a.terms, &mt.id)) {
                    gender_terms.push(pairwise(&a.scorer_id, f, m, a.neutral)?);
                }
            }
            if let Some(neutral) = a.neutral {
                for d in [Domain::Marital, Domain::Race, Domain::Religion] {
                    for t in lex.domain(d) {
                        if let Some(r) = find(&a.terms, &t.id) {
                            by_domain.entry(d).or_default().push(PairwiseRow {
                                scorer_id: a.scorer_id.clone(),
                                left: r.group.clone(),
                                right: "neutral".into(),
                                left_par: r.par,
                                right_par: neutral,
                                neutral: Some(neutral),
                                gap: r.par - neutral,
                            });
                        }
                    }
                }
            }
        }
        let mut pairwise = vec![
            PairwiseTable { name: "gender".into(), rows: gender_gap },
            PairwiseTable { name: "gender_terms".into(), rows: gender_terms },
        ];
        for d in [Domain::Marital, Domain::Race, Domain::Religion] {
            pairwise.push(PairwiseTable {
                name: d.as_str().into(),
                rows: by_domain.remove(&d).unwrap_or_default(),
            });
        }

        Ok(Report {
            meta,
            domain_table: analyses
                .iter()
                .map(|a| DomainColumn {
                    scorer_id: a.scorer_id.clone(),
                    rows: a.domains.clone(),
                })
                .collect(),
            baselines: baseline_rows(),
            pairwise,
            heatmaps: analyses
                .iter()
                .flat_map(|a| {
                    a.matrices.iter().map(|m| Heatmap {
                        scorer_id: a.scorer_id.clone(),
                        matrix: m.clone(),
                    })
                })
                .collect(),
            extremes: analyses
                .iter()
                .flat_map(|a| {
                    a.extremes.iter().map(|e| ExtremesEntry {
                        scorer_id: a.scorer_id.clone(),
                        extremes: e.clone(),
                    })
                })
                .collect(),
            names: analyses
                .iter()
                .filter_map(|a| {
                    a.names.as_ref().map(|t| NamesEntry {
                        scorer_id: a.scorer_id.clone(),
                        table: t.clone(),
                    })
                })
                .collect(),
            probe: probes,
        })
    }
}

/// 3-decimal display value; never renders a negative zero.
pub fn display(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_display(x: Option<f64>) -> String {
    x.map(display).unwrap_or_default()
}

/// Filesystem-safe form of a scorer id.
pub fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn emit_domain_table(report: &Report) -> Result<(String, String), ReportError> {
    if report.domain_table.is_empty() || report.domain_table.iter().all(|c| c.rows.is_empty()) {
        return Err(ReportError::MissingSection("domain_table".into()));
    }
    let mut csv = String::from(
        "scorer_id,group,n,ELS,LMCS,PAR,ELS_display,LMCS_display,PAR_display,policy,els_normalizer\n",
    );
    for col in &report.domain_table {
        for (key, _) in DOMAIN_TABLE_ROWS {
            if let Some(r) = find(&col.rows, key) {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&col.scorer_id),
                    csv_field(&r.group),
                    r.n,
                    r.els,
                    r.lmcs,
                    r.par,
                    display(r.els),
                    display(r.lmcs),
                    display(r.par),
                    r.policy,
                    r.els_normalizer
                );
            }
        }
    }
    for b in &report.baselines {
        let _ = writeln!(
            csv,
            "baseline,{},,{},{},{},{},{},{},,",
            csv_field(&b.name),
            b.els,
            b.lmcs,
            opt(b.par),
            display(b.els),
            display(b.lmcs),
            b.par.map(display).unwrap_or_else(|| "0 or 1".into())
        );
    }

    let mut md = String::from("| Demographic Group |");
    for col in &report.domain_table {
        let _ = write!(md, " {0} ELS | {0} LMCS | {0} PAR |", col.scorer_id.replace('|', "\\|"));
    }
    md.push_str("\n|---|");
    for _ in &report.domain_table {
        md.push_str("---:|---:|---:|");
    }
    md.push('\n');
    for (key, label) in DOMAIN_TABLE_ROWS {
        let _ = write!(md, "| {label} |");
        for col in &report.domain_table {
            match find(&col.rows, key) {
                Some(r) => {
                    let _ = write!(md, " {} | {} | {} |", display(r.els), display(r.lmcs), display(r.par));
                }
                None => md.push_str(" n/a | n/a | n/a |"),
            }
        }
        md.push('\n');
    }
    for b in &report.baselines {
        let par = b.par.map(display).unwrap_or_else(|| "0 or 1".into());
        let _ = write!(md, "| {} |", b.name);
        for _ in &report.domain_table {
            let _ = write!(md, " {} | {} | {} |", display(b.els), display(b.lmcs), par);
        }
        md.push('\n');
    }
    let _ = writeln!(
        md,
        "\nAggregation: {}; ELS normalizer: {}.",
        report.meta.policy,
        if report.meta.els_normalizer { "on" } else { "off" }
    );
    Ok((csv, md))
}

pub fn emit_pairwise(rows: &[PairwiseRow]) -> String {
    let mut csv = String::from(
        "scorer_id,left,right,left_par,right_par,neutral,gap,gap_abs,left_par_display,right_par_display,neutral_display,gap_display\n",
    );
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.scorer_id),
            csv_field(&r.left),
            csv_field(&r.right),
            r.left_par,
            r.right_par,
            opt(r.neutral),
            r.gap,
            r.gap_abs(),
            display(r.left_par),
            display(r.right_par),
            opt_display(r.neutral),
            r.gap_display()
        );
    }
    csv
}

#[derive(Serialize)]
struct HeatmapDisplay {
    cells: Vec<Vec<String>>,
    row_margins: Vec<String>,
    col_margins: Vec<String>,
    neutral: String,
}

#[derive(Serialize)]
struct HeatmapJson<'a> {
    scorer_id: &'a str,
    #[serde(flatten)]
    matrix: &'a IntersectionMatrix,
    display: HeatmapDisplay,
}

/// Heatmap JSON. The numeric fields deserialize back into an identical
/// [`IntersectionMatrix`].
pub fn emit_heatmap(h: &Heatmap) -> String {
    let m = &h.matrix;
    let doc = HeatmapJson {
        scorer_id: &h.scorer_id,
        matrix: m,
        display: HeatmapDisplay {
            cells: m.cells.iter().map(|r| r.iter().copied().map(display).collect()).collect(),
            row_margins: m.row_margins.iter().copied().map(display).collect(),
            col_margins: m.col_margins.iter().copied().map(display).collect(),
            neutral: display(m.neutral),
        },
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("heatmap serializes");
    s.push('\n');
    s
}

/// One line per extreme, highest before lowest before nearest-neutral.
pub fn emit_extremes(entries: &[ExtremesEntry]) -> String {
    let mut csv = String::from("scorer_id,scope,rank,group,PAR,PAR_display,neutral,neutral_display,tied_with\n");
    for e in entries {
        let x = &e.extremes;
        for (rank, ex) in [
            ("highest", &x.highest),
            ("lowest", &x.lowest),
            ("nearest_neutral", &x.nearest_neutral),
        ] {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&e.scorer_id),
                csv_field(&x.scope),
                rank,
                csv_field(&ex.group),
                ex.par,
                display(ex.par),
                x.neutral,
                display(x.neutral),
                csv_field(&ex.tied_with.join(";"))
            );
        }
    }
    csv
}

pub fn emit_names(entries: &[NamesEntry]) -> String {
    let mut csv = String::from("scorer_id,table,group,n,PAR,LMCS,ELS,PAR_display\n");
    for e in entries {
        for (table, rows) in [
            ("names", &e.table.names),
            ("race_gender", &e.table.composites),
            ("per_name", &e.table.per_name),
        ] {
            for r in rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    csv_field(&e.scorer_id),
                    table,
                    csv_field(&r.group),
                    r.n,
                    r.par,
                    r.lmcs,
                    r.els,
                    display(r.par)
                );
            }
        }
    }
    csv
}

pub fn emit_probe(entries: &[ProbeEntry]) -> String {
    let mut csv = String::from("scorer_id,attribute,name,true_label,predicted,tie,correct,choices,logprobs\n");
    for e in entries {
        for r in &e.report.results {
            let lps: Vec<String> = r.logprobs.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&e.scorer_id),
                r.attribute.as_str(),
                csv_field(&r.name),
                csv_field(&r.true_label),
                csv_field(r.predicted.as_deref().unwrap_or("")),
                r.tie,
                r.correct(),
                csv_field(&r.choices.join(";")),
                csv_field(&lps.join(";"))
            );
        }
    }
    csv
}

fn probe_summary(entries: &[ProbeEntry]) -> String {
    let mut md = String::new();
    if entries.is_empty() {
        return md;
    }
    md.push_str("\n| Scorer | Attribute | Accuracy |\n|---|---|---:|\n");
    for e in entries {
        let _ = writeln!(
            md,
            "| {} | {} | {} |",
            e.scorer_id,
            e.report.attribute.as_str(),
            display(e.report.accuracy)
        );
    }
    md
}

/// Every report file, keyed by its name inside the report directory.
pub fn render(report: &Report) -> Result<BTreeMap<String, Vec<u8>>, ReportError> {
    if report.meta.scorers.is_empty() {
        return Err(ReportError::MissingSection("meta.scorers".into()));
    }
    let mut files = BTreeMap::new();
    let (csv, mut md) = emit_domain_table(report)?;
    md.push_str(&probe_summary(&report.probe));
    files.insert("domain_table.csv".to_string(), csv.into_bytes());
    files.insert("domain_table.md".to_string(), md.into_bytes());
    for t in &report.pairwise {
        files.insert(format!("pairwise_{}.csv", t.name), emit_pairwise(&t.rows).into_bytes());
    }
    for h in &report.heatmaps {
        files.insert(
            format!("heatmap_{}_{}.json", file_stem(&h.scorer_id), h.matrix.name),
            emit_heatmap(h).into_bytes(),
        );
    }
    files.insert("extremes.csv".to_string(), emit_extremes(&report.extremes).into_bytes());
    files.insert("names.csv".to_string(), emit_names(&report.names).into_bytes());
    files.insert("probe.csv".to_string(), emit_probe(&report.probe).into_bytes());
    let mut meta = serde_json::to_string_pretty(&report.meta).expect("meta serializes");
    meta.push('\n');
    files.insert("meta.json".to_string(), meta.into_bytes());
    Ok(files)
}

/// Renders into `dir`, creating it if needed.
pub fn write_report(dir: &Path, report: &Report) -> Result<Vec<PathBuf>, ReportError> {
    let files = render(report)?;
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
