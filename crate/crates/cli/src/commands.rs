//! Subcommand implementations. `main` parses flags and calls into here; the
//! integration tests call these directly too.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cursor_attn_core::nn::{Arch, InputShape, ModelSpec};
use cursor_attn_core::raster::{render_session, render_small, RenderKind, RenderStyle, SMALL_H, SMALL_W};
use cursor_attn_core::session::{
    clean_sessions_with, stratified_split, stratified_split_by_format, LabeledSession, SplitRatios,
};
use cursor_attn_core::stats::{friedman_test, holm_correction, wilcoxon_signed_rank, ComparisonResult, EvalReport};
use cursor_attn_core::synth::{synth_corpus, SynthConfig};
use cursor_attn_core::timeseries::{encode_timeseries, FEATURES, SEQ_LEN};
use cursor_attn_core::train::{
    evaluate, lr_range_test, random_search, Example, Executor, FitRecord, SearchBase, SearchSpace,
};
use cursor_attn_core::{rng, Error as CoreError};

use crate::error::{CliError, Result};
use crate::exec::Rayon;
use crate::formats::{
    file_stem, read_dataset, read_json, read_sessions, sha256_file, sha256_hex, write_bytes, write_dataset, write_json,
    write_jsonl, write_sessions,
};
use crate::image::encode_png;
use crate::modelfile::save_model;

pub const TIMESERIES: &str = "timeseries";
pub const SIGNIFICANCE: f64 = 0.05;

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub read: usize,
    pub kept: usize,
    pub dropped_short: usize,
    pub dropped_neutral: usize,
    pub positives: usize,
    pub negatives: usize,
}

impl IngestSummary {
    pub fn render(&self) -> String {
        let ratio = if self.kept == 0 { 0.0 } else { self.positives as f64 / self.kept as f64 };
        format!(
            "read {}  kept {}  dropped-short {}  dropped-neutral {}\nclass ratio: {} attended / {} ignored ({:.3} positive)",
            self.read, self.kept, self.dropped_short, self.dropped_neutral, self.positives, self.negatives, ratio
        )
    }
}

pub fn ingest(input: &Path, out: &Path, min_events: usize) -> Result<IngestSummary> {
    let sessions = read_sessions(input)?;
    let (clean, s) = clean_sessions_with(&sessions, min_events);
    write_dataset(out, &clean)?;
    Ok(IngestSummary {
        read: sessions.len(),
        kept: s.kept,
        dropped_short: s.dropped_short,
        dropped_neutral: s.dropped_neutral,
        positives: s.positives,
        negatives: s.negatives(),
    })
}

// ---------------------------------------------------------------- synth

pub fn synth(config: &SynthConfig, out: &Path) -> Result<usize> {
    let sessions = synth_corpus(config)?;
    write_sessions(out, &sessions)?;
    Ok(sessions.len())
}

// ---------------------------------------------------------------- render

pub fn parse_style(kind: &str, ad: bool) -> Result<RenderStyle> {
    let kind = RenderKind::parse(kind).ok_or_else(|| {
        CliError::invalid(format!(
            "unknown style {kind:?}; expected one of heatmap, traj, traj-color, traj-thick, traj-color-thick"
        ))
    })?;
    Ok(RenderStyle::new(kind, ad))
}

/// `traj`, `heatmap-ad`, ... back to a style.
pub fn parse_style_name(name: &str) -> Result<RenderStyle> {
    match name.strip_suffix("-ad") {
        Some(kind) => parse_style(kind, true),
        None => parse_style(name, false),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderEntry {
    pub session_id: String,
    pub style: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub dataset_sha256: String,
    pub width: usize,
    pub height: usize,
    pub entries: Vec<RenderEntry>,
}

/// Render every session in every style to `out/renders/` plus `out/renders/manifest.json`.
pub fn render(dataset: &Path, styles: &[RenderStyle], out: &Path) -> Result<RenderManifest> {
    let sessions = read_dataset(dataset)?;
    let dir = out.join("renders");
    let jobs = sessions.len() * styles.len();
    let entries = Rayon.run(jobs, &|j| -> Result<RenderEntry> {
        let s = &sessions[j / styles.len()].session;
        let style = styles[j % styles.len()];
        let png = encode_png(&render_session(s, style)?)?;
        let file = format!("{}-{}.png", file_stem(&s.session_id), style.name());
        write_bytes(&dir.join(&file), &png)?;
        Ok(RenderEntry { session_id: s.session_id.clone(), style: style.name(), file, sha256: sha256_hex(&png) })
    });
    let manifest = RenderManifest {
        dataset_sha256: sha256_file(dataset)?,
        width: cursor_attn_core::raster::WIDTH,
        height: cursor_attn_core::raster::HEIGHT,
        entries: entries.into_iter().collect::<Result<_>>()?,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- encode

pub fn encode(dataset: &Path, out: &Path) -> Result<usize> {
    let sessions = read_dataset(dataset)?;
    write_bytes(out, crate::formats::timeseries_csv(&sessions)?.as_bytes())?;
    Ok(sessions.len())
}

// ---------------------------------------------------------------- train

/// Input representation: the raw coordinate sequence or one rendering style.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    TimeSeries,
    Image(RenderStyle),
}

impl Representation {
    pub fn parse(s: &str) -> Result<Representation> {
        if s == TIMESERIES {
            Ok(Representation::TimeSeries)
        } else {
            parse_style_name(s).map(Representation::Image)
        }
    }

    pub fn name(&self) -> String {
        match self {
            Representation::TimeSeries => TIMESERIES.to_string(),
            Representation::Image(style) => style.name(),
        }
    }

    pub fn input_shape(&self) -> InputShape {
        match self {
            Representation::TimeSeries => InputShape::Sequence { steps: SEQ_LEN, features: FEATURES },
            Representation::Image(_) => InputShape::Image { height: SMALL_H, width: SMALL_W, channels: 3 },
        }
    }

    pub fn check_arch(&self, arch: Arch) -> Result<()> {
        match (self, arch.is_recurrent()) {
            (Representation::TimeSeries, true) | (Representation::Image(_), false) => Ok(()),
            (Representation::TimeSeries, false) => {
                Err(CliError::invalid(format!("{} needs an image representation, not timeseries", arch.as_str())))
            }
            (Representation::Image(s), true) => Err(CliError::invalid(format!(
                "{} needs the timeseries representation, not {}",
                arch.as_str(),
                s.name()
            ))),
        }
    }
}

pub fn parse_arch(s: &str) -> Result<Arch> {
    Arch::parse(s)
        .ok_or_else(|| CliError::invalid(format!("unknown arch {s:?}; expected simplernn, lstm, blstm, gru or cnn")))
}

/// Encode sessions in parallel; order follows the input.
pub fn examples(sessions: &[LabeledSession], repr: Representation) -> Result<Vec<Example>> {
    Rayon
        .run(sessions.len(), &|i| -> Result<Example> {
            let s = &sessions[i];
            let input = match repr {
                Representation::TimeSeries => encode_timeseries(s)?.flatten(),
                Representation::Image(style) => render_small(&s.session, style)?,
            };
            Ok(Example { input, label: s.label })
        })
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    pub arch: Arch,
    pub repr: Representation,
    pub budget: usize,
    pub k: usize,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub by_ad_format: bool,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn run_id(&self) -> String {
        format!("{}-{}-s{}", self.arch.as_str(), self.repr.name(), self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub run_id: String,
    pub report: EvalReport,
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub report_path: PathBuf,
    pub records: Vec<FitRecord>,
}

pub fn train(args: &TrainArgs) -> Result<TrainOutput> {
    args.repr.check_arch(args.arch)?;
    args.ratios.validate()?;
    let sessions = read_dataset(&args.dataset)?;
    if sessions.is_empty() {
        return Err(CoreError::EmptySet("dataset").into());
    }
    let split_seed = rng::derive_seed(args.seed, "cli/split", &[]);
    let split = if args.by_ad_format {
        stratified_split_by_format(&sessions, args.ratios, split_seed)?
    } else {
        stratified_split(&sessions, args.ratios, split_seed)?
    };
    let (train_set, val_set, test_set) =
        (examples(&split.train, args.repr)?, examples(&split.val, args.repr)?, examples(&split.test, args.repr)?);

    let shape = args.repr.input_shape();
    let mut base = SearchBase::for_arch(args.arch, shape);
    base.max_epochs = args.max_epochs.unwrap_or(base.max_epochs);
    // a lowered epoch cap pulls the default patience down with it
    base.patience = args.patience.unwrap_or(base.patience.min(base.max_epochs.saturating_sub(1)));

    let mut config = BTreeMap::new();
    let space = if args.arch.is_recurrent() {
        SearchSpace::recurrent(args.budget)
    } else {
        let spec = ModelSpec {
            arch: args.arch,
            hidden_n: 16,
            drop_rate: 0.2,
            input_shape: shape,
            seed: rng::derive_seed(args.seed, "cli/lr-range", &[]),
            activation: base.activation,
        };
        let sweep = lr_range_test(&spec, &train_set, 1e-5, 1.0, 100, 32, &Rayon)?;
        config.insert("lr_range_suggestion".into(), sweep.suggestion.to_string());
        SearchSpace::conv(sweep.suggestion, args.budget)
    };
    let search_seed = rng::derive_seed(args.seed, "cli/search", &[]);
    let t0 = Instant::now();
    let clock = move || t0.elapsed().as_secs_f64() * 1e3;
    let outcome = random_search(&base, &space, args.k, search_seed, &train_set, &val_set, &Rayon, &clock)?;
    let test_eval = evaluate(&outcome.best_model, &test_set, &Rayon)?;

    let run_id = args.run_id();
    let best = &outcome.best.config;
    for (k, v) in [
        ("arch", args.arch.as_str().to_string()),
        ("repr", args.repr.name()),
        ("budget", args.budget.to_string()),
        ("k", args.k.to_string()),
        ("ratios", format!("{},{},{}", args.ratios.0[0], args.ratios.0[1], args.ratios.0[2])),
        ("by_ad_format", args.by_ad_format.to_string()),
        ("max_epochs", base.max_epochs.to_string()),
        ("patience", base.patience.to_string()),
        ("best_trial", best.trial.to_string()),
        ("eta", best.eta.to_string()),
        ("hidden_n", best.hidden_n.to_string()),
        ("drop_rate", best.drop_rate.to_string()),
        ("batch_size", best.batch_size.to_string()),
        ("mean_val_loss", outcome.best.mean_val_loss.to_string()),
        ("dataset_sha256", sha256_file(&args.dataset)?),
        ("train_size", train_set.len().to_string()),
        ("val_size", val_set.len().to_string()),
    ] {
        config.insert(k.to_string(), v);
    }
    let labels: Vec<_> = test_set.iter().map(|e| e.label).collect();
    let mut report = EvalReport::new(run_id.clone(), args.repr.name(), test_eval.scores, &labels, args.seed, config)?;
    report.sample_ids = split.test.iter().map(|s| s.session.session_id.clone()).collect();

    let model_path = args.out.join("models").join(format!("{run_id}.model"));
    let log_path = args.out.join("logs").join(format!("{run_id}.trials.jsonl"));
    let report_path = args.out.join("reports").join(format!("{run_id}.report.json"));
    save_model(&model_path, &outcome.best_model)?;
    write_jsonl(&log_path, &outcome.records)?;
    write_json(&report_path, &report)?;
    Ok(TrainOutput { run_id, report, model_path, log_path, report_path, records: outcome.records })
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareBy {
    /// Reports are treatments; blocks are the shared test samples scored by |p - y|.
    Sample,
    /// Groups are representations; blocks are architectures; values are one metric.
    Representation,
    /// Groups are architectures; blocks are representations; values are one metric.
    Model,
}

impl CompareBy {
    pub fn parse(s: &str) -> Result<CompareBy> {
        match s {
            "sample" => Ok(CompareBy::Sample),
            "representation" | "repr" => Ok(CompareBy::Representation),
            "model" | "arch" => Ok(CompareBy::Model),
            _ => Err(CliError::invalid(format!("unknown --by {s:?}; expected sample, representation or model"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputReport {
    pub path: String,
    pub sha256: String,
    pub model_id: String,
    pub representation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    pub result: ComparisonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub by: CompareBy,
    pub metric: String,
    pub inputs: Vec<InputReport>,
    pub groups: Vec<String>,
    pub blocks: Vec<String>,
    pub omnibus: Option<ComparisonResult>,
    pub pairwise: Vec<PairwiseResult>,
    pub note: Option<String>,
}

fn report_arch(r: &EvalReport) -> String {
    r.config.get("arch").cloned().unwrap_or_else(|| r.model_id.clone())
}

/// Group names, block names and the matrix `values[group][block]`.
type Design = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

fn sample_design(reports: &[EvalReport], paths: &[PathBuf]) -> Result<Design> {
    let first = &reports[0];
    for (r, p) in reports.iter().zip(paths).skip(1) {
        if r.labels != first.labels || r.sample_ids != first.sample_ids {
            return Err(CliError::invalid(format!(
                "{} was scored on a different test set than {}",
                p.display(),
                paths[0].display()
            )));
        }
    }
    let groups: Vec<String> = reports.iter().map(|r| r.model_id.clone()).collect();
    let blocks = if first.sample_ids.is_empty() {
        (0..first.labels.len()).map(|i| format!("#{i}")).collect()
    } else {
        first.sample_ids.clone()
    };
    Ok((groups, blocks, reports.iter().map(EvalReport::abs_errors).collect()))
}

fn metric_design(reports: &[EvalReport], by: CompareBy, metric: &str) -> Result<Design> {
    let mut cells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in reports {
        let value = r.metric(metric).ok_or_else(|| {
            CliError::invalid(format!("unknown metric {metric:?}; expected auc, precision, recall or f1"))
        })?;
        let (g, b) = match by {
            CompareBy::Representation => (r.representation.clone(), report_arch(r)),
            _ => (report_arch(r), r.representation.clone()),
        };
        if cells.entry(g.clone()).or_default().insert(b.clone(), value).is_some() {
            return Err(CliError::invalid(format!("two reports for cell {g} x {b}")));
        }
    }
    // blocks present in every group
    let mut blocks: Vec<String> = cells.values().next().map(|m| m.keys().cloned().collect()).unwrap_or_default();
    blocks.retain(|b| cells.values().all(|m| m.contains_key(b)));
    let groups: Vec<String> = cells.keys().cloned().collect();
    let values = cells.values().map(|m| blocks.iter().map(|b| m[b]).collect()).collect();
    Ok((groups, blocks, values))
}

pub fn compare(paths: &[PathBuf], by: CompareBy, metric: &str, out: Option<&Path>) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(CliError::TooFewReports { need: 2, got: paths.len() });
    }
    let mut reports = Vec::with_capacity(paths.len());
    let mut inputs = Vec::with_capacity(paths.len());
    for p in paths {
        let r: EvalReport = read_json(p)?;
        r.verify().map_err(|source| CliError::InvalidAt { path: p.clone(), line: 0, source })?;
        inputs.push(InputReport {
            path: p.display().to_string(),
            sha256: sha256_file(p)?,
            model_id: r.model_id.clone(),
            representation: r.representation.clone(),
        });
        reports.push(r);
    }
    let (groups, blocks, values) = match by {
        CompareBy::Sample => sample_design(&reports, paths)?,
        _ => metric_design(&reports, by, metric)?,
    };
    if groups.len() < 2 {
        return Err(CliError::TooFewReports { need: 2, got: groups.len() });
    }
    let mut omnibus = None;
    let mut pairwise = Vec::new();
    let mut note = None;
    if groups.len() == 2 {
        let result = wilcoxon_signed_rank(&values[0], &values[1])?;
        pairwise.push(PairwiseResult { a: groups[0].clone(), b: groups[1].clone(), result });
    } else {
        let f = friedman_test(&values)?;
        let p = f.p_value;
        omnibus = Some(f);
        if p < SIGNIFICANCE {
            for i in 0..groups.len() {
                for j in i + 1..groups.len() {
                    let result = wilcoxon_signed_rank(&values[i], &values[j])?;
                    pairwise.push(PairwiseResult { a: groups[i].clone(), b: groups[j].clone(), result });
                }
            }
            let raw: Vec<f64> = pairwise.iter().map(|r| r.result.p_value).collect();
            for (r, c) in pairwise.iter_mut().zip(holm_correction(&raw)) {
                r.result.corrected_p = Some(c);
            }
        } else {
            note = Some(format!("omnibus Friedman p = {p:.4} >= {SIGNIFICANCE}; pairwise tests skipped"));
        }
    }
    let cmp = Comparison { by, metric: metric.to_string(), inputs, groups, blocks, omnibus, pairwise, note };
    if let Some(out) = out {
        write_json(out, &cmp)?;
    }
    Ok(cmp)
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or_else(|| "-".into(), |p| format!("{p:.4}"))
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ =
            writeln!(s, "groups ({}): {}  blocks: {}", self.groups.len(), self.groups.join(", "), self.blocks.len());
        if let Some(f) = &self.omnibus {
            let _ = writeln!(s, "Friedman chi2 = {:.4}  p = {:.4}  n = {}", f.statistic, f.p_value, f.n);
        }
        if !self.pairwise.is_empty() {
            let w = self.pairwise.iter().map(|r| r.a.len() + r.b.len() + 5).max().unwrap_or(0).max(4);
            let _ = writeln!(s, "{:<w$}  {:>10}  {:>8}  {:>8}  {:>8}  {:>4}", "pair", "W", "p", "p_holm", "r", "n");
            for r in &self.pairwise {
                let pair = format!("{} vs {}", r.a, r.b);
                let res = &r.result;
                let _ = writeln!(
                    s,
                    "{:<w$}  {:>10.2}  {:>8.4}  {:>8}  {:>8}  {:>4}",
                    pair,
                    res.statistic,
                    res.p_value,
                    fmt_p(res.corrected_p),
                    res.effect_r.map_or_else(|| "-".into(), |r| format!("{r:.3}")),
                    res.n
                );
            }
        }
        if let Some(n) = &self.note {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

// ---------------------------------------------------------------- run

fn default_budget() -> usize {
    20
}
fn default_k() -> usize {
    3
}
fn default_ratios() -> [f64; 3] {
    SplitRatios::DEFAULT.0
}
fn default_by() -> CompareBy {
    CompareBy::Sample
}
fn default_metric() -> String {
    "auc".into()
}

/// Batch workflow over architectures and representations. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub archs: Vec<String>,
    pub representations: Vec<String>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub by_ad_format: bool,
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default = "default_by")]
    pub compare_by: CompareBy,
    #[serde(default = "default_metric")]
    pub metric: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trained: Vec<TrainOutput>,
    pub skipped: Vec<String>,
    pub comparison: Option<Comparison>,
}

pub fn run(manifest_path: &Path) -> Result<RunOutput> {
    let m: RunManifest = read_json(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new(""));
    let dataset = root.join(&m.dataset);
    let out = root.join(&m.out);
    if !dataset.exists() {
        return Err(CliError::io(&dataset, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let archs = m.archs.iter().map(|a| parse_arch(a)).collect::<Result<Vec<_>>>()?;
    let reprs = m.representations.iter().map(|r| Representation::parse(r)).collect::<Result<Vec<_>>>()?;
    let mut trained = Vec::new();
    let mut skipped = Vec::new();
    for &arch in &archs {
        for &repr in &reprs {
            if repr.check_arch(arch).is_err() {
                skipped.push(format!("{}-{}", arch.as_str(), repr.name()));
                continue;
            }
            trained.push(train(&TrainArgs {
                dataset: dataset.clone(),
                arch,
                repr,
                budget: m.budget,
                k: m.k,
                seed: m.seed,
                ratios: SplitRatios(m.ratios),
                by_ad_format: m.by_ad_format,
                max_epochs: m.max_epochs,
                patience: m.patience,
                out: out.clone(),
            })?);
        }
    }
    let paths: Vec<PathBuf> = trained.iter().map(|t| t.report_path.clone()).collect();
    let comparison = if paths.len() >= 2 {
        Some(compare(&paths, m.compare_by, &m.metric, Some(&out.join("reports").join("comparison.json")))?)
    } else {
        None
    };
    Ok(RunOutput { trained, skipped, comparison })
}
