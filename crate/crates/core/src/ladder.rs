//! Severity sweeps: corrupted-corpus generation and degradation-from-baseline
//! evaluation.
//!
//! Output layout for a sweep rooted at `out`:
//!
//! ```text
//! out/sweep_index.csv
//! out/sq0.00_se0.00/<image_id>.png
//! out/sq0.00_se1.00/<image_id>.png
//! ...
//! ```
//!
//! Predictions for evaluation mirror the same per-point directories.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{
    evaluation_entries, load_ground_truth, load_predictions_for, CorpusEntry, CorpusManifest,
    GroundTruth, Prediction, Split, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::image::{self, normalize, quantize, resample, NormalizedImage};
use crate::metrics::{self, auprc, auroc, binarize, best_f1_threshold, f1, overlap, ScoredSample};
use crate::noise::{inject, NoiseSpec};
use crate::rng::derive_seed;

pub const DEFAULT_LEVELS: [f64; 7] = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0];
pub const SWEEP_INDEX_FILE: &str = "sweep_index.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Vary one axis while the other stays at zero.
    Axis,
    /// Every combination of quantum and electronic levels.
    Full,
}

impl FromStr for Pairing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "axis" => Ok(Pairing::Axis),
            "full" => Ok(Pairing::Full),
            other => Err(format!("unknown pairing `{other}` (expected axis or full)")),
        }
    }
}

/// A single `(s_q, s_e)` cell of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct LadderPoint {
    pub s_q: f64,
    pub s_e: f64,
}

impl LadderPoint {
    pub const BASELINE: LadderPoint = LadderPoint { s_q: 0.0, s_e: 0.0 };

    pub fn new(s_q: f64, s_e: f64) -> Self {
        LadderPoint { s_q, s_e }
    }

    pub fn is_baseline(&self) -> bool {
        self.s_q == 0.0 && self.s_e == 0.0
    }

    /// `sq<q>_se<e>` with two decimals, e.g. `sq10.00_se0.00`.
    pub fn dir_name(&self) -> String {
        format!("sq{:.2}_se{:.2}", self.s_q, self.s_e)
    }
}

impl fmt::Display for LadderPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(s_q={:.2}, s_e={:.2})", self.s_q, self.s_e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeverityLadder {
    quantum_levels: Vec<f64>,
    electronic_levels: Vec<f64>,
    pairing: Pairing,
    /// Adds the joint (1, 1) point to an axis sweep.
    include_joint: bool,
}

impl Default for SeverityLadder {
    fn default() -> Self {
        SeverityLadder {
            quantum_levels: DEFAULT_LEVELS.to_vec(),
            electronic_levels: DEFAULT_LEVELS.to_vec(),
            pairing: Pairing::Axis,
            include_joint: true,
        }
    }
}

fn check_levels(name: &str, levels: &[f64]) -> Result<()> {
    if levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::Domain(format!("{name} levels must be finite and >= 0")));
    }
    if !levels.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain(format!(
            "{name} levels must be strictly ascending, got {levels:?}"
        )));
    }
    if levels.first() != Some(&0.0) {
        return Err(Error::Domain(format!(
            "{name} levels must include the 0 baseline"
        )));
    }
    Ok(())
}

impl SeverityLadder {
    pub fn new(
        quantum_levels: Vec<f64>,
        electronic_levels: Vec<f64>,
        pairing: Pairing,
        include_joint: bool,
    ) -> Result<Self> {
        check_levels("quantum", &quantum_levels)?;
        check_levels("electronic", &electronic_levels)?;
        if let Some(l) = quantum_levels.iter().find(|&&l| l > 0.0 && l < 1.0) {
            return Err(Error::Domain(format!(
                "quantum level {l} is below the calibration anchor; use 0 or >= 1"
            )));
        }
        Ok(SeverityLadder {
            quantum_levels,
            electronic_levels,
            pairing,
            include_joint,
        })
    }

    pub fn quantum_levels(&self) -> &[f64] {
        &self.quantum_levels
    }

    pub fn electronic_levels(&self) -> &[f64] {
        &self.electronic_levels
    }

    pub fn pairing(&self) -> Pairing {
        self.pairing
    }

    /// Points in `(s_q, s_e)` lexicographic order; the baseline is first.
    pub fn points(&self) -> Vec<LadderPoint> {
        let mut pts = Vec::new();
        match self.pairing {
            Pairing::Full => {
                for &q in &self.quantum_levels {
                    for &e in &self.electronic_levels {
                        pts.push(LadderPoint::new(q, e));
                    }
                }
            }
            Pairing::Axis => {
                pts.extend(self.quantum_levels.iter().map(|&q| LadderPoint::new(q, 0.0)));
                pts.extend(
                    self.electronic_levels
                        .iter()
                        .filter(|&&e| e > 0.0)
                        .map(|&e| LadderPoint::new(0.0, e)),
                );
                if self.include_joint {
                    pts.push(LadderPoint::new(1.0, 1.0));
                }
            }
        }
        pts.sort_by(|a, b| a.s_q.total_cmp(&b.s_q).then(a.s_e.total_cmp(&b.s_e)));
        pts.dedup();
        pts
    }
}

/// One row of the sweep index.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepIndexRow {
    pub image_id: String,
    pub point: LadderPoint,
    pub derived_seed: u64,
    /// Relative to the sweep output directory.
    pub output_path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSummary {
    pub rows: Vec<SweepIndexRow>,
    pub files_rewritten: usize,
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateOptions {
    /// Resample every image to `(height, width)` before injection.
    pub resize: Option<(usize, usize)>,
}

fn load_input(entry: &CorpusEntry, resize: Option<(usize, usize)>) -> Result<NormalizedImage> {
    let img = normalize(&image::read_gray(&entry.image_path)?);
    match resize {
        Some((h, w)) => resample(&img, h, w),
        None => Ok(img),
    }
}

// Writes only when content differs; returns whether bytes were written.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(false);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

/// Generates one corrupted copy of every manifest image at every ladder
/// point. Runs on the ambient rayon pool; output bytes do not depend on it.
pub fn generate_corrupted_corpus(
    manifest: &CorpusManifest,
    ladder: &SeverityLadder,
    spec_base: &NoiseSpec,
    out_dir: &Path,
    options: GenerateOptions,
) -> Result<SweepSummary> {
    spec_base.validate()?;
    let points = ladder.points();
    for p in &points {
        let dir = out_dir.join(p.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    type EntryResult = std::result::Result<(Vec<SweepIndexRow>, usize), (String, String)>;
    let per_entry: Vec<EntryResult> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let fail = |e: Error| (entry.image_id.clone(), e.to_string());
            let img = load_input(entry, options.resize).map_err(fail)?;
            let mut rows = Vec::with_capacity(points.len());
            let mut rewritten = 0;
            for p in &points {
                let seed = derive_seed(spec_base.seed, &entry.image_id, p.s_q, p.s_e);
                let spec = NoiseSpec {
                    s_q: p.s_q,
                    s_e: p.s_e,
                    seed,
                    ..*spec_base
                };
                let rel = PathBuf::from(p.dir_name()).join(format!("{}.png", entry.image_id));
                let path = out_dir.join(&rel);
                let realization = inject(&img, &spec).map_err(fail)?;
                let bytes = quantize(&realization.corrupted)
                    .and_then(|q| image::encode_gray(&q, &path))
                    .map_err(fail)?;
                if write_if_changed(&path, &bytes).map_err(fail)? {
                    rewritten += 1;
                }
                rows.push(SweepIndexRow {
                    image_id: entry.image_id.clone(),
                    point: *p,
                    derived_seed: seed,
                    output_path: rel,
                });
            }
            Ok((rows, rewritten))
        })
        .collect();

    let mut summary = SweepSummary::default();
    for r in per_entry {
        match r {
            Ok((rows, rewritten)) => {
                summary.rows.extend(rows);
                summary.files_rewritten += rewritten;
            }
            Err((id, msg)) => {
                log::error!("{id}: {msg}");
                summary.failures.push((id, msg));
            }
        }
    }
    summary.rows.sort_by(|a, b| {
        a.point
            .s_q
            .total_cmp(&b.point.s_q)
            .then(a.point.s_e.total_cmp(&b.point.s_e))
            .then(a.image_id.cmp(&b.image_id))
    });
    summary.failures.sort();

    let index_path = out_dir.join(SWEEP_INDEX_FILE);
    let index = crate::report::sweep_index_csv(&summary.rows);
    if write_if_changed(&index_path, index.as_bytes())? {
        summary.files_rewritten += 1;
    }
    Ok(summary)
}

/// Runs `corpus::reference_segmenter` over every corrupted image of a sweep
/// tree and writes the masks into a mirrored predictions tree. Returns the
/// number of masks written.
pub fn predict_reference(
    manifest: &CorpusManifest,
    ladder: &SeverityLadder,
    sweep_dir: &Path,
    out_dir: &Path,
) -> Result<usize> {
    let points = ladder.points();
    let jobs: Vec<(LadderPoint, &CorpusEntry)> = points
        .iter()
        .flat_map(|p| manifest.entries.iter().map(move |e| (*p, e)))
        .collect();
    for p in &points {
        let dir = out_dir.join(p.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let written: Vec<Result<bool>> = jobs
        .par_iter()
        .map(|(p, e)| {
            let name = format!("{}.png", e.image_id);
            let src = sweep_dir.join(p.dir_name()).join(&name);
            let img = normalize(&image::read_gray(&src)?);
            let mask = crate::corpus::reference_segmenter(&img).to_label_image()?;
            let dst = out_dir.join(p.dir_name()).join(&name);
            write_if_changed(&dst, &image::encode_gray(&mask, &dst)?)
        })
        .collect();
    let mut n = 0;
    for w in written {
        w?;
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Dice,
    Iou,
    Auroc,
    Auprc,
    F1,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Iou => "iou",
            Metric::Auroc => "auroc",
            Metric::Auprc => "auprc",
            Metric::F1 => "f1",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One measurement at one ladder point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub s_q: f64,
    pub s_e: f64,
    pub metric: Metric,
    pub value: f64,
    /// `value` minus the same metric at (0, 0).
    pub delta: f64,
    pub n_samples: usize,
    pub flags: Vec<String>,
}

impl EvalRecord {
    pub fn point(&self) -> LadderPoint {
        LadderPoint::new(self.s_q, self.s_e)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub task_id: String,
    /// Restricts evaluation to the test split; every entry counts without it.
    pub split: Option<SplitAssignment>,
    /// F1 decision threshold.
    pub threshold: f64,
    /// Ground-truth masks are nearest-resampled to this size.
    pub resize: Option<(usize, usize)>,
    /// Tags every record as coming from the reference predictor.
    pub reference_predictor: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            task_id: "task".into(),
            split: None,
            threshold: 0.5,
            resize: None,
            reference_predictor: false,
        }
    }
}

/// F1 threshold tuned on the validation split at the baseline point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TunedThreshold {
    pub threshold: f64,
    pub val_f1: f64,
    pub test_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepEvaluation {
    pub records: Vec<EvalRecord>,
    pub skipped: Vec<LadderPoint>,
    pub tuned_threshold: Option<TunedThreshold>,
}

struct PointMetrics {
    values: Vec<(Metric, f64)>,
    n_samples: usize,
    flags: Vec<String>,
}

fn score_point(
    entries: &[&CorpusEntry],
    truth: &BTreeMap<String, GroundTruth>,
    preds: &BTreeMap<String, Prediction>,
    threshold: f64,
) -> Result<PointMetrics> {
    let mut flags = Vec::new();
    let mut dices = Vec::new();
    let mut ious = Vec::new();
    let mut samples = Vec::new();
    let mut both_empty = 0;
    for e in entries {
        match (truth.get(&e.image_id), preds.get(&e.image_id)) {
            (Some(GroundTruth::Mask(t)), Some(Prediction::Mask(p))) => {
                let o = overlap(p, t)?;
                if o.both_empty() {
                    both_empty += 1;
                }
                dices.push(o.dice());
                ious.push(o.iou());
            }
            (Some(GroundTruth::Label(_)), Some(Prediction::Score(s))) => samples.push(*s),
            (_, None) => {}
            _ => {
                return Err(Error::Shape(format!(
                    "prediction kind for {} does not match its ground truth",
                    e.image_id
                )))
            }
        }
    }
    if both_empty > 0 {
        flags.push(format!("both-empty={both_empty}"));
    }
    if !dices.is_empty() {
        let n = dices.len();
        let dice = metrics::ordered_mean(&dices).expect("non-empty");
        let iou = metrics::ordered_mean(&ious).expect("non-empty");
        return Ok(PointMetrics {
            values: vec![(Metric::Dice, dice), (Metric::Iou, iou)],
            n_samples: n,
            flags,
        });
    }
    let values = vec![
        (Metric::Auroc, auroc(&samples)?),
        (Metric::Auprc, auprc(&samples)?),
        (Metric::F1, f1(&binarize(&samples, threshold))?),
    ];
    Ok(PointMetrics {
        values,
        n_samples: samples.len(),
        flags,
    })
}

fn scores_of(entries: &[&CorpusEntry], preds: &BTreeMap<String, Prediction>) -> Vec<ScoredSample> {
    entries
        .iter()
        .filter_map(|e| match preds.get(&e.image_id) {
            Some(Prediction::Score(s)) => Some(*s),
            _ => None,
        })
        .collect()
}

/// Scores every ladder point found under `predictions_root` against the
/// test-split ground truth and fills deltas against the baseline.
pub fn evaluate_sweep(
    manifest: &CorpusManifest,
    ladder: &SeverityLadder,
    predictions_root: &Path,
    options: &EvalOptions,
) -> Result<SweepEvaluation> {
    let entries = evaluation_entries(manifest, options.split.as_ref());
    if entries.is_empty() {
        return Err(Error::Degenerate("no entries to evaluate".into()));
    }
    let truth = load_ground_truth(&entries, options.resize)?;
    let points = ladder.points();
    debug_assert!(points.first().is_some_and(LadderPoint::is_baseline));

    let scored: Vec<Result<Option<(LadderPoint, PointMetrics, usize)>>> = points
        .par_iter()
        .map(|p| {
            let dir = predictions_root.join(p.dir_name());
            if !dir.is_dir() {
                return Ok(None);
            }
            let loaded = load_predictions_for(&entries, &truth, &dir)?;
            if loaded.predictions.is_empty() {
                return Ok(None);
            }
            let m = score_point(&entries, &truth, &loaded.predictions, options.threshold)?;
            Ok(Some((*p, m, loaded.missing.len())))
        })
        .collect();

    let mut evaluation = SweepEvaluation::default();
    let mut baseline: Option<BTreeMap<Metric, f64>> = None;
    for (p, r) in points.iter().zip(scored) {
        let Some((point, m, missing)) = r? else {
            if p.is_baseline() {
                return Err(Error::MissingBaseline(format!(
                    "no predictions under {}",
                    predictions_root.join(p.dir_name()).display()
                )));
            }
            log::warn!("skipping {p}: no predictions found");
            evaluation.skipped.push(*p);
            continue;
        };
        let base = baseline.get_or_insert_with(|| m.values.iter().copied().collect());
        let mut flags = m.flags;
        if missing > 0 {
            log::warn!("{point}: {missing} predictions missing");
            flags.push(format!("missing={missing}"));
        }
        if options.reference_predictor {
            flags.push("reference-predictor".into());
        }
        for (metric, value) in m.values {
            evaluation.records.push(EvalRecord {
                task_id: options.task_id.clone(),
                s_q: point.s_q,
                s_e: point.s_e,
                metric,
                value,
                delta: value - base[&metric],
                n_samples: m.n_samples,
                flags: flags.clone(),
            });
        }
    }
    evaluation.records.sort_by(|a, b| {
        a.task_id
            .cmp(&b.task_id)
            .then(a.s_q.total_cmp(&b.s_q))
            .then(a.s_e.total_cmp(&b.s_e))
            .then(a.metric.cmp(&b.metric))
    });

    if let Some(split) = &options.split {
        let val_entries = split.entries_in(manifest, Split::Val);
        let has_labels = val_entries.iter().all(|e| e.label.is_some());
        if !val_entries.is_empty() && has_labels {
            let base_dir = predictions_root.join(LadderPoint::BASELINE.dir_name());
            let val_truth = load_ground_truth(&val_entries, None)?;
            let val = load_predictions_for(&val_entries, &val_truth, &base_dir)?;
            let test = load_predictions_for(&entries, &truth, &base_dir)?;
            let val_scores = scores_of(&val_entries, &val.predictions);
            if let Some((threshold, val_f1)) = best_f1_threshold(&val_scores) {
                let test_scores = scores_of(&entries, &test.predictions);
                if let Ok(test_f1) = f1(&binarize(&test_scores, threshold)) {
                    evaluation.tuned_threshold = Some(TunedThreshold {
                        threshold,
                        val_f1,
                        test_f1,
                    });
                }
            }
        }
    }
    Ok(evaluation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Quantum,
    Electronic,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Quantum => "quantum",
            Axis::Electronic => "electronic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub severity: f64,
    pub value: f64,
    pub delta: f64,
}

/// Metric values along one noise axis, baseline first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessCurve {
    pub task_id: String,
    pub axis: Axis,
    pub metric: Metric,
    pub points: Vec<CurvePoint>,
    /// Never improves along the axis and ends below the baseline.
    pub monotone_degrading: bool,
}

pub fn build_curves(records: &[EvalRecord]) -> Result<Vec<RobustnessCurve>> {
    if records.is_empty() {
        return Err(Error::Degenerate("no records to build curves from".into()));
    }
    let mut groups: BTreeMap<(&str, Metric), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.task_id, r.metric)).or_default().push(r);
    }
    let mut curves = Vec::new();
    for ((task, metric), recs) in groups {
        if !recs.iter().any(|r| r.point().is_baseline()) {
            return Err(Error::MissingBaseline(format!(
                "task {task} metric {metric} has no (0, 0) record"
            )));
        }
        for axis in [Axis::Quantum, Axis::Electronic] {
            let mut points: Vec<CurvePoint> = recs
                .iter()
                .filter_map(|r| {
                    let (severity, other) = match axis {
                        Axis::Quantum => (r.s_q, r.s_e),
                        Axis::Electronic => (r.s_e, r.s_q),
                    };
                    (other == 0.0).then_some(CurvePoint {
                        severity,
                        value: r.value,
                        delta: r.delta,
                    })
                })
                .collect();
            points.sort_by(|a, b| a.severity.total_cmp(&b.severity));
            let monotone_degrading = points.len() > 1
                && points.windows(2).all(|w| w[1].value <= w[0].value)
                && points.last().map(|p| p.value) < points.first().map(|p| p.value);
            curves.push(RobustnessCurve {
                task_id: task.to_string(),
                axis,
                metric,
                points,
                monotone_degrading,
            });
        }
    }
    Ok(curves)
}
