//! Corpus manifests, patient-level splits, prediction ingestion and a
//! deterministic stand-in segmenter.
//!
//! Manifest format (UTF-8, comma-delimited, header required):
//!
//! ```text
//! image_id,patient_id,image_path,mask_path,label,source_tag
//! jsrt_001,P001,images/jsrt_001.png,masks/jsrt_001.png,,JSRT
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::image::{self, quantize, NormalizedImage, QuantizedImage};
use crate::metrics::{BinaryMask, ScoredSample};

pub const MANIFEST_HEADER: [&str; 6] = [
    "image_id",
    "patient_id",
    "image_path",
    "mask_path",
    "label",
    "source_tag",
];

/// File holding classification scores inside a prediction directory.
pub const SCORES_FILE: &str = "scores.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Segmentation,
    Classification,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Segmentation => "seg",
            TaskKind::Classification => "cls",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub image_id: String,
    pub patient_id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub label: Option<bool>,
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
    pub task_kind: TaskKind,
    pub class_names: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    image_id: String,
    patient_id: String,
    image_path: String,
    mask_path: String,
    label: String,
    source_tag: String,
}

fn parse_label(raw: &str) -> Option<bool> {
    match raw.trim() {
        "1" => Some(true),
        "0" => Some(false),
        _ => None,
    }
}

impl CorpusManifest {
    pub fn new(entries: Vec<CorpusEntry>, task_kind: TaskKind) -> Result<Self> {
        let class_names = match task_kind {
            TaskKind::Segmentation => vec!["background".to_string(), "foreground".to_string()],
            TaskKind::Classification => vec!["negative".to_string(), "positive".to_string()],
        };
        let m = CorpusManifest {
            entries,
            task_kind,
            class_names,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        self.class_names = names;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.image_id.is_empty() || e.patient_id.is_empty() {
                return Err(Error::Manifest(format!(
                    "entry {:?} has an empty image_id or patient_id",
                    e.image_id
                )));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate image_id {}",
                    e.image_id
                )));
            }
            match self.task_kind {
                TaskKind::Segmentation if e.mask_path.is_none() => {
                    return Err(Error::Manifest(format!(
                        "segmentation entry {} has no mask_path",
                        e.image_id
                    )))
                }
                TaskKind::Classification if e.label.is_none() => {
                    return Err(Error::Manifest(format!(
                        "classification entry {} has no 0/1 label",
                        e.image_id
                    )))
                }
                _ => {}
            }
        }
        if self.task_kind == TaskKind::Classification && self.class_names.len() < 2 {
            return Err(Error::Manifest(
                "classification needs at least two class names".into(),
            ));
        }
        Ok(())
    }

    pub fn from_path(path: &Path, task_kind: TaskKind) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base, task_kind, path)
    }

    /// Parses manifest text, resolving relative paths against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path, task_kind: TaskKind, origin: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: origin.to_path_buf(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                reason: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
            });
        }
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
            let row = row.map_err(csv_err)?;
            let label = match row.label.as_str() {
                "" => None,
                raw => Some(parse_label(raw).ok_or_else(|| Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 2,
                    reason: format!("label must be 0 or 1, got `{raw}`"),
                })?),
            };
            entries.push(CorpusEntry {
                image_id: row.image_id,
                patient_id: row.patient_id,
                image_path: resolve(&row.image_path),
                mask_path: (!row.mask_path.is_empty()).then(|| resolve(&row.mask_path)),
                label,
                source_tag: row.source_tag,
            });
        }
        Self::new(entries, task_kind)
    }

    /// Writes the manifest; paths are written as stored.
    pub fn write(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
        for e in &self.entries {
            let label = e.label.map(|l| if l { "1" } else { "0" }).unwrap_or("");
            let mask = e
                .mask_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            w.write_record([
                e.image_id.as_str(),
                e.patient_id.as_str(),
                &e.image_path.to_string_lossy(),
                &mask,
                label,
                e.source_tag.as_str(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.patient_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Patient to split mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        self.assignments.get(patient_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|&&s| s == split).count()
    }

    /// `patient_id,split` rows, with header, sorted by patient id.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("patient_id,split\n");
        for (p, s) in &self.assignments {
            out.push_str(p);
            out.push(',');
            out.push_str(s.as_str());
            out.push('\n');
        }
        out
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut assignments = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line == "patient_id,split") {
                continue;
            }
            let bad = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (patient, split) = line
                .split_once(',')
                .ok_or_else(|| bad("expected `patient_id,split`".into()))?;
            let split: Split = split.trim().parse().map_err(bad)?;
            if assignments.insert(patient.trim().to_string(), split).is_some() {
                return Err(bad(format!("patient {patient} assigned twice")));
            }
        }
        Ok(SplitAssignment { assignments })
    }

    /// Entries whose patient sits in `split`.
    pub fn entries_in<'a>(&self, manifest: &'a CorpusManifest, split: Split) -> Vec<&'a CorpusEntry> {
        manifest
            .entries
            .iter()
            .filter(|e| self.split_of(&e.patient_id) == Some(split))
            .collect()
    }
}

/// Hamilton apportionment of `total` items over `weights` (which sum to 1).
/// Leftover items go to the largest fractional parts, lower index first on ties.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        alloc[k] += 1;
    }
    alloc
}

/// Patient-level split. A patient is positive for stratification when any of
/// their images is labelled positive.
pub fn split_corpus(
    manifest: &CorpusManifest,
    fractions: [f64; 3],
    seed: u64,
    stratify_by_label: bool,
) -> Result<SplitAssignment> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InfeasibleSplit(format!(
            "fractions must be non-negative, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InfeasibleSplit(format!(
            "fractions must sum to 1, got {sum}"
        )));
    }

    let mut patients: BTreeMap<&str, bool> = BTreeMap::new();
    for e in &manifest.entries {
        let positive = patients.entry(&e.patient_id).or_insert(false);
        *positive |= e.label.unwrap_or(false);
    }
    if patients.len() < Split::ALL.len() {
        return Err(Error::InfeasibleSplit(format!(
            "{} patients cannot fill {} splits",
            patients.len(),
            Split::ALL.len()
        )));
    }
    if stratify_by_label && manifest.entries.iter().any(|e| e.label.is_none()) {
        return Err(Error::InfeasibleSplit(
            "stratification needs a 0/1 label on every entry".into(),
        ));
    }

    let mut order: Vec<(&str, bool)> = patients.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = order.len();
    let totals = largest_remainder(n, &fractions);
    let mut assignments = BTreeMap::new();

    if stratify_by_label {
        let n_pos = order.iter().filter(|(_, p)| *p).count();
        let size_weights: Vec<f64> = totals.iter().map(|&t| t as f64 / n as f64).collect();
        let pos_quota = largest_remainder(n_pos, &size_weights);
        let neg_quota: Vec<usize> = totals.iter().zip(&pos_quota).map(|(t, p)| t - p).collect();
        for (want_positive, quota) in [(true, &pos_quota), (false, &neg_quota)] {
            let stratum = order.iter().filter(|(_, p)| *p == want_positive);
            assign_in_order(stratum.map(|(id, _)| *id), quota, &mut assignments);
        }
    } else {
        assign_in_order(order.iter().map(|(id, _)| *id), &totals, &mut assignments);
    }
    Ok(SplitAssignment { assignments })
}

fn assign_in_order<'a>(
    ids: impl Iterator<Item = &'a str>,
    quota: &[usize],
    out: &mut BTreeMap<String, Split>,
) {
    let mut slots = Split::ALL
        .iter()
        .zip(quota)
        .flat_map(|(&s, &q)| std::iter::repeat_n(s, q));
    for id in ids {
        let split = slots.next().expect("quotas cover every patient");
        out.insert(id.to_string(), split);
    }
}

/// A model output ingested from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Mask(BinaryMask),
    Score(ScoredSample),
}

/// Ground truth for one entry.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Mask(BinaryMask),
    Label(bool),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedPredictions {
    pub predictions: BTreeMap<String, Prediction>,
    /// Entries with no prediction file or score row.
    pub missing: Vec<String>,
}

/// Loads ground truth for `entries`; masks are nearest-resampled when a
/// target size is given.
pub fn load_ground_truth(
    entries: &[&CorpusEntry],
    resize: Option<(usize, usize)>,
) -> Result<BTreeMap<String, GroundTruth>> {
    let mut out = BTreeMap::new();
    for e in entries {
        let truth = match (&e.mask_path, e.label) {
            (Some(path), _) => {
                let mut raw = image::read_gray(path)?;
                if let Some((h, w)) = resize {
                    raw = image::resample_nearest(&raw, h, w)?;
                }
                GroundTruth::Mask(BinaryMask::from_label_image(&raw))
            }
            (None, Some(label)) => GroundTruth::Label(label),
            (None, None) => {
                return Err(Error::Manifest(format!(
                    "entry {} has neither mask nor label",
                    e.image_id
                )))
            }
        };
        out.insert(e.image_id.clone(), truth);
    }
    Ok(out)
}

fn find_mask_file(dir: &Path, image_id: &str) -> Option<PathBuf> {
    ["png", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

/// Parses a `sample_id,score,label` file. A leading header row is skipped.
pub fn read_scores(path: &Path) -> Result<BTreeMap<String, (ScoredSample, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("sample_id")) {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, score, label] = fields[..] else {
            return Err(bad(format!("expected 3 fields, got {}", fields.len())));
        };
        let score: f64 = score
            .parse()
            .map_err(|e| bad(format!("score `{score}`: {e}")))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad(format!("score {score} outside [0, 1]")));
        }
        let label = parse_label(label).ok_or_else(|| bad(format!("label must be 0 or 1, got `{label}`")))?;
        let sample = ScoredSample::new(score, label).map_err(|e| bad(e.to_string()))?;
        if out.insert(id.to_string(), (sample, line_no)).is_some() {
            return Err(bad(format!("duplicate sample_id {id}")));
        }
    }
    Ok(out)
}

/// Loads predictions for the given entries against already-loaded truth.
/// Missing files are collected, shape and parse problems are errors.
pub fn load_predictions_for(
    entries: &[&CorpusEntry],
    truth: &BTreeMap<String, GroundTruth>,
    pred_dir: &Path,
) -> Result<LoadedPredictions> {
    let mut loaded = LoadedPredictions::default();
    let scores_path = pred_dir.join(SCORES_FILE);
    let scores = if entries.iter().any(|e| matches!(truth.get(&e.image_id), Some(GroundTruth::Label(_)))) && scores_path.is_file() {
        Some(read_scores(&scores_path)?)
    } else {
        None
    };

    for e in entries {
        match truth.get(&e.image_id) {
            Some(GroundTruth::Mask(t)) => match find_mask_file(pred_dir, &e.image_id) {
                None => loaded.missing.push(e.image_id.clone()),
                Some(path) => {
                    let mask = BinaryMask::from_label_image(&image::read_gray(&path)?);
                    if (mask.height(), mask.width()) != (t.height(), t.width()) {
                        return Err(Error::Shape(format!(
                            "prediction for {} is {}x{}, ground truth is {}x{}",
                            e.image_id,
                            mask.height(),
                            mask.width(),
                            t.height(),
                            t.width()
                        )));
                    }
                    loaded.predictions.insert(e.image_id.clone(), Prediction::Mask(mask));
                }
            },
            Some(GroundTruth::Label(label)) => {
                match scores.as_ref().and_then(|s| s.get(&e.image_id)) {
                    None => loaded.missing.push(e.image_id.clone()),
                    Some((sample, line)) => {
                        if sample.label != *label {
                            return Err(Error::Parse {
                                path: scores_path.clone(),
                                line: *line,
                                reason: format!(
                                    "label for {} disagrees with the manifest",
                                    e.image_id
                                ),
                            });
                        }
                        loaded
                            .predictions
                            .insert(e.image_id.clone(), Prediction::Score(*sample));
                    }
                }
            }
            None => {
                return Err(Error::Manifest(format!(
                    "no ground truth loaded for {}",
                    e.image_id
                )))
            }
        }
    }
    Ok(loaded)
}

/// Loads predictions for the test split (every entry when `split` is `None`).
pub fn load_predictions(
    manifest: &CorpusManifest,
    split: Option<&SplitAssignment>,
    pred_dir: &Path,
) -> Result<LoadedPredictions> {
    let entries = evaluation_entries(manifest, split);
    let truth = load_ground_truth(&entries, None)?;
    load_predictions_for(&entries, &truth, pred_dir)
}

/// Test-split entries, or all entries without a split.
pub fn evaluation_entries<'a>(
    manifest: &'a CorpusManifest,
    split: Option<&SplitAssignment>,
) -> Vec<&'a CorpusEntry> {
    match split {
        Some(s) => s.entries_in(manifest, Split::Test),
        None => manifest.entries.iter().collect(),
    }
}

/// Otsu threshold over 8-bit levels. `None` when the image has a single level.
pub fn otsu_threshold(levels: &[u8]) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &l in levels {
        hist[l as usize] += 1;
    }
    let total = levels.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(l, &c)| l as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best: Option<(u8, f64)> = None;
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1).powi(2);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

// 4-connected components of `bits`, each as a list of pixel indices in scan order.
fn components(bits: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; bits.len()];
    let mut out = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (r, c) = (i / width, i % width);
            let mut visit = |j: usize| {
                if bits[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
        }
        out.push(comp);
    }
    out
}

/// Dark-region mask from an Otsu threshold, keeping the two largest
/// 4-connected components. Exists to drive the pipeline without a trained
/// model; its numbers mean nothing clinically.
pub fn reference_segmenter(img: &NormalizedImage) -> BinaryMask {
    let (h, w) = (img.height(), img.width());
    let levels = quantize(img)
        .map(QuantizedImage::into_pixels)
        .expect("normalized pixels are finite");
    let Some(threshold) = otsu_threshold(&levels) else {
        log::warn!("reference segmenter: constant image, returning an empty mask");
        return BinaryMask::empty(h, w);
    };
    let dark: Vec<bool> = levels.iter().map(|&l| l <= threshold).collect();
    let mut comps = components(&dark, h, w);
    // largest first; scan order of the first pixel breaks ties
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let mut bits = vec![false; h * w];
    for comp in comps.iter().take(2) {
        for &i in comp {
            bits[i] = true;
        }
    }
    BinaryMask::new(h, w, bits).expect("dimensions match the input")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, patient: &str, label: Option<bool>) -> CorpusEntry {
        CorpusEntry {
            image_id: id.into(),
            patient_id: patient.into(),
            image_path: format!("{id}.png").into(),
            mask_path: None,
            label,
            source_tag: "synthetic".into(),
        }
    }

    fn cls_manifest(n: usize) -> CorpusManifest {
        let entries = (0..n)
            .map(|i| entry(&format!("img{i}"), &format!("p{i:03}"), Some(i % 3 == 0)))
            .collect();
        CorpusManifest::new(entries, TaskKind::Classification).unwrap()
    }

    #[test]
    fn largest_remainder_exact_and_rounded() {
        assert_eq!(largest_remainder(100, &[0.7, 0.15, 0.15]), vec![70, 15, 15]);
        assert_eq!(largest_remainder(1138, &[0.7, 0.15, 0.15]).iter().sum::<usize>(), 1138);
        assert_eq!(largest_remainder(10, &[0.7, 0.15, 0.15]), vec![7, 2, 1]);
        assert_eq!(largest_remainder(3, &[1.0 / 3.0; 3]), vec![1, 1, 1]);
    }

    #[test]
    fn seventy_fifteen_fifteen() {
        let m = cls_manifest(100);
        let s = split_corpus(&m, [0.7, 0.15, 0.15], 1, false).unwrap();
        assert_eq!(
            (s.count(Split::Train), s.count(Split::Val), s.count(Split::Test)),
            (70, 15, 15)
        );
        assert_eq!(s, split_corpus(&m, [0.7, 0.15, 0.15], 1, false).unwrap());
        assert_ne!(s, split_corpus(&m, [0.7, 0.15, 0.15], 2, false).unwrap());
    }

    #[test]
    fn multi_image_patient_stays_together() {
        let mut entries: Vec<CorpusEntry> = (0..5).map(|i| entry(&format!("a{i}"), "pA", Some(false))).collect();
        entries.extend((0..9).map(|i| entry(&format!("b{i}"), &format!("p{i}"), Some(i % 2 == 0))));
        let m = CorpusManifest::new(entries, TaskKind::Classification).unwrap();
        let s = split_corpus(&m, [0.7, 0.15, 0.15], 3, true).unwrap();
        assert_eq!(s.assignments.len(), 10);
        assert!(s.split_of("pA").is_some());
    }

    #[test]
    fn split_errors() {
        let m = cls_manifest(2);
        assert!(matches!(
            split_corpus(&m, [0.7, 0.15, 0.15], 0, false),
            Err(Error::InfeasibleSplit(_))
        ));
        let m = cls_manifest(10);
        assert!(split_corpus(&m, [0.7, 0.2, 0.2], 0, false).is_err());
        assert!(split_corpus(&m, [1.2, -0.1, -0.1], 0, false).is_err());
    }

    #[test]
    fn split_ignores_entry_order() {
        let m = cls_manifest(50);
        let mut rev = m.clone();
        rev.entries.reverse();
        assert_eq!(
            split_corpus(&m, [0.7, 0.15, 0.15], 9, true).unwrap(),
            split_corpus(&rev, [0.7, 0.15, 0.15], 9, true).unwrap()
        );
    }

    #[test]
    fn manifest_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let text = "image_id,patient_id,image_path,mask_path,label,source_tag\n\
                    a,p1,img/a.png,mask/a.png,,JSRT\n\
                    b,p2,/abs/b.png,mask/b.png,,JSRT\n";
        let m = CorpusManifest::parse(text, dir.path(), TaskKind::Segmentation, Path::new("m.csv")).unwrap();
        assert_eq!(m.entries[0].image_path, dir.path().join("img/a.png"));
        assert_eq!(m.entries[1].image_path, PathBuf::from("/abs/b.png"));
        let out = dir.path().join("out.csv");
        m.write(&out).unwrap();
        assert_eq!(CorpusManifest::from_path(&out, TaskKind::Segmentation).unwrap(), m);

        // segmentation rows need masks, classification rows need labels
        assert!(CorpusManifest::parse(text, dir.path(), TaskKind::Classification, Path::new("m.csv")).is_err());
        let dup = "image_id,patient_id,image_path,mask_path,label,source_tag\na,p,x,,1,s\na,p,y,,0,s\n";
        assert!(CorpusManifest::parse(dup, dir.path(), TaskKind::Classification, Path::new("m.csv")).is_err());
        let bad_header = "id,patient\n";
        assert!(matches!(
            CorpusManifest::parse(bad_header, dir.path(), TaskKind::Classification, Path::new("m.csv")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn split_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = split_corpus(&cls_manifest(20), [0.7, 0.15, 0.15], 4, false).unwrap();
        let p = dir.path().join("splits.csv");
        fs::write(&p, s.to_csv()).unwrap();
        assert_eq!(SplitAssignment::from_path(&p).unwrap(), s);
    }

    #[test]
    fn score_line_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SCORES_FILE);
        fs::write(&p, "sample_id,score,label\nimg42,0.73,1\n").unwrap();
        let scores = read_scores(&p).unwrap();
        assert_eq!(scores["img42"].0, ScoredSample { score: 0.73, label: true });

        fs::write(&p, "img1,0.5,1\nimg2,abc,0\n").unwrap();
        match read_scores(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&p, "img1,1.5,1\n").unwrap();
        assert!(matches!(read_scores(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_prediction_dir_reports_every_entry() {
        let dir = tempfile::tempdir().unwrap();
        let m = cls_manifest(6);
        let loaded = load_predictions(&m, None, dir.path()).unwrap();
        assert!(loaded.predictions.is_empty());
        assert_eq!(loaded.missing.len(), 6);
    }

    #[test]
    fn wrong_mask_size_names_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let truth = QuantizedImage::new(4, 4, vec![0; 16]).unwrap();
        image::write_gray(&truth, &dir.path().join("t.png")).unwrap();
        let preds = dir.path().join("preds");
        fs::create_dir(&preds).unwrap();
        image::write_gray(&QuantizedImage::new(3, 4, vec![0; 12]).unwrap(), &preds.join("case7.png")).unwrap();
        let mut e = entry("case7", "p", None);
        e.mask_path = Some(dir.path().join("t.png"));
        let m = CorpusManifest::new(vec![e], TaskKind::Segmentation).unwrap();
        match load_predictions(&m, None, &preds) {
            Err(Error::Shape(msg)) => assert!(msg.contains("case7")),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn otsu_segmenter_fixtures() {
        let white = NormalizedImage::constant(8, 8, 1.0).unwrap();
        assert_eq!(reference_segmenter(&white).count(), 0);

        let px: Vec<f64> = (0..64).map(|i| if i % 8 < 4 { 0.0 } else { 1.0 }).collect();
        let half = NormalizedImage::new(8, 8, px).unwrap();
        let mask = reference_segmenter(&half);
        let expect: Vec<bool> = (0..64).map(|i| i % 8 < 4).collect();
        assert_eq!(mask.bits(), &expect[..]);
        assert_eq!(reference_segmenter(&half), mask);
    }

    #[test]
    fn segmenter_keeps_two_largest_components() {
        // three dark blobs of sizes 6, 4, 2 on a bright background
        let mut px = vec![1.0; 10 * 10];
        for i in [0, 1, 2, 10, 11, 12] {
            px[i] = 0.0;
        }
        for i in [50, 51, 60, 61] {
            px[i] = 0.1;
        }
        for i in [98, 99] {
            px[i] = 0.0;
        }
        let img = NormalizedImage::new(10, 10, px).unwrap();
        let mask = reference_segmenter(&img);
        assert_eq!(mask.count(), 10);
        assert!(!mask.bits()[98] && !mask.bits()[99]);
    }
}
