//! Text artifacts written by sweeps and evaluations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::ladder::{CurvePoint, EvalRecord, LadderPoint, Metric, RobustnessCurve, SweepIndexRow, TunedThreshold};

pub const RECORDS_HEADER: &str = "task_id,s_q,s_e,metric,value,delta,n_samples,flags";
pub const SWEEP_INDEX_HEADER: &str = "image_id,s_q,s_e,derived_seed,output_path";

pub fn sweep_index_csv(rows: &[SweepIndexRow]) -> String {
    let mut out = format!("{SWEEP_INDEX_HEADER}\n");
    for r in rows {
        // forward slashes so the index is identical across platforms
        let path = r
            .output_path
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        writeln!(
            out,
            "{},{:.2},{:.2},{},{}",
            r.image_id, r.point.s_q, r.point.s_e, r.derived_seed, path
        )
        .expect("writing to a String");
    }
    out
}

/// EvalRecord table, values and deltas with 6 decimals, flags `;`-joined.
pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{:.2},{:.2},{},{:.6},{:.6},{},{}",
            r.task_id,
            r.s_q,
            r.s_e,
            r.metric,
            r.value,
            r.delta,
            r.n_samples,
            r.flags.join(";")
        )
        .expect("writing to a String");
    }
    out
}

#[derive(Serialize)]
struct CurveDoc<'a> {
    task_id: &'a str,
    auprc_method: &'static str,
    axes: BTreeMap<&'static str, BTreeMap<&'static str, AxisCurve<'a>>>,
}

#[derive(Serialize)]
struct AxisCurve<'a> {
    monotone_degrading: bool,
    points: &'a [CurvePoint],
}

/// JSON document with per-axis, per-metric point arrays for one task.
pub fn curves_json(task_id: &str, curves: &[RobustnessCurve]) -> String {
    let mut axes: BTreeMap<&'static str, BTreeMap<&'static str, AxisCurve>> = BTreeMap::new();
    for c in curves.iter().filter(|c| c.task_id == task_id) {
        axes.entry(c.axis.as_str()).or_default().insert(
            c.metric.as_str(),
            AxisCurve {
                monotone_degrading: c.monotone_degrading,
                points: &c.points,
            },
        );
    }
    let doc = CurveDoc {
        task_id,
        auprc_method: "step-wise average precision",
        axes,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("curve document serializes");
    s.push('\n');
    s
}

/// Aligned table, one row per ladder point, `value` and `diff` per metric.
pub fn summary_table(
    task_id: &str,
    records: &[EvalRecord],
    curves: &[RobustnessCurve],
    tuned: Option<&TunedThreshold>,
) -> String {
    let task: Vec<&EvalRecord> = records.iter().filter(|r| r.task_id == task_id).collect();
    let mut metrics: Vec<Metric> = task.iter().map(|r| r.metric).collect();
    metrics.sort();
    metrics.dedup();
    let mut rows: BTreeMap<(u64, u64), (LadderPoint, BTreeMap<Metric, &EvalRecord>)> = BTreeMap::new();
    for r in &task {
        let p = r.point();
        // severities are non-negative, so bit patterns sort numerically
        rows.entry((p.s_q.to_bits(), p.s_e.to_bits()))
            .or_insert_with(|| (p, BTreeMap::new()))
            .1
            .insert(r.metric, r);
    }

    let mut out = String::new();
    writeln!(out, "task: {task_id}").unwrap();
    writeln!(out, "diff = value - value at (s_q = 0, s_e = 0); AUPRC is step-wise average precision").unwrap();
    let mut header = format!("{:>8} {:>8}", "s_q", "s_e");
    for m in &metrics {
        write!(header, " | {:>8} {:>9}", m.as_str(), format!("{}_diff", m.as_str())).unwrap();
    }
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();
    for (p, by_metric) in rows.values() {
        let mut line = format!("{:>8.2} {:>8.2}", p.s_q, p.s_e);
        for m in &metrics {
            match by_metric.get(m) {
                Some(r) => write!(line, " | {:>8.3} {:>+9.3}", r.value, r.delta).unwrap(),
                None => write!(line, " | {:>8} {:>9}", "-", "-").unwrap(),
            }
        }
        writeln!(out, "{line}").unwrap();
    }
    let degrading: Vec<String> = curves
        .iter()
        .filter(|c| c.task_id == task_id && c.monotone_degrading)
        .map(|c| format!("{}/{}", c.axis.as_str(), c.metric))
        .collect();
    if !degrading.is_empty() {
        writeln!(out, "monotone-degrading: {}", degrading.join(", ")).unwrap();
    }
    if let Some(t) = tuned {
        writeln!(
            out,
            "validation-tuned F1 threshold: {:.6} (val F1 {:.6}, test F1 at baseline {:.6})",
            t.threshold, t.val_f1, t.test_f1
        )
        .unwrap();
    }
    out
}
