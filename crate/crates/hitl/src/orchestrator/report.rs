//! Output files: line-delimited JSON records plus plain-text tables.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use hitl_core::calibration::CalibrationOutcome;
use hitl_core::metrics::{ConfusionMatrix, SensitivityStats};
use hitl_core::{Label, MetricsReport};
use serde::Serialize;

use super::RunError;

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), RunError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| RunError::Internal(e.to_string()))?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(RunError::io(dir.display().to_string()))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(RunError::io(tmp.display().to_string()))?;
    f.write_all(bytes).map_err(RunError::io(tmp.display().to_string()))?;
    std::fs::rename(&tmp, path).map_err(RunError::io(path.display().to_string()))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let f = std::fs::File::open(path).map_err(RunError::io(path.display().to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(RunError::io(path.display().to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| RunError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

pub fn confusion_grid(cm: &ConfusionMatrix) -> String {
    let mut s = String::from("gold\\pred");
    for l in Label::all() {
        let _ = write!(s, "{:>6}", l.value());
    }
    s.push('\n');
    for g in Label::all() {
        let _ = write!(s, "{:>9}", g.value());
        for p in Label::all() {
            let _ = write!(s, "{:>6}", cm.get(g, p));
        }
        s.push('\n');
    }
    s
}

pub fn metrics_table(title: &str, m: &MetricsReport) -> String {
    let mut s = format!("{title}\n");
    let _ = writeln!(s, "  units            {}", m.units);
    let _ = writeln!(s, "  kw               {:.3}", m.kw);
    let _ = writeln!(s, "  macro precision  {:.3}", m.macro_precision);
    let _ = writeln!(s, "  macro f1         {:.3}", m.macro_f1);
    let _ = writeln!(s, "  mae              {:.3}", m.mae);
    let _ = writeln!(s, "  pearson          {}", opt(m.pearson));
    let _ = writeln!(s, "  cwa              {}", opt(m.cwa));
    if let Some(h) = m.her {
        let _ = writeln!(s, "  her              {h:.1}%");
    }
    s.push_str("  (macro averages include all five classes; absent classes score 0)\n\n");
    s.push_str(&confusion_grid(&m.confusion));
    s
}

pub fn calibration_table(task: &str, o: &CalibrationOutcome) -> String {
    let mut s = format!(
        "calibration: {task}\nobserved confidence {:.2}..{:.2}, sd {:.2}..{:.2}, {} grid points, {} on front\n\n",
        o.observed_confidence.0,
        o.observed_confidence.1,
        o.observed_sd.0,
        o.observed_sd.1,
        o.points.len(),
        o.front.len()
    );
    s.push_str("   conf      sd      kw  effort  flagged\n");
    let mut front = o.front.clone();
    front.sort_by(|&a, &b| o.points[a].human_effort.total_cmp(&o.points[b].human_effort));
    for i in front {
        let p = &o.points[i];
        let mark = if i == o.selected.point { " *" } else { "" };
        let _ = writeln!(
            s,
            "{:>7.2} {:>7.2} {:>7.3} {:>6.1}% {:>8}{mark}",
            p.thresholds.confidence_threshold,
            p.thresholds.sd_threshold,
            p.kw,
            100.0 * p.human_effort,
            p.flagged
        );
    }
    let sel = o.selected_point();
    let _ = writeln!(
        s,
        "\nselected: confidence {:.2}, sd {:.2} (kw {:.3}, her {:.1}%)",
        sel.thresholds.confidence_threshold,
        sel.thresholds.sd_threshold,
        sel.kw,
        100.0 - 100.0 * sel.human_effort
    );
    if let Some(w) = &o.warning {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn sensitivity_table(group: &str, stats: &SensitivityStats) -> String {
    let mut s = format!("sensitivity: {group}\n\n annotator        task            units  runs  entropy      sd  max entropy\n");
    for r in &stats.rows {
        let _ = writeln!(
            s,
            " {:<16} {:<14} {:>6} {:>5} {:>8.3} {:>7.3} {:>12.3}",
            r.annotator_id,
            r.task.as_str(),
            r.units,
            r.runs,
            r.mean_entropy,
            r.mean_sd,
            r.max_entropy
        );
    }
    s
}
