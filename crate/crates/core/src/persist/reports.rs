//! CSV reports. Leading `#` lines carry run metadata; the optional timestamp
//! line is the only part that varies between identical runs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::eval::{MetricMode, MetricsRow, RocCurve, TriageCurve};
use crate::hierarchy::Prediction;
use crate::taxonomy::SpecimenClass;

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn predictions_csv(preds: &[Prediction]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "specimen_id",
        "final_label",
        "low_confidence",
        "branch",
        "p_suspect",
        "p_rest",
        "p_high_vs_int",
        "p_mel_high",
        "p_mel_int",
    ];
    let rest: Vec<String> = SpecimenClass::REST.iter().map(|c| format!("p_{}", c.code())).collect();
    header.extend(rest.iter().map(String::as_str));
    w.write_record(&header)?;
    for p in preds {
        let c = &p.confidences;
        let mut rec = vec![
            p.specimen_id.clone(),
            p.final_label.class.code().to_string(),
            p.final_label.low_confidence.to_string(),
            p.branch.code().to_string(),
            c.upstream[0].to_string(),
            c.upstream[1].to_string(),
            c.high_vs_int.to_string(),
            c.high.to_string(),
            c.int.to_string(),
        ];
        rec.extend(c.rest.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn metrics_csv(rows: &[(MetricMode, MetricsRow)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "label", "ppv", "sensitivity", "f1", "balanced_accuracy", "support"])?;
    for (mode, r) in rows {
        w.write_record([
            mode.code().to_string(),
            r.label.clone(),
            r.ppv.to_string(),
            r.sensitivity.to_string(),
            r.f1.to_string(),
            r.balanced_accuracy.to_string(),
            r.support.to_string(),
        ])?;
    }
    finish(w)
}

pub fn roc_csv(curves: &[(SpecimenClass, RocCurve)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "fpr", "tpr", "auc"])?;
    for (c, curve) in curves {
        for (fpr, tpr) in &curve.points {
            w.write_record([c.code().to_string(), fpr.to_string(), tpr.to_string(), curve.auc.to_string()])?;
        }
    }
    finish(w)
}

pub fn triage_csv(curve: &TriageCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fraction_reviewed", "mean_sensitivity", "std_sensitivity"])?;
    for ((f, m), s) in curve.fractions.iter().zip(&curve.mean).zip(&curve.std) {
        w.write_record([f.to_string(), m.to_string(), s.to_string()])?;
    }
    finish(w)
}

/// Write `body` under `#` comment lines, atomically.
pub fn write_report(path: &Path, comments: &[String], body: &[u8], timestamp: bool) -> Result<()> {
    let mut out = Vec::with_capacity(body.len() + 128);
    if timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        out.extend_from_slice(format!("# generated_unix_time={secs}\n").as_bytes());
    }
    for c in comments {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    out.extend_from_slice(body);
    atomic_write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triage_report_records_simulations() {
        let curve = TriageCurve {
            fractions: vec![0.0, 0.5, 1.0],
            mean: vec![0.0, 0.9, 1.0],
            std: vec![0.0, 0.1, 0.0],
            simulations: 1000,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_report(&p, &["simulations=1000".into()], &triage_csv(&curve).unwrap(), false).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "# simulations=1000\nfraction_reviewed,mean_sensitivity,std_sensitivity\n0,0,0\n0.5,0.9,0.1\n1,1,0\n"
        );
        write_report(&p, &[], b"x\n", true).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("# generated_unix_time="));
    }
}
