use std::io::Write;
use std::path::Path;

use crate::error::RunError;

use super::run::{RunRecord, Summary};

/// Column order of the per-round CSV.
pub const HEADER: [&str; 22] = [
    "seed",
    "round",
    "time",
    "rule",
    "attack",
    "factor",
    "n",
    "f",
    "beta",
    "accuracy",
    "loss",
    "grad_norm",
    "bytes_sent_total",
    "bytes_received_total",
    "bytes_sent_per_node",
    "bytes_received_per_node",
    "pool_peak_bytes",
    "resp_ok",
    "resp_already_upd",
    "resp_not_meet_quorum",
    "resp_already_agg",
    "byz_selected",
];

pub const SUMMARY_HEADER: [&str; 17] = [
    "name",
    "rule",
    "attack",
    "n",
    "beta",
    "seeds",
    "accuracy_mean",
    "accuracy_std",
    "loss_mean",
    "loss_std",
    "grad_norm_mean",
    "grad_norm_std",
    "bytes_received_mean",
    "bytes_received_std",
    "pool_peak_bytes_mean",
    "pool_peak_bytes_std",
    "status",
];

/// Six significant digits, shortest form.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let s = format!("{x:.5e}");
    let v: f64 = s.parse().expect("formatted float parses");
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let mut out = format!("{v:.decimals$}");
        if out.contains('.') {
            out = out.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        out
    } else {
        let (mantissa, e) = s.split_once('e').expect("scientific form");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    }
}

fn joined(xs: &[u64]) -> String {
    xs.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn row(r: &RunRecord) -> Vec<String> {
    vec![
        r.seed.to_string(),
        r.round.to_string(),
        r.time.to_string(),
        r.rule.to_string(),
        r.attack.to_string(),
        sig6(r.factor),
        r.n.to_string(),
        r.f.to_string(),
        sig6(r.beta),
        r.accuracy.map(sig6).unwrap_or_default(),
        sig6(r.loss),
        sig6(r.grad_norm),
        r.bytes_sent.iter().sum::<u64>().to_string(),
        r.bytes_received.iter().sum::<u64>().to_string(),
        joined(&r.bytes_sent),
        joined(&r.bytes_received),
        r.pool_peak_bytes.to_string(),
        r.resp_ok.to_string(),
        r.resp_already_upd.to_string(),
        r.resp_not_meet_quorum.to_string(),
        r.resp_already_agg.to_string(),
        r.byz_selected.to_string(),
    ]
}

pub fn write_records<W: Write>(records: &[RunRecord], out: W) -> Result<(), RunError> {
    if records.is_empty() {
        return Err(RunError::Invariant("no records to write".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_string(records: &[RunRecord]) -> Result<String, RunError> {
    let mut buf = Vec::new();
    write_records(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Writes the per-round CSV. Nothing is created for an empty record list.
pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<(), RunError> {
    let text = records_to_string(records)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// One row per summary; `status` is `ok` or the error message.
pub fn emit_summary(rows: &[(Summary, String)], path: &Path) -> Result<(), RunError> {
    if rows.is_empty() {
        return Err(RunError::Invariant("no summaries to write".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for (s, status) in rows {
        let (am, asd) = s
            .accuracy
            .map(|a| (sig6(a.mean), sig6(a.std)))
            .unwrap_or_default();
        w.write_record([
            s.name.clone(),
            s.rule.to_string(),
            s.attack.to_string(),
            s.n.to_string(),
            sig6(s.beta),
            s.seeds.to_string(),
            am,
            asd,
            sig6(s.loss.mean),
            sig6(s.loss.std),
            sig6(s.grad_norm.mean),
            sig6(s.grad_norm.std),
            sig6(s.bytes_received.mean),
            sig6(s.bytes_received.std),
            sig6(s.pool_peak_bytes.mean),
            sig6(s.pool_peak_bytes.std),
            status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
