//! Text outputs: per-frame prediction traces and training loss curves.
//!
//! Trace files are tab-separated with header
//! `frame pred latency_ns p0 … p{N-1}`; probabilities use the shortest
//! decimal form that parses back to the same f64.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_bytes};
use crate::aggregation::PredictionTrace;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn format_trace(trace: &PredictionTrace) -> String {
    let phases = trace.probabilities.cols();
    let mut out = String::from("frame\tpred\tlatency_ns");
    for c in 0..phases {
        write!(out, "\tp{c}").expect("string write");
    }
    out.push('\n');
    for t in 0..trace.len() {
        write!(out, "{t}\t{}\t{}", trace.labels[t], trace.latency_ns[t]).expect("string write");
        for p in trace.probabilities.row(t) {
            write!(out, "\t{p}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str, path: &Path) -> Result<PredictionTrace> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty trace file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 4 || cols[..3] != ["frame", "pred", "latency_ns"] {
        return Err(Error::format(path, "trace header must start with frame, pred, latency_ns, p0"));
    }
    let phases = cols.len() - 3;
    let mut labels = Vec::new();
    let mut latency_ns = Vec::new();
    let mut probs = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", i + 2));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(bad(&format!("{} fields, header has {}", fields.len(), cols.len())));
        }
        if fields[0].parse::<usize>().ok() != Some(labels.len()) {
            return Err(bad("frame indices must count up from 0"));
        }
        labels.push(fields[1].parse().map_err(|_| bad("bad predicted phase"))?);
        latency_ns.push(fields[2].parse().map_err(|_| bad("bad latency"))?);
        for f in &fields[3..] {
            probs.push(f.parse::<f64>().map_err(|_| bad("bad probability"))?);
        }
    }
    Ok(PredictionTrace {
        probabilities: Matrix::from_vec(labels.len(), phases, probs)?,
        labels,
        latency_ns,
    })
}

pub fn write_trace(path: &Path, trace: &PredictionTrace) -> Result<()> {
    write_bytes(path, format_trace(trace).as_bytes())
}

pub fn read_trace(path: &Path) -> Result<PredictionTrace> {
    parse_trace(&read_text(path)?, path)
}

/// `epoch\tloss`, epochs counted from 1.
pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = String::from("epoch\tloss\n");
    for (i, l) in curve.iter().enumerate() {
        writeln!(out, "{}\t{l}", i + 1).expect("string write");
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<f64>> {
    read_text(path)?
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split('\t')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad loss line {l:?}")))
        })
        .collect()
}
