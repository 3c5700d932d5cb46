//! On-disk formats.
//!
//! Datasets are CSV with columns `f0 .. f{D-1}` followed by integer columns.
//! Class labels and generation indices are 1-based on disk and 0-based in
//! memory. Reals are written with 17 significant digits so that a
//! write/read cycle is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::datasim::{GeneratedPool, GeneratedSample, HiddenTruth, LabeledSample, OriginalDataset};
use crate::error::{Error, Result};
use crate::theory::VerificationReport;
use crate::trainer::{MetricRecord, WeightRow};

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn schema(path: &Path, detail: impl Into<String>) -> Error {
    Error::Schema { file: path.display().to_string(), detail: detail.into() }
}

fn feature_header(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("f{k}")).collect()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Reads the header, checks that it is `f0..f{D-1}` followed by `tail`, and
/// returns `D`.
fn check_header(path: &Path, header: &csv::StringRecord, tail: &[&str]) -> Result<usize> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < tail.len() + 1 {
        return Err(schema(path, format!("expected feature columns followed by {}", tail.join(","))));
    }
    let dim = cols.len() - tail.len();
    for (k, c) in cols[..dim].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(schema(path, format!("column {} is '{c}', expected 'f{k}'", k + 1)));
        }
    }
    for (c, want) in cols[dim..].iter().zip(tail) {
        if c != want {
            return Err(schema(path, format!("column '{c}' found where '{want}' was expected")));
        }
    }
    Ok(dim)
}

fn parse_real(path: &Path, row: usize, col: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| schema(path, format!("row {row}: column '{col}' holds '{s}', not a finite real")))
}

fn parse_index(path: &Path, row: usize, col: &str, s: &str, lo: usize, hi: usize) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(v) if (lo..=hi).contains(&v) => Ok(v),
        _ => Err(schema(path, format!("row {row}: column '{col}' holds '{s}', expected an integer in {lo}..={hi}"))),
    }
}

fn features(path: &Path, row: usize, rec: &csv::StringRecord, dim: usize) -> Result<Vec<f64>> {
    (0..dim).map(|k| parse_real(path, row, &format!("f{k}"), &rec[k])).collect()
}

pub fn write_originals(path: &Path, set: &OriginalDataset) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = feature_header(set.dim);
    header.push("label".into());
    w.write_record(&header)?;
    for s in &set.samples {
        let mut rec: Vec<String> = s.features.iter().map(|&v| fmt_real(v)).collect();
        rec.push((s.label + 1).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_originals(path: &Path, classes: usize) -> Result<OriginalDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = check_header(path, r.headers()?, &["label"])?;
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let features = features(path, row, &rec, dim)?;
        let label = parse_index(path, row, "label", &rec[dim], 1, classes)? - 1;
        samples.push(LabeledSample { features, label });
    }
    OriginalDataset::new(dim, classes, samples)
}

const POOL_TAIL: [&str; 3] = ["origin_index", "gen_index", "hidden_true_class"];

/// Pool CSV. `hidden_true_class` is `c + 1` for the extra class; it is left
/// empty when `truth` is not given.
pub fn write_pool(path: &Path, pool: &GeneratedPool, truth: Option<&HiddenTruth>) -> Result<()> {
    let dim = pool.samples.first().map_or(0, |s| s.features.len());
    let mut w = writer(path)?;
    let mut header = feature_header(dim);
    header.extend(POOL_TAIL.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, s) in pool.samples.iter().enumerate() {
        let mut rec: Vec<String> = s.features.iter().map(|&v| fmt_real(v)).collect();
        rec.push(s.origin_index.to_string());
        rec.push((s.gen_index + 1).to_string());
        rec.push(truth.map_or(String::new(), |t| (t.true_class[i] + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the pool for training; the hidden column is not parsed.
pub fn read_pool(path: &Path, originals: &OriginalDataset, expansion_ratio: usize) -> Result<GeneratedPool> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = check_header(path, r.headers()?, &POOL_TAIL)?;
    if dim != originals.dim {
        return Err(schema(path, format!("{dim} feature columns, originals have {}", originals.dim)));
    }
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let features = features(path, row, &rec, dim)?;
        let origin_index = parse_index(path, row, "origin_index", &rec[dim], 0, originals.len().saturating_sub(1))?;
        let gen_index = parse_index(path, row, "gen_index", &rec[dim + 1], 1, expansion_ratio)? - 1;
        samples.push(GeneratedSample { features, origin_index, gen_index });
    }
    Ok(GeneratedPool { expansion_ratio, samples })
}

/// Reads only the hidden class column of a pool file.
pub fn read_hidden_truth(path: &Path, classes: usize) -> Result<HiddenTruth> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = check_header(path, r.headers()?, &POOL_TAIL)?;
    let mut true_class = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec[dim + 2].trim().is_empty() {
            return Err(schema(path, format!("row {}: column 'hidden_true_class' is empty", i + 1)));
        }
        true_class.push(parse_index(path, i + 1, "hidden_true_class", &rec[dim + 2], 1, classes + 1)? - 1);
    }
    Ok(HiddenTruth { classes, true_class })
}

pub fn write_weights(path: &Path, rows: &[WeightRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["origin_index", "gen_index", "weight"])?;
    for r in rows {
        w.write_record([r.origin_index.to_string(), (r.gen_index + 1).to_string(), fmt_real(r.weight)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let h: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if h != ["origin_index", "gen_index", "weight"] {
        return Err(schema(path, format!("header '{}' should be origin_index,gen_index,weight", h.join(","))));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            Ok(WeightRow {
                origin_index: parse_index(path, i + 1, "origin_index", &rec[0], 0, usize::MAX)?,
                gen_index: parse_index(path, i + 1, "gen_index", &rec[1], 1, usize::MAX)? - 1,
                weight: parse_real(path, i + 1, "weight", &rec[2])?,
            })
        })
        .collect()
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// One row per report: check, pass, applicable, measured, target, tolerance.
pub fn write_report_summary(path: &Path, reports: &[VerificationReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["check", "pass", "applicable", "measured", "target", "tolerance", "stderr", "samples"])?;
    for r in reports {
        w.write_record([
            r.check.clone(),
            r.pass.to_string(),
            r.applicable.to_string(),
            fmt_real(r.measured),
            fmt_real(r.target),
            fmt_real(r.tolerance),
            r.stderr.map_or(String::new(), fmt_real),
            r.samples.map_or(String::new(), |s| s.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasim::{augment, make_original, SimConfig};

    #[test]
    fn datasets_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig { n_per_class: 4, ..SimConfig::default() };
        let orig = make_original(&cfg).unwrap();
        let (pool, truth) = augment(&orig, &cfg).unwrap();
        let (po, pp) = (dir.path().join("o.csv"), dir.path().join("p.csv"));
        write_originals(&po, &orig).unwrap();
        write_pool(&pp, &pool, Some(&truth)).unwrap();
        let o2 = read_originals(&po, cfg.classes).unwrap();
        assert_eq!(o2, orig);
        assert_eq!(read_pool(&pp, &o2, cfg.expansion_ratio).unwrap(), pool);
        assert_eq!(read_hidden_truth(&pp, cfg.classes).unwrap(), truth);
        let text = std::fs::read_to_string(&po).unwrap();
        assert!(text.starts_with("f0,f1,"));
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));
    }

    #[test]
    fn bad_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        std::fs::write(&p, "f0,f1,lbl\n0.1,0.2,1\n").unwrap();
        let err = read_originals(&p, 2).unwrap_err().to_string();
        assert!(err.contains("lbl"), "{err}");
        std::fs::write(&p, "f0,f1,label\n0.1,x,1\n").unwrap();
        let err = read_originals(&p, 2).unwrap_err().to_string();
        assert!(err.contains("f1"), "{err}");
        std::fs::write(&p, "f0,f1,label\n0.1,0.2,3\n").unwrap();
        let err = read_originals(&p, 2).unwrap_err().to_string();
        assert!(err.contains("label"), "{err}");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let rows = vec![WeightRow { origin_index: 1, gen_index: 0, weight: 0.1 + 0.2 }];
        write_jsonl(&p, &rows).unwrap();
        assert_eq!(read_jsonl::<WeightRow>(&p).unwrap(), rows);
        let q = dir.path().join("w.csv");
        write_weights(&q, &rows).unwrap();
        assert_eq!(read_weights(&q).unwrap(), rows);
    }
}
