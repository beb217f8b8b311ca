//! CSV formats for click logs, oracle labels, observed snapshots and LC data.
//!
//! | file | header |
//! |------|--------|
//! | click log | `id,f0,...,f{k-1},cts,cvt` (empty `cvt` when absent) |
//! | oracle labels | `id,c` |
//! | observed snapshot | `id,f0,...,f{k-1},v,e,cts,cvt` |
//! | LC data | `id,f0,...,f{k-1},e_cd,w` |

use std::io::{Read, Write};
use std::path::Path;

use crate::domain::{ClickEvent, LcSample, ObservedSample, OracleLabel};
use crate::error::{Error, Result};

fn feature_headers(k: usize) -> impl Iterator<Item = String> {
    (0..k).map(|i| format!("f{i}"))
}

fn num_fields_from_header(header: &csv::StringRecord, trailing: &[&str]) -> Result<usize> {
    let n = header.len();
    if n < 1 + trailing.len() || &header[0] != "id" {
        return Err(Error::input(format!("malformed header: {header:?}")));
    }
    let k = n - 1 - trailing.len();
    for (i, name) in feature_headers(k).enumerate() {
        if header[1 + i] != name {
            return Err(Error::input(format!("expected column {name}, found {}", &header[1 + i])));
        }
    }
    for (i, name) in trailing.iter().enumerate() {
        if &header[1 + k + i] != *name {
            return Err(Error::input(format!(
                "expected column {name}, found {}",
                &header[1 + k + i]
            )));
        }
    }
    Ok(k)
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::input(format!("line {line}: cannot parse {what} from {field:?}")))
}

fn parse_opt_ts(field: &str, line: u64) -> Result<Option<i64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse(field, "cvt", line).map(Some)
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_features(rec: &csv::StringRecord, k: usize) -> Result<Vec<u32>> {
    let line = line_of(rec);
    (0..k).map(|i| parse(&rec[1 + i], "feature", line)).collect()
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

pub fn write_click_log<W: Write>(w: W, events: &[ClickEvent], num_fields: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend(feature_headers(num_fields));
    header.extend(["cts".into(), "cvt".into()]);
    out.write_record(&header)?;
    for ev in events {
        let mut row = Vec::with_capacity(num_fields + 3);
        row.push(ev.id.to_string());
        row.extend(ev.features.iter().map(u32::to_string));
        row.push(ev.cts.to_string());
        row.push(ev.cvt.map(|t| t.to_string()).unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<click log>", e))?;
    Ok(())
}

pub fn read_click_log<R: Read>(r: R) -> Result<Vec<ClickEvent>> {
    let mut rdr = reader(r);
    let k = num_fields_from_header(rdr.headers()?, &["cts", "cvt"])?;
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        events.push(ClickEvent {
            id: parse(&rec[0], "id", line)?,
            features: parse_features(&rec, k)?,
            cts: parse(&rec[1 + k], "cts", line)?,
            cvt: parse_opt_ts(&rec[2 + k], line)?,
        });
    }
    Ok(events)
}

pub fn write_oracle_labels<W: Write>(w: W, labels: &[OracleLabel]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "c"])?;
    for l in labels {
        out.write_record([l.id.to_string(), u8::from(l.c).to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<oracle labels>", e))?;
    Ok(())
}

fn parse_bit(field: &str, what: &str, line: u64) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::input(format!("line {line}: {what} must be 0 or 1, got {other:?}"))),
    }
}

pub fn read_oracle_labels<R: Read>(r: R) -> Result<Vec<OracleLabel>> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != "c" {
        return Err(Error::input(format!("oracle header must be id,c; got {header:?}")));
    }
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        labels.push(OracleLabel {
            id: parse(&rec[0], "id", line)?,
            c: parse_bit(&rec[1], "c", line)?,
        });
    }
    Ok(labels)
}

pub fn write_observed<W: Write>(w: W, samples: &[ObservedSample], num_fields: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend(feature_headers(num_fields));
    header.extend(["v", "e", "cts", "cvt"].map(String::from));
    out.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.id.to_string()];
        row.extend(s.features.iter().map(u32::to_string));
        row.push(u8::from(s.v).to_string());
        row.push(s.e.to_string());
        row.push(s.cts.to_string());
        row.push(s.cvt.map(|t| t.to_string()).unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<observed>", e))?;
    Ok(())
}

pub fn read_observed<R: Read>(r: R) -> Result<Vec<ObservedSample>> {
    let mut rdr = reader(r);
    let k = num_fields_from_header(rdr.headers()?, &["v", "e", "cts", "cvt"])?;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        samples.push(ObservedSample {
            id: parse(&rec[0], "id", line)?,
            features: parse_features(&rec, k)?,
            v: parse_bit(&rec[1 + k], "v", line)?,
            e: parse(&rec[2 + k], "e", line)?,
            cts: parse(&rec[3 + k], "cts", line)?,
            cvt: parse_opt_ts(&rec[4 + k], line)?,
        });
    }
    Ok(samples)
}

pub fn write_lc_data<W: Write>(w: W, samples: &[LcSample], num_fields: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend(feature_headers(num_fields));
    header.extend(["e_cd".into(), "w".into()]);
    out.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.id.to_string()];
        row.extend(s.features.iter().map(u32::to_string));
        row.push(s.e_cd.to_string());
        row.push(s.w.to_string());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<lc data>", e))?;
    Ok(())
}

pub fn read_lc_data<R: Read>(r: R) -> Result<Vec<LcSample>> {
    let mut rdr = reader(r);
    let k = num_fields_from_header(rdr.headers()?, &["e_cd", "w"])?;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let w: f64 = parse(&rec[2 + k], "w", line)?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::input(format!("line {line}: w={w} outside [0,1]")));
        }
        samples.push(LcSample {
            id: parse(&rec[0], "id", line)?,
            features: parse_features(&rec, k)?,
            e_cd: parse(&rec[1 + k], "e_cd", line)?,
            w,
        });
    }
    Ok(samples)
}

pub fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn open_file(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::io(path, e))
}
