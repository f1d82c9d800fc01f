//! Line-delimited key-value records, used for dataset manifests, stats
//! files and training logs.
//!
//! One record per line: `key=value` pairs separated by tabs, keys in the
//! order they were inserted. Values must not contain tabs or newlines.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    pairs: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Record::default()
    }

    pub fn set(mut self, key: &str, value: impl ToString) -> Self {
        let value = value.to_string();
        debug_assert!(!value.contains('\t') && !value.contains('\n'));
        self.pairs.push((key.to_string(), value));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Data(format!("missing key {key}")))?;
        v.parse()
            .map_err(|_| Error::Data(format!("bad value for {key}: {v}")))
    }

    fn to_line(&self) -> String {
        self.pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\t")
    }

    fn from_line(line: &str) -> Result<Record> {
        let mut rec = Record::new();
        for field in line.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad record field: {field}")))?;
            rec.pairs.push((k.to_string(), v.to_string()));
        }
        Ok(rec)
    }
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_line())?;
    }
    w.flush()?;
    Ok(())
}

pub fn append_record(path: &Path, record: &Record) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    writeln!(file, "{}", record.to_line())?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Record::from_line(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_order_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let recs = vec![
            Record::new().set("shape", "sphere_000").set("variant", "max-noise").set("seed", 42u64),
            Record::new().set("shape", "box_001").set("variant", "sparse").set("seed", 7u64),
        ];
        write_records(&path, &recs).unwrap();
        let read = read_records(&path).unwrap();
        assert_eq!(read, recs);
        assert_eq!(read[0].get_parsed::<u64>("seed").unwrap(), 42);
    }
}
