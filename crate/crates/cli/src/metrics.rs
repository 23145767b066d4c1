//! Metrics files.
//!
//! Tables are comma-separated UTF-8 with LF line endings. The first line of
//! every table is the schema line `# schema: ntn-metrics/1`, the second the
//! header row. JSON summaries carry the same version in a leading `schema`
//! key. Readers refuse any other version.
//!
//! Floats are written in shortest round-trip form, so a re-read value is
//! bit-identical to the one written.
//!
//! | file           | one row per                   | written by            |
//! |----------------|-------------------------------|-----------------------|
//! | `trace.csv`    | simulated slot                | simulate, evaluate    |
//! | `episodes.csv` | episode                       | simulate, evaluate    |
//! | `learning.csv` | training episode              | train                 |
//! | `sweep.csv`    | (axis value, policy) point    | sweep                 |
//! | `runs.csv`     | (axis value, policy, seed)    | sweep                 |
//! | `summary.json` | run                           | every mode            |
//!
//! `trace.csv` columns: `seed, episode, t, reward`, then `aoi_<m>` and
//! `rate_<m>` per user, `uav_cpu_<u>` per UAV, `hap_cpu`,
//! `uav_<u>_x/y/z` per UAV, and `completions`: the tasks finished in the
//! slot as `user:task:generation_slot` items joined by `;`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

pub const SCHEMA: &str = "ntn-metrics/1";
const SCHEMA_PREFIX: &str = "# schema: ";

/// Decimal text of `x` that parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Streaming writer of one metrics table.
pub struct TableWriter {
    w: csv::Writer<BufWriter<File>>,
    width: usize,
}

impl TableWriter {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(f, "{SCHEMA_PREFIX}{SCHEMA}")?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f);
        w.write_record(header)?;
        Ok(Self { w, width: header.len() })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.width {
            bail!("row has {} fields, header has {}", fields.len(), self.width);
        }
        self.w.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let mut inner = self.w.into_inner().map_err(|e| anyhow!("flushing table: {}", e.error()))?;
        inner.flush()?;
        Ok(())
    }
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = TableWriter::create(path, header)?;
    for r in rows {
        w.row(r)?;
    }
    w.finish()
}

/// A metrics table read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column {name:?}"))
    }

    /// Column `name` parsed as floats.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r[c].parse().with_context(|| format!("row {} column {name}: {:?}", i + 1, r[c])))
            .collect()
    }

    pub fn strings(&self, name: &str) -> Result<Vec<&str>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }
}

fn check_schema_line(line: &str, path: &Path) -> Result<()> {
    let line = line.trim_end_matches('\n');
    match line.strip_prefix(SCHEMA_PREFIX) {
        Some(v) if v == SCHEMA => Ok(()),
        Some(v) => bail!("{}:1: unsupported schema version {v:?} (expected {SCHEMA})", path.display()),
        None => bail!("{}:1: missing schema line", path.display()),
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut first = String::new();
    r.read_line(&mut first)?;
    check_schema_line(&first, path)?;
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header: Vec<String> = csv.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        // Schema and header occupy the first two lines.
        let line = i + 3;
        let rec = rec.with_context(|| format!("{}:{line}", path.display()))?;
        if rec.len() != header.len() {
            bail!("{}:{line}: {} fields, header has {}", path.display(), rec.len(), header.len());
        }
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok(Table { header, rows })
}

/// JSON document with `schema` as its first key.
#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Versioned { schema: SCHEMA, body })?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match v.get("schema").and_then(|s| s.as_str()) {
        Some(SCHEMA) => Ok(v),
        Some(other) => bail!("{}: unsupported schema version {other:?} (expected {SCHEMA})", path.display()),
        None => bail!("{}: missing schema key", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(cols: &[&str]) -> Vec<String> {
        cols.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn floats_round_trip_bitwise() {
        for x in [0.1, 1e6, -2.5e-300, f64::MAX, 1.0 / 3.0, 0.0, 17.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn table_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![vec!["1".into(), fmt_f64(0.1)], vec!["2".into(), "a,b".into()]];
        write_table(&p, &header(&["k", "v"]), &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# schema: ntn-metrics/1\nk,v\n1,0.1\n"));
        assert!(!text.contains('\r'));
        let t = read_table(&p).unwrap();
        assert_eq!(t.header, ["k", "v"]);
        assert_eq!(t.rows, rows);
        assert_eq!(t.floats("k").unwrap(), [1.0, 2.0]);
        assert!(t.floats("v").is_err());
    }

    #[test]
    fn header_only_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table(&p, &header(&["a"]), &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "# schema: ntn-metrics/1\na\n");
        assert!(read_table(&p).unwrap().rows.is_empty());
    }

    #[test]
    fn readers_reject_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "# schema: ntn-metrics/2\na\n1\n").unwrap();
        let e = read_table(&p).unwrap_err().to_string();
        assert!(e.contains("t.csv:1") && e.contains("ntn-metrics/2"), "{e}");
        std::fs::write(&p, "a\n1\n").unwrap();
        assert!(read_table(&p).is_err());
        std::fs::write(&p, "# schema: ntn-metrics/1\na,b\n1\n").unwrap();
        assert!(read_table(&p).unwrap_err().to_string().contains("t.csv:3"));

        let j = dir.path().join("s.json");
        write_json(&j, &serde_json::json!({"x": 1})).unwrap();
        assert!(std::fs::read_to_string(&j).unwrap().starts_with("{\n  \"schema\": \"ntn-metrics/1\""));
        assert_eq!(read_json(&j).unwrap()["x"], 1);
        std::fs::write(&j, "{\"schema\": \"ntn-metrics/0\"}").unwrap();
        assert!(read_json(&j).is_err());
        std::fs::write(&j, "{}").unwrap();
        assert!(read_json(&j).is_err());
    }

    #[test]
    fn row_width_is_enforced_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = TableWriter::create(&dir.path().join("t.csv"), &header(&["a", "b"])).unwrap();
        assert!(w.row(&["1".into()]).is_err());
    }
}
