//! Deterministic artifact writers.
//!
//! CSV files start with a `#` line carrying the crate version and config
//! hash; numbers are written as C's `%.17g` would. JSON documents carry the
//! same two fields at top level. Snapshots are little-endian binaries:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "AKDVSNP\0"
//!      8     4  format version (u32)
//!     12     4  crate version, major << 16 | minor << 8 | patch (u32)
//!     16     8  n (u64)
//!     24     8  x_min (f64)
//!     32     8  x_max (f64)
//!     40     8  t (f64)
//!     48    32  config hash (SHA-256)
//!     80   8n  u_0 .. u_{n-1} (f64)
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::Grid1D;

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"AKDVSNP\0";
pub const SNAPSHOT_FORMAT: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 80;

/// `x` formatted like `printf("%.17g", x)`.
pub fn fmt_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Provenance carried by every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    pub config_hash: [u8; 32],
}

impl Provenance {
    pub fn new(config_hash: [u8; 32]) -> Self {
        Self { version: crate::VERSION.to_string(), config_hash }
    }

    pub fn hash_hex(&self) -> String {
        self.config_hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn packed_version(&self) -> u32 {
        let mut parts = self.version.split('.').map(|p| p.parse::<u32>().unwrap_or(0));
        let (a, b, c) = (parts.next().unwrap_or(0), parts.next().unwrap_or(0), parts.next().unwrap_or(0));
        (a << 16) | ((b & 0xff) << 8) | (c & 0xff)
    }
}

/// In-memory CSV table with a provenance line.
#[derive(Clone, Debug)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(prov: &Provenance, columns: &[&str]) -> Self {
        let mut text = format!("# akdv {} config {}\n", prov.version, prov.hash_hex());
        text.push_str(&columns.join(","));
        text.push('\n');
        Self { text, columns: columns.len() }
    }

    pub fn row(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.columns, "row width");
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            self.text.push_str(&fmt_g17(*v));
        }
        self.text.push('\n');
    }

    /// Row whose leading cells are text.
    pub fn row_labeled(&mut self, labels: &[&str], values: &[f64]) {
        assert_eq!(labels.len() + values.len(), self.columns, "row width");
        let mut cells: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        cells.extend(values.iter().map(|v| fmt_g17(*v)));
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}

/// Parsed CSV written by [`CsvTable`].
#[derive(Clone, Debug)]
pub struct CsvData {
    pub provenance_line: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_csv(path: &Path) -> Result<CsvData> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    let provenance_line = lines.next().filter(|l| l.starts_with('#')).ok_or_else(|| bad("missing provenance line"))?;
    let columns: Vec<String> = lines.next().ok_or_else(|| bad("missing header"))?.split(',').map(String::from).collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_err(|_| bad(&format!("bad number {c:?}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CsvData { provenance_line: provenance_line.to_string(), columns, rows })
}

/// `value` as a JSON object with `version` and `config_hash` prepended.
pub fn json_document(prov: &Provenance, value: &impl Serialize) -> Result<String> {
    let body = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut doc = Map::new();
    doc.insert("version".into(), Value::String(prov.version.clone()));
    doc.insert("config_hash".into(), Value::String(prov.hash_hex()));
    match body {
        Value::Object(fields) => doc.extend(fields),
        other => {
            doc.insert("data".into(), other);
        }
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(doc)).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json(path: &Path, prov: &Provenance, value: &impl Serialize) -> Result<()> {
    write_atomic(path, json_document(prov, value)?.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub format: u32,
    pub version: u32,
    pub grid: Grid1D,
    pub t: f64,
    pub config_hash: [u8; 32],
}

pub fn encode_snapshot(prov: &Provenance, grid: &Grid1D, t: f64, u: &[f64]) -> Result<Vec<u8>> {
    if u.len() != grid.n {
        return Err(Error::InvalidParameter(format!("field has {} values, grid {}", u.len(), grid.n)));
    }
    let mut b = Vec::with_capacity(SNAPSHOT_HEADER_LEN + 8 * u.len());
    b.extend_from_slice(&SNAPSHOT_MAGIC);
    b.extend_from_slice(&SNAPSHOT_FORMAT.to_le_bytes());
    b.extend_from_slice(&prov.packed_version().to_le_bytes());
    b.extend_from_slice(&(grid.n as u64).to_le_bytes());
    b.extend_from_slice(&grid.x_min.to_le_bytes());
    b.extend_from_slice(&grid.x_max.to_le_bytes());
    b.extend_from_slice(&t.to_le_bytes());
    b.extend_from_slice(&prov.config_hash);
    for v in u {
        b.extend_from_slice(&v.to_le_bytes());
    }
    Ok(b)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(SnapshotHeader, Vec<f64>)> {
    let bad = |what: String| Error::Format(format!("snapshot: {what}"));
    if bytes.len() < SNAPSHOT_HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let format = u32_at(8);
    if format != SNAPSHOT_FORMAT {
        return Err(bad(format!("unsupported format version {format}")));
    }
    let n = u64_at(16) as usize;
    if bytes.len() != SNAPSHOT_HEADER_LEN + 8 * n {
        return Err(bad(format!("expected {} values, file holds {} bytes", n, bytes.len())));
    }
    let grid = Grid1D::new(f64_at(24), f64_at(32), n).map_err(|e| bad(e.to_string()))?;
    let header = SnapshotHeader {
        format,
        version: u32_at(12),
        grid,
        t: f64_at(40),
        config_hash: bytes[48..80].try_into().expect("32 bytes"),
    };
    let u = (0..n).map(|j| f64_at(SNAPSHOT_HEADER_LEN + 8 * j)).collect();
    Ok((header, u))
}

/// `u_<t>.f64` with `t` at six decimals.
pub fn snapshot_name(t: f64) -> String {
    format!("u_{t:.6}.f64")
}

pub fn write_snapshot(dir: &Path, prov: &Provenance, grid: &Grid1D, t: f64, u: &[f64]) -> Result<PathBuf> {
    let path = dir.join(snapshot_name(t));
    write_atomic(&path, &encode_snapshot(prov, grid, t, u)?)?;
    Ok(path)
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<f64>)> {
    decode_snapshot(&fs::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// All snapshots in `dir`, ordered by time.
pub fn read_snapshots(dir: &Path) -> Result<Vec<(SnapshotHeader, Vec<f64>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("u_") && name.ends_with(".f64")
        })
        .collect();
    paths.sort();
    let mut out = paths.iter().map(|p| read_snapshot(p)).collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        let cases: &[(f64, &str)] = &[
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.10000000000000001"),
            (1.0 / 3.0, "0.33333333333333331"),
            (1e-5, "1.0000000000000001e-05"),
            (123456.789, "123456.789"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (0.0001, "0.0001"),
            (6.02214076e23, "6.0221407599999999e+23"),
            (f64::NAN, "nan"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for &(x, want) in cases {
            assert_eq!(fmt_g17(x), want, "{x:e}");
        }
    }

    #[test]
    fn g17_round_trips() {
        let mut x = 0.123_456_789_f64;
        for _ in 0..200 {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
            x = x * -3.7 + 1e-3;
        }
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let prov = Provenance::new([7; 32]);
        let g = Grid1D::new(-3.0, 5.0, 8).unwrap();
        let u: Vec<f64> = (0..8).map(|j| j as f64 * 0.1 - 0.3).collect();
        let bytes = encode_snapshot(&prov, &g, -1.25, &u).unwrap();
        assert_eq!(bytes.len(), SNAPSHOT_HEADER_LEN + 64);
        let (h, back) = decode_snapshot(&bytes).unwrap();
        assert_eq!(back, u);
        assert_eq!(h.grid, g);
        assert_eq!(h.t, -1.25);
        assert_eq!(h.config_hash, [7; 32]);
        assert_eq!(h.version, prov.packed_version());
        assert!(decode_snapshot(&bytes[..70]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_snapshot(&bad).is_err());
        assert!(decode_snapshot(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn json_carries_provenance() {
        #[derive(Serialize)]
        struct S {
            a: f64,
        }
        let prov = Provenance::new([0xab; 32]);
        let doc: Value = serde_json::from_str(&json_document(&prov, &S { a: 1.5 }).unwrap()).unwrap();
        assert_eq!(doc["version"], crate::VERSION);
        assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(doc["a"], 1.5);
        let doc: Value = serde_json::from_str(&json_document(&prov, &[1, 2]).unwrap()).unwrap();
        assert_eq!(doc["data"][1], 2);
    }

    #[test]
    fn csv_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance::new([1; 32]);
        let mut t = CsvTable::new(&prov, &["t", "v"]);
        t.row(&[0.5, 1.0 / 3.0]);
        let path = dir.path().join("sub/x.csv");
        t.write(&path).unwrap();
        let back = read_csv(&path).unwrap();
        assert!(back.provenance_line.contains(&prov.hash_hex()));
        assert_eq!(back.columns, ["t", "v"]);
        assert_eq!(back.rows, vec![vec![0.5, 1.0 / 3.0]]);
        let leftovers: Vec<_> = fs::read_dir(dir.path().join("sub")).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
