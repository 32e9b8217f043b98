//! File formats.
//!
//! * Graphs: JSON `{"nodes": [...], "edges": [[a, b], ...]}`.
//! * Panels: CSV with a label header and one row per time step, or raw
//!   little-endian `f64` in time-major order (all nodes of step 0, then step
//!   1, ...) with a JSON sidecar `<path>.json` holding `{labels, n_samples, dt}`.
//! * Spectral fields: a JSON header at `<path>` and a complex64 payload at
//!   `<path>` with its extension replaced by `bin`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::dynamics::{TimeSeriesPanel, DEFAULT_DT};
use crate::graph::{GraphDocument, UndirectedGraph};
use crate::spectral::SpectralDensityField;

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn schema_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Schema {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Reads JSON, reporting syntax errors with their line and structural
/// errors (missing or mistyped fields) as schema errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| io_err(path, e))?;
    parse_json(path, &text)
}

pub(crate) fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            schema_err(path, e)
        } else {
            HarnessError::Parse {
                path: path.to_owned(),
                line: e.line() as u64,
                message: e.to_string(),
            }
        }
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_graph(path: &Path) -> Result<UndirectedGraph> {
    let doc: GraphDocument = read_json(path)?;
    UndirectedGraph::from_document(&doc).map_err(|e| schema_err(path, e))
}

pub fn save_graph(path: &Path, g: &UndirectedGraph) -> Result<()> {
    write_json(path, &g.to_document())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelFormat {
    Csv,
    Binary,
}

impl PanelFormat {
    /// `.csv` files are CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelSidecar {
    labels: Vec<String>,
    n_samples: usize,
    dt: f64,
    #[serde(default)]
    burn_in_discarded: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Shortest decimal form that parses back to the same `f64`.
fn fmt_sample(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn save_panel(path: &Path, panel: &TimeSeriesPanel, format: PanelFormat) -> Result<()> {
    let mut w = create(path)?;
    let rows = panel.rows();
    let err = |e: std::io::Error| io_err(path, e);
    match format {
        PanelFormat::Csv => {
            let mut csv = csv::Writer::from_writer(&mut w);
            csv.write_record(panel.labels())
                .map_err(|e| io_err(path, e))?;
            let mut record = Vec::with_capacity(rows.len());
            for k in 0..panel.len() {
                record.clear();
                record.extend(rows.iter().map(|r| fmt_sample(r[k])));
                csv.write_record(&record).map_err(|e| io_err(path, e))?;
            }
            csv.flush().map_err(err)?;
        }
        PanelFormat::Binary => {
            for k in 0..panel.len() {
                for r in rows {
                    w.write_all(&r[k].to_le_bytes()).map_err(err)?;
                }
            }
            write_json(
                &sidecar_path(path),
                &PanelSidecar {
                    labels: panel.labels().to_vec(),
                    n_samples: panel.len(),
                    dt: panel.dt(),
                    burn_in_discarded: panel.burn_in_discarded(),
                },
            )?;
        }
    }
    w.flush().map_err(err)
}

/// Loads a panel. CSV files carry no sampling interval, so `dt` (default
/// 0.1 s) is used for them; binary panels take it from the sidecar.
pub fn load_panel(path: &Path, format: PanelFormat, dt: Option<f64>) -> Result<TimeSeriesPanel> {
    match format {
        PanelFormat::Csv => load_csv_panel(path, dt.unwrap_or(DEFAULT_DT)),
        PanelFormat::Binary => load_binary_panel(path),
    }
}

fn load_csv_panel(path: &Path, dt: f64) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(open(path)?);
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| parse_csv_err(path, 1, e))?
        .iter()
        .map(|s| s.trim().to_owned())
        .collect();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_csv_err(path, line, e)),
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() != labels.len() {
            return Err(HarnessError::Parse {
                path: path.to_owned(),
                line,
                message: format!("expected {} columns, found {}", labels.len(), record.len()),
            });
        }
        for (row, field) in rows.iter_mut().zip(record.iter()) {
            let v: f64 = field.trim().parse().map_err(|_| HarnessError::Parse {
                path: path.to_owned(),
                line,
                message: format!("`{field}` is not a number"),
            })?;
            row.push(v);
        }
    }
    TimeSeriesPanel::new(labels, rows, dt, 0).map_err(|e| schema_err(path, e))
}

fn parse_csv_err(path: &Path, line: u64, e: csv::Error) -> HarnessError {
    HarnessError::Parse {
        path: path.to_owned(),
        line,
        message: e.to_string(),
    }
}

fn load_binary_panel(path: &Path) -> Result<TimeSeriesPanel> {
    let side: PanelSidecar = read_json(&sidecar_path(path))?;
    let m = side.labels.len();
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    if bytes.len() != m * side.n_samples * 8 {
        return Err(schema_err(
            path,
            format!(
                "{} bytes, sidecar implies {} nodes x {} samples",
                bytes.len(),
                m,
                side.n_samples
            ),
        ));
    }
    let mut rows = vec![Vec::with_capacity(side.n_samples); m];
    for (idx, chunk) in bytes.chunks_exact(8).enumerate() {
        rows[idx % m].push(f64::from_le_bytes(chunk.try_into().expect("chunk of 8")));
    }
    TimeSeriesPanel::new(side.labels, rows, side.dt, side.burn_in_discarded)
        .map_err(|e| schema_err(path, e))
}

pub fn field_payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

pub fn save_field(path: &Path, field: &SpectralDensityField) -> Result<()> {
    let payload_path = field_payload_path(path);
    let mut header = create(path)?;
    let mut payload = create(&payload_path)?;
    field
        .write_dump(&mut header, &mut payload)
        .map_err(|e| io_err(path, e))?;
    header.flush().map_err(|e| io_err(path, e))?;
    payload.flush().map_err(|e| io_err(&payload_path, e))
}

pub fn load_field(path: &Path) -> Result<SpectralDensityField> {
    let payload_path = field_payload_path(path);
    SpectralDensityField::read_dump(open(path)?, open(&payload_path)?)
        .map_err(|e| schema_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> TimeSeriesPanel {
        TimeSeriesPanel::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![0.1, -1.5e-300, 3.0, std::f64::consts::PI],
                vec![1e20, 0.0, -2.0 / 3.0, 7e-5],
            ],
            0.05,
            3,
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        save_panel(&p, &panel(), PanelFormat::Binary).unwrap();
        assert!(sidecar_path(&p).exists());
        let back = load_panel(&p, PanelFormat::from_path(&p), None).unwrap();
        assert_eq!(back, panel());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        save_panel(&p, &panel(), PanelFormat::Csv).unwrap();
        let back = load_panel(&p, PanelFormat::from_path(&p), Some(0.05)).unwrap();
        assert_eq!(back.rows(), panel().rows());
        assert_eq!(back.labels(), panel().labels());
    }

    #[test]
    fn csv_ragged_row_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "a,b\n1,2\n3,4\n5\n6,7\n").unwrap();
        match load_panel(&p, PanelFormat::Csv, None) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "a,b\n1,2\n3,x\n").unwrap();
        match load_panel(&p, PanelFormat::Csv, None) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn graph_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        let g = UndirectedGraph::numbered(3, &[(1, 2), (2, 3)]).unwrap();
        save_graph(&p, &g).unwrap();
        assert_eq!(load_graph(&p).unwrap(), g);

        std::fs::write(&p, r#"{"nodes":["a","b"],"edges":[["a","b"],["b","a"]]}"#).unwrap();
        assert!(matches!(load_graph(&p), Err(HarnessError::Schema { .. })));
        std::fs::write(&p, r#"{"nodes":["a","b"]}"#).unwrap();
        match load_graph(&p) {
            Err(HarnessError::Schema { message, .. }) => assert!(message.contains("edges")),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "{\n\"nodes\": [\"a\",\n}").unwrap();
        match load_graph(&p) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_graph(&dir.path().join("missing.json")),
            Err(HarnessError::Io { .. })
        ));
    }
}
