//! On-disk artifacts: scenario TOML, radio-map and checkpoint binaries, and
//! the CSV tables.
//!
//! Binary files are little-endian with a fixed magic and a version word.
//! Floats in CSV are written with 17 significant digits so values
//! round-trip exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use hudn_core::linalg::Matrix;
use hudn_core::model::{FeatureDims, ModelConfig, ModelParams};
use hudn_core::objective::RateReport;
use hudn_core::radiomap::RadioMap;
use hudn_core::scenario::Scenario;
use hudn_core::trainer::LogRow;
use serde::{Deserialize, Serialize};

pub const RADIOMAP_MAGIC: &[u8; 8] = b"HUDNRMAP";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HUDNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: not a {what} file")]
    BadMagic { path: String, what: &'static str },
    #[error("{path}: unsupported format version {version}")]
    Version { path: String, version: u32 },
    #[error("{path}: truncated while reading {detail}")]
    Truncated { path: String, detail: String },
    #[error("{path}: {detail}")]
    Malformed { path: String, detail: String },
    #[error("radio map was built for a different scenario")]
    DigestMismatch,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn malformed(path: &Path, detail: impl Into<String>) -> Self {
        FormatError::Malformed {
            path: path.display().to_string(),
            detail: detail.into(),
        }
    }

    /// True for unreadable or unwritable paths, false for content problems.
    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io { .. })
    }
}

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FormatError::io(path, e))
}

fn read_all(path: &Path) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| FormatError::io(path, e))?;
    Ok(buf)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn scenario_to_toml(s: &Scenario) -> String {
    toml::to_string(s).expect("scenario is always representable in TOML")
}

pub fn write_scenario(path: &Path, s: &Scenario) -> Result<(), FormatError> {
    write_text(path, &scenario_to_toml(s))
}

pub fn read_scenario(path: &Path) -> Result<Scenario, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    toml::from_str(&text).map_err(|e| FormatError::malformed(path, e.to_string()))
}

/// Little-endian cursor that reports truncation against a path.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated {
                path: self.path.display().to_string(),
                detail: what.to_string(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| FormatError::malformed(self.path, "size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 8], what: &'static str) -> Result<(), FormatError> {
        let path = self.path.display().to_string();
        if self.buf.len() < 8 || &self.buf[..8] != magic {
            return Err(FormatError::BadMagic { path, what });
        }
        self.pos = 8;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version { path, version });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::malformed(
                self.path,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Magic, version, rows, cols, scenario digest, then row-major gains.
pub fn radiomap_bytes(map: &RadioMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(60 + 8 * map.gains.len());
    out.extend_from_slice(RADIOMAP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.n_points() as u64).to_le_bytes());
    out.extend_from_slice(&(map.n_sites() as u64).to_le_bytes());
    out.extend_from_slice(&map.scenario_digest);
    for g in map.gains.as_slice() {
        out.extend_from_slice(&g.to_le_bytes());
    }
    out
}

pub fn write_radiomap(path: &Path, map: &RadioMap) -> Result<(), FormatError> {
    let mut w = create(path)?;
    w.write_all(&radiomap_bytes(map))
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn parse_radiomap(path: &Path, buf: &[u8]) -> Result<RadioMap, FormatError> {
    let mut c = Cursor { buf, pos: 0, path };
    c.header(RADIOMAP_MAGIC, "radio map")?;
    let rows = c.u64("rows")? as usize;
    let cols = c.u64("cols")? as usize;
    let digest: [u8; 32] = c.take(32, "scenario digest")?.try_into().unwrap();
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| FormatError::malformed(path, "size overflow"))?;
    let data = c.f64s(n, "gains")?;
    c.finish()?;
    Ok(RadioMap {
        gains: Matrix::from_vec(rows, cols, data),
        scenario_digest: digest,
    })
}

/// Reads a radio map and, when `scenario` is given, checks it was built
/// from that scenario.
pub fn read_radiomap(path: &Path, scenario: Option<&Scenario>) -> Result<RadioMap, FormatError> {
    let map = parse_radiomap(path, &read_all(path)?)?;
    if let Some(s) = scenario {
        if s.digest() != map.scenario_digest || s.grid.len() != map.n_points() || s.n_sites() != map.n_sites() {
            return Err(FormatError::DigestMismatch);
        }
    }
    Ok(map)
}

/// `grid_index,site_id,gain` rows.
pub fn write_radiomap_csv(path: &Path, map: &RadioMap) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["grid_index", "site_id", "gain"])?;
    for (g, row) in map.gains.iter_rows().enumerate() {
        for (s, &v) in row.iter().enumerate() {
            w.write_record([g.to_string(), s.to_string(), fmt_f64(v)])?;
        }
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    dims: FeatureDims,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Magic, version, header length, JSON header (dims, model config, named
/// tensor shapes), then every tensor row-major in header order.
pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let named = params.named();
    let header = CheckpointHeader {
        dims: params.dims,
        config: params.config,
        tensors: named
            .iter()
            .map(|(n, m)| TensorEntry {
                name: n.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in named {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<(), FormatError> {
    let mut w = create(path)?;
    w.write_all(&checkpoint_bytes(params))
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn parse_checkpoint(path: &Path, buf: &[u8]) -> Result<ModelParams, FormatError> {
    let mut c = Cursor { buf, pos: 0, path };
    c.header(CHECKPOINT_MAGIC, "checkpoint")?;
    let len = c.u64("header length")? as usize;
    let header: CheckpointHeader = serde_json::from_slice(c.take(len, "header")?)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    // Build a skeleton of the right shape, then fill it in order.
    let mut params = hudn_core::model::init_params(header.dims, header.config, 0)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    let expected: Vec<(String, (usize, usize))> =
        params.named().into_iter().map(|(n, m)| (n, m.shape())).collect();
    if expected.len() != header.tensors.len() {
        return Err(FormatError::malformed(path, "tensor count differs from the model layout"));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != (entry.rows, entry.cols) {
            return Err(FormatError::malformed(path, format!("unexpected tensor {}", entry.name)));
        }
    }
    for (m, entry) in params.tensors_mut().into_iter().zip(&header.tensors) {
        let data = c.f64s(entry.rows * entry.cols, &entry.name)?;
        m.as_mut_slice().copy_from_slice(&data);
    }
    c.finish()?;
    Ok(params)
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams, FormatError> {
    parse_checkpoint(path, &read_all(path)?)
}

pub fn write_training_log(path: &Path, log: &[LogRow]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["step", "r_n", "r_b", "lr", "l_s", "l_total", "updated"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.r_n),
            fmt_f64(r.r_b),
            fmt_f64(r.lr),
            fmt_f64(r.l_s),
            fmt_f64(r.l_total),
            r.updated.to_string(),
        ])?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// One event's allocation as written to a rate-report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub event: usize,
    pub grid_ids: Vec<usize>,
    pub serving: Vec<usize>,
    pub p: Vec<f64>,
    pub report: RateReport,
    pub wall_clock_s: f64,
}

/// `event,ue,grid_index,serving_bs,power_w,rate_bps` rows, one per UE.
pub fn write_rate_reports(path: &Path, records: &[EventRecord]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["event", "ue", "grid_index", "serving_bs", "power_w", "rate_bps"])?;
    for rec in records {
        for (i, (&g, &s)) in rec.grid_ids.iter().zip(&rec.serving).enumerate() {
            w.write_record([
                rec.event.to_string(),
                i.to_string(),
                g.to_string(),
                s.to_string(),
                fmt_f64(rec.p[s]),
                fmt_f64(rec.report.per_ue[i]),
            ])?;
        }
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub mean_rate_bps: f64,
    pub mean_rate_bps_per_hz: f64,
    pub mean_wall_clock_s: f64,
}

pub fn summarize(algorithm: &str, records: &[EventRecord]) -> SummaryRow {
    let n = records.len().max(1) as f64;
    SummaryRow {
        algorithm: algorithm.to_string(),
        mean_rate_bps: records.iter().map(|r| r.report.total).sum::<f64>() / n,
        mean_rate_bps_per_hz: records.iter().map(|r| r.report.spectral_efficiency()).sum::<f64>() / n,
        mean_wall_clock_s: records.iter().map(|r| r.wall_clock_s).sum::<f64>() / n,
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["algorithm", "mean_rate_bps", "mean_rate_bps_per_hz", "mean_wall_clock_s"])?;
    for r in rows {
        w.write_record([
            r.algorithm.clone(),
            fmt_f64(r.mean_rate_bps),
            fmt_f64(r.mean_rate_bps_per_hz),
            fmt_f64(r.mean_wall_clock_s),
        ])?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, FormatError> {
    let mut r = csv::Reader::from_reader(File::open(path).map_err(|e| FormatError::io(path, e))?);
    Ok(r.deserialize().collect::<Result<Vec<SummaryRow>, _>>()?)
}

/// Empirical CDF of per-UE rates: sorted rates with quantile `k / n`.
pub fn cdf_points(records: &[EventRecord]) -> Vec<(f64, f64)> {
    let mut rates: Vec<f64> = records.iter().flat_map(|r| r.report.per_ue.iter().copied()).collect();
    rates.sort_by(f64::total_cmp);
    let n = rates.len() as f64;
    rates
        .into_iter()
        .enumerate()
        .map(|(k, r)| (r, (k + 1) as f64 / n))
        .collect()
}

/// `algorithm,rate_bps,quantile` rows.
pub fn write_cdf(path: &Path, per_algorithm: &[(String, Vec<EventRecord>)]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["algorithm", "rate_bps", "quantile"])?;
    for (name, recs) in per_algorithm {
        for (r, q) in cdf_points(recs) {
            w.write_record([name.clone(), fmt_f64(r), fmt_f64(q)])?;
        }
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// `grid_index` of each UE node and `site_id` of each BS node per edge.
pub fn write_graph_edges(path: &Path, graph: &hudn_core::hetgraph::HeteroGraph) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["ue", "grid_index", "bs", "site_id", "gain"])?;
    for (i, j) in graph.edges() {
        w.write_record([
            i.to_string(),
            graph.ue_ids[i].to_string(),
            j.to_string(),
            graph.bs_ids[j].to_string(),
            fmt_f64(graph.gains[(i, j)]),
        ])?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}
