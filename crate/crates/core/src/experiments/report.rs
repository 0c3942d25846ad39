use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LodError, Result};
use crate::experiments::config::ExperimentConfig;
use crate::solver::ProvenanceEntry;

/// Column order of the report CSV.
pub const COLUMNS: [&str; 15] = [
    "problem",
    "H",
    "m",
    "method",
    "strategy",
    "e_H",
    "e_LOD",
    "best_l2",
    "newton_iterations_fine",
    "newton_iterations_coarse",
    "corrector_solve_count",
    "wall_times",
    "fem_e_H",
    "fem_e_LOD",
    "status",
];

/// One `(H, m)` combination. Numeric fields are empty when the row failed;
/// `status` is `ok` or `error: <message>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub problem: String,
    #[serde(rename = "H")]
    pub coarse_h: f64,
    pub m: usize,
    pub method: String,
    pub strategy: String,
    #[serde(rename = "e_H")]
    pub e_h: Option<f64>,
    #[serde(rename = "e_LOD")]
    pub e_lod: Option<f64>,
    pub best_l2: Option<f64>,
    pub newton_iterations_fine: Option<usize>,
    pub newton_iterations_coarse: Option<usize>,
    pub corrector_solve_count: Option<usize>,
    /// `phase=seconds` pairs joined by `;`, or `-` when timings are off.
    pub wall_times: String,
    #[serde(rename = "fem_e_H")]
    pub fem_e_h: Option<f64>,
    #[serde(rename = "fem_e_LOD")]
    pub fem_e_lod: Option<f64>,
    pub status: String,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowProvenance {
    #[serde(rename = "H")]
    pub coarse_h: f64,
    pub m: usize,
    pub rounds: Vec<ProvenanceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub provenance: Vec<RowProvenance>,
}

const SOURCES: [&str; 15] = [
    include_str!("../lib.rs"),
    include_str!("../scalar.rs"),
    include_str!("../error.rs"),
    include_str!("../mesh.rs"),
    include_str!("../fem.rs"),
    include_str!("../linalg/mod.rs"),
    include_str!("../linalg/sparse.rs"),
    include_str!("../linalg/skyline.rs"),
    include_str!("../linalg/dense.rs"),
    include_str!("../interpolation.rs"),
    include_str!("../coefficients.rs"),
    include_str!("../corrector.rs"),
    include_str!("../solver.rs"),
    include_str!("../indicators.rs"),
    include_str!("runner.rs"),
];

/// Crate version plus a SHA-256 prefix over the numerical sources.
pub fn version_digest() -> String {
    let mut h = Sha256::new();
    for s in SOURCES {
        h.update(s.as_bytes());
    }
    format!("{}+{}", env!("CARGO_PKG_VERSION"), &hex::encode(h.finalize())[..16])
}

#[derive(Serialize)]
struct Meta<'a> {
    version: String,
    seed: u64,
    config: &'a ExperimentConfig,
    provenance: &'a [RowProvenance],
}

fn csv_error(e: csv::Error) -> LodError {
    LodError::Io(std::io::Error::other(e))
}

impl ExperimentReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| !r.is_ok())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(csv_error)?;
        }
        if self.rows.is_empty() {
            w.write_record(COLUMNS).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| LodError::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Config echo, seed, code version and per-row linearization provenance as TOML.
    pub fn meta(&self) -> String {
        let meta = Meta { version: version_digest(), seed: self.config.seed, config: &self.config, provenance: &self.provenance };
        toml::to_string(&meta).expect("report metadata is representable as TOML")
    }

    /// Writes the CSV to `path` and the metadata to `path.meta`, each through a
    /// temporary file and a rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())?;
        write_atomic(&meta_path(path), self.meta().as_bytes())
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_error)
}

/// Experimental order between two consecutive coarse mesh sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EocRecord {
    pub method: String,
    pub strategy: String,
    pub m: usize,
    pub coarse_h: f64,
    pub next_coarse_h: f64,
    pub eoc_e_h: Option<f64>,
    pub eoc_e_lod: Option<f64>,
}

/// `log(e(H1)/e(H2)) / log(H1/H2)` for consecutive successful rows sharing
/// method, strategy and `m`, ordered from coarse to fine.
pub fn fit_eoc(rows: &[ReportRow]) -> Vec<EocRecord> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        groups.entry((r.method.clone(), r.strategy.clone(), r.m)).or_default().push(r);
    }
    let rate = |a: Option<f64>, b: Option<f64>, ha: f64, hb: f64| match (a, b) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln() / (ha / hb).ln()),
        _ => None,
    };
    let mut out = Vec::new();
    for ((method, strategy, m), mut g) in groups {
        g.sort_by(|a, b| b.coarse_h.total_cmp(&a.coarse_h));
        for w in g.windows(2) {
            let (a, b) = (w[0], w[1]);
            out.push(EocRecord {
                method: method.clone(),
                strategy: strategy.clone(),
                m,
                coarse_h: a.coarse_h,
                next_coarse_h: b.coarse_h,
                eoc_e_h: rate(a.e_h, b.e_h, a.coarse_h, b.coarse_h),
                eoc_e_lod: rate(a.e_lod, b.e_lod, a.coarse_h, b.coarse_h),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::ProblemKind;

    fn row(h: f64, e: f64, m: usize) -> ReportRow {
        ReportRow {
            problem: "p".into(),
            coarse_h: h,
            m,
            method: "galerkin".into(),
            strategy: "zero".into(),
            e_h: Some(e * e),
            e_lod: Some(e),
            best_l2: Some(0.5),
            newton_iterations_fine: Some(5),
            newton_iterations_coarse: Some(4),
            corrector_solve_count: Some(32),
            wall_times: "-".into(),
            fem_e_h: None,
            fem_e_lod: Some(1.0),
            status: "ok".into(),
        }
    }

    #[test]
    fn eoc_of_exact_powers() {
        let rows: Vec<_> = [0.25, 0.125, 0.0625].iter().map(|&h| row(h, 3.0 * h, 1)).collect();
        let eoc = fit_eoc(&rows);
        assert_eq!(eoc.len(), 2);
        for e in &eoc {
            assert!((e.eoc_e_lod.unwrap() - 1.0).abs() < 1e-12);
            assert!((e.eoc_e_h.unwrap() - 2.0).abs() < 1e-12);
        }
        let mut bad = rows.clone();
        bad[1].status = "error: x".into();
        assert_eq!(fit_eoc(&bad).len(), 1);
    }

    #[test]
    fn csv_header_first_and_round_trip() {
        let report = ExperimentReport {
            config: ExperimentConfig::desk(ProblemKind::PeriodicF1, 1),
            rows: vec![row(0.25, 0.1, 1), row(0.125, 1.0 / 3.0, 2)],
            provenance: vec![],
        };
        let text = report.to_csv().unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        assert_eq!(read_csv(&text).unwrap(), report.rows);
        let empty = ExperimentReport { rows: vec![], ..report.clone() };
        assert_eq!(empty.to_csv().unwrap().trim_end(), COLUMNS.join(","));
        assert!(report.meta().contains("seed = 1"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        report.write(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
        assert!(meta_path(&path).exists());
    }
}
