//! On-disk formats: cubes (`SPHC`), parameter checkpoints (`SPDM`), detection
//! maps (`SPHM` and 16-bit PGM), prior text files, ROC and loss-trace CSV, and
//! the JSON evaluation report.
//!
//! Binary formats are little-endian throughout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specdetect_core::diff::ParamStore;
use specdetect_core::eval::{RocCurves, RocReport, SeparabilityStats};
use specdetect_core::hsi::{load_prior, HsiCube, LabelMap, SpectralPrior};
use specdetect_core::metatrain::LossRecord;
use specdetect_core::ssplm::TtaRecord;

pub const CUBE_MAGIC: &[u8; 4] = b"SPHC";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPDM";
pub const MAP_MAGIC: &[u8; 4] = b"SPHM";
pub const FORMAT_VERSION: u16 = 1;

const FLAG_WAVELENGTHS: u8 = 1;
const FLAG_LABELS: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} left")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error(transparent)]
    Core(#[from] specdetect_core::Error),
}

impl FormatError {
    /// Stable numeric code per variant.
    pub fn code(&self) -> u8 {
        match self {
            Self::Io { .. } => 10,
            Self::BadMagic { .. } => 11,
            Self::Version(_) => 12,
            Self::Truncated { .. } => 13,
            Self::DimensionOverflow(_) => 14,
            Self::Trailing(_) => 15,
            Self::Malformed { .. } => 16,
            Self::Core(_) => 17,
        }
    }
}

type Result<T> = std::result::Result<T, FormatError>;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| FormatError::Io {
        path: path.to_owned(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, m: &'static [u8; 4]) -> Result<()> {
        let got = self.take(4).map_err(|_| FormatError::BadMagic {
            expected: std::str::from_utf8(m).unwrap_or("?"),
        })?;
        if got != m {
            return Err(FormatError::BadMagic {
                expected: std::str::from_utf8(m).unwrap_or("?"),
            });
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or_else(|| FormatError::DimensionOverflow(format!("{n} floats")))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        let bytes = n.checked_mul(2).ok_or_else(|| FormatError::DimensionOverflow(format!("{n} labels")))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
            .collect())
    }

    fn version(&mut self) -> Result<()> {
        match self.u16()? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::Version(v)),
        }
    }

    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, v: impl IntoIterator<Item = f32>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn checked_product(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| FormatError::DimensionOverflow(format!("extents {dims:?}")))
}

fn dim(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| FormatError::DimensionOverflow(format!("{what} = {n}")))
}

// ---- cubes -----------------------------------------------------------------

pub fn encode_cube(cube: &HsiCube, labels: Option<&LabelMap>) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        if !l.matches(cube) {
            return Err(FormatError::Malformed {
                what: "cube",
                detail: "label map extents differ from the cube".into(),
            });
        }
    }
    let mut out = Vec::with_capacity(19 + cube.data().len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (n, what) in [(cube.height(), "height"), (cube.width(), "width"), (cube.bands(), "bands")] {
        out.extend_from_slice(&dim(n, what)?.to_le_bytes());
    }
    let mut flags = 0;
    if cube.wavelengths().is_some() {
        flags |= FLAG_WAVELENGTHS;
    }
    if labels.is_some() {
        flags |= FLAG_LABELS;
    }
    out.push(flags);
    if let Some(wl) = cube.wavelengths() {
        put_f32s(&mut out, wl.iter().map(|&w| w as f32));
    }
    put_f32s(&mut out, cube.data().iter().copied());
    if let Some(l) = labels {
        for &v in l.labels() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<(HsiCube, Option<LabelMap>)> {
    let mut r = Reader::new(bytes);
    r.magic(CUBE_MAGIC)?;
    r.version()?;
    let (h, w, b) = (r.u32()?, r.u32()?, r.u32()?);
    let n = checked_product(&[h, w, b])?;
    let flags = r.u8()?;
    if flags & !(FLAG_WAVELENGTHS | FLAG_LABELS) != 0 {
        return Err(FormatError::Malformed {
            what: "cube",
            detail: format!("unknown flag bits {flags:#04x}"),
        });
    }
    let wl = if flags & FLAG_WAVELENGTHS != 0 {
        Some(r.f32s(b as usize)?.into_iter().map(f64::from).collect())
    } else {
        None
    };
    let data = r.f32s(n)?;
    let labels = if flags & FLAG_LABELS != 0 {
        Some(r.u16s(h as usize * w as usize)?)
    } else {
        None
    };
    r.finish()?;
    let mut cube = HsiCube::new(h as usize, w as usize, b as usize, data)?;
    if let Some(wl) = wl {
        cube = cube.with_wavelengths(wl)?;
    }
    let labels = labels
        .map(|l| LabelMap::new(h as usize, w as usize, l))
        .transpose()?;
    Ok((cube, labels))
}

pub fn save_cube(path: &Path, cube: &HsiCube, labels: Option<&LabelMap>) -> Result<()> {
    write_file(path, &encode_cube(cube, labels)?)
}

pub fn load_cube(path: &Path) -> Result<(HsiCube, Option<LabelMap>)> {
    decode_cube(&read_file(path)?)
}

// ---- checkpoints -----------------------------------------------------------

pub fn encode_checkpoint(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(store.len(), "entry count")?.to_le_bytes());
    for e in store.entries() {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| FormatError::DimensionOverflow(format!("name `{}`", e.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.frozen as u8);
        let rank = u8::try_from(e.shape.len()).map_err(|_| FormatError::DimensionOverflow(format!("rank of `{}`", e.name)))?;
        out.push(rank);
        for &d in &e.shape {
            out.extend_from_slice(&dim(d, "extent")?.to_le_bytes());
        }
        put_f32s(&mut out, e.value.iter().copied());
    }
    Ok(out)
}

/// Rebuilds a store with names, shapes, values and frozen flags. Optimizer
/// moments start from zero.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| FormatError::Malformed {
                what: "checkpoint",
                detail: format!("entry name: {e}"),
            })?
            .to_owned();
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            f => {
                return Err(FormatError::Malformed {
                    what: "checkpoint",
                    detail: format!("frozen flag {f} for `{name}`"),
                })
            }
        };
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = checked_product(&dims)?;
        let values = r.f32s(n)?;
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        let id = store.register(&name, &shape, values)?;
        store.entry_mut(id).frozen = frozen;
    }
    r.finish()?;
    Ok(store)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    write_file(path, &encode_checkpoint(store)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    decode_checkpoint(&read_file(path)?)
}

// ---- detection maps --------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, scores: &[f64]) -> Result<Self> {
        if height.checked_mul(width) != Some(scores.len()) {
            return Err(FormatError::Malformed {
                what: "map",
                detail: format!("{} scores for a {height}x{width} map", scores.len()),
            });
        }
        Ok(Self {
            height,
            width,
            scores: scores.iter().map(|&s| s as f32).collect(),
        })
    }

    pub fn scores_f64(&self) -> Vec<f64> {
        self.scores.iter().map(|&s| f64::from(s)).collect()
    }
}

pub fn encode_map(map: &ScoreMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + map.scores.len() * 4);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&dim(map.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim(map.width, "width")?.to_le_bytes());
    put_f32s(&mut out, map.scores.iter().copied());
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<ScoreMap> {
    let mut r = Reader::new(bytes);
    r.magic(MAP_MAGIC)?;
    let (h, w) = (r.u32()?, r.u32()?);
    let n = checked_product(&[h, w])?;
    let scores = r.f32s(n)?;
    r.finish()?;
    Ok(ScoreMap {
        height: h as usize,
        width: w as usize,
        scores,
    })
}

pub fn save_map(path: &Path, map: &ScoreMap) -> Result<()> {
    write_file(path, &encode_map(map)?)
}

pub fn load_map(path: &Path) -> Result<ScoreMap> {
    decode_map(&read_file(path)?)
}

/// Binary 16-bit graymap; scores are clamped to `[0, 1]` and scaled to 65535.
pub fn encode_pgm(map: &ScoreMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for &s in &map.scores {
        let v = (f64::from(s).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn save_pgm(path: &Path, map: &ScoreMap) -> Result<()> {
    write_file(path, &encode_pgm(map))
}

// ---- priors ----------------------------------------------------------------

/// Reads a prior text file; resampled onto `grid` when lengths differ.
pub fn read_prior(path: &Path, band_count: usize, grid: Option<&[f64]>) -> Result<SpectralPrior> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| FormatError::Malformed {
        what: "prior",
        detail: e.to_string(),
    })?;
    let material = path.file_stem().and_then(|s| s.to_str()).unwrap_or("prior");
    Ok(load_prior(material, &text, band_count, grid)?)
}

/// One value per line, full precision.
pub fn prior_text(values: &[f64], wavelengths: Option<&[f64]>) -> String {
    let mut s = String::new();
    for (k, v) in values.iter().enumerate() {
        match wavelengths {
            Some(w) => s.push_str(&format!("{:?},{:?}\n", w[k], v)),
            None => s.push_str(&format!("{v:?}\n")),
        }
    }
    s
}

// ---- reports ---------------------------------------------------------------

pub fn roc_csv(curves: &RocCurves) -> String {
    let mut s = String::from("tau,pd,pf\n");
    for k in 0..curves.tau.len() {
        s.push_str(&format!("{:?},{:?},{:?}\n", curves.tau[k], curves.pd[k], curves.pf[k]));
    }
    s
}

pub fn parse_roc_csv(text: &str) -> Result<Vec<[f64; 3]>> {
    parse_csv(text, "tau,pd,pf", "ROC CSV")?
        .into_iter()
        .map(|r| Ok([r[0], r[1], r[2]]))
        .collect()
}

fn parse_csv(text: &str, header: &str, what: &'static str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(FormatError::Malformed {
            what,
            detail: format!("expected header `{header}`"),
        });
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(n, line)| {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| FormatError::Malformed {
                    what,
                    detail: format!("row {}: {e}", n + 1),
                })?;
            if row.len() != width {
                return Err(FormatError::Malformed {
                    what,
                    detail: format!("row {}: {} fields", n + 1, row.len()),
                });
            }
            Ok(row)
        })
        .collect()
}

pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss_cl,loss_de,loss_phy,loss_total\n");
    for r in trace {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            r.iteration, r.loss_cl, r.loss_de, r.loss_phy, r.loss_total
        ));
    }
    s
}

pub fn parse_loss_trace_csv(text: &str) -> Result<Vec<LossRecord>> {
    Ok(parse_csv(text, "iteration,loss_cl,loss_de,loss_phy,loss_total", "loss trace")?
        .into_iter()
        .map(|r| LossRecord {
            iteration: r[0] as usize,
            loss_cl: r[1],
            loss_de: r[2],
            loss_phy: r[3],
            loss_total: r[4],
        })
        .collect())
}

pub fn tta_trace_csv(trace: &[TtaRecord]) -> String {
    let mut s = String::from("iteration,loss_wbce,loss_self,objective,positives,negatives\n");
    for r in trace {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{},{}\n",
            r.iteration, r.loss_wbce, r.loss_self, r.objective, r.positives, r.negatives
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumberJson {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Stable JSON schema of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJson {
    pub auc_pf_pd: f64,
    pub auc_tau_pd: f64,
    pub auc_tau_pf: f64,
    pub auc_oa: f64,
    /// `null` when infinite.
    pub auc_snpr: Option<f64>,
    pub auc_snpr_infinite: bool,
    pub grid: usize,
    pub targets: usize,
    pub background: usize,
    pub target_scores: FiveNumberJson,
    pub background_scores: FiveNumberJson,
}

pub const REPORT_KEYS: [&str; 11] = [
    "auc_pf_pd",
    "auc_tau_pd",
    "auc_tau_pf",
    "auc_oa",
    "auc_snpr",
    "auc_snpr_infinite",
    "grid",
    "targets",
    "background",
    "target_scores",
    "background_scores",
];

impl ReportJson {
    pub fn new(report: &RocReport, stats: &SeparabilityStats) -> Self {
        let five = |f: &specdetect_core::eval::FiveNumber| FiveNumberJson {
            min: f.min,
            q1: f.q1,
            median: f.median,
            q3: f.q3,
            max: f.max,
        };
        Self {
            auc_pf_pd: report.auc_pf_pd,
            auc_tau_pd: report.auc_tau_pd,
            auc_tau_pf: report.auc_tau_pf,
            auc_oa: report.auc_oa,
            auc_snpr: (!report.snpr_infinite).then_some(report.auc_snpr),
            auc_snpr_infinite: report.snpr_infinite,
            grid: report.curves.tau.len().saturating_sub(1),
            targets: report.curves.targets,
            background: report.curves.background,
            target_scores: five(&stats.target),
            background_scores: five(&stats.background),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FormatError::Malformed {
            what: "report JSON",
            detail: e.to_string(),
        })
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|e| FormatError::Malformed {
        what: "text file",
        detail: e.to_string(),
    })
}
