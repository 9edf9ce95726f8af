//! On-disk formats: FKF1 fields, low-rank state snapshots, observation and
//! metrics CSV, grid lists. Every decoder returns an error on malformed
//! input and never panics.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::LowRankState;

pub const FIELD_MAGIC: &[u8; 4] = b"FKF1";
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FKS1";
const FIELD_HEADER: usize = 12;
const SNAPSHOT_HEADER: usize = 4 + 4 + 4 + 8 + 8;

/// A scalar field on an `nx` by `ny` grid, row-major (`x` fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub nx: usize,
    pub ny: usize,
    pub values: DVector<f64>,
}

impl Field {
    pub fn new(nx: usize, ny: usize, values: DVector<f64>) -> Result<Self> {
        match nx.checked_mul(ny) {
            Some(n) if n == values.len() => Ok(Field { nx, ny, values }),
            _ => Err(Error::Format(format!(
                "field of {} values does not fit a {nx}x{ny} grid",
                values.len()
            ))),
        }
    }
}

pub fn encode_field(field: &Field) -> Result<Vec<u8>> {
    let nx = u32::try_from(field.nx).map_err(|_| Error::Format("nx exceeds u32".into()))?;
    let ny = u32::try_from(field.ny).map_err(|_| Error::Format("ny exceeds u32".into()))?;
    if field.values.len() != field.nx * field.ny {
        return Err(Error::dim(
            "field values",
            field.nx * field.ny,
            field.values.len(),
        ));
    }
    let mut out = Vec::with_capacity(FIELD_HEADER + 8 * field.values.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&nx.to_le_bytes());
    out.extend_from_slice(&ny.to_le_bytes());
    for v in field.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated input: {what} needs {len} bytes at offset {}, {} left",
                    self.pos,
                    self.buf.len().saturating_sub(self.pos)
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8, what)?);
        Ok(u64::from_le_bytes(a))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("{what}: length overflow")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| {
                let mut a = [0u8; 8];
                a.copy_from_slice(c);
                f64::from_le_bytes(a)
            })
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after offset {}",
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    let got = r.take(4, "magic")?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_magic(&mut r, FIELD_MAGIC)?;
    let nx = r.u32("nx")? as usize;
    let ny = r.u32("ny")? as usize;
    if nx == 0 || ny == 0 {
        return Err(Error::Format(format!("empty {nx}x{ny} field")));
    }
    let n = nx
        .checked_mul(ny)
        .ok_or_else(|| Error::Format(format!("{nx}x{ny} overflows")))?;
    let values = r.f64s(n, "field values")?;
    r.finish()?;
    Field::new(nx, ny, DVector::from_vec(values))
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_field(field)?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    decode_field(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Binary snapshot of a [`LowRankState`]: magic `FKS1`, `u32` state length,
/// `u32` rank, `u64` step, `f64` alpha, then `d`, the mean, `W` and
/// `Gamma^{-1} W` (column-major), all little-endian.
pub fn encode_snapshot(state: &LowRankState) -> Result<Vec<u8>> {
    state.validate()?;
    let n = u32::try_from(state.len()).map_err(|_| Error::Format("state too long".into()))?;
    let r = u32::try_from(state.rank()).map_err(|_| Error::Format("rank too large".into()))?;
    let floats = state.rank() + state.len() * (1 + 2 * state.rank());
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER + 8 * floats);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&(state.step as u64).to_le_bytes());
    out.extend_from_slice(&state.alpha.to_le_bytes());
    let parts = [
        state.d.as_slice(),
        state.mean.as_slice(),
        state.w.as_slice(),
        state.w_dual.as_slice(),
    ];
    for v in parts.into_iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<LowRankState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_magic(&mut r, SNAPSHOT_MAGIC)?;
    let n = r.u32("state length")? as usize;
    let k = r.u32("rank")? as usize;
    let step = usize::try_from(r.u64("step")?)
        .map_err(|_| Error::Format("step does not fit usize".into()))?;
    let alpha = r.f64("alpha")?;
    let nk = n
        .checked_mul(k)
        .ok_or_else(|| Error::Format(format!("{n}x{k} basis overflows")))?;
    let d = r.f64s(k, "d")?;
    let mean = r.f64s(n, "mean")?;
    let w = r.f64s(nk, "basis")?;
    let w_dual = r.f64s(nk, "dual basis")?;
    r.finish()?;
    let state = LowRankState {
        alpha,
        d: DVector::from_vec(d),
        w: Arc::new(DMatrix::from_vec(n, k, w)),
        w_dual: Arc::new(DMatrix::from_vec(n, k, w_dual)),
        mean: DVector::from_vec(mean),
        step,
    };
    state
        .validate()
        .map_err(|e| Error::Format(format!("snapshot fails validation: {e}")))?;
    Ok(state)
}

pub fn write_snapshot(path: &Path, state: &LowRankState) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_snapshot(state)?)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<LowRankState> {
    decode_snapshot(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub step: usize,
    pub index: usize,
    pub value: f64,
}

pub fn write_observations(path: &Path, batches: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for (k, y) in batches.iter().enumerate() {
        for (i, v) in y.iter().enumerate() {
            w.serialize(ObservationRecord {
                step: k + 1,
                index: i,
                value: *v,
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses `step,index,value` rows into one batch per step. Steps must run
/// `1..=K` and each batch must list indices `0..m` exactly once, with the
/// same `m` for every step.
pub fn parse_observations(text: &str) -> Result<Vec<DVector<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut batches: Vec<Vec<Option<f64>>> = Vec::new();
    for (line, rec) in rdr.deserialize::<ObservationRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("observations row {}: {e}", line + 1)))?;
        if rec.step == 0 {
            return Err(Error::Format(format!(
                "observations row {}: steps start at 1",
                line + 1
            )));
        }
        if rec.step > batches.len() + 1 {
            return Err(Error::Format(format!(
                "observations row {}: step {} skips step {}",
                line + 1,
                rec.step,
                batches.len() + 1
            )));
        }
        if rec.step == batches.len() + 1 {
            batches.push(Vec::new());
        }
        let batch = &mut batches[rec.step - 1];
        if rec.index > batch.len() + (1 << 24) {
            return Err(Error::Format(format!(
                "observations row {}: index {} is implausibly large",
                line + 1,
                rec.index
            )));
        }
        if rec.index >= batch.len() {
            batch.resize(rec.index + 1, None);
        }
        if batch[rec.index].replace(rec.value).is_some() {
            return Err(Error::Format(format!(
                "observations row {}: duplicate step {} index {}",
                line + 1,
                rec.step,
                rec.index
            )));
        }
    }
    let m = batches.first().map_or(0, Vec::len);
    batches
        .into_iter()
        .enumerate()
        .map(|(k, b)| {
            if b.len() != m {
                return Err(Error::Format(format!(
                    "step {} has {} measurements, step 1 has {m}",
                    k + 1,
                    b.len()
                )));
            }
            b.into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| Error::Format(format!("step {} lacks index {i}", k + 1)))
                })
                .collect::<Result<Vec<f64>>>()
                .map(DVector::from_vec)
        })
        .collect()
}

pub fn read_observations(path: &Path) -> Result<Vec<DVector<f64>>> {
    parse_observations(&fs::read_to_string(path)?)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// One metrics row; measures that do not apply to a filter kind are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub hours: f64,
    pub wall_time_s: f64,
    pub rel_l2_error: Option<f64>,
    pub rel_l2_error_truth: Option<f64>,
    pub effective_rank: Option<usize>,
    pub trace_criterion: Option<f64>,
    pub relative_entropy: Option<f64>,
    pub relative_entropy_reduced: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_error)?;
    rdr.deserialize().map(|r| r.map_err(csv_error)).collect()
}

/// `"59x55,117x109"` to `[(59, 55), (117, 109)]`.
pub fn parse_grid_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::Format("empty grid list".into()));
    }
    text.split(',')
        .map(|item| {
            let item = item.trim();
            let (w, h) = item
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::Format(format!("grid {item:?} is not WxH")))?;
            let parse = |s: &str| -> Result<usize> {
                match s.trim().parse::<usize>() {
                    Ok(v) if v > 0 => Ok(v),
                    _ => Err(Error::Format(format!("grid {item:?}: bad dimension {s:?}"))),
                }
            };
            let (w, h) = (parse(w)?, parse(h)?);
            if w.checked_mul(h).is_none() {
                return Err(Error::Format(format!("grid {item:?} overflows")));
            }
            Ok((w, h))
        })
        .collect()
}

/// `"1,10,20"` to `[1, 10, 20]`.
pub fn parse_step_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Format(format!("bad step {s:?}")))
        })
        .collect()
}
