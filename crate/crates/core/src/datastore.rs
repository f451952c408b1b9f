//! Files: JSONL traces, trajectories and datasets, HSD1 hidden-state dumps,
//! PRB1 probes, and example-level splits.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::engine::DatasetRow;
use crate::error::{Error, Result};
use crate::probe::ProbeModel;
use crate::seeds::rng_for;
use crate::trace::{AnswerTrajectory, TaskKind, TraceRecord};

pub const HSD_MAGIC: &[u8; 4] = b"HSD1";
pub const HSD_VERSION: u32 = 1;
pub const HSD_HEADER_LEN: usize = 20;
pub const PROBE_MAGIC: &[u8; 4] = b"PRB1";
pub const PROBE_VERSION: u32 = 1;

/// Default number of traces sampled per task.
pub fn default_sample_size(task: TaskKind) -> usize {
    match task {
        TaskKind::Mcq => 1000,
        TaskKind::Numeric => 500,
        TaskKind::SearchQuery => 1000,
        TaskKind::ToolSelection => 1000,
    }
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        e.into()
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Read one JSON value per non-blank line. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::Format(e.to_string()))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    atomic_write(path, &to_jsonl(items)?)
}

fn check_unique<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Data(format!("{}: duplicate id {id:?}", path.display())));
        }
    }
    Ok(())
}

/// Traces are validated on read; unknown keys survive a read/write cycle.
pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let records: Vec<TraceRecord> = read_jsonl(path)?;
    check_unique(path, records.iter().map(|r| r.id.as_str()))?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_traces(path: &Path, records: &[TraceRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<AnswerTrajectory>> {
    let trajs: Vec<AnswerTrajectory> = read_jsonl(path)?;
    check_unique(path, trajs.iter().map(|t| t.trace_id.as_str()))?;
    for t in &trajs {
        t.validate()?;
    }
    Ok(trajs)
}

pub fn write_trajectories(path: &Path, trajs: &[AnswerTrajectory]) -> Result<()> {
    write_jsonl(path, trajs)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRow>> {
    let rows: Vec<DatasetRow> = read_jsonl(path)?;
    check_unique(path, rows.iter().map(|r| r.id.as_str()))?;
    Ok(rows)
}

/// Hidden states for one trace, step-major, then layer, then dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateDump {
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub step_count: usize,
    pub data: Vec<f32>,
}

impl HiddenStateDump {
    pub fn new(layer_count: usize, hidden_dim: usize, step_count: usize, data: Vec<f32>) -> Result<Self> {
        let want = layer_count
            .checked_mul(hidden_dim)
            .and_then(|x| x.checked_mul(step_count))
            .ok_or_else(|| Error::Format("dump dimensions overflow".into()))?;
        if data.len() != want {
            return Err(Error::Format(format!(
                "dump payload has {} floats, expected {want}",
                data.len()
            )));
        }
        Ok(Self {
            layer_count,
            hidden_dim,
            step_count,
            data,
        })
    }

    /// All layers of one step.
    pub fn step(&self, step: usize) -> Option<&[f32]> {
        let width = self.layer_count * self.hidden_dim;
        (step < self.step_count).then(|| &self.data[step * width..(step + 1) * width])
    }

    pub fn state(&self, step: usize, layer: usize) -> Option<&[f32]> {
        if layer >= self.layer_count {
            return None;
        }
        self.step(step)
            .map(|s| &s[layer * self.hidden_dim..(layer + 1) * self.hidden_dim])
    }

    pub fn non_finite_count(&self) -> usize {
        self.data.iter().filter(|v| !v.is_finite()).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HSD_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(HSD_MAGIC);
        for v in [
            HSD_VERSION,
            self.layer_count as u32,
            self.hidden_dim as u32,
            self.step_count as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HSD_HEADER_LEN {
            return Err(Error::Format(format!(
                "dump is {} bytes, shorter than its header",
                bytes.len()
            )));
        }
        if &bytes[..4] != HSD_MAGIC {
            return Err(Error::Format("bad dump magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != HSD_VERSION {
            return Err(Error::Format(format!("unsupported dump version {}", word(0))));
        }
        let (l, d, s) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let payload = &bytes[HSD_HEADER_LEN..];
        let want = (l as u128) * (d as u128) * (s as u128) * 4;
        if payload.len() as u128 != want {
            return Err(Error::Format(format!(
                "dump payload is {} bytes, header implies {want}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(l, d, s, data)
    }
}

/// What to do with NaN or infinite values in a dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonFinitePolicy {
    /// Load anyway; callers can inspect [`HiddenStateDump::non_finite_count`].
    #[default]
    Report,
    Reject,
}

pub fn read_dump(path: &Path, policy: NonFinitePolicy) -> Result<HiddenStateDump> {
    let dump =
        HiddenStateDump::from_bytes(&fs::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let bad = dump.non_finite_count();
    if bad > 0 && policy == NonFinitePolicy::Reject {
        return Err(Error::Data(format!("{}: {bad} non-finite values", path.display())));
    }
    Ok(dump)
}

pub fn write_dump(path: &Path, dump: &HiddenStateDump) -> Result<()> {
    atomic_write(path, &dump.to_bytes())
}

/// `<dir>/<trace id>.hsd`, with bytes outside `[A-Za-z0-9._-]` hex-escaped.
pub fn dump_path(dir: &Path, trace_id: &str) -> PathBuf {
    let mut name = String::new();
    for b in trace_id.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.".contains(&b) {
            name.push(b as char);
        } else {
            name.push_str(&format!("%{b:02X}"));
        }
    }
    dir.join(format!("{name}.hsd"))
}

pub fn probe_to_bytes(probe: &ProbeModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (probe.dim() + 1));
    out.extend_from_slice(PROBE_MAGIC);
    for v in [PROBE_VERSION, probe.layer_index as u32, probe.dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in probe.weights.iter().chain([&probe.bias]) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Training metadata is not part of the binary record and comes back `None`.
pub fn probe_from_bytes(bytes: &[u8]) -> Result<ProbeModel> {
    if bytes.len() < 16 || &bytes[..4] != PROBE_MAGIC {
        return Err(Error::Format("bad probe magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != PROBE_VERSION {
        return Err(Error::Format(format!("unsupported probe version {}", word(0))));
    }
    let (layer, d) = (word(1) as usize, word(2) as usize);
    let body = &bytes[16..];
    if body.len() as u128 != (d as u128 + 1) * 8 {
        return Err(Error::Format(format!(
            "probe body is {} bytes, expected {} for d = {d}",
            body.len(),
            (d + 1) * 8
        )));
    }
    let mut vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bias = vals.pop().expect("d + 1 values");
    let probe = ProbeModel {
        weights: vals,
        bias,
        layer_index: layer,
        meta: None,
    };
    probe.validate()?;
    Ok(probe)
}

pub fn read_probe(path: &Path) -> Result<ProbeModel> {
    probe_from_bytes(&fs::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_probe(path: &Path, probe: &ProbeModel) -> Result<()> {
    probe.validate()?;
    atomic_write(path, &probe_to_bytes(probe))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffle ids (sorted first, so input order does not matter) and cut them
/// into train/validation/test. Validation and test get `floor(ratio * n)`;
/// train takes the rest.
pub fn split(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    if ids.is_empty() {
        return Err(Error::Empty("ids to split"));
    }
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r <= 0.0) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {tr}, {va}, {te} must be positive and sum to 1"
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("duplicate ids in split".into()));
    }
    sorted.shuffle(&mut rng_for(seed, &["split"]));
    let n = sorted.len() as f64;
    let n_va = (va * n + 1e-9).floor() as usize;
    let n_te = (te * n + 1e-9).floor() as usize;
    let n_tr = sorted.len() - n_va - n_te;
    let test = sorted.split_off(n_tr + n_va);
    let validation = sorted.split_off(n_tr);
    Ok(Split {
        train: sorted,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsd_layout() {
        let d = HiddenStateDump::new(1, 1, 1, vec![1.5]).unwrap();
        let bytes = d.to_bytes();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"HSD1");
        assert_eq!(&bytes[4..20], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(HiddenStateDump::from_bytes(&bytes).unwrap(), d);
        assert!(HiddenStateDump::from_bytes(&bytes[..23]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(HiddenStateDump::from_bytes(&bad).is_err());
        bad = bytes;
        bad[4] = 2;
        assert!(HiddenStateDump::from_bytes(&bad).is_err());
    }

    #[test]
    fn dump_indexing() {
        let d = HiddenStateDump::new(2, 3, 2, (0..12).map(|x| x as f32).collect()).unwrap();
        assert_eq!(d.state(1, 0).unwrap(), &[6.0, 7.0, 8.0]);
        assert_eq!(d.state(0, 1).unwrap(), &[3.0, 4.0, 5.0]);
        assert!(d.state(2, 0).is_none());
        assert!(d.state(0, 2).is_none());
    }

    #[test]
    fn probe_layout() {
        let p = ProbeModel {
            weights: vec![1.0, -2.0],
            bias: 0.25,
            layer_index: 7,
            meta: None,
        };
        let bytes = probe_to_bytes(&p);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[8..12], &7u32.to_le_bytes());
        assert_eq!(probe_from_bytes(&bytes).unwrap(), p);
        assert!(probe_from_bytes(&bytes[..39]).is_err());
    }

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..10).map(|i| format!("id{i}")).collect();
        let s = split(&ids, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split(&ids, (0.8, 0.1, 0.1), 3).unwrap());
        let mut all: Vec<String> = s.train.into_iter().chain(s.validation).chain(s.test).collect();
        all.sort();
        let mut expect = ids.clone();
        expect.sort();
        assert_eq!(all, expect);
        assert!(split(&ids, (0.8, 0.1, 0.2), 3).is_err());
        assert!(split(&[], (0.8, 0.1, 0.1), 3).is_err());
    }

    #[test]
    fn dump_names_are_escaped() {
        assert_eq!(dump_path(Path::new("d"), "a/b c"), Path::new("d/a%2Fb%20c.hsd"));
    }
}
