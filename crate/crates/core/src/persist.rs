//! On-disk artifacts.
//!
//! Every file starts with a version header: the first JSONL line, the
//! leading `format`/`version` keys of a JSON or TOML document, a `#` comment
//! line in CSV, or a magic prefix in binary blobs. Readers reject a major
//! version they do not know. Floats are written in shortest round-trip form
//! (JSON) or as raw little-endian bits (blobs), so round trips are exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::domain::{check_n_actions, ActionId, DayRecord, EnvSnapshot, HourRecord, Weather, HOURS_PER_DAY};
use crate::error::{Error, Result};
use crate::forecaster::{Checkpoint, ForecasterConfig};
use crate::numkit::{OptimState, ParamStore, Tensor};
use crate::policy::PolicyParameters;

pub const MAJOR: u32 = 1;
pub const MINOR: u32 = 0;

pub const DATASET: &str = "cogsched.dataset";
pub const CHECKPOINT: &str = "cogsched.checkpoint";
pub const POLICY: &str = "cogsched.policy";
pub const REPORT: &str = "cogsched.report";
pub const TICK_LOG: &str = "cogsched.ticklog";
pub const EVENTS: &str = "cogsched.events";
pub const FEEDBACK: &str = "cogsched.feedback";
pub const RUN_CONFIG: &str = "cogsched.run_config";

const BLOB_MAGIC: &[u8; 8] = b"CGSBLOB\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: String,
}

impl Header {
    pub fn current(format: &str) -> Self {
        Header { format: format.to_string(), version: format!("{MAJOR}.{MINOR}") }
    }

    /// Accepts `format` at any minor version of the supported major.
    pub fn check(&self, format: &str) -> Result<()> {
        let major = self.version.split('.').next().and_then(|m| m.parse::<u32>().ok());
        if self.format != format || major != Some(MAJOR) {
            return Err(Error::Version { format: self.format.clone(), version: self.version.clone() });
        }
        Ok(())
    }
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Parse { path: path.to_path_buf(), msg: msg.to_string() }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_line(path: &Path, w: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| parse_err(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Writes `value` as a JSON object whose first keys are the header.
pub fn write_json<T: Serialize>(path: &Path, format: &str, value: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Versioned<'a, T> {
        format: &'a str,
        version: String,
        #[serde(flatten)]
        body: &'a T,
    }
    let h = Header::current(format);
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &Versioned { format, version: h.version, body: value })
        .map_err(|e| parse_err(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let mut v: Json = serde_json::from_reader(open(path)?).map_err(|e| parse_err(path, e))?;
    let obj = v.as_object_mut().ok_or_else(|| parse_err(path, "expected a JSON object"))?;
    let header = Header {
        format: obj.remove("format").and_then(|f| f.as_str().map(str::to_string)).unwrap_or_default(),
        version: obj.remove("version").and_then(|f| f.as_str().map(str::to_string)).unwrap_or_default(),
    };
    header.check(format)?;
    serde_json::from_value(v).map_err(|e| parse_err(path, e))
}

/// JSONL with a header line, then one object per item.
pub fn write_jsonl<T: Serialize>(path: &Path, format: &str, meta: &impl Serialize, items: &[T]) -> Result<()> {
    #[derive(Serialize)]
    struct HeaderLine<'a, M> {
        format: &'a str,
        version: String,
        #[serde(flatten)]
        meta: &'a M,
    }
    let mut w = create(path)?;
    write_line(path, &mut w, &HeaderLine { format, version: Header::current(format).version, meta })?;
    for item in items {
        write_line(path, &mut w, item)?;
    }
    finish(path, w)
}

/// Reads a JSONL file. With `require_header` unset a missing header line is
/// tolerated (hand-written input feeds); a present one is always checked.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str, require_header: bool) -> Result<(Json, Vec<T>)> {
    let mut meta = Json::Null;
    let mut items = vec![];
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Json = serde_json::from_str(&line).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?;
        if i == 0 {
            if let Some(f) = v.get("format") {
                let header = Header {
                    format: f.as_str().unwrap_or_default().to_string(),
                    version: v.get("version").and_then(Json::as_str).unwrap_or_default().to_string(),
                };
                header.check(format)?;
                meta = v;
                continue;
            }
            if require_header {
                return Err(parse_err(path, "missing version header"));
            }
        }
        items.push(serde_json::from_value(v).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?);
    }
    if require_header && meta.is_null() {
        return Err(parse_err(path, "missing version header"));
    }
    Ok((meta, items))
}

/// CSV body preceded by a `# format version` comment line.
pub fn write_csv(path: &Path, format: &str, body: &str) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {format} {MAJOR}.{MINOR}").map_err(|e| Error::io(path, e))?;
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// TOML with top-level `format` and `version` keys.
pub fn write_toml<T: Serialize>(path: &Path, format: &str, value: &T) -> Result<()> {
    let body = toml::to_string(value).map_err(|e| parse_err(path, e))?;
    let mut w = create(path)?;
    write!(w, "format = \"{format}\"\nversion = \"{MAJOR}.{MINOR}\"\n\n{body}").map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Reads TOML; the header keys are optional (hand-written configs) but
/// checked when present. Schema violations report the offending key path.
pub fn read_toml<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut v: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(path, e.message()))?;
    if let Some(f) = v.remove("format") {
        let version = v.remove("version").and_then(|x| x.as_str().map(str::to_string)).unwrap_or_default();
        Header { format: f.as_str().unwrap_or_default().to_string(), version }.check(format)?;
    }
    T::deserialize(toml::Value::Table(v)).map_err(|e| Error::config(path.display().to_string(), e.message()))
}

/// One hourly row of the dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub day: usize,
    pub hour: u8,
    pub action: u8,
    pub weather: u8,
    pub temp_c: f64,
    pub is_day: bool,
    pub sin_h: f64,
    pub cos_h: f64,
}

impl DatasetRow {
    pub fn from_record(r: &HourRecord) -> Self {
        let angle = 2.0 * std::f64::consts::PI * r.env.hour as f64 / HOURS_PER_DAY as f64;
        DatasetRow {
            day: r.day_index,
            hour: r.env.hour,
            action: r.action.0,
            weather: r.env.weather.into(),
            temp_c: r.env.temperature_c,
            is_day: r.env.is_day,
            sin_h: angle.sin(),
            cos_h: angle.cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_days: usize,
    pub n_actions: usize,
    pub seed: u64,
}

pub fn write_dataset(path: &Path, meta: &DatasetMeta, days: &[DayRecord]) -> Result<()> {
    let rows: Vec<DatasetRow> = days.iter().flat_map(|d| d.hours.iter().map(DatasetRow::from_record)).collect();
    write_jsonl(path, DATASET, meta, &rows)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetMeta, Vec<DayRecord>)> {
    let (meta, rows): (Json, Vec<DatasetRow>) = read_jsonl(path, DATASET, true)?;
    let meta: DatasetMeta = serde_json::from_value(meta).map_err(|e| parse_err(path, e))?;
    check_n_actions(meta.n_actions)?;
    if rows.len() != meta.n_days * HOURS_PER_DAY {
        return Err(parse_err(path, format!("{} rows for {} days", rows.len(), meta.n_days)));
    }
    let mut days = Vec::with_capacity(meta.n_days);
    for (d, chunk) in rows.chunks(HOURS_PER_DAY).enumerate() {
        let hours = chunk
            .iter()
            .map(|r| {
                let action = ActionId::new(r.action as usize, meta.n_actions)?;
                let env = EnvSnapshot::new(Weather::try_from(r.weather)?, r.temp_c, r.hour, 1.0)?;
                if env.is_day != r.is_day {
                    return Err(Error::invalid(format!("day {d} hour {}: is_day disagrees with the hour", r.hour)));
                }
                Ok(HourRecord { day_index: r.day, env, action })
            })
            .collect::<Result<Vec<_>>>()?;
        let day = DayRecord::new(d, hours).map_err(|e| parse_err(path, e))?;
        days.push(day);
    }
    Ok((meta, days))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Blob layout: magic, major and minor as LE u32, value count as LE u64,
/// then the values as LE f64.
fn write_blob(path: &Path, tensors: &[&Tensor]) -> Result<()> {
    let mut w = create(path)?;
    let n: usize = tensors.iter().map(|t| t.len()).sum();
    let io = |e| Error::io(path, e);
    w.write_all(BLOB_MAGIC).map_err(io)?;
    w.write_all(&MAJOR.to_le_bytes()).map_err(io)?;
    w.write_all(&MINOR.to_le_bytes()).map_err(io)?;
    w.write_all(&(n as u64).to_le_bytes()).map_err(io)?;
    for t in tensors {
        for x in t.data() {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    finish(path, w)
}

fn read_blob(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![];
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != BLOB_MAGIC {
        return Err(parse_err(path, "not a parameter blob"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let (major, minor) = (word(8), word(12));
    Header { format: "cogsched.blob".into(), version: format!("{major}.{minor}") }.check("cogsched.blob")?;
    let n = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 24 + 8 * n {
        return Err(parse_err(path, format!("blob holds {} bytes for {n} values", bytes.len() - 24)));
    }
    Ok(bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn split_blob(path: &Path, data: &[f64], entries: &[TensorEntry]) -> Result<Vec<Tensor>> {
    let mut at = 0;
    let mut out = vec![];
    for e in entries {
        let n: usize = e.shape.iter().product();
        let slice = data.get(at..at + n).ok_or_else(|| parse_err(path, "blob shorter than the manifest"))?;
        out.push(Tensor::from_vec(&e.shape, slice.to_vec())?);
        at += n;
    }
    if at != data.len() {
        return Err(parse_err(path, "blob longer than the manifest"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

/// Parameter values, then Adam first moments, then second moments.
fn param_tensors<'a>(params: &'a ParamStore, optim: &'a OptimState) -> (Vec<TensorEntry>, Vec<&'a Tensor>) {
    let entries = params.names().zip(params.values()).map(|(n, t)| TensorEntry { name: n.to_string(), shape: t.shape().to_vec() });
    let entries: Vec<TensorEntry> = entries.collect();
    let mut tensors: Vec<&Tensor> = params.values().iter().collect();
    tensors.extend(optim.m.iter());
    tensors.extend(optim.v.iter());
    (entries, tensors)
}

fn rebuild(path: &Path, entries: &[TensorEntry], blob: &[f64], meta: OptimMeta) -> Result<(ParamStore, OptimState)> {
    let mut layout = entries.to_vec();
    layout.extend(entries.iter().cloned());
    layout.extend(entries.iter().cloned());
    let mut tensors = split_blob(path, blob, &layout)?.into_iter();
    let mut params = ParamStore::new();
    for e in entries {
        params.insert(e.name.clone(), tensors.next().expect("layout"))?;
    }
    let m: Vec<Tensor> = tensors.by_ref().take(entries.len()).collect();
    let v: Vec<Tensor> = tensors.collect();
    let optim = OptimState { lr: meta.lr, beta1: meta.beta1, beta2: meta.beta2, eps: meta.eps, step: meta.step, m, v };
    Ok((params, optim))
}

fn optim_meta(o: &OptimState) -> OptimMeta {
    OptimMeta { lr: o.lr, beta1: o.beta1, beta2: o.beta2, eps: o.eps, step: o.step }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    config: ForecasterConfig,
    seed: u64,
    epoch: usize,
    train_loss: Vec<f64>,
    val_loss: Vec<f64>,
    registry_version: u64,
    optim: OptimMeta,
    tensors: Vec<TensorEntry>,
    blob: String,
}

fn blob_path(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

/// Writes `<dir>/checkpoint.json` and `<dir>/checkpoint.bin`.
pub fn save_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<()> {
    let (tensors, blob) = param_tensors(&ck.params, &ck.optim);
    let manifest = CheckpointManifest {
        config: ck.config.clone(),
        seed: ck.config.seed,
        epoch: ck.epoch,
        train_loss: ck.train_loss.clone(),
        val_loss: ck.val_loss.clone(),
        registry_version: ck.registry_version,
        optim: optim_meta(&ck.optim),
        tensors,
        blob: "checkpoint.bin".into(),
    };
    write_blob(&dir.join(&manifest.blob), &blob)?;
    write_json(&dir.join("checkpoint.json"), CHECKPOINT, &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("checkpoint.json");
    let m: CheckpointManifest = read_json(&path, CHECKPOINT)?;
    m.config.validate()?;
    let blob_file = blob_path(&path, &m.blob);
    let (params, optim) = rebuild(&blob_file, &m.tensors, &read_blob(&blob_file)?, m.optim)?;
    Ok(Checkpoint {
        config: m.config,
        params,
        optim,
        epoch: m.epoch,
        train_loss: m.train_loss,
        val_loss: m.val_loss,
        registry_version: m.registry_version,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyManifest {
    state_dim: usize,
    registry_version: u64,
    micro: BTreeMap<ActionId, Vec<f64>>,
    optim: OptimMeta,
    tensors: Vec<TensorEntry>,
    blob: String,
}

/// Writes `<dir>/policy.json` and `<dir>/policy.bin`.
pub fn save_policy(dir: &Path, p: &PolicyParameters) -> Result<()> {
    let (tensors, blob) = param_tensors(p.params(), p.optim());
    let manifest = PolicyManifest {
        state_dim: p.state_dim(),
        registry_version: p.registry_version,
        micro: p.micro.clone(),
        optim: optim_meta(p.optim()),
        tensors,
        blob: "policy.bin".into(),
    };
    write_blob(&dir.join(&manifest.blob), &blob)?;
    write_json(&dir.join("policy.json"), POLICY, &manifest)
}

pub fn load_policy(dir: &Path) -> Result<PolicyParameters> {
    let path = dir.join("policy.json");
    let m: PolicyManifest = read_json(&path, POLICY)?;
    let blob_file = blob_path(&path, &m.blob);
    let (params, optim) = rebuild(&blob_file, &m.tensors, &read_blob(&blob_file)?, m.optim)?;
    let mut p = PolicyParameters::from_params(m.state_dim, params, optim, m.registry_version)?;
    p.micro = m.micro;
    Ok(p)
}
