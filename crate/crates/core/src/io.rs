//! On-disk formats: checkpoints, datasets, metrics and key=value configs.
//!
//! Floats are written in shortest round-trip form and parsed with full
//! precision, so every `f64` survives a save/load cycle bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::net::Architecture;
use crate::pacoh::TemperatureConfig;
use crate::prob::PriorParticle;
use crate::svgd::ParticleSet;
use crate::task::{Sample, Task};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRecord {
    /// `None` means "each task's sample count".
    pub beta: Option<f64>,
    pub lambda: f64,
    #[serde(rename = "L")]
    pub mc_samples: usize,
}

impl From<&TemperatureConfig> for TemperatureRecord {
    fn from(t: &TemperatureConfig) -> Self {
        TemperatureRecord {
            beta: t.beta,
            lambda: t.lambda,
            mc_samples: t.mc_samples,
        }
    }
}

/// A particle set together with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub arch: Architecture,
    pub particles: Vec<PriorParticle>,
    pub temperature: TemperatureRecord,
    pub seed: u64,
    pub step_count: u64,
}

impl Checkpoint {
    pub fn new(arch: &Architecture, set: &ParticleSet, temperature: TemperatureRecord, seed: u64) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            arch: arch.clone(),
            particles: set.particles.clone(),
            temperature,
            seed,
            step_count: set.step_count,
        }
    }

    pub fn particle_set(&self) -> ParticleSet {
        ParticleSet {
            particles: self.particles.clone(),
            step_count: self.step_count,
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut text = serde_json::to_string_pretty(ckpt)
        .map_err(|e| Error::numeric(format!("cannot serialize checkpoint: {e}")))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Load and validate a checkpoint. Nothing is returned unless the whole
/// document matches the schema.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = read_file(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        pointer: String::new(),
        message: e.to_string(),
    })?;
    let parse_err = |pointer: &str, message: String| Error::Parse {
        path: path.into(),
        pointer: pointer.to_string(),
        message,
    };
    if !doc.is_object() {
        return Err(parse_err("", "expected a JSON object".into()));
    }
    let version: u64 = field(&doc, "/format_version", path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            path: path.into(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let arch: Architecture = field(&doc, "/arch", path)?;
    arch.validate()
        .map_err(|e| parse_err("/arch", e.to_string()))?;
    if arch.output_dim != crate::net::OUTPUT_DIM {
        return Err(parse_err("/arch/output_dim", format!("must be {}", crate::net::OUTPUT_DIM)));
    }
    let temperature: TemperatureRecord = field(&doc, "/temperature", path)?;
    TemperatureConfig::new(temperature.beta, temperature.lambda, temperature.mc_samples)
        .map_err(|e| parse_err("/temperature", e.to_string()))?;
    let seed: u64 = field(&doc, "/seed", path)?;
    let step_count: u64 = field(&doc, "/step_count", path)?;

    let p = arch.param_count();
    let raw = doc
        .pointer("/particles")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("/particles", "expected an array".into()))?;
    if raw.is_empty() {
        return Err(parse_err("/particles", "at least one particle is required".into()));
    }
    let mut particles = Vec::with_capacity(raw.len());
    for k in 0..raw.len() {
        let base = format!("/particles/{k}");
        let mu: Vec<f64> = field(&doc, &format!("{base}/mu"), path)?;
        let log_sigma: Vec<f64> = field(&doc, &format!("{base}/log_sigma"), path)?;
        for (name, v) in [("mu", &mu), ("log_sigma", &log_sigma)] {
            if v.len() != p {
                return Err(parse_err(
                    &format!("{base}/{name}"),
                    format!("length {} does not match the {p} parameters of the architecture", v.len()),
                ));
            }
        }
        particles.push(PriorParticle::new(mu, log_sigma).map_err(|e| parse_err(&base, e.to_string()))?);
    }
    Ok(Checkpoint {
        format_version: version,
        arch,
        particles,
        temperature,
        seed,
        step_count,
    })
}

fn field<T: DeserializeOwned>(doc: &Value, pointer: &str, path: &Path) -> Result<T> {
    let v = doc.pointer(pointer).ok_or_else(|| Error::Parse {
        path: path.into(),
        pointer: pointer.to_string(),
        message: "missing field".into(),
    })?;
    T::deserialize(v).map_err(|e| Error::Parse {
        path: path.into(),
        pointer: pointer.to_string(),
        message: e.to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    task: u64,
    domain: u32,
    x: Vec<f64>,
    y: Vec<f64>,
}

/// One JSON object per sample; task ids are the positions in `tasks`.
pub fn write_dataset(path: &Path, tasks: &[Task]) -> Result<()> {
    let mut out = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        for s in &task.samples {
            let line = DatasetLine {
                task: i as u64,
                domain: task.domain_id,
                x: s.x.clone(),
                y: s.y.to_vec(),
            };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| Error::numeric(format!("cannot serialize sample: {e}")))?;
            out.push(b'\n');
        }
    }
    write_file(path, &out)
}

/// Read a JSON-lines dataset, grouping samples by task id in order of first
/// appearance. Blank lines are ignored.
pub fn read_dataset(path: &Path) -> Result<Vec<Task>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, Task> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.into(),
            pointer: format!("line {lineno}"),
            message,
        };
        let rec: DatasetLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.y.len() != 2 {
            return Err(err(format!("y has {} entries, expected 2", rec.y.len())));
        }
        match dim {
            None => dim = Some(rec.x.len()),
            Some(d) if d != rec.x.len() => {
                return Err(err(format!("x has {} features, earlier rows have {d}", rec.x.len())));
            }
            _ => {}
        }
        let task = groups.entry(rec.task).or_insert_with(|| {
            order.push(rec.task);
            Task::new(rec.domain, Vec::new())
        });
        if task.domain_id != rec.domain {
            return Err(err(format!(
                "task {} mixes domains {} and {}",
                rec.task, task.domain_id, rec.domain
            )));
        }
        task.samples.push(Sample {
            x: rec.x,
            y: [rec.y[0], rec.y[1]],
        });
    }
    Ok(order
        .into_iter()
        .map(|id| groups.remove(&id).expect("grouped task"))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Meta,
    Finetune,
}

/// One line of the metrics CSV. Missing measurements are written as empty
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub rotation: usize,
    pub phase: Phase,
    pub step: usize,
    pub mean_error_m: Option<f64>,
    pub std_error_m: Option<f64>,
    pub mean_uncertainty_m: Option<f64>,
    pub bound_emp_term: Option<f64>,
    pub bound_kl_term: Option<f64>,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "method,rotation,phase,step,mean_error_m,std_error_m,mean_uncertainty_m,bound_emp_term,bound_kl_term,wall_ms";

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_file(path, &bytes)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Parse {
            path: path.into(),
            pointer: "line 1".into(),
            message: format!("unexpected header {:?}", header.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Parse `key = value` lines. `#` starts a comment; blank lines are skipped;
/// a repeated key is an error.
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.into(),
            pointer: format!("line {}", idx + 1),
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config(&read_file(path)?, path)
}

/// Inverse of [`parse_config`], one sorted `key = value` line per entry.
pub fn format_config(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numeric(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    T::deserialize(&mut de).map_err(|e| Error::Parse {
        path: path.into(),
        pointer: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}
