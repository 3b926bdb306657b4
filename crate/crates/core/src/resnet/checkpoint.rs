//! Checkpoint layout: a plain-text `key=value` header terminated by an empty
//! line, then every parameter tensor followed by every batch-norm running
//! mean/variance pair, as little-endian `f64`, in the order the header lists.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Head, Model, ModelConfig, ResnetError, Result};

pub const CHECKPOINT_MAGIC: &str = "DISCNET-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn header(model: &Model) -> String {
    let c = model.config();
    let (mean, sd) = model.target_norm();
    let mut h = String::new();
    h.push_str(CHECKPOINT_MAGIC);
    h.push('\n');
    let mut kv = |k: &str, v: String| {
        h.push_str(k);
        h.push('=');
        h.push_str(&v);
        h.push('\n');
    };
    kv("format_version", FORMAT_VERSION.to_string());
    kv("input_size", c.input_size.to_string());
    kv("in_channels", c.in_channels.to_string());
    kv("stem_channels", c.stem_channels.to_string());
    kv("blocks_per_stage", join(&c.blocks_per_stage));
    kv("channels_per_stage", join(&c.channels_per_stage));
    kv("head", c.head.to_string());
    kv("target_mean", format!("{mean:?}"));
    kv("target_sd", format!("{sd:?}"));
    kv("groups", model.groups().join(","));
    kv("trainable", join(&model.trainable_mask().iter().map(|&t| u8::from(t)).collect::<Vec<_>>()));
    kv("param_count", model.param_count().to_string());
    kv("buffer_count", model.buffer_count().to_string());
    for m in model.meta() {
        kv("param", format!("{} {}", m.name, join(&m.shape)));
    }
    for (name, s) in model.bn_names().iter().zip(model.bn_stats()) {
        kv("buffer", format!("{name} {}", s.mean.len()));
    }
    h.push('\n');
    h
}

/// Serializes a model to bytes.
pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = header(model).into_bytes();
    out.reserve(8 * (model.param_count() + model.buffer_count()));
    for p in model.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for s in model.bn_stats() {
        for v in s.mean.iter().chain(&s.var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&fs::read(path)?)
}

fn bad(msg: impl Into<String>) -> ResnetError {
    ResnetError::Checkpoint(msg.into())
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad(format!("bad integer list `{v}`"))))
        .collect()
}

/// Parses bytes produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("header terminator not found"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let blob = &bytes[end + 2..];
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("bad magic"));
    }
    let mut kv = std::collections::BTreeMap::new();
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    for line in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line `{line}`")))?;
        match k {
            "param" => params.push(v.to_string()),
            "buffer" => buffers.push(v.to_string()),
            _ => {
                kv.insert(k.to_string(), v.to_string());
            }
        }
    }
    let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| bad(format!("missing `{k}`")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
    let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };

    let version: u32 = get("format_version")?.parse().map_err(|_| bad("bad format_version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
    }
    let config = ModelConfig {
        input_size: num("input_size")?,
        in_channels: num("in_channels")?,
        stem_channels: num("stem_channels")?,
        blocks_per_stage: parse_list(get("blocks_per_stage")?)?,
        channels_per_stage: parse_list(get("channels_per_stage")?)?,
        head: get("head")?.parse::<Head>()?,
    };
    let mut model = Model::skeleton(config)?;
    if get("groups")? != model.groups().join(",") {
        return Err(bad("group list does not match config"));
    }
    let mask = parse_list(get("trainable")?)?;
    if mask.len() != model.groups().len() || mask.iter().any(|&m| m > 1) {
        return Err(bad("bad trainable mask"));
    }
    let on: Vec<String> = model
        .groups()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m == 1)
        .map(|(g, _)| g.clone())
        .collect();
    model.set_trainable(&on)?;
    model.set_target_norm(float("target_mean")?, float("target_sd")?)?;
    if num("param_count")? != model.param_count() || num("buffer_count")? != model.buffer_count() {
        return Err(bad("parameter counts do not match config"));
    }
    let expected: Vec<String> = model.meta().iter().map(|m| format!("{} {}", m.name, join(&m.shape))).collect();
    if params != expected {
        return Err(bad("parameter listing does not match config"));
    }
    let expected_bufs: Vec<String> = model
        .bn_names()
        .iter()
        .zip(model.bn_stats())
        .map(|(n, s)| format!("{n} {}", s.mean.len()))
        .collect();
    if buffers != expected_bufs {
        return Err(bad("buffer listing does not match config"));
    }
    let want = 8 * (model.param_count() + model.buffer_count());
    if blob.len() != want {
        return Err(bad(format!("blob holds {} bytes, expected {want}", blob.len())));
    }
    let mut vals = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = vals.next().expect("length checked");
        }
    }
    for s in model.bn_stats_mut() {
        for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
            *v = vals.next().expect("length checked");
        }
    }
    Ok(model)
}
