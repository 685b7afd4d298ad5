//! Binary checkpoint: magic, version, `key=value` header, f32 parameters.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::net::{DenoiserNet, NetSpec, PredictionKind};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FGRPONET";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(net: &DenoiserNet, mut w: W) -> Result<()> {
    let spec = net.spec();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let hidden: Vec<String> = spec.hidden_dims.iter().map(|h| h.to_string()).collect();
    let header = format!(
        "prediction_kind={}\ninput_dim={}\nhidden_dims={}\ntime_embed_dim={}\ncondition_count={}\nparam_count={}\n\n",
        spec.kind,
        spec.input_dim,
        hidden.join(","),
        spec.time_embed_dim,
        spec.condition_count,
        net.param_count()
    );
    w.write_all(header.as_bytes())?;
    for v in net.params().values() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<DenoiserNet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(version);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }

    // header: lines up to the first empty line
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte).map_err(|_| bad("truncated header"))?;
        header.push(byte[0]);
        if header.ends_with(b"\n\n") {
            break;
        }
        if header.len() > 1 << 16 {
            return Err(bad("header too long"));
        }
    }
    let text = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
    let mut fields = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing header key '{k}'")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad value for '{k}'"))) };

    let kind: PredictionKind = get("prediction_kind")?.parse().map_err(|_| bad("bad prediction_kind"))?;
    let hidden_raw = get("hidden_dims")?;
    let hidden_dims = if hidden_raw.is_empty() {
        Vec::new()
    } else {
        hidden_raw
            .split(',')
            .map(|h| h.parse().map_err(|_| bad("bad hidden_dims")))
            .collect::<Result<Vec<usize>>>()?
    };
    let spec = NetSpec {
        kind,
        input_dim: num("input_dim")?,
        hidden_dims,
        time_embed_dim: num("time_embed_dim")?,
        condition_count: num("condition_count")?,
    };
    let mut net = DenoiserNet::zeroed(spec).map_err(|e| bad(e.to_string()))?;
    if let Some(count) = fields.get("param_count") {
        if count.parse::<usize>().ok() != Some(net.param_count()) {
            return Err(bad("param_count does not match architecture"));
        }
    }

    let mut raw = vec![0u8; 4 * net.param_count()];
    r.read_exact(&mut raw).map_err(|_| bad("truncated parameter block"))?;
    let values: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after parameter block"));
    }
    net.params_mut().set_values(&values)?;
    Ok(net)
}

pub fn save_checkpoint(net: &DenoiserNet, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_checkpoint(net, BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserNet> {
    let file = File::open(path)?;
    read_checkpoint(BufReader::new(file))
}
