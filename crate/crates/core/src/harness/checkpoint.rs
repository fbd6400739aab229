//! Versioned binary checkpoints.
//!
//! Layout: magic bytes `PQM1`, a little-endian u64 header length, a UTF-8
//! header (version, epoch, config snapshot, net and optimizer descriptors,
//! and the tensor manifest), the tensors concatenated as little-endian
//! 64-bit floats in manifest order, and finally a 64-bit FNV-1a checksum
//! of all preceding bytes.
//!
//! Save -> load -> save is byte-identical: the header serialization is
//! canonical and tensor bytes are exact.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::harness::config::TrainConfig;
use crate::nn::{HiddenActivation, OutputActivation};
use crate::{AdamState, Mlp};

pub const MAGIC: &[u8; 4] = b"PQM1";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to reconstruct a learner mid-run: config snapshot,
/// completed-epoch index, named parameter sets, and optimizer states.
/// The RNG needs no serialized state: all streams are derived from
/// (config.seed, epoch), so the epoch index pins them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub nets: Vec<(String, Mlp)>,
    pub adams: Vec<(String, AdamState)>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn output_activation_str(a: OutputActivation) -> &'static str {
    match a {
        OutputActivation::Linear => "linear",
        OutputActivation::Sigmoid => "sigmoid",
        OutputActivation::Tanh => "tanh",
    }
}

fn parse_output_activation(s: &str) -> Result<OutputActivation> {
    match s {
        "linear" => Ok(OutputActivation::Linear),
        "sigmoid" => Ok(OutputActivation::Sigmoid),
        "tanh" => Ok(OutputActivation::Tanh),
        other => Err(CheckpointError::Malformed(format!("unknown output activation '{other}'")).into()),
    }
}

/// The manifest entry list for one checkpoint, in serialization order.
fn tensor_manifest(ckpt: &Checkpoint) -> Vec<(String, Vec<usize>)> {
    let mut manifest = Vec::new();
    for (name, net) in &ckpt.nets {
        let sizes = net.layer_sizes();
        for l in 0..net.num_layers() {
            manifest.push((format!("{name}.w{l}"), vec![sizes[l + 1], sizes[l]]));
            manifest.push((format!("{name}.b{l}"), vec![sizes[l + 1]]));
        }
    }
    for (name, adam) in &ckpt.adams {
        let (mw, mb, vw, vb) = adam.moment_buffers();
        for (kind, buffers) in [("m", (mw, mb)), ("v", (vw, vb))] {
            let (w, b) = buffers;
            for l in 0..w.len() {
                manifest.push((format!("{name}.adam.{kind}.w{l}"), vec![w[l].len()]));
                manifest.push((format!("{name}.adam.{kind}.b{l}"), vec![b[l].len()]));
            }
        }
    }
    manifest
}

fn header_text(ckpt: &Checkpoint) -> String {
    let mut h = String::new();
    h.push_str(&format!("version={FORMAT_VERSION}\n"));
    h.push_str(&format!("epoch={}\n", ckpt.epoch));
    h.push_str("[config]\n");
    h.push_str(&ckpt.config.to_kv_lines());
    h.push_str("[nets]\n");
    for (name, net) in &ckpt.nets {
        let sizes = net
            .layer_sizes()
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        h.push_str(&format!(
            "net {name} sizes={sizes} hidden=relu output={}\n",
            output_activation_str(net.output_activation())
        ));
    }
    h.push_str("[adam]\n");
    for (name, adam) in &ckpt.adams {
        h.push_str(&format!(
            "adam {name} step={} lr={} beta1={} beta2={} epsilon={}\n",
            adam.step_count, adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon
        ));
    }
    h.push_str("[tensors]\n");
    for (name, dims) in tensor_manifest(ckpt) {
        let dims = dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        h.push_str(&format!("tensor {name} {dims}\n"));
    }
    h
}

fn push_tensor(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let header = header_text(ckpt);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, net) in &ckpt.nets {
        for l in 0..net.num_layers() {
            push_tensor(&mut out, &net.weights()[l]);
            push_tensor(&mut out, &net.biases()[l]);
        }
    }
    for (_, adam) in &ckpt.adams {
        let (mw, mb, vw, vb) = adam.moment_buffers();
        for (w, b) in [(mw, mb), (vw, vb)] {
            for l in 0..w.len() {
                push_tensor(&mut out, &w[l]);
                push_tensor(&mut out, &b[l]);
            }
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

struct HeaderData {
    epoch: usize,
    config: TrainConfig,
    nets: Vec<(String, Vec<usize>, OutputActivation)>,
    adams: Vec<(String, u64, f64, f64, f64, f64)>,
    manifest: Vec<(String, Vec<usize>)>,
}

fn malformed(msg: impl Into<String>) -> Error {
    CheckpointError::Malformed(msg.into()).into()
}

fn parse_header(text: &str) -> Result<HeaderData> {
    let mut lines = text.lines().peekable();

    let version_line = lines.next().ok_or_else(|| malformed("empty header"))?;
    let version: u32 = version_line
        .strip_prefix("version=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed(format!("expected version line, got '{version_line}'")))?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }

    let epoch_line = lines.next().ok_or_else(|| malformed("missing epoch"))?;
    let epoch: usize = epoch_line
        .strip_prefix("epoch=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed(format!("expected epoch line, got '{epoch_line}'")))?;

    if lines.next() != Some("[config]") {
        return Err(malformed("expected [config] section"));
    }
    let mut config_text = String::new();
    while let Some(&line) = lines.peek() {
        if line == "[nets]" {
            break;
        }
        config_text.push_str(line);
        config_text.push('\n');
        lines.next();
    }
    let config = TrainConfig::from_kv_lines(&config_text)?;

    if lines.next() != Some("[nets]") {
        return Err(malformed("expected [nets] section"));
    }
    let mut nets = Vec::new();
    while let Some(&line) = lines.peek() {
        if line == "[adam]" {
            break;
        }
        lines.next();
        let rest = line
            .strip_prefix("net ")
            .ok_or_else(|| malformed(format!("bad net line '{line}'")))?;
        let mut parts = rest.split_whitespace();
        let name = parts.next().ok_or_else(|| malformed("net line missing name"))?;
        let mut sizes = None;
        let mut output = None;
        for field in parts {
            if let Some(v) = field.strip_prefix("sizes=") {
                let parsed: std::result::Result<Vec<usize>, _> =
                    v.split(',').map(|s| s.parse()).collect();
                sizes = Some(parsed.map_err(|_| malformed(format!("bad sizes in '{line}'")))?);
            } else if let Some(v) = field.strip_prefix("output=") {
                output = Some(parse_output_activation(v)?);
            } else if field != "hidden=relu" {
                return Err(malformed(format!("unknown net field '{field}'")));
            }
        }
        nets.push((
            name.to_string(),
            sizes.ok_or_else(|| malformed("net line missing sizes"))?,
            output.ok_or_else(|| malformed("net line missing output"))?,
        ));
    }

    if lines.next() != Some("[adam]") {
        return Err(malformed("expected [adam] section"));
    }
    let mut adams = Vec::new();
    while let Some(&line) = lines.peek() {
        if line == "[tensors]" {
            break;
        }
        lines.next();
        let rest = line
            .strip_prefix("adam ")
            .ok_or_else(|| malformed(format!("bad adam line '{line}'")))?;
        let mut parts = rest.split_whitespace();
        let name = parts.next().ok_or_else(|| malformed("adam line missing name"))?;
        let mut step = None;
        let mut lr = None;
        let mut beta1 = None;
        let mut beta2 = None;
        let mut epsilon = None;
        for field in parts {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| malformed(format!("bad adam field '{field}'")))?;
            let parse_err = || malformed(format!("bad adam value '{field}'"));
            match k {
                "step" => step = Some(v.parse::<u64>().map_err(|_| parse_err())?),
                "lr" => lr = Some(v.parse::<f64>().map_err(|_| parse_err())?),
                "beta1" => beta1 = Some(v.parse::<f64>().map_err(|_| parse_err())?),
                "beta2" => beta2 = Some(v.parse::<f64>().map_err(|_| parse_err())?),
                "epsilon" => epsilon = Some(v.parse::<f64>().map_err(|_| parse_err())?),
                _ => return Err(malformed(format!("unknown adam field '{k}'"))),
            }
        }
        adams.push((
            name.to_string(),
            step.ok_or_else(|| malformed("adam line missing step"))?,
            lr.ok_or_else(|| malformed("adam line missing lr"))?,
            beta1.ok_or_else(|| malformed("adam line missing beta1"))?,
            beta2.ok_or_else(|| malformed("adam line missing beta2"))?,
            epsilon.ok_or_else(|| malformed("adam line missing epsilon"))?,
        ));
    }

    if lines.next() != Some("[tensors]") {
        return Err(malformed("expected [tensors] section"));
    }
    let mut manifest = Vec::new();
    for line in lines {
        let rest = line
            .strip_prefix("tensor ")
            .ok_or_else(|| malformed(format!("bad tensor line '{line}'")))?;
        let (name, dims) = rest
            .split_once(' ')
            .ok_or_else(|| malformed(format!("bad tensor line '{line}'")))?;
        let dims: std::result::Result<Vec<usize>, _> =
            dims.split('x').map(|d| d.parse()).collect();
        manifest.push((
            name.to_string(),
            dims.map_err(|_| malformed(format!("bad tensor dims in '{line}'")))?,
        ));
    }

    Ok(HeaderData { epoch, config, nets, adams, manifest })
}

/// Deserialize a checkpoint, verifying magic, version, length, checksum,
/// and tensor shapes against the manifest.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated("shorter than magic + header length".into()).into());
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(CheckpointError::Truncated("header extends past end of file".into()).into());
    }
    let header = std::str::from_utf8(&bytes[12..header_end])
        .map_err(|_| malformed("header is not UTF-8"))?;
    let parsed = parse_header(header)?;

    let tensor_count: usize = parsed.manifest.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    let expected_len = header_end + tensor_count * 8 + 8;
    if bytes.len() < expected_len {
        return Err(CheckpointError::Truncated(format!(
            "expected {expected_len} bytes, found {}",
            bytes.len()
        ))
        .into());
    }
    if bytes.len() > expected_len {
        return Err(malformed(format!(
            "trailing bytes: expected {expected_len}, found {}",
            bytes.len()
        )));
    }
    let checksum_stored = u64::from_le_bytes(bytes[expected_len - 8..].try_into().unwrap());
    if fnv1a64(&bytes[..expected_len - 8]) != checksum_stored {
        return Err(CheckpointError::ChecksumMismatch.into());
    }

    // Pull tensors in manifest order.
    let mut cursor = header_end;
    let mut read_tensor = |len: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap()));
            cursor += 8;
        }
        out
    };

    let mut manifest_iter = parsed.manifest.iter();
    let mut expect_entry = |name: &str, dims: &[usize]| -> Result<usize> {
        let (mname, mdims) = manifest_iter
            .next()
            .ok_or_else(|| Error::from(CheckpointError::ShapeMismatch("manifest too short".into())))?;
        if mname != name || mdims != dims {
            return Err(CheckpointError::ShapeMismatch(format!(
                "expected tensor {name} {dims:?}, manifest has {mname} {mdims:?}"
            ))
            .into());
        }
        Ok(dims.iter().product())
    };

    let mut nets = Vec::new();
    for (name, sizes, output) in &parsed.nets {
        let mut net = Mlp::init(sizes, HiddenActivation::Relu, *output, 0)?;
        for l in 0..net.num_layers() {
            let wlen = expect_entry(&format!("{name}.w{l}"), &[sizes[l + 1], sizes[l]])?;
            let blen = expect_entry(&format!("{name}.b{l}"), &[sizes[l + 1]])?;
            let w = read_tensor(wlen);
            let b = read_tensor(blen);
            net.set_layer(l, w, b)
                .map_err(|e| Error::from(CheckpointError::ShapeMismatch(e.to_string())))?;
        }
        nets.push((name.clone(), net));
    }

    let mut adams = Vec::new();
    for (name, step, lr, beta1, beta2, epsilon) in &parsed.adams {
        // Moment shapes follow the net this optimizer belongs to.
        let owner = format!("{name}.online");
        let net = nets
            .iter()
            .find(|(n, _)| *n == owner)
            .map(|(_, net)| net)
            .ok_or_else(|| malformed(format!("adam '{name}' has no matching net '{owner}'")))?;
        let mut buffers: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = Vec::new();
        for kind in ["m", "v"] {
            let mut ws = Vec::new();
            let mut bs = Vec::new();
            for l in 0..net.num_layers() {
                let sizes = net.layer_sizes();
                let wlen =
                    expect_entry(&format!("{name}.adam.{kind}.w{l}"), &[sizes[l + 1] * sizes[l]])?;
                let blen = expect_entry(&format!("{name}.adam.{kind}.b{l}"), &[sizes[l + 1]])?;
                ws.push(read_tensor(wlen));
                bs.push(read_tensor(blen));
            }
            buffers.push((ws, bs));
        }
        let (vw, vb) = buffers.pop().unwrap();
        let (mw, mb) = buffers.pop().unwrap();
        let state = AdamState::from_parts(net, *step, *lr, *beta1, *beta2, *epsilon, mw, mb, vw, vb)
            .map_err(|e| Error::from(CheckpointError::ShapeMismatch(e.to_string())))?;
        adams.push((name.clone(), state));
    }

    if manifest_iter.next().is_some() {
        return Err(CheckpointError::ShapeMismatch("manifest has extra tensors".into()).into());
    }

    Ok(Checkpoint {
        config: parsed.config,
        epoch: parsed.epoch,
        nets,
        adams,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| CheckpointError::Unreadable(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
