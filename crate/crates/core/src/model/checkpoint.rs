//! Binary checkpoint format.
//!
//! ```text
//! "MAFL"                 4 bytes magic
//! version                u32 LE
//! header_len             u32 LE
//! header                 header_len bytes of JSON
//! payload                f32 LE: every parameter value, then for each
//!                        optimizer (main, bias) every state's m then v
//! trailer                first 8 bytes of SHA-256 over everything above
//! ```
//!
//! The header carries the model spec, optimizer hyperparameters and step
//! counts, trainability flags, epoch, RNG position and an opaque resume
//! record. Serialization is deterministic, so save → load → save reproduces
//! the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{init_params, Group, ModelSpec, ModelState};
use crate::error::{MaflError, Result};
use crate::numerics::rng::{RngState, RngStream};
use crate::numerics::{AdamW, AdamWConfig, Matrix};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MAFL";
const TRAILER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Index of the last completed training epoch, `None` before any.
    pub epoch: Option<u32>,
    pub model: ModelState<f32>,
    /// Optimizer over the extractor and real/fake head.
    pub main_opt: AdamW<f32>,
    /// Optimizer over the bias group.
    pub bias_opt: AdamW<f32>,
    pub rng: Option<RngState>,
    /// Training-loop state needed to continue a run; opaque to this module.
    pub resume: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn fresh(model: ModelState<f32>, config: AdamWConfig) -> Self {
        let main_opt = AdamW::new(
            config,
            model
                .group_params(Group::Extractor)
                .into_iter()
                .chain(model.group_params(Group::Realfake)),
        );
        let bias_opt = AdamW::new(config, model.group_params(Group::Bias));
        Self {
            epoch: None,
            model,
            main_opt,
            bias_opt,
            rng: None,
            resume: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    config: AdamWConfig,
    step_counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    epoch: Option<u32>,
    trainable: Vec<(Group, bool)>,
    param_floats: usize,
    main_opt: OptimizerHeader,
    bias_opt: OptimizerHeader,
    rng: Option<RngState>,
    resume: Option<serde_json::Value>,
}

fn opt_header(opt: &AdamW<f32>) -> OptimizerHeader {
    OptimizerHeader {
        config: opt.config,
        step_counts: opt.states.iter().map(|s| s.step_count).collect(),
    }
}

fn trailer(bytes: &[u8]) -> [u8; TRAILER_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; TRAILER_LEN];
    out.copy_from_slice(&digest[..TRAILER_LEN]);
    out
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = ck.model.all_params();
    let param_floats: usize = params.iter().map(|p| p.value.len()).sum();
    let header = Header {
        spec: ck.model.spec.clone(),
        epoch: ck.epoch,
        trainable: Group::ALL
            .iter()
            .map(|&g| (g, ck.model.is_trainable(g)))
            .collect(),
        param_floats,
        main_opt: opt_header(&ck.main_opt),
        bias_opt: opt_header(&ck.bias_opt),
        rng: ck.rng.clone(),
        resume: ck.resume.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| MaflError::json("checkpoint header", e))?;
    let mut out = Vec::with_capacity(16 + json.len() + param_floats * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        p.value.extend_le_bytes(&mut out);
    }
    for opt in [&ck.main_opt, &ck.bias_opt] {
        for s in &opt.states {
            s.m.extend_le_bytes(&mut out);
            s.v.extend_le_bytes(&mut out);
        }
    }
    let t = trailer(&out);
    out.extend_from_slice(&t);
    Ok(out)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    fs::write(path, bytes).map_err(|e| MaflError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(MaflError::Corruption {
                path: self.path.to_path_buf(),
                reason: format!("file ends inside {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fill(&mut self, m: &mut Matrix<f32>, what: &str) -> Result<()> {
        let raw = self.take(m.len() * 4, what)?;
        for (v, c) in m.as_mut_slice().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(())
    }
}

/// Parses checkpoint bytes; `path` is used only in error messages. Gradients
/// are not stored, so every loaded tensor starts with a zero gradient.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |reason: String| MaflError::Corruption {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() + 8 + TRAILER_LEN {
        return Err(corrupt(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - TRAILER_LEN);
    if trailer(body) != tail {
        return Err(corrupt("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 4,
        path,
    };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(MaflError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| MaflError::json(format!("checkpoint header of {}", path.display()), e))?;

    header.spec.validate()?;
    // Structure comes from the spec; values are overwritten below.
    let mut model: ModelState<f32> = init_params(&header.spec, &RngStream::new(0))?;
    if model.param_count() != header.param_floats {
        return Err(corrupt(format!(
            "header declares {} parameters, spec implies {}",
            header.param_floats,
            model.param_count()
        )));
    }
    for p in model.all_params_mut() {
        r.fill(&mut p.value, "parameter block")?;
    }
    for (g, flag) in &header.trainable {
        model.set_trainable(*g, *flag);
    }
    let mut ck = Checkpoint::fresh(model, header.main_opt.config);
    ck.bias_opt.config = header.bias_opt.config;
    for (opt, h, name) in [
        (&mut ck.main_opt, &header.main_opt, "main"),
        (&mut ck.bias_opt, &header.bias_opt, "bias"),
    ] {
        if h.step_counts.len() != opt.states.len() {
            return Err(corrupt(format!(
                "{name} optimizer has {} states, model needs {}",
                h.step_counts.len(),
                opt.states.len()
            )));
        }
        for (s, &count) in opt.states.iter_mut().zip(&h.step_counts) {
            s.step_count = count;
            r.fill(&mut s.m, "optimizer moments")?;
            r.fill(&mut s.v, "optimizer moments")?;
        }
    }
    if r.pos != body.len() {
        return Err(corrupt(format!(
            "{} unexpected bytes before trailer",
            body.len() - r.pos
        )));
    }
    ck.epoch = header.epoch;
    ck.rng = header.rng;
    ck.resume = header.resume;
    Ok(ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| MaflError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
