//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes  "CSNC"
//! version          u32      currently 1
//! sample_rate      f64
//! chunk_len        u32
//! leaky_slope      f64
//! layer_norm_eps   f64
//! embedding_dim    u32
//! sinc config      count u32, kernel_len u32, stride u32, pool_len u32,
//!                  window u8, f_min_hz f64, f_max_hz f64
//! conv layers      n u32, then per layer: filters u32, kernel_len u32, pool_len u32
//! fc layers        n u32, then width u32 each
//! class_count      u32
//! curriculum_t     f64
//! dtype            u8       0 = f64, 1 = f32
//! array_count      u32
//! per array        name_len u32, name (UTF-8), ndim u32, dims u32 × ndim,
//!                  raw data (little-endian f64 or f32)
//! ```
//!
//! Arrays appear in the fixed group order of
//! [`ModelWeights::group_names`]. 64-bit checkpoints round-trip exactly;
//! 32-bit storage is within 1e-6 per element.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ConvLayerConfig, LinearParams, ModelConfig, ModelWeights, NormParams, SincLayerConfig};
use crate::sinc::SincFilterParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CSNC";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointDtype {
    F64,
    F32,
}

impl CheckpointDtype {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(CheckpointDtype::F64),
            "f32" => Ok(CheckpointDtype::F32),
            other => Err(Error::InvalidConfig {
                detail: format!("unknown checkpoint dtype {other:?} (expected f64 or f32)"),
            }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckpointDtype::F64 => "f64",
            CheckpointDtype::F32 => "f32",
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn name(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn array(&mut self, name: &str, dims: &[usize], data: &[f64], dtype: CheckpointDtype) {
        self.name(name);
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
        match dtype {
            CheckpointDtype::F64 => {
                for &v in data {
                    self.f64(v);
                }
            }
            CheckpointDtype::F32 => {
                for &v in data {
                    self.buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
}

/// Serialize a checkpoint to bytes.
pub fn checkpoint_bytes(
    weights: &ModelWeights,
    curriculum_t: f64,
    dtype: CheckpointDtype,
) -> Result<Vec<u8>> {
    for (name, group) in weights.group_names().iter().zip(weights.param_groups()) {
        if group.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("checkpoint array {name}"),
            });
        }
    }
    if !curriculum_t.is_finite() {
        return Err(Error::NonFinite {
            context: "curriculum t".into(),
        });
    }
    let cfg = &weights.config;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.f64(cfg.sample_rate);
    w.u32(cfg.chunk_len as u32);
    w.f64(cfg.leaky_slope);
    w.f64(cfg.layer_norm_eps);
    w.u32(cfg.embedding_dim as u32);
    w.u32(cfg.sinc.count as u32);
    w.u32(cfg.sinc.kernel_len as u32);
    w.u32(cfg.sinc.stride as u32);
    w.u32(cfg.sinc.pool_len as u32);
    w.u8(cfg.sinc.window as u8);
    w.f64(cfg.sinc.f_min_hz);
    w.f64(cfg.sinc.f_max_hz);
    w.u32(cfg.conv_layers.len() as u32);
    for c in &cfg.conv_layers {
        w.u32(c.filters as u32);
        w.u32(c.kernel_len as u32);
        w.u32(c.pool_len as u32);
    }
    w.u32(cfg.fc_layers.len() as u32);
    for &f in &cfg.fc_layers {
        w.u32(f as u32);
    }
    w.u32(weights.class_count as u32);
    w.f64(curriculum_t);
    w.u8(match dtype {
        CheckpointDtype::F64 => 0,
        CheckpointDtype::F32 => 1,
    });

    let names = weights.group_names();
    w.u32(names.len() as u32);
    let shapes = group_shapes(weights);
    for ((name, group), shape) in names.iter().zip(weights.param_groups()).zip(&shapes) {
        w.array(name, shape, group, dtype);
    }
    Ok(w.buf)
}

fn group_shapes(weights: &ModelWeights) -> Vec<Vec<usize>> {
    let mut shapes = vec![
        vec![weights.sinc.count()],
        vec![weights.sinc.count()],
    ];
    for k in &weights.conv {
        shapes.push(k.shape().to_vec());
    }
    for n in &weights.norms {
        shapes.push(n.gain.shape().to_vec());
        shapes.push(n.bias.shape().to_vec());
    }
    for l in &weights.fc {
        shapes.push(l.w.shape().to_vec());
        shapes.push(l.b.shape().to_vec());
    }
    shapes.push(weights.head_w.shape().to_vec());
    shapes
}

/// Write atomically: serialize, write to a sibling temp file, rename.
pub fn save_checkpoint(
    weights: &ModelWeights,
    curriculum_t: f64,
    dtype: CheckpointDtype,
    path: &Path,
) -> Result<()> {
    let bytes = checkpoint_bytes(weights, curriculum_t, dtype)?;
    let tmp = path.with_extension("ckpt.tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointTruncated {
                path: self.path.to_path_buf(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 4096 {
            return Err(Error::CheckpointCorrupt {
                detail: format!("array name length {n} is implausible"),
            });
        }
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CheckpointCorrupt {
            detail: "array name is not UTF-8".into(),
        })
    }
}

/// Parse checkpoint bytes into weights and the stored curriculum t.
pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<(ModelWeights, f64)> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::NotACheckpoint {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let sample_rate = r.f64()?;
    let chunk_len = r.u32()? as usize;
    let leaky_slope = r.f64()?;
    let layer_norm_eps = r.f64()?;
    let embedding_dim = r.u32()? as usize;
    let sinc = SincLayerConfig {
        count: r.u32()? as usize,
        kernel_len: r.u32()? as usize,
        stride: r.u32()? as usize,
        pool_len: r.u32()? as usize,
        window: r.u8()? != 0,
        f_min_hz: r.f64()?,
        f_max_hz: r.f64()?,
    };
    let n_conv = r.u32()? as usize;
    let mut conv_layers = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        conv_layers.push(ConvLayerConfig {
            filters: r.u32()? as usize,
            kernel_len: r.u32()? as usize,
            pool_len: r.u32()? as usize,
        });
    }
    let n_fc = r.u32()? as usize;
    let mut fc_layers = Vec::with_capacity(n_fc);
    for _ in 0..n_fc {
        fc_layers.push(r.u32()? as usize);
    }
    let class_count = r.u32()? as usize;
    let curriculum_t = r.f64()?;
    let dtype = match r.u8()? {
        0 => CheckpointDtype::F64,
        1 => CheckpointDtype::F32,
        other => {
            return Err(Error::CheckpointCorrupt {
                detail: format!("unknown dtype tag {other}"),
            })
        }
    };

    let config = ModelConfig {
        sample_rate,
        chunk_len,
        sinc,
        conv_layers,
        fc_layers,
        embedding_dim,
        leaky_slope,
        layer_norm_eps,
    };
    config.validate()?;

    let array_count = r.u32()? as usize;
    let mut arrays: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(array_count);
    for _ in 0..array_count {
        let name = r.name()?;
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(Error::CheckpointCorrupt {
                detail: format!("array {name} has implausible rank {ndim}"),
            });
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let data: Vec<f64> = match dtype {
            CheckpointDtype::F64 => {
                let raw = r.take(n * 8)?;
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
            CheckpointDtype::F32 => {
                let raw = r.take(n * 4)?;
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            }
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("checkpoint array {name}"),
            });
        }
        arrays.push((name, dims, data));
    }

    let weights = assemble(config, class_count, arrays)?;
    Ok((weights, curriculum_t))
}

fn assemble(
    config: ModelConfig,
    class_count: usize,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
) -> Result<ModelWeights> {
    let mut iter = arrays.into_iter();
    let mut next = |expect: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        let (name, dims, data) = iter.next().ok_or_else(|| Error::CheckpointCorrupt {
            detail: format!("missing array {expect}"),
        })?;
        if name != expect {
            return Err(Error::CheckpointCorrupt {
                detail: format!("expected array {expect}, found {name}"),
            });
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::CheckpointCorrupt {
                detail: format!("array {name}: dims {dims:?} vs {} values", data.len()),
            });
        }
        Ok((dims, data))
    };

    let (_, f_low) = next("sinc.f_low")?;
    let (_, band) = next("sinc.band")?;
    if f_low.len() != config.sinc.count || band.len() != config.sinc.count {
        return Err(Error::CheckpointCorrupt {
            detail: "sinc parameter length does not match config".into(),
        });
    }
    let sinc = SincFilterParams {
        f_low,
        band,
        kernel_len: config.sinc.kernel_len,
        sample_rate: config.sample_rate,
        window: config.sinc.window,
    };

    let mut conv = Vec::new();
    for i in 0..config.conv_layers.len() {
        let (dims, data) = next(&format!("conv{i}.kernels"))?;
        conv.push(Tensor::new(dims, data).map_err(corrupt)?);
    }
    let n_norms = config.conv_layers.len() + 1 + config.fc_layers.len();
    let mut norms = Vec::new();
    for i in 0..n_norms {
        let (gd, gdata) = next(&format!("norm{i}.gain"))?;
        let (bd, bdata) = next(&format!("norm{i}.bias"))?;
        norms.push(NormParams {
            gain: Tensor::new(gd, gdata).map_err(corrupt)?,
            bias: Tensor::new(bd, bdata).map_err(corrupt)?,
        });
    }
    let mut fc = Vec::new();
    for i in 0..config.fc_layers.len() + 1 {
        let (wd, wdata) = next(&format!("fc{i}.w"))?;
        let (bd, bdata) = next(&format!("fc{i}.b"))?;
        fc.push(LinearParams {
            w: Tensor::new(wd, wdata).map_err(corrupt)?,
            b: Tensor::new(bd, bdata).map_err(corrupt)?,
        });
    }
    let (hd, hdata) = next("head.w")?;
    if hd != [class_count, config.embedding_dim] {
        return Err(Error::CheckpointCorrupt {
            detail: format!(
                "head.w shape {hd:?} does not match class count {class_count} × dim {}",
                config.embedding_dim
            ),
        });
    }
    let head_w = Tensor::new(hd, hdata).map_err(corrupt)?;

    Ok(ModelWeights {
        config,
        class_count,
        sinc,
        conv,
        norms,
        fc,
        head_w,
    })
}

fn corrupt(e: Error) -> Error {
    Error::CheckpointCorrupt {
        detail: e.to_string(),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelWeights, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

impl ModelWeights {
    /// Guard for using a checkpoint against a differently sized corpus.
    pub fn ensure_class_count(&self, requested: usize) -> Result<()> {
        if self.class_count != requested {
            return Err(Error::ClassCountMismatch {
                checkpoint: self.class_count,
                requested,
            });
        }
        Ok(())
    }
}
