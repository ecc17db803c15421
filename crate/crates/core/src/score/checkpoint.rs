//! Binary model checkpoints.
//!
//! Layout: `"HKGM"`, `u32` version, `u32` layer count, then per layer `u32`
//! out, in, kernel height, kernel width; `u32` conditioning code; `f64`
//! σ_min, `f64` σ_max, `u32` level count; then per layer the weights
//! followed by the biases as `f32`.
//! All little-endian. Training metadata is not stored.

use std::fs;
use std::path::Path;

use crate::error::{HkgmError, Result};
use crate::io::Reader;
use crate::score::net::{Architecture, Conditioning, LayerShape, ScheduleParams, ScoreModel};

pub const MODEL_MAGIC: &[u8; 4] = b"HKGM";
pub const MODEL_VERSION: u32 = 1;

/// Layer counts or channel widths above this are treated as corruption.
const MAX_EXTENT: u32 = 1 << 16;

pub fn encode_model(m: &ScoreModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * m.parameter_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.architecture.layers.len() as u32).to_le_bytes());
    for l in &m.architecture.layers {
        for v in [l.out_channels, l.in_channels, l.kernel, l.kernel] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&m.architecture.conditioning.code().to_le_bytes());
    out.extend_from_slice(&m.schedule.sigma_min.to_le_bytes());
    out.extend_from_slice(&m.schedule.sigma_max.to_le_bytes());
    out.extend_from_slice(&m.schedule.levels.to_le_bytes());
    for p in m.parameters() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_model(buf: &[u8]) -> Result<ScoreModel> {
    let mut r = Reader::new(buf, "model file");
    r.magic(MODEL_MAGIC)?;
    r.version(MODEL_VERSION)?;
    let count = r.u32()?;
    if count == 0 || count > MAX_EXTENT {
        return Err(HkgmError::Format(format!(
            "model file: implausible layer count {count}"
        )));
    }
    let mut layers = Vec::with_capacity(count as usize);
    for i in 0..count {
        let (out, inp, kh, kw) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        if kh != kw || out > MAX_EXTENT || inp > MAX_EXTENT {
            return Err(HkgmError::Format(format!(
                "model file: layer {i} has unsupported shape {out}x{inp}x{kh}x{kw}"
            )));
        }
        layers.push(LayerShape {
            in_channels: inp as usize,
            out_channels: out as usize,
            kernel: kh as usize,
        });
    }
    let code = r.u32()?;
    let conditioning = Conditioning::from_code(code).ok_or_else(|| {
        HkgmError::Format(format!("model file: unknown conditioning code {code}"))
    })?;
    let architecture = Architecture {
        layers,
        conditioning,
    };
    architecture
        .validate()
        .map_err(|e| HkgmError::Format(format!("model file: {e}")))?;
    let schedule = ScheduleParams {
        sigma_min: r.f64()?,
        sigma_max: r.f64()?,
        levels: r.u32()?,
    };
    let mut model = ScoreModel::zeros(architecture, schedule)?;
    for layer in model.layers.iter_mut() {
        for p in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *p = r.f32()?;
        }
    }
    r.finish()?;
    Ok(model)
}

pub fn save_model(m: &ScoreModel, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_model(m))?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScoreModel> {
    decode_model(&fs::read(path)?)
}
