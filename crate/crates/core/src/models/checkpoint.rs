//! Binary checkpoint for a [`PretrainedModel`]. Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "FFCKPT\0\0"
//! version      u32      1
//! arch kind    u8       0 = lr, 1 = mlp, 2 = mlp2
//! input_dim    u64
//! num_classes  u64
//! seed         u64
//! epochs       u64
//! batch_size   u64
//! lr           f64
//! param_count  u64      P
//! theta_0      P x f64
//! theta_star   P x f64
//! ```

use std::io::{Read, Write};

use super::{ArchKind, Architecture, ModelParams, PretrainedModel, TrainingConfig};
use crate::diffmath::ParamVector;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FFCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, model: &PretrainedModel) -> Result<()> {
    let arch = model.arch();
    let cfg = &model.training_config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[arch.kind.code()])?;
    for v in [arch.input_dim as u64, arch.num_classes as u64, cfg.seed, cfg.epochs as u64, cfg.batch_size as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&cfg.lr.to_le_bytes())?;
    w.write_all(&(arch.param_count() as u64).to_le_bytes())?;
    for theta in [&model.initial_params.theta, &model.params.theta] {
        for v in theta.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<PretrainedModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::config("not a model checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::config(format!("unsupported checkpoint version {version}")));
    }
    let [code] = read_array::<1, _>(&mut r)?;
    let kind = ArchKind::from_code(code).ok_or_else(|| Error::config(format!("unknown architecture code {code}")))?;
    let mut u = || -> Result<u64> { Ok(u64::from_le_bytes(read_array(&mut r)?)) };
    let input_dim = u()? as usize;
    let num_classes = u()? as usize;
    let seed = u()?;
    let epochs = u()? as usize;
    let batch_size = u()? as usize;
    let lr = f64::from_le_bytes(read_array(&mut r)?);
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let arch = Architecture::new(kind, input_dim, num_classes)?;
    if count != arch.param_count() {
        return Err(Error::config(format!(
            "checkpoint declares {count} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    let mut read_theta = || -> Result<ParamVector> {
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)?;
        Ok(ParamVector::from_vec(
            buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ))
    };
    let initial = read_theta()?;
    let last = read_theta()?;
    Ok(PretrainedModel {
        params: ModelParams::new(arch, last)?,
        initial_params: ModelParams::new(arch, initial)?,
        training_config: TrainingConfig {
            epochs,
            batch_size,
            lr,
            seed,
        },
    })
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
