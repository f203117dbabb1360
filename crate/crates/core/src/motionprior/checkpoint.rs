//! Little-endian checkpoint format.
//!
//! ```text
//! magic        8 bytes  "EGOKITMP"
//! version      u32      1
//! architecture 8 × u32  state_dim cond_dim width heads ff_hidden
//!                       enc_blocks dec_blocks max_len
//! variant      u32      conditioning variant tag
//! schedule     u32 N, f64 cosine offset, (N+1) × f64 loss weights
//! normalizer   state_dim × f64 mean, state_dim × f64 std
//! weights      u64 count, count × f64 in declaration order
//! ```

use std::path::Path;

use super::denoiser::{Architecture, DenoiserParams};
use super::schedule::NoiseSchedule;
use super::{MotionPrior, Normalizer};
use crate::conditioning::ConditioningVariant;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EGOKITMP";
pub const VERSION: u32 = 1;

pub fn to_bytes(prior: &MotionPrior) -> Vec<u8> {
    let a = &prior.params.arch;
    let mut out = Vec::with_capacity(64 + 8 * (prior.params.len() + 2 * a.state_dim + prior.schedule.weights.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [a.state_dim, a.cond_dim, a.width, a.heads, a.ff_hidden, a.enc_blocks, a.dec_blocks, a.max_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&prior.variant.tag().to_le_bytes());
    out.extend_from_slice(&(prior.schedule.steps() as u32).to_le_bytes());
    out.extend_from_slice(&prior.cosine_offset.to_le_bytes());
    let floats = prior.schedule.weights.iter().chain(&prior.normalizer.mean).chain(&prior.normalizer.std);
    for v in floats {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(prior.params.len() as u64).to_le_bytes());
    for v in &prior.params.weights {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::InvalidInput(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn from_bytes(data: &[u8]) -> Result<MotionPrior> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::InvalidInput("not a motion prior checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::InvalidInput(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let arch = Architecture {
        state_dim: dims[0],
        cond_dim: dims[1],
        width: dims[2],
        heads: dims[3],
        ff_hidden: dims[4],
        enc_blocks: dims[5],
        dec_blocks: dims[6],
        max_len: dims[7],
    };
    arch.validate()?;
    let tag = r.u32()?;
    let variant = ConditioningVariant::from_tag(tag).ok_or_else(|| Error::InvalidInput(format!("unknown variant tag {tag}")))?;
    if variant.feature_dim() != arch.cond_dim {
        return Err(Error::InvalidInput("conditioning width does not match variant".into()));
    }
    let steps = r.u32()? as usize;
    if steps == 0 || steps > 1_000_000 {
        return Err(Error::InvalidInput(format!("implausible schedule length {steps}")));
    }
    let offset = r.f64()?;
    let weights = r.f64s(steps + 1)?;
    let schedule = NoiseSchedule::cosine(steps, offset)?.with_weights(weights)?;
    let mean = r.f64s(arch.state_dim)?;
    let std = r.f64s(arch.state_dim)?;
    if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidInput("invalid normalization statistics".into()));
    }
    let count = r.u64()? as usize;
    if count.checked_mul(8).is_none_or(|b| b != data.len() - r.pos) {
        return Err(Error::InvalidInput("weight block size does not match file size".into()));
    }
    let params = DenoiserParams::from_weights(arch, r.f64s(count)?)?;
    Ok(MotionPrior { params, normalizer: Normalizer { mean, std }, variant, schedule, cosine_offset: offset })
}

pub fn save(prior: &MotionPrior, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(prior)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MotionPrior> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&data).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motionprior::schedule::COSINE_OFFSET;
    use crate::motionprior::STATE_DIM;

    fn prior() -> MotionPrior {
        let arch = Architecture { width: 16, heads: 2, ff_hidden: 32, enc_blocks: 1, dec_blocks: 1, ..Architecture::new(STATE_DIM, 18) };
        let mut params = DenoiserParams::init(arch, 1).unwrap();
        params.weights[0] = f64::MIN_POSITIVE;
        params.weights[1] = -0.1;
        let normalizer = Normalizer { mean: (0..STATE_DIM).map(|i| i as f64 * 0.1).collect(), std: vec![0.3; STATE_DIM] };
        MotionPrior {
            params,
            normalizer,
            variant: ConditioningVariant::EgoAllo,
            schedule: NoiseSchedule::cosine(1000, COSINE_OFFSET).unwrap(),
            cosine_offset: COSINE_OFFSET,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = prior();
        let bytes = to_bytes(&p);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert!(back.params.weights.iter().zip(&p.params.weights).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = to_bytes(&prior());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&[]).is_err());
    }
}
