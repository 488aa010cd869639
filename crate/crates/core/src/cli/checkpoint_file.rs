//! Binary checkpoint file.
//!
//! ```text
//! magic "S2PC" | version u16 | kind u8 (0 vae, 1 cnn) | fingerprint [u8; 32]
//! | seed u64 | stage u8 (0 vae1, 1 vae2, 2 cnn, 3 baseline) | layer count u32
//! | per layer: weights f64 × n, bias f64 × m (sizes follow the architecture)
//! | loss count u32 | losses f64
//! | SHA-256 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use sha2::{Digest, Sha256};

use super::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::models::{architecture_fingerprint, NetKind};
use crate::ndtensor::{LayerHyper, LayerParams, Tensor};
use crate::pipeline::{Checkpoint, Stage};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"S2PC";
pub const CHECKPOINT_VERSION: u16 = 1;
const STAGES: [Stage; 4] = [Stage::Vae1, Stage::Vae2, Stage::Cnn, Stage::Baseline];

fn kind_tag(kind: NetKind) -> u8 {
    match kind {
        NetKind::Vae => 0,
        NetKind::Cnn => 1,
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Writer::default();
    out.bytes(CHECKPOINT_MAGIC);
    out.u16(CHECKPOINT_VERSION);
    out.u8(kind_tag(ck.kind()));
    out.bytes(&ck.fingerprint());
    out.u64(ck.seed);
    out.u8(STAGES.iter().position(|&s| s == ck.stage).expect("known stage") as u8);
    out.u32(ck.layers.len() as u32);
    for l in &ck.layers {
        out.bytes(&l.to_le_bytes());
    }
    out.u32(ck.losses.len() as u32);
    ck.losses.iter().for_each(|&v| out.f64(v));
    let digest = Sha256::digest(out.as_slice());
    out.bytes(&digest);
    out.into_inner()
}

/// Loads a checkpoint written for the network described by `expected`.
/// Fails with [`Error::Checksum`] on corruption and [`Error::Fingerprint`]
/// when the file belongs to a different architecture.
pub fn decode_checkpoint(bytes: &[u8], kind: NetKind, expected: &[LayerHyper]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    if bytes.len() < 32 + r.offset() {
        return Err(r.error_at(bytes.len(), "file too short for a checksum".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut r = Reader::new(body);
    r.take(6)?;
    let at = r.offset();
    let tag = r.u8()?;
    if tag > 1 {
        return Err(r.error_at(at, format!("unknown network kind {tag}")));
    }
    let fingerprint = r.take(32)?;
    if tag != kind_tag(kind) || fingerprint != architecture_fingerprint(kind, expected) {
        return Err(Error::Fingerprint);
    }
    let seed = r.u64()?;
    let at = r.offset();
    let stage = *STAGES
        .get(r.u8()? as usize)
        .ok_or_else(|| r.error_at(at, "unknown stage".into()))?;
    if stage.kind() != kind {
        return Err(r.error_at(at, format!("stage {} does not match the network kind", stage.as_str())));
    }
    let at = r.offset();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(r.error_at(at, format!("expected {} layers, found {count}", expected.len())));
    }
    let mut layers = Vec::with_capacity(count);
    for &hyper in expected {
        let shape = hyper.weight_shape();
        let n = shape.iter().product();
        let weights = Tensor::new(shape, r.f64s(n)?)?;
        let bias = Tensor::new(vec![hyper.bias_len()], r.f64s(hyper.bias_len())?)?;
        layers.push(LayerParams::from_parts(hyper, weights, bias)?);
    }
    let n = r.u32()? as usize;
    let losses = r.f64s(n)?;
    r.finish()?;
    Ok(Checkpoint {
        stage,
        seed,
        layers,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CnnRegressor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let cnn = CnnRegressor::new((16, 16), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        Checkpoint {
            stage: Stage::Baseline,
            seed: 99,
            layers: cnn.into_layers(),
            losses: vec![0.5, 0.25],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes, NetKind::Cnn, &CnnRegressor::hypers((16, 16)).unwrap()).unwrap();
        assert_eq!(back.params_sha256(), ck.params_sha256());
        assert_eq!((back.stage, back.seed, &back.losses), (ck.stage, ck.seed, &ck.losses));
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn wrong_architecture_is_a_fingerprint_error() {
        let bytes = encode_checkpoint(&sample());
        let err = decode_checkpoint(&bytes, NetKind::Cnn, &CnnRegressor::hypers((32, 32)).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Fingerprint));
        let err = decode_checkpoint(&bytes, NetKind::Vae, &CnnRegressor::hypers((16, 16)).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Fingerprint));
    }

    #[test]
    fn any_flipped_byte_is_rejected() {
        let bytes = encode_checkpoint(&sample());
        let hypers = CnnRegressor::hypers((16, 16)).unwrap();
        for i in [0, 5, 7, 50, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(decode_checkpoint(&bad, NetKind::Cnn, &hypers).is_err(), "byte {i}");
        }
        let mut bad = bytes.clone();
        bad[bytes.len() / 2] ^= 1;
        assert!(matches!(decode_checkpoint(&bad, NetKind::Cnn, &hypers), Err(Error::Checksum)));
    }
}
