//! Binary dataset container.
//!
//! ```text
//! magic "S2PD" | version u16 | width u16 | height u16 | channels u8 = 4
//! | count u32 | label_dim u8 = 2
//! | count × (4·H·W image f32, 2 label f32)
//! | trailer length u32 | trailer JSON
//! ```
//! All integers and floats are little-endian.

use serde::{Deserialize, Serialize};

use super::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scenegen::{DomainTag, ImageRGBD, LabeledDataset, Manifest};

pub const DATASET_MAGIC: &[u8; 4] = b"S2PD";
pub const DATASET_VERSION: u16 = 1;
const LABEL_DIM: u8 = 2;

#[derive(Serialize, Deserialize)]
struct Trailer {
    domain_tag: DomainTag,
    manifest: Manifest,
}

pub fn encode_dataset(ds: &LabeledDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let (w, h) = ds.resolution();
    let dim = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit the container")))
    };
    let mut out = Writer::default();
    out.bytes(DATASET_MAGIC);
    out.u16(DATASET_VERSION);
    out.u16(dim(w, "width")?);
    out.u16(dim(h, "height")?);
    out.u8(ImageRGBD::CHANNELS as u8);
    out.u32(u32::try_from(ds.len()).map_err(|_| Error::InvalidArgument("too many images".into()))?);
    out.u8(LABEL_DIM);
    for (img, label) in ds.images.iter().zip(&ds.labels) {
        img.data.iter().for_each(|&v| out.f32(v));
        label.iter().for_each(|&v| out.f32(v));
    }
    let trailer = serde_json::to_vec(&Trailer {
        domain_tag: ds.domain_tag,
        manifest: ds.manifest.clone(),
    })?;
    out.u32(trailer.len() as u32);
    out.bytes(&trailer);
    Ok(out.into_inner())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let width = r.u16()? as usize;
    let height = r.u16()? as usize;
    let at = r.offset();
    let channels = r.u8()? as usize;
    if channels != ImageRGBD::CHANNELS {
        return Err(r.error_at(at, format!("expected 4 channels, found {channels}")));
    }
    let count = r.u32()? as usize;
    let at = r.offset();
    let label_dim = r.u8()?;
    if label_dim != LABEL_DIM {
        return Err(r.error_at(at, format!("expected label_dim 2, found {label_dim}")));
    }
    let per = ImageRGBD::CHANNELS * width * height;
    let need = count
        .checked_mul((per + LABEL_DIM as usize) * 4)
        .ok_or_else(|| r.error_at(r.offset(), "image count overflows".into()))?;
    r.expect_remaining(need, "image payload")?;

    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        let data = r.f32s(per)?;
        let label = [r.f32()?, r.f32()?];
        raw.push((r.offset(), data, label));
    }
    let len = r.u32()? as usize;
    let trailer_at = r.offset();
    let json = r.take(len)?;
    r.finish()?;
    let trailer: Trailer = serde_json::from_slice(json)
        .map_err(|e| r.error_at(trailer_at, format!("bad trailer JSON: {e}")))?;
    if trailer.manifest.resolution != (width, height) {
        return Err(r.error_at(trailer_at, "trailer resolution disagrees with the header".into()));
    }
    let depth = trailer.manifest.workspace.depth_scale_mm;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (end, data, label) in raw {
        let img = ImageRGBD::new(width, height, data, depth)
            .map_err(|e| r.error_at(end - (per + 2) * 4, e.to_string()))?;
        images.push(img);
        labels.push(label);
    }
    Ok(LabeledDataset {
        images,
        labels,
        domain_tag: trailer.domain_tag,
        manifest: trailer.manifest,
    })
}
