//! Orthographic top-down rasterizer with supersampled coverage, directional
//! shading and cast shadows, followed by the real-proxy sensor model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, ImageRGBD, Lighting, ObjectSpec, SceneSpec, Texture, Workspace};
use crate::error::Result;

/// Subsamples per pixel along each axis.
const SUPERSAMPLE: usize = 6;
/// March steps when testing whether a point is shadowed by an object.
const SHADOW_STEPS: usize = 16;

struct Placed<'a> {
    spec: &'a ObjectSpec,
    cx: f64,
    cy: f64,
    height: f64,
    bbox: [f64; 4],
}

impl Placed<'_> {
    fn new(spec: &ObjectSpec, board_pos: (f64, f64)) -> Placed<'_> {
        let r = spec.shape.bounding_radius_mm();
        Placed {
            spec,
            cx: board_pos.0,
            cy: board_pos.1,
            height: spec.shape.height_mm(),
            bbox: [board_pos.0 - r, board_pos.1 - r, board_pos.0 + r, board_pos.1 + r],
        }
    }

    #[inline]
    fn covers(&self, x: f64, y: f64) -> bool {
        x >= self.bbox[0]
            && x <= self.bbox[2]
            && y >= self.bbox[1]
            && y <= self.bbox[3]
            && self.spec.shape.covers(x - self.cx, y - self.cy)
    }

    fn surface_color(&self, x: f64, y: f64) -> [f64; 3] {
        let c = self.spec.color;
        match self.spec.texture {
            Texture::Flat => c,
            Texture::Noise { seed, scale_mm } => {
                let (u, v) = ((x - self.cx) / scale_mm, (y - self.cy) / scale_mm);
                let n = 0.65 * value_noise(seed, u, v) + 0.35 * value_noise(seed ^ 0x9e37, 2.0 * u, 2.0 * v);
                let f = 0.55 + 0.9 * n;
                [(c[0] * f).min(1.0), (c[1] * f).min(1.0), (c[2] * f).min(1.0)]
            }
        }
    }
}

fn hash2(seed: u64, i: i64, j: i64) -> f64 {
    let mut h = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((i as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((j as u64).wrapping_mul(0x94D0_49BB_1331_11EB));
    h ^= h >> 31;
    h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth lattice value noise in [0, 1).
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (i, j) = (x0 as i64, y0 as i64);
    let a = hash2(seed, i, j);
    let b = hash2(seed, i + 1, j);
    let c = hash2(seed, i, j + 1);
    let d = hash2(seed, i + 1, j + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

fn in_shadow(objects: &[Placed<'_>], light: &Lighting, x: f64, y: f64, h0: f64) -> bool {
    let [lx, ly, lz] = light.direction;
    if lz <= 0.0 {
        return true;
    }
    objects.iter().any(|o| {
        if o.height <= h0 + 1e-9 {
            return false;
        }
        let t_max = (o.height - h0) / lz;
        let (ex, ey) = (x + t_max * lx, y + t_max * ly);
        if x.max(ex) < o.bbox[0] || x.min(ex) > o.bbox[2] || y.max(ey) < o.bbox[1] || y.min(ey) > o.bbox[3] {
            return false;
        }
        (1..=SHADOW_STEPS).any(|k| {
            let t = t_max * k as f64 / SHADOW_STEPS as f64;
            o.covers(x + t * lx, y + t * ly)
        })
    })
}

/// Renders with the default workspace geometry.
pub fn render(spec: &SceneSpec, resolution: (usize, usize)) -> Result<ImageRGBD> {
    render_with(spec, resolution, &Workspace::default())
}

/// Renders a scene. The output is a pure function of `spec`, `resolution`
/// and `ws`; real-proxy randomness comes only from the perturbation seed.
///
/// Real-proxy post-processing runs in a fixed order: lighting and shadow
/// shading, global brightness jitter, Gaussian blur, additive noise, and a
/// final clamp to `[0, 1]`.
pub fn render_with(spec: &SceneSpec, resolution: (usize, usize), ws: &Workspace) -> Result<ImageRGBD> {
    spec.validate(ws)?;
    let (w, h) = resolution;
    let (ix, iy) = ws.inset_mm();
    let to_board = |p: (f64, f64)| (p.0 + ix, p.1 + iy);
    let mut objects: Vec<Placed<'_>> = spec
        .target
        .iter()
        .map(|t| Placed::new(t, to_board(spec.target_position_mm)))
        .collect();
    objects.extend(spec.distractors.iter().map(|(o, p)| Placed::new(o, to_board(*p))));

    let lighting = match spec.domain {
        Domain::Canonical => Lighting::nominal(),
        Domain::RealProxy(_) => spec.lighting,
    };
    let n = w * h;
    let mut planes = vec![0.0f64; 4 * n];
    let px_w = ws.board_mm.0 / w as f64;
    let px_h = ws.board_mm.1 / h as f64;
    let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;

    for row in 0..h {
        for col in 0..w {
            let mut acc = [0.0f64; 4];
            for a in 0..SUPERSAMPLE {
                let by = (row as f64 + (a as f64 + 0.5) / SUPERSAMPLE as f64) * px_h;
                for b in 0..SUPERSAMPLE {
                    let bx = (col as f64 + (b as f64 + 0.5) / SUPERSAMPLE as f64) * px_w;
                    let top = objects
                        .iter()
                        .filter(|o| o.covers(bx, by))
                        .fold(None::<&Placed<'_>>, |best, o| match best {
                            Some(b) if b.height >= o.height => Some(b),
                            _ => Some(o),
                        });
                    let (rgb, height) = match top {
                        Some(o) => (o.surface_color(bx, by), o.height),
                        None => (spec.background.color_at(bx, by), 0.0),
                    };
                    let shadowed = lighting.shadows && in_shadow(&objects, &lighting, bx, by, height);
                    let s = lighting.shade(shadowed);
                    acc[0] += rgb[0] * s;
                    acc[1] += rgb[1] * s;
                    acc[2] += rgb[2] * s;
                    acc[3] += (1.0 - height / ws.depth_scale_mm).clamp(0.0, 1.0);
                }
            }
            for (c, v) in acc.iter().enumerate() {
                planes[c * n + row * w + col] = v * inv;
            }
        }
    }

    if let Domain::RealProxy(p) = spec.domain {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        if p.brightness_jitter > 0.0 {
            let f = 1.0 + rng.random_range(-p.brightness_jitter..=p.brightness_jitter);
            planes[..3 * n].iter_mut().for_each(|v| *v *= f);
        }
        if p.blur_radius > 0.0 {
            for plane in planes.chunks_mut(n) {
                gaussian_blur(plane, w, h, p.blur_radius);
            }
        }
        if p.noise_std > 0.0 {
            let normal = Normal::new(0.0, p.noise_std).expect("finite std");
            planes.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
    }

    let data = planes.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    ImageRGBD::new(w, h, data, ws.depth_scale_mm)
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn gaussian_blur(plane: &mut [f64], w: usize, h: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut tmp = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .zip(-radius..)
                .map(|(k, d)| k * plane[y * w + (x as isize + d).clamp(0, w as isize - 1) as usize])
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = kernel
                .iter()
                .zip(-radius..)
                .map(|(k, d)| k * tmp[(y as isize + d).clamp(0, h as isize - 1) as usize * w + x])
                .sum();
        }
    }
}
