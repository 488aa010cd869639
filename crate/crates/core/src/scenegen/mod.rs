//! Procedural top-down RGB-D tabletop scenes in two domains: a clean
//! canonical rendering and a perturbed real-proxy rendering standing in for
//! a physical depth camera.
//!
//! Coordinates are millimetres. Labels and object positions are measured in
//! the placement region, whose origin is its own corner; the region sits
//! centred on a larger board and the rendered view covers the whole board.

mod catalog;
mod dataset;
pub(crate) use dataset::{place_distractors, render_item};
mod render;

pub use catalog::{catalog, lookup, object_names};
pub use dataset::{
    derive_seed, generate_dataset, generate_dataset_with, paired_dataset, paired_dataset_with,
    DomainPolicy, DomainTag, ItemRecord, LabeledDataset,
    Manifest, PairedDataset, ScenePolicy,
};
pub use render::{render, render_with};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Board and placement-region geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub board_mm: (f64, f64),
    pub region_mm: (f64, f64),
    /// Distance from the camera to the board surface.
    pub table_distance_mm: f64,
    /// Height range mapped onto the normalized depth channel.
    pub depth_scale_mm: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            board_mm: (450.0, 300.0),
            region_mm: (400.0, 250.0),
            table_distance_mm: 1000.0,
            depth_scale_mm: 100.0,
        }
    }
}

impl Workspace {
    pub fn inset_mm(&self) -> (f64, f64) {
        (
            (self.board_mm.0 - self.region_mm.0) / 2.0,
            (self.board_mm.1 - self.region_mm.1) / 2.0,
        )
    }

    /// Continuous pixel coordinates of a region position.
    pub fn region_to_pixel(&self, pos: (f64, f64), resolution: (usize, usize)) -> (f64, f64) {
        let (ix, iy) = self.inset_mm();
        (
            (pos.0 + ix) * resolution.0 as f64 / self.board_mm.0,
            (pos.1 + iy) * resolution.1 as f64 / self.board_mm.1,
        )
    }

    pub fn pixel_to_region(&self, px: (f64, f64), resolution: (usize, usize)) -> (f64, f64) {
        let (ix, iy) = self.inset_mm();
        (
            px.0 * self.board_mm.0 / resolution.0 as f64 - ix,
            px.1 * self.board_mm.1 / resolution.1 as f64 - iy,
        )
    }

    pub fn contains(&self, pos: (f64, f64)) -> bool {
        let eps = 1e-9;
        pos.0 >= -eps && pos.1 >= -eps && pos.0 <= self.region_mm.0 + eps && pos.1 <= self.region_mm.1 + eps
    }

    pub fn region_diagonal_mm(&self) -> f64 {
        self.region_mm.0.hypot(self.region_mm.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ObjectShape {
    Cube { side_mm: f64 },
    Cylinder { radius_mm: f64, height_mm: f64 },
    /// Equilateral triangle inscribed in `radius_mm`, extruded by `height_mm`.
    TriangularPrism { radius_mm: f64, height_mm: f64 },
}

impl ObjectShape {
    pub fn height_mm(&self) -> f64 {
        match *self {
            ObjectShape::Cube { side_mm } => side_mm,
            ObjectShape::Cylinder { height_mm, .. }
            | ObjectShape::TriangularPrism { height_mm, .. } => height_mm,
        }
    }

    /// Radius of a circle enclosing the footprint.
    pub fn bounding_radius_mm(&self) -> f64 {
        match *self {
            ObjectShape::Cube { side_mm } => side_mm * std::f64::consts::FRAC_1_SQRT_2,
            ObjectShape::Cylinder { radius_mm, .. }
            | ObjectShape::TriangularPrism { radius_mm, .. } => radius_mm,
        }
    }

    /// Whether the footprint contains the offset `(dx, dy)` from the centre.
    pub fn covers(&self, dx: f64, dy: f64) -> bool {
        match *self {
            ObjectShape::Cube { side_mm } => dx.abs() <= side_mm / 2.0 && dy.abs() <= side_mm / 2.0,
            ObjectShape::Cylinder { radius_mm, .. } => dx * dx + dy * dy <= radius_mm * radius_mm,
            ObjectShape::TriangularPrism { radius_mm, .. } => {
                // apex towards +y; each edge is at distance r/2 from the centre
                let half = radius_mm / 2.0;
                let (s, c) = (3f64.sqrt() / 2.0, 0.5);
                dy >= -half && (-s * dx + c * dy) <= half && (s * dx + c * dy) <= half
            }
        }
    }

    fn dims(&self) -> Vec<f64> {
        match *self {
            ObjectShape::Cube { side_mm } => vec![side_mm],
            ObjectShape::Cylinder {
                radius_mm,
                height_mm,
            }
            | ObjectShape::TriangularPrism {
                radius_mm,
                height_mm,
            } => vec![radius_mm, height_mm],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "texture", rename_all = "snake_case")]
pub enum Texture {
    Flat,
    Noise { seed: u64, scale_mm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: ObjectShape,
    pub color: [f64; 3],
    pub texture: Texture,
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.dims().iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "object `{}` has non-positive dimensions",
                self.name
            )));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(format!(
                "object `{}` color outside [0, 1]",
                self.name
            )));
        }
        if let Texture::Noise { scale_mm, .. } = self.texture {
            if !(scale_mm > 0.0) {
                return Err(Error::InvalidArgument("texture scale must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "background", rename_all = "snake_case")]
pub enum Background {
    White,
    Black,
    Checkered { cell_mm: f64, palette: Vec<[f64; 3]> },
}

impl Background {
    pub const WHITE_RGB: [f64; 3] = [0.92, 0.92, 0.9];
    pub const BLACK_RGB: [f64; 3] = [0.07, 0.07, 0.08];

    /// A colourful checkerboard.
    pub fn colorful_checker() -> Self {
        Background::Checkered {
            cell_mm: 30.0,
            palette: vec![
                [0.95, 0.85, 0.2],
                [0.2, 0.35, 0.8],
                [0.9, 0.9, 0.88],
                [0.3, 0.7, 0.35],
                [0.85, 0.3, 0.6],
            ],
        }
    }

    /// Colour at board coordinates.
    pub fn color_at(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Background::White => Self::WHITE_RGB,
            Background::Black => Self::BLACK_RGB,
            Background::Checkered { cell_mm, palette } => {
                if palette.is_empty() {
                    return Self::WHITE_RGB;
                }
                let i = (x / cell_mm).floor() as i64;
                let j = (y / cell_mm).floor() as i64;
                palette[(i + 2 * j).rem_euclid(palette.len() as i64) as usize]
            }
        }
    }
}

/// Scene illumination. `direction` points from the surface towards the
/// light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub ambient: f64,
    pub directional_intensity: f64,
    pub direction: [f64; 3],
    pub shadows: bool,
}

impl Lighting {
    /// Flat overhead light with unit shading and no shadows.
    pub fn nominal() -> Self {
        Self {
            ambient: 0.7,
            directional_intensity: 0.3,
            direction: [0.0, 0.0, 1.0],
            shadows: false,
        }
    }

    /// Ceiling light: mostly ambient with short shadows.
    pub fn room_light() -> Self {
        Self {
            ambient: 0.62,
            directional_intensity: 0.4,
            direction: normalize([0.2, -0.15, 1.0]),
            shadows: true,
        }
    }

    /// Low-angle desk lamp: darker, with long shadows.
    pub fn table_light() -> Self {
        Self {
            ambient: 0.4,
            directional_intensity: 0.6,
            direction: normalize([-0.7, 0.45, 0.8]),
            shadows: true,
        }
    }

    /// Shading factor of an upward-facing surface.
    pub fn shade(&self, in_shadow: bool) -> f64 {
        if in_shadow {
            self.ambient
        } else {
            self.ambient + self.directional_intensity * self.direction[2].max(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("light direction must be a unit vector".into()));
        }
        if self.ambient < 0.0 || self.directional_intensity < 0.0 {
            return Err(Error::InvalidArgument("light intensities must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Sensor-side degradations of the real-proxy domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub noise_std: f64,
    pub brightness_jitter: f64,
    pub blur_radius: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum Domain {
    Canonical,
    RealProxy(Perturbation),
}

/// Complete description of one renderable scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// `None` renders the bare board.
    pub target: Option<ObjectSpec>,
    pub target_position_mm: (f64, f64),
    pub distractors: Vec<(ObjectSpec, (f64, f64))>,
    pub background: Background,
    pub lighting: Lighting,
    pub domain: Domain,
}

impl SceneSpec {
    /// Canonical scene with only the target on a white board.
    pub fn canonical(target: ObjectSpec, position: (f64, f64)) -> Self {
        Self {
            target: Some(target),
            target_position_mm: position,
            distractors: Vec::new(),
            background: Background::White,
            lighting: Lighting::nominal(),
            domain: Domain::Canonical,
        }
    }

    /// Board with nothing on it.
    pub fn empty(background: Background) -> Self {
        Self {
            target: None,
            target_position_mm: (0.0, 0.0),
            distractors: Vec::new(),
            background,
            lighting: Lighting::nominal(),
            domain: Domain::Canonical,
        }
    }

    pub fn validate(&self, ws: &Workspace) -> Result<()> {
        if let Some(t) = &self.target {
            t.validate()?;
        }
        if !ws.contains(self.target_position_mm) {
            return Err(Error::InvalidArgument(format!(
                "target position {:?} outside the {:?} mm placement region",
                self.target_position_mm, ws.region_mm
            )));
        }
        self.lighting.validate()?;
        if self.domain == Domain::Canonical && self.lighting != Lighting::nominal() {
            return Err(Error::InvalidArgument(
                "canonical scenes use nominal lighting".into(),
            ));
        }
        let (tx, ty) = self.target_position_mm;
        for (i, (obj, (x, y))) in self.distractors.iter().enumerate() {
            obj.validate()?;
            // overlap check on a fine grid over the distractor footprint
            let r = obj.shape.bounding_radius_mm();
            let steps = 24;
            for a in 0..=steps {
                for b in 0..=steps {
                    let dx = -r + 2.0 * r * a as f64 / steps as f64;
                    let dy = -r + 2.0 * r * b as f64 / steps as f64;
                    let hits_target = self
                        .target
                        .as_ref()
                        .is_some_and(|t| t.shape.covers(x + dx - tx, y + dy - ty));
                    if obj.shape.covers(dx, dy) && hits_target
                    {
                        return Err(Error::Placement {
                            index: i,
                            x: *x,
                            y: *y,
                        });
                    }
                }
            }
        }
        if let Domain::RealProxy(p) = self.domain {
            if p.noise_std < 0.0 || p.brightness_jitter < 0.0 || p.blur_radius < 0.0 {
                return Err(Error::InvalidArgument("perturbation magnitudes must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Rendered 4-channel image stored planar as `[R, G, B, D]`, each plane
/// row-major `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBD {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    /// Millimetres spanned by the normalized depth range; depth 1.0 is the
    /// board surface and 0.0 is `depth_scale_mm` above it.
    pub depth_scale_mm: f64,
}

impl ImageRGBD {
    pub const CHANNELS: usize = 4;

    pub fn new(width: usize, height: usize, data: Vec<f32>, depth_scale_mm: f64) -> Result<Self> {
        if data.len() != Self::CHANNELS * width * height {
            return Err(Error::shape(
                "ImageRGBD",
                &[Self::CHANNELS, height, width],
                &[data.len()],
            ));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("image values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            data,
            depth_scale_mm,
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> [usize; 3] {
        [Self::CHANNELS, self.height, self.width]
    }

    /// Height above the board in millimetres at a pixel.
    pub fn height_mm_at(&self, x: usize, y: usize) -> f64 {
        (1.0 - self.at(3, x, y) as f64) * self.depth_scale_mm
    }
}

/// Regular lattice of positions over a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region_mm: (f64, f64),
    pub spacing_mm: f64,
    #[serde(default)]
    pub offset_mm: (f64, f64),
}

impl GridSpec {
    pub fn new(region_mm: (f64, f64), spacing_mm: f64) -> Self {
        Self {
            region_mm,
            spacing_mm,
            offset_mm: (0.0, 0.0),
        }
    }

    pub fn with_offset(mut self, offset_mm: (f64, f64)) -> Self {
        self.offset_mm = offset_mm;
        self
    }

    /// Row-major positions (y outer, x inner), both boundary rows included.
    pub fn positions(&self) -> Result<Vec<(f64, f64)>> {
        let s = self.spacing_mm;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive, got {s}"
            )));
        }
        let axis = |extent: f64, off: f64| -> usize {
            if extent < off {
                0
            } else {
                ((extent - off) / s + 1e-9).floor() as usize + 1
            }
        };
        let nx = axis(self.region_mm.0, self.offset_mm.0);
        let ny = axis(self.region_mm.1, self.offset_mm.1);
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push((
                    self.offset_mm.0 + i as f64 * s,
                    self.offset_mm.1 + j as f64 * s,
                ));
            }
        }
        Ok(out)
    }
}

/// Lattice over `region_mm` with `spacing_mm`, including both boundaries.
pub fn grid_positions(region_mm: (f64, f64), spacing_mm: f64) -> Result<Vec<(f64, f64)>> {
    GridSpec::new(region_mm, spacing_mm).positions()
}
