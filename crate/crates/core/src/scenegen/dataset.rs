use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    render_with, Background, Domain, GridSpec, ImageRGBD, Lighting, ObjectSpec, Perturbation,
    SceneSpec, Workspace,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Canonical,
    RealProxy,
}

/// Domain of a whole dataset; per-image perturbation seeds are derived from
/// the dataset seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum DomainPolicy {
    Canonical,
    RealProxy {
        noise_std: f64,
        brightness_jitter: f64,
        blur_radius: f64,
    },
}

impl DomainPolicy {
    /// Default sensor model for the real-proxy camera.
    pub fn real_proxy() -> Self {
        DomainPolicy::RealProxy {
            noise_std: 0.05,
            brightness_jitter: 0.15,
            blur_radius: 0.6,
        }
    }

    pub fn tag(&self) -> DomainTag {
        match self {
            DomainPolicy::Canonical => DomainTag::Canonical,
            DomainPolicy::RealProxy { .. } => DomainTag::RealProxy,
        }
    }

    fn instantiate(&self, seed: u64) -> Domain {
        match *self {
            DomainPolicy::Canonical => Domain::Canonical,
            DomainPolicy::RealProxy {
                noise_std,
                brightness_jitter,
                blur_radius,
            } => Domain::RealProxy(Perturbation {
                noise_std,
                brightness_jitter,
                blur_radius,
                seed,
            }),
        }
    }
}

/// Per-dataset scene options: what surrounds the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePolicy {
    pub background: Background,
    pub lighting: Lighting,
    /// Objects placed at random non-overlapping positions in every image.
    pub distractors: Vec<ObjectSpec>,
}

impl ScenePolicy {
    /// White board, nominal light, no distractors.
    pub fn clean() -> Self {
        Self {
            background: Background::White,
            lighting: Lighting::nominal(),
            distractors: Vec::new(),
        }
    }

    /// White board under the room light.
    pub fn room() -> Self {
        Self {
            lighting: Lighting::room_light(),
            ..Self::clean()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub seed: u64,
    pub label: [f32; 2],
    pub distractors: Vec<(String, [f64; 2])>,
}

/// Provenance of a dataset: everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub domain: DomainPolicy,
    pub target: ObjectSpec,
    pub grid: GridSpec,
    pub scene: ScenePolicy,
    pub seed: u64,
    pub resolution: (usize, usize),
    pub workspace: Workspace,
    pub items: Vec<ItemRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<ImageRGBD>,
    /// Target position in placement-region millimetres.
    pub labels: Vec<[f32; 2]>,
    pub domain_tag: DomainTag,
    pub manifest: Manifest,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.manifest.resolution
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        let (w, h) = self.manifest.resolution;
        if let Some(bad) = self.images.iter().position(|i| i.width != w || i.height != h) {
            return Err(Error::InvalidArgument(format!(
                "image {bad} does not match the {w}x{h} dataset resolution"
            )));
        }
        Ok(())
    }

    /// Keeps only the listed indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut manifest = self.manifest.clone();
        manifest.items = indices.iter().map(|&i| self.manifest.items[i].clone()).collect();
        LabeledDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain_tag: self.domain_tag,
            manifest,
        }
    }
}

/// Mixes a dataset seed with an item index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PLACEMENT_TRIES: usize = 500;
const PLACEMENT_MARGIN_MM: f64 = 5.0;

pub(crate) fn place_distractors(
    target: &ObjectSpec,
    target_pos: (f64, f64),
    distractors: &[ObjectSpec],
    ws: &Workspace,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(ObjectSpec, (f64, f64))>> {
    let mut placed: Vec<(ObjectSpec, (f64, f64))> = Vec::with_capacity(distractors.len());
    let mut occupied = vec![(target_pos, target.shape.bounding_radius_mm())];
    for (index, obj) in distractors.iter().enumerate() {
        let r = obj.shape.bounding_radius_mm();
        let spot = (0..PLACEMENT_TRIES).find_map(|_| {
            let p = (
                rng.random_range(0.0..=ws.region_mm.0),
                rng.random_range(0.0..=ws.region_mm.1),
            );
            let free = occupied.iter().all(|&(q, rq)| {
                (p.0 - q.0).hypot(p.1 - q.1) >= r + rq + PLACEMENT_MARGIN_MM
            });
            free.then_some(p)
        });
        let Some(p) = spot else {
            return Err(Error::Placement {
                index,
                x: target_pos.0,
                y: target_pos.1,
            });
        };
        occupied.push((p, r));
        placed.push((obj.clone(), p));
    }
    Ok(placed)
}

/// Renders one labelled image per grid position.
pub fn generate_dataset(
    object: &ObjectSpec,
    grid: &GridSpec,
    domain: DomainPolicy,
    scene: &ScenePolicy,
    resolution: (usize, usize),
    seed: u64,
) -> Result<LabeledDataset> {
    generate_dataset_with(object, grid, domain, scene, resolution, seed, &Workspace::default())
}

/// Renders item `index` of a dataset with the given seed: the target at
/// `pos`, distractors placed from the item seed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn render_item(
    object: &ObjectSpec,
    pos: (f64, f64),
    index: usize,
    domain: DomainPolicy,
    scene: &ScenePolicy,
    resolution: (usize, usize),
    seed: u64,
    ws: &Workspace,
) -> Result<(ImageRGBD, ItemRecord)> {
    let item_seed = derive_seed(seed, 0, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
    let distractors = place_distractors(object, pos, &scene.distractors, ws, &mut rng)?;
    let spec = SceneSpec {
        target: Some(object.clone()),
        target_position_mm: pos,
        distractors,
        background: scene.background.clone(),
        lighting: match domain {
            DomainPolicy::Canonical => Lighting::nominal(),
            DomainPolicy::RealProxy { .. } => scene.lighting,
        },
        domain: domain.instantiate(derive_seed(item_seed, 1, 0)),
    };
    let image = render_with(&spec, resolution, ws)?;
    let item = ItemRecord {
        seed: item_seed,
        label: [pos.0 as f32, pos.1 as f32],
        distractors: spec
            .distractors
            .iter()
            .map(|(o, p)| (o.name.clone(), [p.0, p.1]))
            .collect(),
    };
    Ok((image, item))
}

pub fn generate_dataset_with(
    object: &ObjectSpec,
    grid: &GridSpec,
    domain: DomainPolicy,
    scene: &ScenePolicy,
    resolution: (usize, usize),
    seed: u64,
    ws: &Workspace,
) -> Result<LabeledDataset> {
    object.validate()?;
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let positions = grid.positions()?;
    let mut images = Vec::with_capacity(positions.len());
    let mut labels = Vec::with_capacity(positions.len());
    let mut items = Vec::with_capacity(positions.len());
    for (i, &pos) in positions.iter().enumerate() {
        let (image, item) = render_item(object, pos, i, domain, scene, resolution, seed, ws)?;
        images.push(image);
        labels.push(item.label);
        items.push(item);
    }
    Ok(LabeledDataset {
        images,
        labels,
        domain_tag: domain.tag(),
        manifest: Manifest {
            domain,
            target: object.clone(),
            grid: *grid,
            scene: scene.clone(),
            seed,
            resolution,
            workspace: *ws,
            items,
        },
    })
}

/// Index-aligned real-proxy and canonical datasets of the same positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub real: LabeledDataset,
    pub canonical: LabeledDataset,
}

impl PairedDataset {
    /// Checks that pair `i` shares its label on both sides for every `i`.
    pub fn new(real: LabeledDataset, canonical: LabeledDataset) -> Result<Self> {
        if real.len() != canonical.len() {
            return Err(Error::PairMismatch(format!(
                "{} real images vs {} canonical images",
                real.len(),
                canonical.len()
            )));
        }
        if canonical.domain_tag != DomainTag::Canonical {
            return Err(Error::PairMismatch("target side must be canonical".into()));
        }
        if real.resolution() != canonical.resolution() {
            return Err(Error::PairMismatch("resolutions differ".into()));
        }
        if let Some(i) = (0..real.len()).find(|&i| real.labels[i] != canonical.labels[i]) {
            return Err(Error::PairMismatch(format!(
                "pair {i} labels differ: {:?} vs {:?}",
                real.labels[i], canonical.labels[i]
            )));
        }
        Ok(Self { real, canonical })
    }

    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }
}

/// Builds aligned pairs over one grid: the real side renders `target_real`
/// under `real_domain`/`real_scene`; the canonical side renders the proxy
/// alone on a clean white board.
pub fn paired_dataset(
    target_real: &ObjectSpec,
    target_synth_proxy: &ObjectSpec,
    grid: &GridSpec,
    real_domain: DomainPolicy,
    real_scene: &ScenePolicy,
    resolution: (usize, usize),
    seed: u64,
) -> Result<PairedDataset> {
    paired_dataset_with(
        target_real,
        target_synth_proxy,
        grid,
        real_domain,
        real_scene,
        resolution,
        seed,
        &Workspace::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn paired_dataset_with(
    target_real: &ObjectSpec,
    target_synth_proxy: &ObjectSpec,
    grid: &GridSpec,
    real_domain: DomainPolicy,
    real_scene: &ScenePolicy,
    resolution: (usize, usize),
    seed: u64,
    ws: &Workspace,
) -> Result<PairedDataset> {
    let real = generate_dataset_with(
        target_real,
        grid,
        real_domain,
        real_scene,
        resolution,
        derive_seed(seed, 2, 0),
        ws,
    )?;
    let canonical = generate_dataset_with(
        target_synth_proxy,
        grid,
        DomainPolicy::Canonical,
        &ScenePolicy::clean(),
        resolution,
        derive_seed(seed, 3, 0),
        ws,
    )?;
    PairedDataset::new(real, canonical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::lookup;

    #[test]
    fn distractor_poses_recorded() {
        let grid = GridSpec::new((400.0, 250.0), 200.0);
        let scene = ScenePolicy {
            distractors: vec![lookup("household-box").unwrap(), lookup("household-can").unwrap()],
            ..ScenePolicy::room()
        };
        let ds = generate_dataset(
            &lookup("household-target").unwrap(),
            &grid,
            DomainPolicy::real_proxy(),
            &scene,
            (16, 16),
            4,
        )
        .unwrap();
        assert_eq!(ds.len(), 6);
        for (item, label) in ds.manifest.items.iter().zip(&ds.labels) {
            assert_eq!(item.distractors.len(), 2);
            assert_eq!(&item.label, label);
        }
    }

    #[test]
    fn impossible_placement_is_rejected() {
        let big = ObjectSpec {
            name: "slab".into(),
            shape: crate::scenegen::ObjectShape::Cube { side_mm: 320.0 },
            color: [0.5, 0.5, 0.5],
            texture: crate::scenegen::Texture::Flat,
        };
        let scene = ScenePolicy {
            distractors: vec![big],
            ..ScenePolicy::clean()
        };
        let centre = GridSpec::new((400.0, 250.0), 1000.0).with_offset((200.0, 125.0));
        let err = generate_dataset(
            &lookup("red-cube").unwrap(),
            &centre,
            DomainPolicy::Canonical,
            &scene,
            (8, 8),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Placement { index: 0, .. }), "{err}");
    }

    #[test]
    fn pairing_checks_labels() {
        let grid = GridSpec::new((400.0, 250.0), 200.0);
        let cube = lookup("green-cube").unwrap();
        let a = generate_dataset(&cube, &grid, DomainPolicy::Canonical, &ScenePolicy::clean(), (8, 8), 0).unwrap();
        let b = generate_dataset(
            &cube,
            &GridSpec::new((400.0, 250.0), 100.0),
            DomainPolicy::Canonical,
            &ScenePolicy::clean(),
            (8, 8),
            0,
        )
        .unwrap();
        assert!(matches!(PairedDataset::new(a.clone(), b), Err(Error::PairMismatch(_))));
        let mut shifted = a.clone();
        shifted.labels[2][0] += 1.0;
        assert!(PairedDataset::new(shifted, a.clone()).is_err());
        assert!(PairedDataset::new(a.clone(), a).is_ok());
    }

    #[test]
    fn derived_seeds_differ_by_index() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(7, 0, i)).collect();
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), s.len());
    }
}
