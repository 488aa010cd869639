use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_mse;
use crate::error::Result;
use crate::models::{batch_tensor, tensor_images, VaeNet};
use crate::scenegen::{
    derive_seed, place_distractors, render_with, Background, Domain, DomainPolicy, ImageRGBD,
    Lighting, ObjectSpec, Perturbation, SceneSpec, Workspace,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectivityResult {
    pub mse_to_target_only: f64,
    pub mse_to_cluttered_canonical: f64,
}

impl SelectivityResult {
    /// The VAE2 output resembles the target alone more than the full scene.
    pub fn holds(&self) -> bool {
        self.mse_to_target_only < self.mse_to_cluttered_canonical
    }
}

/// Compares the VAE2 output for a cluttered real-proxy image against the
/// canonical render of the target alone and of the whole scene.
pub fn selectivity_check(
    vae2: &VaeNet,
    cluttered: &ImageRGBD,
    target_only_canonical: &ImageRGBD,
    cluttered_canonical: &ImageRGBD,
) -> Result<SelectivityResult> {
    let x = batch_tensor(&[cluttered])?;
    let out = tensor_images(&vae2.reconstruct(&x)?, cluttered.depth_scale_mm)?.remove(0);
    Ok(SelectivityResult {
        mse_to_target_only: image_mse(&out, target_only_canonical)?,
        mse_to_cluttered_canonical: image_mse(&out, cluttered_canonical)?,
    })
}

/// A randomized set of cluttered scenes: the target at a uniform random
/// position with every distractor placed around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivitySuite {
    pub target: ObjectSpec,
    pub proxy: ObjectSpec,
    pub distractors: Vec<ObjectSpec>,
    pub background: Background,
    pub lighting: Lighting,
    pub domain: DomainPolicy,
    pub scenes: usize,
    pub seed: u64,
}

/// Runs every scene of `suite`; returns one result per scene.
pub fn selectivity_suite(
    suite: &SelectivitySuite,
    vae2: &VaeNet,
    resolution: (usize, usize),
    ws: &Workspace,
) -> Result<Vec<SelectivityResult>> {
    (0..suite.scenes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(suite.seed, 0, i as u64));
            let pos = (
                rng.random_range(0.0..=ws.region_mm.0),
                rng.random_range(0.0..=ws.region_mm.1),
            );
            let distractors = place_distractors(&suite.target, pos, &suite.distractors, ws, &mut rng)?;
            let domain = match suite.domain {
                DomainPolicy::Canonical => Domain::Canonical,
                DomainPolicy::RealProxy {
                    noise_std,
                    brightness_jitter,
                    blur_radius,
                } => Domain::RealProxy(Perturbation {
                    noise_std,
                    brightness_jitter,
                    blur_radius,
                    seed: derive_seed(suite.seed, 1, i as u64),
                }),
            };
            let cluttered = SceneSpec {
                target: Some(suite.target.clone()),
                target_position_mm: pos,
                distractors: distractors.clone(),
                background: suite.background.clone(),
                lighting: suite.lighting,
                domain,
            };
            let alone = SceneSpec::canonical(suite.proxy.clone(), pos);
            let canonical_clutter = SceneSpec {
                distractors,
                ..SceneSpec::canonical(suite.proxy.clone(), pos)
            };
            selectivity_check(
                vae2,
                &render_with(&cluttered, resolution, ws)?,
                &render_with(&alone, resolution, ws)?,
                &render_with(&canonical_clutter, resolution, ws)?,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::VaeArch;
    use crate::scenegen::lookup;

    #[test]
    fn without_distractors_both_distances_match() {
        let vae = VaeNet::new(VaeArch::new((16, 16), 4), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let suite = SelectivitySuite {
            target: lookup("green-cube").unwrap(),
            proxy: lookup("green-cube").unwrap(),
            distractors: Vec::new(),
            background: Background::White,
            lighting: Lighting::room_light(),
            domain: DomainPolicy::real_proxy(),
            scenes: 3,
            seed: 1,
        };
        for r in selectivity_suite(&suite, &vae, (16, 16), &Workspace::default()).unwrap() {
            assert_eq!(r.mse_to_target_only, r.mse_to_cluttered_canonical);
            assert!(!r.holds());
        }
    }
}
