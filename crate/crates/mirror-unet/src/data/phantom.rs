//! Seeded synthetic phantoms for desk-scale experiments.
//!
//! The PET/CT phantom builds in the organ-versus-lesion confound that makes
//! multimodal context matter: organ spheres are always PET-hot but are *not*
//! labeled, and they are the only structures with strong CT contrast, while
//! lesions are PET-hot, CT-faint, and labeled. A PET-only model sees nearly
//! identical uptake distributions for both; the CT channel disambiguates.

use super::{MultimodalSample, Volume};
use crate::error::{Error, Result};
use crate::rng::Rng;

const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub shape: (usize, usize, usize),
    pub spacing: (f32, f32, f32),
    pub organ_count: usize,
    pub lesion_count: usize,
    /// Lesion radius range in millimeters.
    pub lesion_radius_mm: (f32, f32),
    /// PET uptake of organ spheres on the [0,1] scale; must be >= 0.6.
    pub organ_uptake: f32,
    /// PET uptake of lesion spheres on the [0,1] scale; must be >= 0.6.
    pub lesion_uptake: f32,
    /// Magnitude of the (faint) CT intensity change inside lesions; <= 0.1.
    pub ct_lesion_contrast: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            shape: (64, 64, 64),
            spacing: (2.0, 2.0, 3.0),
            organ_count: 3,
            lesion_count: 2,
            lesion_radius_mm: (5.0, 10.0),
            organ_uptake: 0.8,
            lesion_uptake: 0.8,
            ct_lesion_contrast: 0.05,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.organ_uptake < 0.6 || self.lesion_uptake < 0.6 {
            return Err(Error::InvalidConfig(format!(
                "organ/lesion uptake must be >= 0.6 on the [0,1] PET scale, got {} / {}",
                self.organ_uptake, self.lesion_uptake
            )));
        }
        if self.ct_lesion_contrast > 0.1 || self.ct_lesion_contrast < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ct_lesion_contrast must be in [0, 0.1], got {}",
                self.ct_lesion_contrast
            )));
        }
        if self.lesion_radius_mm.0 <= 0.0 || self.lesion_radius_mm.1 < self.lesion_radius_mm.0 {
            return Err(Error::InvalidConfig(format!(
                "bad lesion radius range {:?}",
                self.lesion_radius_mm
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Sphere {
    center: [f32; 3],
    radius: f32,
    value: f32,
}

struct Body {
    center: [f32; 3],
    semi: [f32; 3],
}

impl Body {
    /// < 1 inside the ellipsoid.
    fn eval(&self, p: [f32; 3]) -> f32 {
        let mut acc = 0.0;
        for i in 0..3 {
            let d = (p[i] - self.center[i]) / self.semi[i];
            acc += d * d;
        }
        acc
    }
}

fn dist(a: [f32; 3], b: [f32; 3]) -> f32 {
    let mut acc = 0.0;
    for i in 0..3 {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc.sqrt()
}

struct GaussBlob {
    center: [f32; 3],
    amp: f32,
    sigma: f32,
}

fn voxel_center(spec_spacing: (f32, f32, f32), x: usize, y: usize, z: usize) -> [f32; 3] {
    [
        (x as f32 + 0.5) * spec_spacing.0,
        (y as f32 + 0.5) * spec_spacing.1,
        (z as f32 + 0.5) * spec_spacing.2,
    ]
}

fn place_inside(
    body: &Body,
    rng: &mut Rng,
    max_eval: f32,
    reject: impl Fn([f32; 3]) -> bool,
) -> Option<[f32; 3]> {
    for _ in 0..PLACEMENT_ATTEMPTS {
        let p = [
            body.center[0] + (rng.uniform() as f32 * 2.0 - 1.0) * body.semi[0],
            body.center[1] + (rng.uniform() as f32 * 2.0 - 1.0) * body.semi[1],
            body.center[2] + (rng.uniform() as f32 * 2.0 - 1.0) * body.semi[2],
        ];
        if body.eval(p) <= max_eval && !reject(p) {
            return Some(p);
        }
    }
    None
}

struct PhantomFields {
    /// CT without the lesion deltas; exposed for contrast checks in tests.
    #[allow(dead_code)]
    ct_base: Volume,
    ct: Volume,
    pet: Volume,
    mask: Volume,
}

fn build_fields(spec: &PhantomSpec) -> Result<PhantomFields> {
    spec.validate()?;
    let (nx, ny, nz) = spec.shape;
    let sp = spec.spacing;
    let extent = [nx as f32 * sp.0, ny as f32 * sp.1, nz as f32 * sp.2];
    let body = Body {
        center: [extent[0] * 0.5, extent[1] * 0.5, extent[2] * 0.5],
        semi: [extent[0] * 0.42, extent[1] * 0.42, extent[2] * 0.45],
    };

    let root = Rng::new(spec.seed);
    let mut tex_rng = root.fork(1);
    let mut organ_rng = root.fork(2);
    let mut lesion_rng = root.fork(3);
    let mut noise_rng = root.fork(4);

    // Low-frequency CT texture.
    let blobs: Vec<GaussBlob> = (0..4)
        .map(|_| GaussBlob {
            center: [
                tex_rng.uniform_in(0.2, 0.8) as f32 * extent[0],
                tex_rng.uniform_in(0.2, 0.8) as f32 * extent[1],
                tex_rng.uniform_in(0.2, 0.8) as f32 * extent[2],
            ],
            amp: tex_rng.uniform_in(-0.08, 0.08) as f32,
            sigma: tex_rng.uniform_in(12.0, 25.0) as f32,
        })
        .collect();

    // Organs: CT-bright, PET-hot. Their radii are drawn from the lesion
    // range so size never separates the classes; in PET they differ from
    // lesions only through spatial pattern (a radial dimming profile and a
    // soft shoulder versus the lesions' uniform fill and sharp rim).
    let mut organs = Vec::with_capacity(spec.organ_count);
    for _ in 0..spec.organ_count {
        let radius = organ_rng.uniform_in(
            spec.lesion_radius_mm.0 as f64,
            spec.lesion_radius_mm.1 as f64,
        ) as f32;
        let value = spec.organ_uptake * organ_rng.uniform_in(0.9, 1.1) as f32;
        if let Some(center) = place_inside(&body, &mut organ_rng, 0.55, |_| false) {
            organs.push(Sphere {
                center,
                radius,
                value,
            });
        }
        // An unplaceable organ is silently dropped; the body is large
        // relative to organ radii, so this effectively never triggers.
    }

    // Lesions: PET-hot, CT-faint, kept clear of organs so the confound is clean.
    let mut lesions = Vec::with_capacity(spec.lesion_count);
    let mut lesion_signs = Vec::with_capacity(spec.lesion_count);
    for _ in 0..spec.lesion_count {
        let radius = lesion_rng.uniform_in(
            spec.lesion_radius_mm.0 as f64,
            spec.lesion_radius_mm.1 as f64,
        ) as f32;
        let value = spec.lesion_uptake * lesion_rng.uniform_in(0.9, 1.1) as f32;
        let reject = |p: [f32; 3]| {
            organs
                .iter()
                .any(|o| dist(p, o.center) < o.radius + radius + 2.0)
        };
        let center = place_inside(&body, &mut lesion_rng, 0.6, reject)
            .ok_or(Error::LesionPlacement(PLACEMENT_ATTEMPTS))?;
        lesions.push(Sphere {
            center,
            radius,
            value,
        });
        lesion_signs.push(if lesion_rng.bernoulli(0.5) { 1.0f32 } else { -1.0 });
    }

    let mut ct_base = Volume::new(spec.shape, sp)?;
    let mut ct = Volume::new(spec.shape, sp)?;
    let mut pet = Volume::new(spec.shape, sp)?;
    let mut mask = Volume::new(spec.shape, sp)?;

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = voxel_center(sp, x, y, z);
                let idx = (z * ny + y) * nx + x;
                let inside = body.eval(p) <= 1.0;

                // --- CT ---
                let mut ct_v = if inside {
                    let mut v = 0.45;
                    for b in &blobs {
                        let d = dist(p, b.center) / b.sigma;
                        v += b.amp * (-d * d).exp();
                    }
                    for o in &organs {
                        if dist(p, o.center) <= o.radius {
                            v = 0.75;
                            break;
                        }
                    }
                    v + 0.01 * noise_rng.normal() as f32
                } else {
                    0.02
                };
                ct_v = ct_v.clamp(0.0, 1.0);
                ct_base.data_mut()[idx] = ct_v;

                let mut lesion_delta = 0.0f32;
                for (l, sign) in lesions.iter().zip(&lesion_signs) {
                    if dist(p, l.center) <= l.radius {
                        lesion_delta = sign * spec.ct_lesion_contrast;
                        break;
                    }
                }
                ct.data_mut()[idx] = (ct_v + lesion_delta).clamp(0.0, 1.0);

                // --- PET ---
                let bg = if inside {
                    (0.05 + 0.02 * noise_rng.normal() as f32).clamp(0.0, 1.0)
                } else {
                    0.01
                };
                let mut pet_v = bg;
                for o in &organs {
                    // Radial dimming toward the rim plus a soft shoulder.
                    let d = dist(p, o.center) / o.radius;
                    let profile = 1.0 - 0.25 * (d * d).min(1.0);
                    let f = (-d.powi(8)).exp();
                    pet_v = pet_v.max(o.value * profile * f);
                }
                let mut labeled = false;
                for l in &lesions {
                    let d = dist(p, l.center);
                    if d <= l.radius {
                        pet_v = pet_v.max(l.value);
                        labeled = true;
                    } else {
                        // Sharp skirt just outside the lesion boundary.
                        let t = (d - l.radius) / 0.8;
                        pet_v = pet_v.max(l.value * (-t * t).exp());
                    }
                }
                pet.data_mut()[idx] = pet_v.clamp(0.0, 1.0);
                if labeled {
                    mask.data_mut()[idx] = 1.0;
                }
            }
        }
    }

    Ok(PhantomFields {
        ct_base,
        ct,
        pet,
        mask,
    })
}

/// Generates a PET/CT phantom with lesions marked in the mask and hot organs
/// left unlabeled. Deterministic in `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<MultimodalSample> {
    let fields = build_fields(spec)?;
    MultimodalSample::new(fields.ct, fields.pet, fields.mask)
}

/// Draws per-sample phantom specs with roughly half the cases healthy, then
/// generates the dataset. Lesion-bearing cases carry 1..=3 lesions.
pub fn phantom_dataset(
    count: usize,
    base: &PhantomSpec,
    healthy_fraction: f64,
    seed: u64,
) -> Result<Vec<MultimodalSample>> {
    let specs = phantom_dataset_specs(count, base, healthy_fraction, seed);
    specs.iter().map(generate_phantom).collect()
}

/// The spec-drawing half of [`phantom_dataset`], usable on its own for
/// class-balance checks.
pub fn phantom_dataset_specs(
    count: usize,
    base: &PhantomSpec,
    healthy_fraction: f64,
    seed: u64,
) -> Vec<PhantomSpec> {
    let mut rng = Rng::new(seed).fork(0xDA7A);
    (0..count)
        .map(|i| {
            let healthy = rng.bernoulli(healthy_fraction);
            let lesion_count = if healthy { 0 } else { 1 + rng.below(3) };
            PhantomSpec {
                lesion_count,
                seed: rng.next_u64() ^ (i as u64),
                ..base.clone()
            }
        })
        .collect()
}

/// Synthetic brain sample: a core sphere nested in an edema shell inside a
/// brain ellipsoid. FLAIR highlights the edema, T1Gd highlights the core.
/// The label map uses 0 = background, 1 = edema, 2 = core.
pub fn brain_phantom(
    shape: (usize, usize, usize),
    spacing: (f32, f32, f32),
    seed: u64,
) -> Result<MultimodalSample> {
    let (nx, ny, nz) = shape;
    let extent = [
        nx as f32 * spacing.0,
        ny as f32 * spacing.1,
        nz as f32 * spacing.2,
    ];
    let brain = Body {
        center: [extent[0] * 0.5, extent[1] * 0.5, extent[2] * 0.5],
        semi: [extent[0] * 0.42, extent[1] * 0.42, extent[2] * 0.44],
    };
    let root = Rng::new(seed);
    let mut rng = root.fork(11);
    let mut noise = root.fork(12);

    let r_core = rng.uniform_in(4.0, 7.0) as f32;
    let r_edema = r_core + rng.uniform_in(4.0, 8.0) as f32;
    let center = place_inside(&brain, &mut rng, 0.45, |_| false)
        .ok_or(Error::LesionPlacement(PLACEMENT_ATTEMPTS))?;

    let mut flair = Volume::new(shape, spacing)?;
    let mut t1gd = Volume::new(shape, spacing)?;
    let mut labels = Volume::new(shape, spacing)?;

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = voxel_center(spacing, x, y, z);
                let idx = (z * ny + y) * nx + x;
                if brain.eval(p) > 1.0 {
                    continue; // skull-stripped background stays zero
                }
                let d = dist(p, center);
                let (label, flair_add, t1gd_add) = if d <= r_core {
                    (2.0, 0.15, 0.40)
                } else if d <= r_edema {
                    (1.0, 0.35, 0.05)
                } else {
                    (0.0, 0.0, 0.0)
                };
                labels.data_mut()[idx] = label;
                flair.data_mut()[idx] =
                    (0.35 + flair_add + 0.02 * noise.normal() as f32).clamp(0.05, 1.0);
                t1gd.data_mut()[idx] =
                    (0.35 + t1gd_add + 0.02 * noise.normal() as f32).clamp(0.05, 1.0);
            }
        }
    }
    MultimodalSample::new(flair, t1gd, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_spec_yields_empty_mask_and_zero_label() {
        let spec = PhantomSpec {
            lesion_count: 0,
            shape: (24, 24, 24),
            ..PhantomSpec::default()
        };
        let s = generate_phantom(&spec).unwrap();
        assert_eq!(s.c, 0);
        assert!(s.y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = PhantomSpec {
            shape: (20, 20, 20),
            seed: 77,
            organ_count: 2,
            lesion_radius_mm: (3.0, 4.0),
            ..PhantomSpec::default()
        };
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.x_a.data(), b.x_a.data());
        assert_eq!(a.x_b.data(), b.x_b.data());
        assert_eq!(a.y.data(), b.y.data());
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn lesions_are_pet_salient_and_ct_faint() {
        for seed in 0..5 {
            let spec = PhantomSpec {
                shape: (32, 32, 32),
                seed,
                ..PhantomSpec::default()
            };
            let fields = build_fields(&spec).unwrap();
            let mut lesion_voxels = 0;
            for i in 0..fields.mask.numel() {
                if fields.mask.data()[i] > 0.5 {
                    lesion_voxels += 1;
                    assert!(
                        fields.pet.data()[i] >= spec.organ_uptake * 0.9 - 1e-6,
                        "lesion voxel PET {} below 0.9 * organ uptake",
                        fields.pet.data()[i]
                    );
                    let delta = (fields.ct.data()[i] - fields.ct_base.data()[i]).abs();
                    assert!(
                        delta <= spec.ct_lesion_contrast + 1e-6,
                        "lesion CT contrast {delta} exceeds {}",
                        spec.ct_lesion_contrast
                    );
                }
            }
            assert!(lesion_voxels > 0, "seed {seed} produced no lesion voxels");
        }
    }

    #[test]
    fn label_consistency_c_iff_foreground() {
        let mut n_pos = 0;
        for spec in phantom_dataset_specs(
            40,
            &PhantomSpec {
                shape: (32, 32, 32),
                organ_count: 2,
                lesion_radius_mm: (3.0, 5.0),
                ..PhantomSpec::default()
            },
            0.5,
            9,
        ) {
            let s = generate_phantom(&spec).unwrap();
            assert_eq!(s.c == 1, s.y.any_foreground());
            n_pos += s.c as usize;
        }
        assert!(n_pos > 5 && n_pos < 35);
    }

    #[test]
    fn spec_class_balance_near_half() {
        let specs = phantom_dataset_specs(1000, &PhantomSpec::default(), 0.5, 123);
        let healthy = specs.iter().filter(|s| s.lesion_count == 0).count();
        let frac = healthy as f64 / 1000.0;
        assert!((frac - 0.5).abs() < 0.05, "healthy fraction {frac}");
    }

    #[test]
    fn brain_phantom_is_nested_and_labeled() {
        let s = brain_phantom((24, 24, 24), (2.0, 2.0, 2.0), 5).unwrap();
        let mut seen = [false; 3];
        for &v in s.y.data() {
            assert!(v == 0.0 || v == 1.0 || v == 2.0);
            seen[v as usize] = true;
        }
        assert!(seen[1] && seen[2], "expected both edema and core voxels");
        assert_eq!(s.c, 1);
    }

    #[test]
    fn uptake_below_limit_is_rejected() {
        let spec = PhantomSpec {
            organ_uptake: 0.5,
            ..PhantomSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
