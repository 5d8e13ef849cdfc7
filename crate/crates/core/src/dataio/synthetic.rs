//! Procedural aerial/panorama/segmentation triples.
//!
//! Each scene is a small top-down layout (a road through the center, a few
//! circular buildings, grass and field regions). The aerial image is the
//! layout seen from above; the panorama looks outward from the center with a
//! sky band above the horizon and the ground below it, radius decreasing
//! toward the bottom row. The segmentation map colors the same classes.
//! Everything is a pure function of the seed.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{normalize, ImageTensor};
use super::manifest::{SamplePair, Split, AERIAL_DIR, PANORAMA_DIR, SEGMENTATION_DIR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Sky,
    Road,
    Building,
    Grass,
    Field,
}

impl Class {
    fn label_color(self) -> [u8; 3] {
        match self {
            Class::Sky => [70, 130, 180],
            Class::Road => [128, 64, 128],
            Class::Building => [220, 20, 60],
            Class::Grass => [107, 142, 35],
            Class::Field => [152, 251, 152],
        }
    }
}

struct Scene {
    road_angle: f64,
    road_half_width: f64,
    buildings: Vec<(f64, f64, f64)>,
    field_normal: (f64, f64),
    palette: [[f64; 3]; 5],
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n_buildings = rng.gen_range(1..=3);
        let buildings = (0..n_buildings)
            .map(|_| {
                let r = rng.gen_range(0.35..0.8);
                let a = rng.gen_range(0.0..2.0 * PI);
                (r * a.sin(), -r * a.cos(), rng.gen_range(0.08..0.2))
            })
            .collect();
        let fa: f64 = rng.gen_range(0.0..2.0 * PI);
        let mut palette = [[0.0; 3]; 5];
        let base: [[f64; 3]; 5] = [
            [0.55, 0.7, 0.95],
            [0.4, 0.4, 0.42],
            [0.75, 0.45, 0.35],
            [0.25, 0.5, 0.2],
            [0.7, 0.65, 0.35],
        ];
        for (dst, src) in palette.iter_mut().zip(base) {
            for c in 0..3 {
                dst[c] = (src[c] + rng.gen_range(-0.06..0.06)).clamp(0.0, 1.0);
            }
        }
        Self {
            road_angle: rng.gen_range(0.0..PI),
            road_half_width: rng.gen_range(0.06..0.14),
            buildings,
            field_normal: (fa.cos(), fa.sin()),
            palette,
        }
    }

    /// Ground class at normalized aerial coordinates (`x` right, `y` down, both in [-1, 1]).
    fn class_at(&self, x: f64, y: f64) -> Class {
        for &(bx, by, br) in &self.buildings {
            if (x - bx).powi(2) + (y - by).powi(2) < br * br {
                return Class::Building;
            }
        }
        let (s, c) = self.road_angle.sin_cos();
        if (x * s - y * c).abs() < self.road_half_width {
            return Class::Road;
        }
        if x * self.field_normal.0 + y * self.field_normal.1 > 0.2 {
            Class::Field
        } else {
            Class::Grass
        }
    }

    fn color(&self, class: Class) -> [f64; 3] {
        let idx = match class {
            Class::Sky => 0,
            Class::Road => 1,
            Class::Building => 2,
            Class::Grass => 3,
            Class::Field => 4,
        };
        self.palette[idx]
    }
}

fn texture(seed: u64, a: usize, b: usize) -> f64 {
    let mut h = seed ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

fn to_unit(v: f64) -> f32 {
    normalize((v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Generates `count` scenes at the given resolution; `pano_height × 4·pano_height` panoramas.
pub fn generate(count: usize, aerial_size: usize, pano_height: usize, seed: u64) -> Result<Vec<SamplePair>> {
    if aerial_size < 2 || pano_height < 2 {
        return Err(Error::config("synthetic images need at least 2 pixels per side"));
    }
    let pano_width = 4 * pano_height;
    let horizon = pano_height * 3 / 8;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let scene = Scene::random(&mut rng);
            let tex_seed: u64 = rng.gen();
            let half = aerial_size as f64 / 2.0;
            let aerial = ImageTensor::from_fn(3, aerial_size, aerial_size, |c, y, x| {
                let nx = (x as f64 + 0.5 - half) / half;
                let ny = (y as f64 + 0.5 - half) / half;
                let class = scene.class_at(nx, ny);
                to_unit(scene.color(class)[c] + 0.08 * texture(tex_seed, y, x))
            })?;
            let ground = |v: usize, u: usize| -> (Class, f64) {
                if v < horizon {
                    return (Class::Sky, v as f64 / horizon as f64);
                }
                let t = (v - horizon) as f64 / (pano_height - horizon) as f64;
                let r = 0.95 * (1.0 - t);
                let theta = 2.0 * PI * u as f64 / pano_width as f64;
                (scene.class_at(r * theta.sin(), -r * theta.cos()), t)
            };
            let panorama = ImageTensor::from_fn(3, pano_height, pano_width, |c, v, u| {
                let (class, t) = ground(v, u);
                let base = scene.color(class)[c];
                let shade = if class == Class::Sky { 0.8 + 0.2 * t } else { 0.75 + 0.25 * t };
                to_unit(base * shade + 0.05 * texture(tex_seed ^ 1, v, u))
            })?;
            let segmentation = ImageTensor::from_fn(3, pano_height, pano_width, |c, v, u| {
                normalize(ground(v, u).0.label_color()[c])
            })?;
            Ok(SamplePair {
                id: format!("scene_{i:05}"),
                aerial,
                panorama: Some(panorama),
                segmentation: Some(segmentation),
            })
        })
        .collect()
}

/// Writes pairs as PNG files in the dataset directory layout.
pub fn write_dataset(root: impl AsRef<Path>, split: Split, pairs: &[SamplePair]) -> Result<()> {
    let dir = root.as_ref().join(split.as_str());
    for sub in [AERIAL_DIR, PANORAMA_DIR, SEGMENTATION_DIR] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for pair in pairs {
        let name = format!("{}.png", pair.id);
        pair.aerial.save(dir.join(AERIAL_DIR).join(&name))?;
        if let Some(p) = &pair.panorama {
            p.save(dir.join(PANORAMA_DIR).join(&name))?;
        }
        if let Some(s) = &pair.segmentation {
            s.save(dir.join(SEGMENTATION_DIR).join(&name))?;
        }
    }
    Ok(())
}
