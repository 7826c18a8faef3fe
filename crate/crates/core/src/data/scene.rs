//! Ray-cast synthetic LiDAR scenes with ground-truth labels.
//!
//! Rays fan out from the sensor on a regular beam/azimuth grid (one return
//! per cell, like a spinning LiDAR) against a ground plane and randomly
//! placed labeled primitives: boxes for vehicles and buildings, vertical
//! cylinders for poles, noisy spheres for vegetation. Everything derives
//! from the seed, so identical configs produce bit-identical clouds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classes;
use crate::projection::{Point, PointCloud};
use crate::rng::{seeded, Prng};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub num_beams: usize,
    pub azimuth_steps: usize,
    /// Vertical field of view magnitudes in degrees; beams span it uniformly.
    pub f_up_deg: f64,
    pub f_down_deg: f64,
    pub sensor_height: f64,
    pub max_range: f64,
    pub vehicles: (usize, usize),
    pub buildings: (usize, usize),
    pub poles: (usize, usize),
    pub vegetation: (usize, usize),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            num_beams: 64,
            azimuth_steps: 512,
            f_up_deg: 3.0,
            f_down_deg: 25.0,
            sensor_height: 1.8,
            max_range: 50.0,
            vehicles: (4, 8),
            buildings: (6, 10),
            poles: (3, 6),
            vegetation: (4, 8),
        }
    }
}

impl SceneConfig {
    pub fn for_image(h: usize, w: usize, seed: u64) -> Self {
        SceneConfig {
            seed,
            num_beams: h,
            azimuth_steps: w,
            ..SceneConfig::default()
        }
    }

    /// Upper bound on any generated |z| (tallest building plus slack).
    pub fn z_bound(&self) -> f64 {
        16.0_f64.max(self.sensor_height + 1.0)
    }
}

struct Box3 {
    min: [f64; 3],
    max: [f64; 3],
    label: u32,
}

struct Cylinder {
    cx: f64,
    cy: f64,
    radius: f64,
    z0: f64,
    z1: f64,
}

struct Blob {
    cx: f64,
    cy: f64,
    cz: f64,
    radius: f64,
}

struct Scene {
    boxes: Vec<Box3>,
    cylinders: Vec<Cylinder>,
    blobs: Vec<Blob>,
    ground_z: f64,
}

/// Intensity carries partial class signal: vehicles and poles share a level,
/// as do buildings and vegetation, so geometry and image location must
/// disambiguate within the pairs.
fn base_intensity(label: u32) -> f64 {
    match label {
        classes::GROUND => 0.2,
        classes::BUILDING => 0.45,
        classes::VEHICLE => 0.7,
        classes::POLE => 0.7,
        classes::VEGETATION => 0.45,
        _ => 0.0,
    }
}

fn sample_count(rng: &mut Prng, range: (usize, usize)) -> usize {
    if range.1 <= range.0 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

fn place(rng: &mut Prng, dist: (f64, f64)) -> (f64, f64) {
    let d = rng.gen_range(dist.0..dist.1);
    let az = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    (d * az.cos(), d * az.sin())
}

fn build_scene(cfg: &SceneConfig, rng: &mut Prng) -> Scene {
    let ground_z = -cfg.sensor_height;
    let mut boxes = Vec::new();
    let mut cylinders = Vec::new();
    let mut blobs = Vec::new();

    for _ in 0..sample_count(rng, cfg.vehicles) {
        let (cx, cy) = place(rng, (5.0, 30.0));
        let (hl, hw) = (rng.gen_range(1.5..2.5), rng.gen_range(0.8..1.1));
        let height = rng.gen_range(1.3..1.8);
        boxes.push(Box3 {
            min: [cx - hl, cy - hw, ground_z],
            max: [cx + hl, cy + hw, ground_z + height],
            label: classes::VEHICLE,
        });
    }
    for _ in 0..sample_count(rng, cfg.buildings) {
        let (cx, cy) = place(rng, (15.0, 45.0));
        let (hl, hw) = (rng.gen_range(4.0..12.0), rng.gen_range(4.0..12.0));
        let height = rng.gen_range(4.0..14.0);
        boxes.push(Box3 {
            min: [cx - hl, cy - hw, ground_z],
            max: [cx + hl, cy + hw, ground_z + height],
            label: classes::BUILDING,
        });
    }
    for _ in 0..sample_count(rng, cfg.poles) {
        let (cx, cy) = place(rng, (4.0, 25.0));
        cylinders.push(Cylinder {
            cx,
            cy,
            radius: rng.gen_range(0.1..0.2),
            z0: ground_z,
            z1: ground_z + rng.gen_range(3.0..7.0),
        });
    }
    for _ in 0..sample_count(rng, cfg.vegetation) {
        let (cx, cy) = place(rng, (6.0, 35.0));
        let radius = rng.gen_range(1.0..3.0);
        blobs.push(Blob {
            cx,
            cy,
            cz: ground_z + radius * rng.gen_range(0.9..1.6),
            radius,
        });
    }

    Scene {
        boxes,
        cylinders,
        blobs,
        ground_z,
    }
}

fn ray_box(dir: [f64; 3], b: &Box3) -> Option<f64> {
    // slab method from the origin
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if 0.0 < b.min[a] || 0.0 > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut near, mut far) = (b.min[a] * inv, b.max[a] * inv);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 1e-9).then_some(t0)
}

fn ray_cylinder(dir: [f64; 3], c: &Cylinder) -> Option<f64> {
    // infinite cylinder in xy, then clip to the z extent
    let (dx, dy) = (dir[0], dir[1]);
    let a = dx * dx + dy * dy;
    if a < 1e-12 {
        return None;
    }
    let b = -2.0 * (dx * c.cx + dy * c.cy);
    let cc = c.cx * c.cx + c.cy * c.cy - c.radius * c.radius;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    if t <= 1e-9 {
        return None;
    }
    let z = t * dir[2];
    (z >= c.z0 && z <= c.z1).then_some(t)
}

fn ray_sphere(dir: [f64; 3], s: &Blob) -> Option<f64> {
    let oc = [-s.cx, -s.cy, -s.cz];
    let b = 2.0 * (dir[0] * oc[0] + dir[1] * oc[1] + dir[2] * oc[2]);
    let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - s.radius * s.radius;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / 2.0;
    (t > 1e-9).then_some(t)
}

/// Cast the beam/azimuth ray fan against the scene. Each hit yields one
/// labeled point; rays that miss everything within range yield nothing.
pub fn generate_scene(cfg: &SceneConfig) -> PointCloud {
    let mut rng = seeded(cfg.seed);
    let scene = build_scene(cfg, &mut rng);
    let f_up = cfg.f_up_deg.to_radians();
    let f_down = cfg.f_down_deg.to_radians();
    let fov = f_up + f_down;

    let mut points = Vec::with_capacity(cfg.num_beams * cfg.azimuth_steps);
    let mut labels = Vec::with_capacity(points.capacity());

    for beam in 0..cfg.num_beams {
        let elevation = f_up - (beam as f64 + 0.5) / cfg.num_beams as f64 * fov;
        let (se, ce) = (elevation.sin(), elevation.cos());
        for step in 0..cfg.azimuth_steps {
            let azimuth = std::f64::consts::PI
                - (step as f64 + 0.5) / cfg.azimuth_steps as f64 * 2.0 * std::f64::consts::PI;
            let dir = [ce * azimuth.cos(), ce * azimuth.sin(), se];

            let mut best: Option<(f64, u32, bool)> = None; // (t, label, jitter)
            if dir[2] < -1e-12 {
                let t = scene.ground_z / dir[2];
                if t > 1e-9 {
                    best = Some((t, classes::GROUND, false));
                }
            }
            for b in &scene.boxes {
                if let Some(t) = ray_box(dir, b) {
                    if best.map_or(true, |(bt, _, _)| t < bt) {
                        best = Some((t, b.label, false));
                    }
                }
            }
            for c in &scene.cylinders {
                if let Some(t) = ray_cylinder(dir, c) {
                    if best.map_or(true, |(bt, _, _)| t < bt) {
                        best = Some((t, classes::POLE, false));
                    }
                }
            }
            for s in &scene.blobs {
                if let Some(t) = ray_sphere(dir, s) {
                    if best.map_or(true, |(bt, _, _)| t < bt) {
                        best = Some((t, classes::VEGETATION, true));
                    }
                }
            }

            // one draw per ray keeps the stream aligned regardless of hits
            let (jitter, intensity_noise) = (
                rng.gen_range(-0.2..0.2f64),
                rng.gen_range(-0.05..0.05f64),
            );
            if let Some((t, label, noisy)) = best {
                let t = if noisy { (t + jitter).max(0.5) } else { t };
                if t <= cfg.max_range {
                    points.push(Point {
                        x: t * dir[0],
                        y: t * dir[1],
                        z: t * dir[2],
                        intensity: (base_intensity(label) + intensity_noise).clamp(0.0, 1.0),
                    });
                    labels.push(label);
                }
            }
        }
    }

    PointCloud::new(points, Some(labels)).expect("generated labels always align")
}
