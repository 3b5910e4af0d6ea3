//! Pinhole-camera ray caster for low-resolution grayscale views.
//!
//! The camera looks along its local `+z` axis; image columns grow along
//! local `+x` and rows along local `+y`. Each pixel casts one ray through its
//! center, takes the nearest sphere hit inside `[near, far]` and shades it
//! with a Lambertian term lit by a headlight at the camera. Misses are 0.

use serde::{Deserialize, Serialize};

use crate::geom::{Pose, Vec3};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub near: f64,
    pub far: f64,
    /// Spheres generated per image-matching episode.
    pub spheres_per_scene: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 32,
            height: 32,
            fov: 60f64.to_radians(),
            near: 0.001,
            far: 1.0,
            spheres_per_scene: 3,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.width < 8 || self.height < 8 {
            return Err(format!("image must be at least 8x8, got {}x{}", self.width, self.height));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err("need 0 < near < far".into());
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err("fov must be in (0, pi)".into());
        }
        if self.spheres_per_scene == 0 {
            return Err("scene needs at least one sphere".into());
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        self.width as f64 * 0.5 / (self.fov * 0.5).tan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere<T> {
    pub center: Vec3<T>,
    pub radius: T,
    /// Reflectance in `[0, 1]`.
    pub albedo: T,
}

/// Renders into `out` (row-major, `width * height`).
pub fn render_into<T: Scalar>(camera: &Pose<T>, cfg: &RenderConfig, scene: &[Sphere<T>], out: &mut [T]) {
    assert_eq!(out.len(), cfg.pixels(), "image buffer size");
    let f = T::c(cfg.focal_px());
    let half_w = T::c(cfg.width as f64 * 0.5);
    let half_h = T::c(cfg.height as f64 * 0.5);
    let (near, far) = (T::c(cfg.near), T::c(cfg.far));
    let half = T::c(0.5);
    let origin = camera.position;
    for r in 0..cfg.height {
        let v = (T::from_count(r) + half - half_h) / f;
        for c in 0..cfg.width {
            let u = (T::from_count(c) + half - half_w) / f;
            let dir = camera.transform_vector(Vec3::new(u, v, T::one()).normalized());
            out[r * cfg.width + c] = shade(origin, dir, scene, near, far);
        }
    }
}

pub fn render<T: Scalar>(camera: &Pose<T>, cfg: &RenderConfig, scene: &[Sphere<T>]) -> Vec<T> {
    let mut img = vec![T::zero(); cfg.pixels()];
    render_into(camera, cfg, scene, &mut img);
    img
}

#[inline]
fn shade<T: Scalar>(origin: Vec3<T>, dir: Vec3<T>, scene: &[Sphere<T>], near: T, far: T) -> T {
    let mut best_t = far;
    let mut best: Option<&Sphere<T>> = None;
    for s in scene {
        let oc = origin - s.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - s.radius * s.radius;
        let disc = b * b - c;
        if disc < T::zero() {
            continue;
        }
        let root = disc.sqrt();
        let mut t = -b - root;
        if t < near {
            t = -b + root;
        }
        if t >= near && t <= best_t {
            best_t = t;
            best = Some(s);
        }
    }
    match best {
        None => T::zero(),
        Some(s) => {
            let hit = origin + dir.scale(best_t);
            let n = (hit - s.center).scale(T::one() / s.radius);
            let lambert = (-n.dot(dir)).max(T::zero());
            (s.albedo * lambert).max(T::zero()).min(T::one())
        }
    }
}

/// Mean absolute pixel difference.
pub fn mean_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let sum: T = a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum();
    sum / T::from_count(a.len())
}

/// Writes an 8-bit binary portable graymap.
pub fn write_pgm<T: Scalar>(path: &std::path::Path, width: usize, height: usize, img: &[T]) -> std::io::Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(img.iter().map(|v| (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quat;

    fn cfg() -> RenderConfig {
        RenderConfig::default()
    }

    fn ball(x: f64, y: f64, z: f64, r: f64) -> Sphere<f64> {
        Sphere {
            center: Vec3::new(x, y, z),
            radius: r,
            albedo: 1.0,
        }
    }

    fn centroid(img: &[f64], w: usize) -> (f64, f64) {
        let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
        for (i, &v) in img.iter().enumerate() {
            sx += v * (i % w) as f64;
            sy += v * (i / w) as f64;
            m += v;
        }
        (sx / m, sy / m)
    }

    #[test]
    fn on_axis_sphere_peaks_at_center() {
        let c = cfg();
        let img = render(&Pose::identity(), &c, &[ball(0.0, 0.0, 0.3, 0.05)]);
        let (i, _) = img
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let (col, row) = ((i % c.width) as f64, (i / c.width) as f64);
        let mid = (c.width as f64 - 1.0) / 2.0;
        assert!((col - mid).abs() <= 1.0 && (row - mid).abs() <= 1.0, "{col} {row}");
    }

    #[test]
    fn empty_frustum_is_black() {
        let img = render(&Pose::identity(), &cfg(), &[ball(0.0, 0.0, -0.3, 0.05)]);
        assert!(img.iter().all(|&v| v == 0.0));
        let far = render(&Pose::identity(), &cfg(), &[ball(0.0, 0.0, 5.0, 0.05)]);
        assert!(far.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lateral_shift_follows_pinhole_projection() {
        let c = cfg();
        let z = 0.4;
        let scene = [ball(0.0, 0.0, z, 0.03)];
        let base = centroid(&render(&Pose::identity(), &c, &scene), c.width);
        for d in [0.02, -0.03, 0.05] {
            let cam = Pose::from_translation(Vec3::new(d, 0.0, 0.0));
            let moved = centroid(&render(&cam, &c, &scene), c.width);
            let expect = -c.focal_px() * d / z;
            assert!(((moved.0 - base.0) - expect).abs() < 1.0, "d={d}");
            assert!((moved.1 - base.1).abs() < 1.0);
        }
    }

    #[test]
    fn symmetric_scene_renders_mirror_symmetric() {
        let c = cfg();
        let scene = [ball(0.05, 0.02, 0.3, 0.03), ball(-0.05, 0.02, 0.3, 0.03), ball(0.0, -0.04, 0.35, 0.02)];
        let img = render(&Pose::identity(), &c, &scene);
        for r in 0..c.height {
            for col in 0..c.width {
                assert_eq!(img[r * c.width + col], img[r * c.width + c.width - 1 - col]);
            }
        }
        assert!(img.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let c = cfg();
        let cam = Pose::new(
            Vec3::new(0.01, -0.02, 0.0),
            Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.2),
        );
        let scene = [ball(0.0, 0.0, 0.2, 0.1), ball(0.05, 0.05, 0.25, 0.04)];
        let img = render(&cam, &c, &scene);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(img, render(&cam, &c, &scene));
    }

    #[test]
    fn identical_images_have_zero_error() {
        let a: Vec<f64> = vec![0.1, 0.5, 0.9];
        assert_eq!(mean_abs_diff(&a, &a), 0.0);
        assert!((mean_abs_diff(&a, &[0.0, 0.5, 1.0]) - 0.2 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.width = 4;
        assert!(c.validate().is_err());
        c = cfg();
        c.near = 2.0;
        assert!(c.validate().is_err());
    }
}
