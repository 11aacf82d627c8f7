//! Pinhole depth and RGB rendering of a [`Scene`] in a 2.5D model.
//!
//! Each image column casts one horizontal ray through the scene. Each row of
//! that column then decides, from its elevation angle under the current camera
//! pitch, whether it lands on the floor, on an obstacle face or roof, on a
//! wall, or on nothing within range. Pitch is positive when the camera tilts
//! towards the floor.
//!
//! Depth pixels hold the Euclidean distance along the pixel ray. Pixel rays
//! span the field of view edge to edge, so the first and last column look
//! exactly `±horizontal_fov / 2` off axis.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Pose;
use crate::geometry::{Rgb, Scene, Surface, Vec2};

/// Colour of pixels whose ray hits nothing within range.
pub const SKY_RGB: Rgb = [0.62, 0.76, 0.92];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera pose ({x:.3}, {y:.3}) lies outside the scene bounds")]
    OutsideBounds { x: f64, y: f64 },
    #[error("invalid camera: {0}")]
    BadCamera(String),
    #[error("image has {channels} channels, expected {expected}")]
    Channels { channels: usize, expected: usize },
    #[error("writing image: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub horizontal_fov: f64,
    pub mount_height: f64,
    pub base_pitch_offset: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            horizontal_fov: std::f64::consts::FRAC_PI_2,
            mount_height: 0.5,
            base_pitch_offset: 0.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width < 8 || self.height < 8 {
            return Err(RenderError::BadCamera(format!(
                "resolution {}x{} below 8x8",
                self.width, self.height
            )));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < std::f64::consts::PI) {
            return Err(RenderError::BadCamera(format!(
                "horizontal_fov {} outside (0, pi)",
                self.horizontal_fov
            )));
        }
        if !(self.mount_height > 0.0) {
            return Err(RenderError::BadCamera("mount_height must be positive".into()));
        }
        Ok(())
    }

    /// Image-plane offset of column `i` (positive to the right), in units of the focal length.
    fn column_offset(&self, i: usize) -> f64 {
        let half = (self.horizontal_fov / 2.0).tan();
        (2.0 * i as f64 / (self.width - 1) as f64 - 1.0) * half
    }

    /// Image-plane offset of row `j` (positive downwards), square pixels.
    fn row_offset(&self, j: usize) -> f64 {
        let half = (self.horizontal_fov / 2.0).tan() * (self.height - 1) as f64
            / (self.width - 1) as f64;
        (2.0 * j as f64 / (self.height - 1) as f64 - 1.0) * half
    }
}

/// Dense row-major raster. One channel holds depth (metres) or normalized
/// log-depth; three channels hold RGB in `[0, 1]`, interleaved per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [f32] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Planar (channel-major) copy of the pixel data, the layout networks consume.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; self.data.len()];
        for p in 0..plane {
            for c in 0..self.channels {
                out[c * plane + p] = self.data[p * self.channels + c];
            }
        }
        out
    }

    /// Box-filter (or nearest, when sizes do not divide) resampling.
    pub fn downsample(&self, width: usize, height: usize) -> Image {
        let mut out = Image::new(width, height, self.channels);
        let (fx, fy) = (self.width / width.max(1), self.height / height.max(1));
        let exact = fx > 0 && fy > 0 && fx * width == self.width && fy * height == self.height;
        for row in 0..height {
            for col in 0..width {
                for c in 0..self.channels {
                    let value = if exact {
                        let mut acc = 0.0f32;
                        for dy in 0..fy {
                            for dx in 0..fx {
                                acc += self.pixel(col * fx + dx, row * fy + dy)[c];
                            }
                        }
                        acc / (fx * fy) as f32
                    } else {
                        let sc = col * self.width / width;
                        let sr = row * self.height / height;
                        self.pixel(sc, sr)[c]
                    };
                    out.pixel_mut(col, row)[c] = value;
                }
            }
        }
        out
    }

    /// Binary PGM (1 channel) or PPM (3 channels), maxval 255, mapping
    /// `[0, scale]` linearly onto `[0, 255]`.
    pub fn to_pnm(&self, scale: f32) -> Result<Vec<u8>, RenderError> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(RenderError::Channels { channels: c, expected: 3 }),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize(v / scale)));
        Ok(out)
    }

    pub fn write_pnm(&self, path: impl AsRef<Path>, scale: f32) -> Result<(), RenderError> {
        let bytes = self.to_pnm(scale)?;
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }
}

/// Linear quantization of `[0, 1]` onto `0..=255`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Paired renders of one camera pose.
#[derive(Debug, Clone)]
pub struct Frame {
    pub depth: Image,
    pub rgb: Image,
}

struct Sample {
    distance: f64,
    albedo: Option<Rgb>,
}

/// Renders depth and RGB together; both come from the same ray casts.
pub fn render_frame(scene: &Scene, pose: &Pose, camera: &CameraModel) -> Result<Frame, RenderError> {
    camera.validate()?;
    let origin = Vec2::new(pose.x, pose.y);
    if !scene.bounds().contains(&origin) {
        return Err(RenderError::OutsideBounds { x: pose.x, y: pose.y });
    }
    let (w, h) = (camera.width, camera.height);
    let mut depth = Image::new(w, h, 1);
    let mut rgb = Image::new(w, h, 3);
    let max_range = scene.max_range();
    let pitch = camera.base_pitch_offset + pose.pitch;
    let (sin_p, cos_p) = pitch.sin_cos();

    for col in 0..w {
        let u = camera.column_offset(col);
        let azimuth = pose.yaw - u.atan();
        let dir = Vec2::new(azimuth.cos(), azimuth.sin());
        let hits = column_hits(scene, &origin, &dir);
        for row in 0..h {
            let v = camera.row_offset(row);
            // Camera ray (forward 1, right u, down v) rotated by the pitch.
            let forward = cos_p - v * sin_p;
            let up = -sin_p - v * cos_p;
            let horizontal = (forward.max(0.0).powi(2) + u * u).sqrt();
            let elevation = up.atan2(horizontal);
            let sample = trace_row(scene, &hits, camera.mount_height, elevation);
            let (d, albedo) = if sample.distance < max_range {
                (sample.distance, sample.albedo)
            } else {
                (max_range, None)
            };
            depth.pixel_mut(col, row)[0] = d as f32;
            let color = match albedo {
                Some(a) => {
                    let shade = 1.0 / (1.0 + d / max_range);
                    [a[0] * shade, a[1] * shade, a[2] * shade]
                }
                None => SKY_RGB,
            };
            let px = rgb.pixel_mut(col, row);
            for c in 0..3 {
                px[c] = color[c] as f32;
            }
        }
    }
    Ok(Frame { depth, rgb })
}

pub fn render_depth(scene: &Scene, pose: &Pose, camera: &CameraModel) -> Result<Image, RenderError> {
    render_frame(scene, pose, camera).map(|f| f.depth)
}

pub fn render_rgb(scene: &Scene, pose: &Pose, camera: &CameraModel) -> Result<Image, RenderError> {
    render_frame(scene, pose, camera).map(|f| f.rgb)
}

/// Surface crossing along a column's horizontal ray: entry distance, exit
/// distance (for roof hits) and the surface.
struct ColumnHit {
    enter: f64,
    exit: f64,
    surface: Surface,
}

fn column_hits(scene: &Scene, origin: &Vec2, dir: &Vec2) -> Vec<ColumnHit> {
    scene
        .raycast_all(origin, dir)
        .into_iter()
        .map(|hit| {
            let exit = match hit.surface {
                Surface::Obstacle(id) => {
                    clip_interval(origin, dir, scene.obstacles()[id].vertices())
                        .map_or(hit.distance, |(_, t_out)| t_out)
                }
                _ => f64::INFINITY,
            };
            ColumnHit { enter: hit.distance, exit, surface: hit.surface }
        })
        .collect()
}

/// Cyrus-Beck clipping of the ray against a convex CCW polygon.
fn clip_interval(origin: &Vec2, dir: &Vec2, vertices: &[Vec2]) -> Option<(f64, f64)> {
    let n = vertices.len();
    let (mut t_in, mut t_out) = (0.0f64, f64::INFINITY);
    for i in 0..n {
        let a = vertices[i];
        let e = vertices[(i + 1) % n] - a;
        let normal = Vec2::new(e.y, -e.x);
        let denom = normal.dot(dir);
        let num = normal.dot(&(origin - a));
        if denom.abs() < 1e-15 {
            if num > 0.0 {
                return None;
            }
            continue;
        }
        let t = -num / denom;
        if denom < 0.0 {
            t_in = t_in.max(t);
        } else {
            t_out = t_out.min(t);
        }
    }
    (t_in <= t_out).then_some((t_in, t_out))
}

fn trace_row(scene: &Scene, hits: &[ColumnHit], cam_height: f64, elevation: f64) -> Sample {
    let (sin_e, cos_e) = elevation.sin_cos();
    let tan_e = elevation.tan();
    let floor = (elevation < 0.0).then(|| (cam_height / -tan_e, cam_height / -sin_e));
    for hit in hits {
        if let Some((floor_horizontal, floor_dist)) = floor {
            if floor_horizontal <= hit.enter {
                return Sample { distance: floor_dist, albedo: Some(scene.floor_albedo()) };
            }
        }
        let top = scene.surface_height(hit.surface);
        let z = cam_height + hit.enter * tan_e;
        if z <= top {
            return Sample {
                distance: hit.enter / cos_e,
                albedo: scene.surface_albedo(hit.surface),
            };
        }
        // Above the face; a descending ray may still land on the roof.
        if elevation < 0.0 && cam_height > top {
            let roof = (cam_height - top) / -tan_e;
            if roof <= hit.exit {
                return Sample {
                    distance: roof / cos_e,
                    albedo: scene.surface_albedo(hit.surface),
                };
            }
        }
    }
    match floor {
        Some((_, floor_dist)) => Sample { distance: floor_dist, albedo: Some(scene.floor_albedo()) },
        None => Sample { distance: f64::INFINITY, albedo: None },
    }
}

/// Maps depth to `[0, 1]` on a log scale between `d_min` and `d_max`.
pub fn log_depth_transform(depth: &Image, d_min: f64, d_max: f64) -> Image {
    debug_assert!(0.0 < d_min && d_min < d_max);
    let (lo, span) = (d_min.ln(), d_max.ln() - d_min.ln());
    Image {
        data: depth
            .data
            .iter()
            .map(|&d| ((f64::from(d).clamp(d_min, d_max).ln() - lo) / span) as f32)
            .collect(),
        ..*depth
    }
}

pub fn log_depth_value(d: f64, d_min: f64, d_max: f64) -> f64 {
    (d.clamp(d_min, d_max).ln() - d_min.ln()) / (d_max.ln() - d_min.ln())
}

/// Inverse of [`log_depth_value`] on `[0, 1]`.
pub fn inverse_log_depth_value(t: f64, d_min: f64, d_max: f64) -> f64 {
    (d_min.ln() + t.clamp(0.0, 1.0) * (d_max.ln() - d_min.ln())).exp()
}

/// Photometric perturbation applied to one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness: f32,
    pub contrast: f32,
    /// Hue rotation in turns.
    pub hue: f32,
    pub saturation: f32,
    pub noise_sigma: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        brightness: 0.0,
        contrast: 1.0,
        hue: 0.0,
        saturation: 1.0,
        noise_sigma: 0.0,
    };
}

/// Ranges the per-frame augmentation is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentRanges {
    pub brightness: f32,
    pub contrast: (f32, f32),
    pub hue: f32,
    pub saturation: (f32, f32),
    pub max_noise_sigma: f32,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: (0.8, 1.25),
            hue: 0.1,
            saturation: (0.7, 1.3),
            max_noise_sigma: 0.05,
        }
    }
}

impl AugmentRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f32, hi: f32) -> f32 {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        }
        AugmentParams {
            brightness: uniform(rng, -self.brightness, self.brightness),
            contrast: uniform(rng, self.contrast.0, self.contrast.1),
            hue: uniform(rng, -self.hue, self.hue),
            saturation: uniform(rng, self.saturation.0, self.saturation.1),
            noise_sigma: uniform(rng, 0.0, self.max_noise_sigma),
        }
    }
}

/// Brightness, contrast, hue/saturation and pixel noise, in that order.
/// Values are clamped to `[0, 1]` after every stage; stages at their identity
/// setting are skipped so identity parameters return the input unchanged.
pub fn augment<R: Rng + ?Sized>(image: &Image, params: &AugmentParams, rng: &mut R) -> Image {
    let mut out = image.clone();
    if params.brightness != 0.0 {
        for v in &mut out.data {
            *v = (*v + params.brightness).clamp(0.0, 1.0);
        }
    }
    if params.contrast != 1.0 {
        for v in &mut out.data {
            *v = ((*v - 0.5) * params.contrast + 0.5).clamp(0.0, 1.0);
        }
    }
    if (params.hue != 0.0 || params.saturation != 1.0) && out.channels == 3 {
        for px in out.data.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let h = (h + params.hue).rem_euclid(1.0);
            let s = (s * params.saturation).clamp(0.0, 1.0);
            let (r, g, b) = hsv_to_rgb(h, s, v);
            px[0] = r.clamp(0.0, 1.0);
            px[1] = g.clamp(0.0, 1.0);
            px[2] = b.clamp(0.0, 1.0);
        }
    }
    if params.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, params.noise_sigma).expect("finite sigma");
        for v in &mut out.data {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Hue in turns `[0, 1)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let sat = if max <= 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let c = v * s;
    let hp = h.rem_euclid(1.0) * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}
