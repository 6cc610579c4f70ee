//! Synthetic stereo sequence generation and the file formats around it.
//!
//! Scenes are lists of textured planes and spheres raycast per pixel, so
//! ground-truth disparity is analytic (d = f·b/Z from the left-ray hit)
//! rather than estimated. The right camera sits at +b along the camera
//! x-axis; occlusion masks come from a second raycast toward each left hit
//! from the right camera center. Trajectories are low-pass-filtered random
//! walks with hard per-frame velocity bounds, imitating head-mounted
//! tracking at 30 Hz.

pub mod image_io;
pub mod pfm;
pub mod poses;

pub use image_io::{read_gray, write_gray};
pub use pfm::{read_pfm, write_pfm};
pub use poses::{read_poses, write_poses};

use crate::error::{Error, Result};
use crate::geometry::{CameraRig, Pose};
use crate::grid::GrayF32;
use crate::warp::DisparityMap;
use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Procedural textures

/// Point-sampled procedural surface texture: a checkerboard modulated by
/// band-limited value noise.
#[derive(Debug, Clone)]
pub struct Texture {
    /// Checker square side, meters of surface.
    pub checker_period: f64,
    pub noise_octaves: u32,
    /// Base noise frequency, cycles per meter.
    pub noise_scale: f64,
    /// Noise modulation depth in [0, 1]; 0 leaves the pure checker.
    pub noise_amp: f32,
    /// (dark, light) checker albedo.
    pub albedo: (f32, f32),
    pub seed: u64,
}

impl Texture {
    fn sample(&self, tu: f64, tv: f64) -> f32 {
        // Irrational phase keeps checker boundaries off the exact sample
        // points any pixel grid can produce, so the left and right rays of a
        // matched pair never straddle a boundary by a rounding ulp.
        let phase = 0.29289321881345254 * self.checker_period;
        let cu = ((tu + phase) / self.checker_period).floor() as i64;
        let cv = ((tv + phase) / self.checker_period).floor() as i64;
        let base = if (cu + cv).rem_euclid(2) == 0 { self.albedo.0 } else { self.albedo.1 };
        let n = fbm(tu * self.noise_scale, tv * self.noise_scale, self.noise_octaves, self.seed);
        base * ((1.0 - self.noise_amp) + self.noise_amp * n as f32)
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    // splitmix64 over the packed lattice coordinates
    let mut z = (ix as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((iy as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(seed);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (ix, iy) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = (x - ix as f64, y - iy as f64);
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let v00 = hash2(ix, iy, seed);
    let v10 = hash2(ix + 1, iy, seed);
    let v01 = hash2(ix, iy + 1, seed);
    let v11 = hash2(ix + 1, iy + 1, seed);
    let a = v00 + (v10 - v00) * sx;
    let b = v01 + (v11 - v01) * sx;
    a + (b - a) * sy
}

fn fbm(x: f64, y: f64, octaves: u32, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    for o in 0..octaves.max(1) {
        let k = (1u64 << o) as f64;
        sum += amp * value_noise(x * k, y * k, seed.wrapping_add(o as u64));
        norm += amp;
        amp *= 0.5;
    }
    sum / norm
}

// ---------------------------------------------------------------------------
// Scene

#[derive(Debug, Clone)]
pub enum Primitive {
    Plane {
        /// A point on the plane.
        anchor: Vector3<f64>,
        normal: Vector3<f64>,
        /// Half side length of the square panel; `None` is unbounded.
        half_extent: Option<f64>,
        texture: Texture,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
        texture: Texture,
    },
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

/// Bounds for [`generate_scene`]. Frustum placement assumes the rigs built
/// by [`generate_sequence`] (horizontal half-angle atan(0.8)).
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub n_planes: usize,
    pub n_spheres: usize,
    /// Depth range for scattered primitives, meters.
    pub depth_range: (f64, f64),
    /// Half-extent range for panels, meters.
    pub panel_extent: (f64, f64),
    pub sphere_radius: (f64, f64),
    /// Fronto-parallel unbounded wall behind everything.
    pub backdrop_depth: Option<f64>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_planes: 2,
            n_spheres: 2,
            depth_range: (0.8, 2.5),
            panel_extent: (0.2, 0.45),
            sphere_radius: (0.15, 0.3),
            backdrop_depth: Some(3.0),
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        // Nothing may come closer than 0.2 m to the initial camera.
        if !(self.depth_range.0 > 0.2 && self.depth_range.1 > self.depth_range.0) {
            return Err(Error::validation(format!(
                "depth range {:?} must be ordered and start beyond 0.2 m",
                self.depth_range
            )));
        }
        let ordered = |r: (f64, f64)| r.0 > 0.0 && r.1 >= r.0;
        if !ordered(self.panel_extent) || !ordered(self.sphere_radius) {
            return Err(Error::validation("extent ranges must be positive and ordered"));
        }
        if let Some(bd) = self.backdrop_depth {
            if bd <= self.depth_range.1 {
                return Err(Error::validation(format!(
                    "backdrop at {bd} m must sit behind the depth range {:?}",
                    self.depth_range
                )));
            }
        }
        Ok(())
    }
}

fn random_texture(rng: &mut ChaCha8Rng) -> Texture {
    // Noise spectrum tuned to the matcher's working scale: four octaves with
    // the base period a few tens of centimeters keep visible detail at every
    // scene depth without dropping below what a quarter-resolution grid can
    // represent, and the dark albedo floor keeps the multiplicative noise
    // from flattening inside dark checker cells.
    Texture {
        checker_period: rng.random_range(0.15..0.35),
        noise_octaves: 4,
        noise_scale: rng.random_range(6.0..9.0),
        noise_amp: rng.random_range(0.5..0.7),
        albedo: (rng.random_range(0.35..0.5), rng.random_range(0.65..0.9)),
        seed: rng.random(),
    }
}

pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = Vec::new();
    if let Some(bd) = spec.backdrop_depth {
        primitives.push(Primitive::Plane {
            anchor: Vector3::new(0.0, 0.0, bd),
            normal: Vector3::new(0.0, 0.0, -1.0),
            half_extent: None,
            texture: random_texture(&mut rng),
        });
    }
    // Centers stay inside ~60% of the initial frustum so primitives remain
    // visible across small trajectories.
    let place = |rng: &mut ChaCha8Rng, z: f64| {
        let x = rng.random_range(-0.5..0.5) * 0.8 * z;
        let y = rng.random_range(-0.5..0.5) * 0.6 * z;
        Vector3::new(x, y, z)
    };
    for _ in 0..spec.n_planes {
        let z = rng.random_range(spec.depth_range.0..spec.depth_range.1);
        let anchor = place(&mut rng, z);
        let tilt_x = rng.random_range(-0.35..0.35);
        let tilt_y = rng.random_range(-0.35..0.35);
        let normal = Vector3::new(tilt_x, tilt_y, -1.0).normalize();
        let half_extent = Some(rng.random_range(spec.panel_extent.0..=spec.panel_extent.1));
        primitives.push(Primitive::Plane {
            anchor,
            normal,
            half_extent,
            texture: random_texture(&mut rng),
        });
    }
    for _ in 0..spec.n_spheres {
        let z = rng.random_range(spec.depth_range.0..spec.depth_range.1);
        let center = place(&mut rng, z);
        let radius = rng.random_range(spec.sphere_radius.0..=spec.sphere_radius.1);
        primitives.push(Primitive::Sphere { center, radius, texture: random_texture(&mut rng) });
    }
    Ok(Scene { primitives })
}

/// Fixed near-panel-over-backdrop scene: a fronto square at 1 m partially
/// occluding an unbounded wall at 2 m.
pub fn two_plane_scene() -> Scene {
    let tex = |seed: u64, period: f64| Texture {
        checker_period: period,
        noise_octaves: 4,
        noise_scale: 8.0,
        noise_amp: 0.6,
        albedo: (0.4, 0.85),
        seed,
    };
    Scene {
        primitives: vec![
            Primitive::Plane {
                anchor: Vector3::new(0.0, 0.0, 2.0),
                normal: Vector3::new(0.0, 0.0, -1.0),
                half_extent: None,
                texture: tex(11, 0.3),
            },
            Primitive::Plane {
                anchor: Vector3::new(0.0, 0.0, 1.0),
                normal: Vector3::new(0.0, 0.0, -1.0),
                half_extent: Some(0.35),
                texture: tex(23, 0.18),
            },
        ],
    }
}

// ---------------------------------------------------------------------------
// Raycasting

struct Hit {
    /// Ray parameter; equals camera-frame depth when the direction is the
    /// unnormalized pixel ray.
    s: f64,
    point: Vector3<f64>,
    prim: usize,
}

/// Orthonormal in-plane basis, deterministic in the normal.
fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let up = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = up.cross(normal).normalize();
    let e2 = normal.cross(&e1);
    (e1, e2)
}

fn intersect(scene: &Scene, origin: &Vector3<f64>, dir: &Vector3<f64>, s_min: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |s: f64, prim: usize| {
        if s > s_min && best.as_ref().map_or(true, |h| s < h.s) {
            best = Some(Hit { s, point: origin + dir * s, prim });
        }
    };
    for (idx, prim) in scene.primitives.iter().enumerate() {
        match prim {
            Primitive::Plane { anchor, normal, half_extent, .. } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let s = normal.dot(&(anchor - origin)) / denom;
                if let Some(he) = half_extent {
                    let q = origin + dir * s - anchor;
                    let (e1, e2) = plane_basis(normal);
                    if q.dot(&e1).abs() > *he || q.dot(&e2).abs() > *he {
                        continue;
                    }
                }
                consider(s, idx);
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = 2.0 * oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    continue;
                }
                let sq = disc.sqrt();
                let s0 = (-b - sq) / (2.0 * a);
                let s1 = (-b + sq) / (2.0 * a);
                consider(s0, idx);
                consider(s1, idx);
            }
        }
    }
    best
}

/// Surface shade at a hit: point-sampled texture times Lambertian lighting
/// under a fixed directional light with an ambient floor.
fn shade(scene: &Scene, hit: &Hit, view_dir: &Vector3<f64>) -> f32 {
    const LIGHT: Vector3<f64> = Vector3::new(0.3, -0.4, -0.8);
    const AMBIENT: f32 = 0.3;
    let (albedo, mut normal) = match &scene.primitives[hit.prim] {
        Primitive::Plane { anchor, normal, texture, .. } => {
            let q = hit.point - anchor;
            let (e1, e2) = plane_basis(normal);
            (texture.sample(q.dot(&e1), q.dot(&e2)), *normal)
        }
        Primitive::Sphere { center, radius, texture } => {
            let n = (hit.point - center) / *radius;
            let tu = n.y.atan2(n.x) * radius;
            let tv = n.z.clamp(-1.0, 1.0).acos() * radius;
            (texture.sample(tu, tv), n)
        }
    };
    if normal.dot(view_dir) > 0.0 {
        normal = -normal; // face the viewer
    }
    let l = LIGHT.normalize();
    let lambert = normal.dot(&l).max(0.0) as f32;
    (albedo * (AMBIENT + (1.0 - AMBIENT) * lambert)).clamp(0.0, 1.0)
}

/// Shade of the empty background; gives featureless but nonzero pixels.
const BACKGROUND: f32 = 0.02;

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub left: GrayF32,
    pub right: GrayF32,
    /// Full-resolution ground truth; background pixels are masked invalid.
    pub gt: DisparityMap,
    /// Left pixels without a counterpart in the right view (blocked or out
    /// of frame). Background pixels are not flagged.
    pub occluded: Vec<bool>,
}

/// Right-camera world-to-camera pose: displaced +b along the camera x-axis.
fn right_pose(pose: &Pose, b: f64) -> Pose {
    Pose { rotation: pose.rotation, translation: pose.translation - Vector3::new(b, 0.0, 0.0) }
}

pub fn render_frame(scene: &Scene, rig: &CameraRig, pose: &Pose) -> RenderedFrame {
    let (w, h) = (rig.width, rig.height);
    let rt = pose.rotation.transpose();
    let c_left = pose.camera_center();
    let pose_r = right_pose(pose, rig.b);
    let c_right = pose_r.camera_center();

    let mut left = vec![0.0f32; w * h];
    let mut right = vec![0.0f32; w * h];
    let mut gt = vec![0.0f32; w * h];
    let mut mask = vec![false; w * h];
    let mut occ = vec![false; w * h];

    left.par_chunks_mut(w)
        .zip(right.par_chunks_mut(w))
        .zip(gt.par_chunks_mut(w))
        .zip(mask.par_chunks_mut(w))
        .zip(occ.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((((lrow, rrow), grow), mrow), orow))| {
            for x in 0..w {
                // Unnormalized ray through the pixel center (half-integer
                // coordinates); the parameter s is camera depth.
                let dc = Vector3::new(
                    (x as f64 + 0.5 - rig.cx) / rig.f,
                    (y as f64 + 0.5 - rig.cy) / rig.f,
                    1.0,
                );
                let dw = rt * dc;
                match intersect(scene, &c_left, &dw, 1e-6) {
                    Some(hit) => {
                        lrow[x] = shade(scene, &hit, &dw);
                        let d = rig.f * rig.b / hit.s;
                        grow[x] = d as f32;
                        mrow[x] = true;
                        let u_r = x as f64 - d;
                        if !(0.0..=(w - 1) as f64).contains(&u_r) {
                            orow[x] = true;
                        } else {
                            // Visible from the right camera iff nothing sits
                            // strictly between its center and the hit point.
                            let seg = hit.point - c_right;
                            if let Some(block) = intersect(scene, &c_right, &seg, 1e-6) {
                                if block.s < 1.0 - 1e-4 {
                                    orow[x] = true;
                                }
                            }
                        }
                    }
                    None => lrow[x] = BACKGROUND,
                }
                // Rectified pair: the right camera shares the rotation, so
                // its pixel rays differ only by origin.
                rrow[x] = match intersect(scene, &c_right, &dw, 1e-6) {
                    Some(hit) => shade(scene, &hit, &dw),
                    None => BACKGROUND,
                };
            }
        });

    RenderedFrame {
        left: GrayF32 { width: w, height: h, data: left },
        right: GrayF32 { width: w, height: h, data: right },
        gt: DisparityMap { width: w, height: h, values: gt, mask },
        occluded: occ,
    }
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// (timestamp seconds, world-to-camera pose), strictly increasing time.
    pub samples: Vec<(f64, Pose)>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryParams {
    /// Per-frame translation bound, meters.
    pub max_translation: f64,
    /// Per-frame rotation bound, degrees.
    pub max_rotation_deg: f64,
    /// Velocity low-pass factor in [0, 1); higher = smoother.
    pub smoothing: f64,
    pub rate_hz: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams { max_translation: 0.03, max_rotation_deg: 2.0, smoothing: 0.7, rate_hz: 30.0 }
    }
}

impl TrajectoryParams {
    pub fn static_camera() -> Self {
        TrajectoryParams { max_translation: 0.0, max_rotation_deg: 0.0, ..Default::default() }
    }
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max && n > 0.0 {
        v * (max / n)
    } else {
        v
    }
}

pub fn generate_trajectory(seed: u64, n_frames: usize, params: &TrajectoryParams) -> Result<Trajectory> {
    if n_frames == 0 {
        return Err(Error::validation("trajectory needs at least one frame"));
    }
    if !(0.0..1.0).contains(&params.smoothing) || params.rate_hz <= 0.0 {
        return Err(Error::validation(format!(
            "smoothing {} must be in [0,1) and rate {} positive",
            params.smoothing, params.rate_hz
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_rot = params.max_rotation_deg.to_radians();
    let mut cam_to_world = Pose::identity();
    let mut vel_t = Vector3::zeros();
    let mut vel_r = Vector3::zeros();
    let mut samples = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        samples.push((k as f64 / params.rate_hz, cam_to_world.inverse()));
        let draw = |rng: &mut ChaCha8Rng, scale: f64| {
            Vector3::new(
                rng.random_range(-1.0..1.0) * scale,
                rng.random_range(-1.0..1.0) * scale,
                rng.random_range(-1.0..1.0) * scale,
            )
        };
        let s = params.smoothing;
        vel_t = clamp_norm(vel_t * s + draw(&mut rng, params.max_translation) * (1.0 - s), params.max_translation);
        vel_r = clamp_norm(vel_r * s + draw(&mut rng, max_rot) * (1.0 - s), max_rot);
        let step = if vel_r.norm() > 0.0 {
            Pose::from_axis_angle(vel_r, vel_r.norm(), vel_t)
        } else {
            Pose { rotation: nalgebra::Matrix3::identity(), translation: vel_t }
        };
        // Step in the local camera frame, the way a head moves.
        cam_to_world = cam_to_world.compose(&step);
    }
    Ok(Trajectory { samples })
}

// ---------------------------------------------------------------------------
// Sequence manifests

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub left: PathBuf,
    pub right: PathBuf,
    pub gt: Option<PathBuf>,
    pub occlusion: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub rig: CameraRig,
    /// Relative paths, resolved against `root`.
    pub frames: Vec<FrameEntry>,
    /// Pose file path relative to `root`, when the sequence has poses.
    pub pose_file: Option<PathBuf>,
    pub poses: Option<Vec<(f64, Pose)>>,
    /// Directory the manifest lives in.
    pub root: PathBuf,
}

impl SequenceManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn path_str(p: &Path) -> Result<&str> {
    p.to_str().ok_or_else(|| Error::validation(format!("non-UTF8 path {}", p.display())))
}

pub fn write_manifest(path: &Path, manifest: &SequenceManifest) -> Result<()> {
    let mut out = String::from("#schema=v1 stereo sequence manifest\n");
    let r = &manifest.rig;
    writeln!(out, "rig {} {} {} {} {} {}", r.f, r.cx, r.cy, r.b, r.width, r.height)
        .expect("string write cannot fail");
    if let Some(pf) = &manifest.pose_file {
        writeln!(out, "poses {}", path_str(pf)?).expect("string write cannot fail");
    }
    for f in &manifest.frames {
        let gt = f.gt.as_deref().map_or(Ok("-"), path_str)?;
        let mut line = format!("frame {} {} {gt}", path_str(&f.left)?, path_str(&f.right)?);
        if let Some(occ) = &f.occlusion {
            line.push(' ');
            line.push_str(path_str(occ)?);
        }
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a manifest and verifies every referenced file exists. Poses are
/// optional here; the engine enforces their presence per mode.
pub fn load_manifest(path: &Path) -> Result<SequenceManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut rig: Option<CameraRig> = None;
    let mut pose_file: Option<PathBuf> = None;
    let mut frames = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::format(format!("{}: line {n}: {msg}", path.display()));
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("rig") => {
                let vals: Vec<&str> = tokens.collect();
                if vals.len() != 6 {
                    return Err(bad(format!("rig needs 6 values, found {}", vals.len())));
                }
                let num = |i: usize| -> Result<f64> {
                    vals[i].parse().map_err(|_| bad(format!("bad rig value {:?}", vals[i])))
                };
                let dim = |i: usize| -> Result<usize> {
                    vals[i].parse().map_err(|_| bad(format!("bad rig dimension {:?}", vals[i])))
                };
                rig = Some(
                    CameraRig::new(num(0)?, num(1)?, num(2)?, num(3)?, dim(4)?, dim(5)?)
                        .map_err(|e| bad(e.to_string()))?,
                );
            }
            Some("poses") => {
                let p = tokens.next().ok_or_else(|| bad("poses needs a path".into()))?;
                pose_file = Some(PathBuf::from(p));
            }
            Some("frame") => {
                let vals: Vec<&str> = tokens.collect();
                if !(2..=4).contains(&vals.len()) {
                    return Err(bad(format!("frame needs 2-4 paths, found {}", vals.len())));
                }
                let opt = |i: usize| -> Option<PathBuf> {
                    vals.get(i).filter(|&&s| s != "-").map(PathBuf::from)
                };
                frames.push(FrameEntry {
                    left: PathBuf::from(vals[0]),
                    right: PathBuf::from(vals[1]),
                    gt: opt(2),
                    occlusion: opt(3),
                });
            }
            Some(other) => return Err(bad(format!("unknown directive {other:?}"))),
            None => unreachable!("blank lines skipped"),
        }
    }
    let rig = rig.ok_or_else(|| {
        Error::format(format!("{}: missing rig line", path.display()))
    })?;
    if frames.is_empty() {
        return Err(Error::format(format!("{}: no frames listed", path.display())));
    }
    let mut manifest = SequenceManifest { rig, frames, pose_file, poses: None, root };
    for (i, f) in manifest.frames.iter().enumerate() {
        for rel in [Some(&f.left), Some(&f.right), f.gt.as_ref(), f.occlusion.as_ref()]
            .into_iter()
            .flatten()
        {
            let p = manifest.root.join(rel);
            if !p.is_file() {
                return Err(Error::validation(format!(
                    "frame {i}: referenced file missing: {}",
                    p.display()
                )));
            }
        }
    }
    if let Some(pf) = &manifest.pose_file {
        let poses = read_poses(&manifest.root.join(pf))?;
        if poses.len() != manifest.frames.len() {
            return Err(Error::validation(format!(
                "{} poses for {} frames",
                poses.len(),
                manifest.frames.len()
            )));
        }
        manifest.poses = Some(poses);
    }
    Ok(manifest)
}

/// Keeps frames 0, k, 2k, …, carrying their poses unchanged.
pub fn frame_skip(manifest: &SequenceManifest, k: usize) -> Result<SequenceManifest> {
    if k < 1 {
        return Err(Error::validation("skip factor must be >= 1"));
    }
    let keep: Vec<usize> = (0..manifest.frames.len()).step_by(k).collect();
    Ok(SequenceManifest {
        rig: manifest.rig,
        frames: keep.iter().map(|&i| manifest.frames[i].clone()).collect(),
        pose_file: manifest.pose_file.clone(),
        poses: manifest.poses.as_ref().map(|p| keep.iter().map(|&i| p[i]).collect()),
        root: manifest.root.clone(),
    })
}

/// Perturbs each pose by a rotation about a uniform random axis with angle
/// ~ U[0, 0.3·level degrees] and a translation with per-axis components
/// ~ U[−0.001·level, 0.001·level] meters.
pub fn pose_noise(manifest: &SequenceManifest, level: u32, seed: u64) -> Result<SequenceManifest> {
    let poses = manifest
        .poses
        .as_ref()
        .ok_or_else(|| Error::validation("pose noise needs a sequence with poses"))?;
    let mut out = manifest.clone();
    if level == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_angle = (0.3 * level as f64).to_radians();
    let max_trans = 0.001 * level as f64;
    let noisy: Vec<(f64, Pose)> = poses
        .iter()
        .map(|(ts, pose)| {
            let axis = loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 1e-6 && n <= 1.0 {
                    break v / n;
                }
            };
            let angle = rng.random_range(0.0..max_angle);
            let dt = Vector3::new(
                rng.random_range(-max_trans..max_trans),
                rng.random_range(-max_trans..max_trans),
                rng.random_range(-max_trans..max_trans),
            );
            let dr = Pose::from_axis_angle(axis, angle, Vector3::zeros());
            (*ts, Pose { rotation: dr.rotation * pose.rotation, translation: pose.translation + dt })
        })
        .collect();
    out.poses = Some(noisy);
    out.pose_file = None; // in-memory poses no longer match the file on disk
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset generation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePreset {
    /// Backdrop wall plus scattered tilted panels and spheres, moving camera.
    Standard,
    /// Near square over a far wall, static camera.
    TwoPlane,
}

#[derive(Debug, Clone)]
pub struct SequenceSpec {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub baseline: f64,
    pub preset: ScenePreset,
    pub trajectory: TrajectoryParams,
}

impl SequenceSpec {
    pub fn standard(n_frames: usize, width: usize, height: usize) -> Self {
        SequenceSpec {
            n_frames,
            width,
            height,
            baseline: 0.1,
            preset: ScenePreset::Standard,
            trajectory: TrajectoryParams::default(),
        }
    }

    pub fn two_plane(n_frames: usize, width: usize, height: usize) -> Self {
        SequenceSpec {
            n_frames,
            width,
            height,
            baseline: 0.1,
            preset: ScenePreset::TwoPlane,
            trajectory: TrajectoryParams::static_camera(),
        }
    }

    pub fn rig(&self) -> Result<CameraRig> {
        CameraRig::new(
            0.625 * self.width as f64,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.baseline,
            self.width,
            self.height,
        )
    }
}

/// Renders a full sequence to `out_dir` (images, ground truth, occlusion
/// masks, poses, manifest) and returns the loaded manifest.
pub fn generate_sequence(seed: u64, out_dir: &Path, spec: &SequenceSpec) -> Result<SequenceManifest> {
    if spec.n_frames == 0 {
        return Err(Error::validation("sequence needs at least one frame"));
    }
    let rig = spec.rig()?;
    let scene = match spec.preset {
        ScenePreset::Standard => generate_scene(seed, &SceneSpec::default())?,
        ScenePreset::TwoPlane => two_plane_scene(),
    };
    let trajectory = generate_trajectory(seed ^ 0xA076_1D64_78BD_642F, spec.n_frames, &spec.trajectory)?;
    for sub in ["left", "right", "gt", "occ"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let mut frames = Vec::with_capacity(spec.n_frames);
    for (i, (_, pose)) in trajectory.samples.iter().enumerate() {
        let frame = render_frame(&scene, &rig, pose);
        let entry = FrameEntry {
            left: PathBuf::from(format!("left/{i:04}.png")),
            right: PathBuf::from(format!("right/{i:04}.png")),
            gt: Some(PathBuf::from(format!("gt/{i:04}.pfm"))),
            occlusion: Some(PathBuf::from(format!("occ/{i:04}.png"))),
        };
        write_gray(&out_dir.join(&entry.left), &frame.left)?;
        write_gray(&out_dir.join(&entry.right), &frame.right)?;
        write_pfm(out_dir.join(entry.gt.as_ref().expect("set above")).as_path(), &frame.gt)?;
        let occ_img = GrayF32 {
            width: rig.width,
            height: rig.height,
            data: frame.occluded.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
        };
        write_gray(&out_dir.join(entry.occlusion.as_ref().expect("set above")), &occ_img)?;
        frames.push(entry);
    }
    write_poses(&out_dir.join("poses.txt"), &trajectory.samples)?;
    let manifest = SequenceManifest {
        rig,
        frames,
        pose_file: Some(PathBuf::from("poses.txt")),
        poses: Some(trajectory.samples),
        root: out_dir.to_path_buf(),
    };
    write_manifest(&out_dir.join("manifest.txt"), &manifest)?;
    load_manifest(&out_dir.join("manifest.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_rig() -> CameraRig {
        CameraRig::new(40.0, 32.0, 24.0, 0.1, 64, 48).unwrap()
    }

    fn fronto_plane_scene(z: f64) -> Scene {
        Scene {
            primitives: vec![Primitive::Plane {
                anchor: Vector3::new(0.0, 0.0, z),
                normal: Vector3::new(0.0, 0.0, -1.0),
                half_extent: None,
                texture: Texture {
                    checker_period: 0.05,
                    noise_octaves: 3,
                    noise_scale: 20.0,
                    noise_amp: 0.5,
                    albedo: (0.2, 0.85),
                    seed: 7,
                },
            }],
        }
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = generate_scene(42, &spec).unwrap();
        let b = generate_scene(42, &spec).unwrap();
        let rig = small_rig();
        let fa = render_frame(&a, &rig, &Pose::identity());
        let fb = render_frame(&b, &rig, &Pose::identity());
        assert_eq!(fa.left.data, fb.left.data);
        assert_eq!(fa.gt.values, fb.gt.values);
    }

    #[test]
    fn scene_spec_bounds_are_checked() {
        let mut spec = SceneSpec::default();
        spec.depth_range = (0.1, 2.0); // violates the 0.2 m clearance
        assert!(generate_scene(1, &spec).is_err());
        let mut spec = SceneSpec::default();
        spec.backdrop_depth = Some(1.0); // in front of the depth range
        assert!(generate_scene(1, &spec).is_err());
    }

    #[test]
    fn fronto_plane_has_constant_analytic_disparity() {
        let rig = small_rig();
        // Z chosen so d = f*b/Z = 10 exactly.
        let z = rig.f * rig.b / 10.0;
        let frame = render_frame(&fronto_plane_scene(z), &rig, &Pose::identity());
        for i in 0..frame.gt.values.len() {
            assert!(frame.gt.mask[i], "plane covers every pixel");
            assert!((frame.gt.values[i] - 10.0).abs() < 1e-5, "gt {}", frame.gt.values[i]);
        }
    }

    #[test]
    fn photoconsistency_holds_at_integer_disparity() {
        let rig = small_rig();
        let z = rig.f * rig.b / 10.0;
        let frame = render_frame(&fronto_plane_scene(z), &rig, &Pose::identity());
        let mut checked = 0;
        for y in 0..rig.height {
            for x in 0..rig.width {
                let i = y * rig.width + x;
                if frame.occluded[i] {
                    assert!(x < 10, "only the out-of-frame band may be occluded here");
                    continue;
                }
                let l = frame.left.data[i];
                let r = frame.right.data[y * rig.width + x - 10];
                assert!((l - r).abs() <= 2.0 / 255.0, "({x},{y}): {l} vs {r}");
                checked += 1;
            }
        }
        assert!(checked > rig.width * rig.height / 2);
    }

    #[test]
    fn near_panel_occludes_far_wall_on_its_left() {
        // Bigger rig so the occlusion band spans several pixels.
        let rig = CameraRig::new(80.0, 64.0, 48.0, 0.2, 128, 96).unwrap();
        let frame = render_frame(&two_plane_scene(), &rig, &Pose::identity());
        let d_near = (rig.f * rig.b / 1.0) as f32; // 16
        let d_far = (rig.f * rig.b / 2.0) as f32; // 8
        let mut in_band = 0;
        let y = rig.height / 2;
        // Panel half-extent 0.35 at Z=1: left edge at u = cx - 0.35*f.
        let panel_left = (rig.cx - 0.35 * rig.f) as usize;
        for x in (d_near as usize)..rig.width {
            let i = y * rig.width + x;
            let d = frame.gt.values[i];
            if frame.occluded[i] {
                assert!(
                    (d - d_far).abs() < 1e-3,
                    "occluded pixels belong to the far wall, got d={d} at x={x}"
                );
                assert!(x < panel_left && x + 10 > panel_left, "band hugs the panel edge, x={x}");
                in_band += 1;
            }
        }
        // Band width is d_near - d_far = 8 px.
        assert!(
            (6..=9).contains(&in_band),
            "expected an 8 px occlusion band, found {in_band}"
        );
        // Disparity is bimodal: only the two plane values appear.
        for &d in frame.gt.values.iter() {
            assert!(
                (d - d_near).abs() < 1e-3 || (d - d_far).abs() < 1e-3,
                "unexpected disparity {d}"
            );
        }
    }

    #[test]
    fn occluded_pixels_fail_photoconsistency() {
        let rig = CameraRig::new(80.0, 64.0, 48.0, 0.2, 128, 96).unwrap();
        let frame = render_frame(&two_plane_scene(), &rig, &Pose::identity());
        let (mut band, mut inconsistent) = (0, 0);
        for y in 0..rig.height {
            for x in 16..rig.width {
                let i = y * rig.width + x;
                if !frame.occluded[i] {
                    continue;
                }
                band += 1;
                let ur = x as f32 - frame.gt.values[i];
                let r = frame.right.sample(ur, y as f32);
                if (frame.left.data[i] - r).abs() > 2.0 / 255.0 {
                    inconsistent += 1;
                }
            }
        }
        assert!(band > 100, "band should cover many rows, found {band}");
        // The panel and wall textures differ, so nearly all blocked pixels
        // disagree with what the right camera actually sees there.
        assert!(
            inconsistent as f64 > 0.8 * band as f64,
            "{inconsistent}/{band} inconsistent"
        );
    }

    #[test]
    fn zero_velocity_trajectory_is_constant() {
        let t = generate_trajectory(3, 10, &TrajectoryParams::static_camera()).unwrap();
        assert_eq!(t.samples.len(), 10);
        for (_, p) in &t.samples {
            assert_eq!(p.rotation, nalgebra::Matrix3::identity());
            assert_eq!(p.translation, Vector3::zeros());
        }
    }

    #[test]
    fn trajectory_respects_velocity_bounds() {
        let params = TrajectoryParams::default();
        let t = generate_trajectory(42, 30, &params).unwrap();
        assert_eq!(t.samples.len(), 30);
        let mut moved = false;
        for k in 1..t.samples.len() {
            let (ta, a) = &t.samples[k - 1];
            let (tb, b) = &t.samples[k];
            assert!(tb > ta, "timestamps strictly increasing");
            assert!((tb - ta - 1.0 / 30.0).abs() < 1e-12);
            let rel = b.compose(&a.inverse());
            let trans = (a.camera_center() - b.camera_center()).norm();
            assert!(trans <= params.max_translation + 1e-12, "step {trans}");
            assert!(rel.rotation_angle() <= params.max_rotation_deg.to_radians() + 1e-12);
            moved |= trans > 1e-6;
        }
        assert!(moved, "default parameters should actually move the camera");
    }

    #[test]
    fn trajectories_differ_by_seed_and_repeat_by_seed() {
        let params = TrajectoryParams::default();
        let a = generate_trajectory(1, 10, &params).unwrap();
        let b = generate_trajectory(2, 10, &params).unwrap();
        let a2 = generate_trajectory(1, 10, &params).unwrap();
        assert!(a.samples.iter().zip(&b.samples).any(|((_, p), (_, q))| p != q));
        assert!(a.samples.iter().zip(&a2.samples).all(|((_, p), (_, q))| p == q));
    }

    #[test]
    fn sequence_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SequenceSpec::standard(3, 64, 48);
        let manifest = generate_sequence(7, dir.path(), &spec).unwrap();
        assert_eq!(manifest.len(), 3);
        assert!(manifest.poses.is_some());
        let loaded = load_manifest(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.rig, manifest.rig);
        assert_eq!(loaded.frames, manifest.frames);
        // GT PFM reads back with valid pixels in the physical range.
        let gt = read_pfm(&loaded.resolve(loaded.frames[0].gt.as_ref().unwrap())).unwrap();
        let (d_min, d_max) = (loaded.rig.f * loaded.rig.b / 3.0, loaded.rig.f * loaded.rig.b / 0.8);
        for i in 0..gt.values.len() {
            if gt.mask[i] {
                let d = gt.values[i] as f64;
                assert!(d > d_min - 1e-3 && d < d_max + 1e-3, "gt {d} outside [{d_min},{d_max}]");
            }
        }
    }

    #[test]
    fn generation_is_deterministic_on_disk() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = SequenceSpec::standard(2, 64, 48);
        generate_sequence(11, dir_a.path(), &spec).unwrap();
        generate_sequence(11, dir_b.path(), &spec).unwrap();
        for rel in ["left/0001.png", "right/0001.png", "gt/0001.pfm", "occ/0001.png", "poses.txt"] {
            let a = fs::read(dir_a.path().join(rel)).unwrap();
            let b = fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between identical runs");
        }
    }

    #[test]
    fn frame_skip_selects_every_kth_frame() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_sequence(3, dir.path(), &SequenceSpec::standard(30, 64, 48)).unwrap();
        let id = frame_skip(&manifest, 1).unwrap();
        assert_eq!(id.frames, manifest.frames);
        let skipped = frame_skip(&manifest, 6).unwrap();
        assert_eq!(skipped.len(), 5);
        for (i, f) in skipped.frames.iter().enumerate() {
            assert_eq!(f, &manifest.frames[i * 6]);
            let (ts_s, pose_s) = &skipped.poses.as_ref().unwrap()[i];
            let (ts_m, pose_m) = &manifest.poses.as_ref().unwrap()[i * 6];
            assert_eq!(ts_s, ts_m, "poses carried unchanged");
            assert_eq!(pose_s, pose_m);
        }
        let single = frame_skip(&manifest, 100).unwrap();
        assert_eq!(single.len(), 1);
        assert!(frame_skip(&manifest, 0).is_err());
    }

    #[test]
    fn pose_noise_levels_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_sequence(5, dir.path(), &SequenceSpec::standard(8, 64, 48)).unwrap();
        let clean = pose_noise(&manifest, 0, 99).unwrap();
        for ((_, a), (_, b)) in clean.poses.as_ref().unwrap().iter().zip(manifest.poses.as_ref().unwrap()) {
            assert_eq!(a, b, "level 0 must leave poses unchanged");
        }
        let n1 = pose_noise(&manifest, 1, 99).unwrap();
        let n1b = pose_noise(&manifest, 1, 99).unwrap();
        let mut any_moved = false;
        for (i, ((_, noisy), (_, orig))) in n1
            .poses
            .as_ref()
            .unwrap()
            .iter()
            .zip(manifest.poses.as_ref().unwrap())
            .enumerate()
        {
            let dr = Pose {
                rotation: noisy.rotation * orig.rotation.transpose(),
                translation: Vector3::zeros(),
            };
            let angle_deg = dr.rotation_angle().to_degrees();
            assert!(angle_deg <= 0.3 + 1e-9, "frame {i}: rotation noise {angle_deg} deg");
            let dt = noisy.translation - orig.translation;
            for c in [dt.x, dt.y, dt.z] {
                assert!(c.abs() <= 0.001 + 1e-12, "frame {i}: translation noise {c}");
            }
            any_moved |= angle_deg > 1e-6;
            assert_eq!(noisy, &n1b.poses.as_ref().unwrap()[i].1, "same seed, same noise");
        }
        assert!(any_moved);
        let bare = SequenceManifest { poses: None, ..manifest.clone() };
        assert!(pose_noise(&bare, 1, 0).is_err());
    }

    #[test]
    fn manifest_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.txt");
        fs::write(&m, "frame a.png b.png\n").unwrap();
        let err = load_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("missing rig"), "{err}");

        fs::write(&m, "rig 40 32 24 0.1 64 48\nframe left.png right.png\n").unwrap();
        let err = load_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("left.png"), "missing file should be named: {err}");

        fs::write(&m, "rig 40 32 24 0.1 64 48\nbogus x\n").unwrap();
        let err = load_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn manifest_pose_count_must_match_frames() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_sequence(9, dir.path(), &SequenceSpec::standard(3, 64, 48)).unwrap();
        // Truncate the pose file to 2 entries.
        let pf = manifest.resolve(manifest.pose_file.as_ref().unwrap());
        let text = fs::read_to_string(&pf).unwrap();
        let keep: Vec<&str> = text.lines().take(3).collect(); // header + 2 poses
        fs::write(&pf, keep.join("\n")).unwrap();
        let err = load_manifest(&dir.path().join("manifest.txt")).unwrap_err().to_string();
        assert!(err.contains("2 poses for 3 frames"), "{err}");
    }

    #[test]
    fn value_noise_is_smooth_and_bounded() {
        for k in 0..200 {
            let x = k as f64 * 0.173;
            let y = k as f64 * 0.091;
            let v = value_noise(x, y, 5);
            assert!((0.0..=1.0).contains(&v));
            let dv = (value_noise(x + 1e-4, y, 5) - v).abs();
            assert!(dv < 1e-2, "noise should be locally smooth, jumped {dv}");
        }
    }
}
