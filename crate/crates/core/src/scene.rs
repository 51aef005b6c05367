//! Procedural scenes and the raycast renderer that supplies ground truth:
//! RGB, metric depth, primitive IDs, simulated LiDAR and evaluation
//! trajectories.
//!
//! Rendering is unshaded (albedo only) on purpose: a forward-warped pixel
//! then has to equal the target render bit for bit wherever both views see
//! the same primitive, which turns warping and correspondence tests into
//! exact comparisons.
//!
//! World frame matches the camera convention: x right, y down, z forward;
//! the ground plane sits at positive y below the cameras. One scene unit
//! is one meter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraView, DepthMap, Intrinsics, LidarScan, Pose};
use crate::img::RgbImage;

/// Scene primitive shapes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box given by opposite corners.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Horizontal plane at height `y` (positive y is below the cameras).
    GroundPlane { y: f64 },
}

/// Surface color model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    Solid { color: [f64; 3] },
    Checker { a: [f64; 3], b: [f64; 3], period: f64 },
}

impl Surface {
    fn albedo(&self, p: [f64; 3]) -> [f64; 3] {
        match self {
            Surface::Solid { color } => *color,
            Surface::Checker { a, b, period } => {
                let parity = (p[0] / period).floor() as i64
                    + (p[1] / period).floor() as i64
                    + (p[2] / period).floor() as i64;
                if parity.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub surface: Surface,
}

/// A procedural scene: primitives plus a sky color.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub sky: [f64; 3],
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::InvalidParameter("scene needs at least one primitive".into()));
        }
        let color_ok = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        for obj in &self.objects {
            let ok = match &obj.surface {
                Surface::Solid { color } => color_ok(color),
                Surface::Checker { a, b, .. } => color_ok(a) && color_ok(b),
            };
            if !ok {
                return Err(Error::InvalidParameter("colors must lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

/// A ray hit: parameter along the unit direction, world point, primitive.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub point: [f64; 3],
    pub prim: u32,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn ray_shape(shape: &Shape, origin: [f64; 3], dir: [f64; 3], t_min: f64) -> Option<f64> {
    match shape {
        Shape::Sphere { center, radius } => {
            let oc = [origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]];
            let b = dot(oc, dir);
            let c = dot(oc, oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t0 = -b - sq;
            let t1 = -b + sq;
            if t0 > t_min {
                Some(t0)
            } else if t1 > t_min {
                Some(t1)
            } else {
                None
            }
        }
        Shape::Box { min, max } => {
            let mut t_enter = f64::NEG_INFINITY;
            let mut t_exit = f64::INFINITY;
            for a in 0..3 {
                if dir[a].abs() < 1e-15 {
                    if origin[a] < min[a] || origin[a] > max[a] {
                        return None;
                    }
                    continue;
                }
                let inv = 1.0 / dir[a];
                let (mut t0, mut t1) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                t_enter = t_enter.max(t0);
                t_exit = t_exit.min(t1);
                if t_enter > t_exit {
                    return None;
                }
            }
            if t_enter > t_min {
                Some(t_enter)
            } else if t_exit > t_min {
                Some(t_exit)
            } else {
                None
            }
        }
        Shape::GroundPlane { y } => {
            if dir[1].abs() < 1e-15 {
                return None;
            }
            let t = (y - origin[1]) / dir[1];
            (t > t_min).then_some(t)
        }
    }
}

/// Nearest intersection of a world-space ray with the scene. `dir` must be
/// unit length; `t_min` culls hits at or behind the origin.
pub fn raycast(scene: &SceneSpec, origin: [f64; 3], dir: [f64; 3], t_min: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (idx, obj) in scene.objects.iter().enumerate() {
        if let Some(t) = ray_shape(&obj.shape, origin, dir, t_min) {
            if best.map(|b| t < b.t).unwrap_or(true) {
                let point =
                    [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
                best = Some(Hit { t, point, prim: idx as u32 });
            }
        }
    }
    best
}

/// Raycast render: per-pixel albedo, camera-frame z depth and primitive ID.
#[derive(Clone, Debug)]
pub struct RenderOut {
    pub image: RgbImage,
    pub depth: DepthMap,
    /// Primitive index per pixel; `None` for sky.
    pub prim_id: Vec<Option<u32>>,
}

/// Renders a view deterministically: one ray through each integer pixel
/// coordinate, nearest hit wins, no shading.
pub fn render(scene: &SceneSpec, view: &CameraView) -> Result<RenderOut> {
    scene.validate()?;
    let k = &view.intrinsics;
    let (w, h) = (k.width, k.height);
    let origin = view.center();
    let world_to_cam = view.pose.inverse();
    let mut pixels = vec![scene.sky; w * h];
    let mut depth = vec![0.0f64; w * h];
    let mut valid = vec![false; w * h];
    let mut prim_id = vec![None; w * h];
    for j in 0..h {
        for i in 0..w {
            let ray_cam = k.ray(i as f64, j as f64);
            let norm = dot(ray_cam, ray_cam).sqrt();
            let dir_cam = [ray_cam[0] / norm, ray_cam[1] / norm, ray_cam[2] / norm];
            let dir = view.pose.rotate(dir_cam);
            if let Some(hit) = raycast(scene, origin, dir, 1e-9) {
                let idx = j * w + i;
                pixels[idx] = scene.objects[hit.prim as usize].surface.albedo(hit.point);
                depth[idx] = world_to_cam.apply(hit.point)[2];
                valid[idx] = true;
                prim_id[idx] = Some(hit.prim);
            }
        }
    }
    Ok(RenderOut {
        image: RgbImage::new(w, h, pixels)?,
        depth: DepthMap::new(w, h, depth, valid)?,
        prim_id,
    })
}

/// Viewpoint augmentations used for the evaluation trajectories: yaw by a
/// fixed angle, lateral shift across the heading, or elevation with a
/// downward pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augment {
    None,
    /// Rotate about the camera y axis; positive looks right.
    Yaw { degrees: f64 },
    /// Shift along the camera x axis (orthogonal to the heading).
    Lateral { meters: f64 },
    /// Fly upward and pitch the camera down.
    Elevate { up_meters: f64, pitch_down_degrees: f64 },
}

impl Augment {
    /// Parses the CLI/config form, e.g. `yaw:45`, `lateral:-2`,
    /// `elevate:1:10`, `none`.
    pub fn parse(s: &str) -> Result<Augment> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| -> Result<f64> {
            p.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad augmentation number {p}")))
        };
        match parts.as_slice() {
            ["none"] => Ok(Augment::None),
            ["yaw", d] => Ok(Augment::Yaw { degrees: num(d)? }),
            ["lateral", m] => Ok(Augment::Lateral { meters: num(m)? }),
            ["elevate", up, pitch] => {
                Ok(Augment::Elevate { up_meters: num(up)?, pitch_down_degrees: num(pitch)? })
            }
            _ => Err(Error::InvalidParameter(format!("unsupported augmentation kind: {s}"))),
        }
    }

    /// The rigid offset applied in the camera's local frame.
    pub fn local_transform(&self) -> Pose {
        match *self {
            Augment::None => Pose::identity(),
            Augment::Yaw { degrees } => Pose::rotation_y(degrees.to_radians()),
            Augment::Lateral { meters } => Pose::from_translation([meters, 0.0, 0.0]),
            Augment::Elevate { up_meters, pitch_down_degrees } => {
                // Up is -y; pitching down turns +z toward +y.
                Pose::from_translation([0.0, -up_meters, 0.0])
                    .compose(&Pose::rotation_x(-pitch_down_degrees.to_radians()))
            }
        }
    }
}

/// A forward path with one augmentation applied to every frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub intrinsics: Intrinsics,
    /// First camera position (world).
    pub start: [f64; 3],
    /// Heading about the vertical axis, radians; 0 looks along +z.
    pub heading: f64,
    /// Spacing between consecutive frames, meters.
    pub step: f64,
    pub frames: usize,
    pub augment: Augment,
}

/// Builds camera views by composing each base pose with the augmentation
/// offset in the camera's local frame.
pub fn make_trajectory(spec: &TrajectorySpec) -> Result<Vec<CameraView>> {
    spec.intrinsics.validate()?;
    let offset = spec.augment.local_transform();
    let heading = Pose::rotation_y(spec.heading);
    let mut views = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let forward = heading.rotate([0.0, 0.0, spec.step * f as f64]);
        let position = [
            spec.start[0] + forward[0],
            spec.start[1] + forward[1],
            spec.start[2] + forward[2],
        ];
        let base = Pose::from_translation(position).compose(&heading);
        views.push(CameraView::new(spec.intrinsics, base.compose(&offset)));
    }
    Ok(views)
}

/// Azimuth/elevation raycast grid emulating a spinning-beam sensor, far
/// below image resolution.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LidarPattern {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    /// Full azimuth fan in radians, centered on the sensor's +z.
    pub fov_azimuth: f64,
    /// Full elevation fan in radians.
    pub fov_elevation: f64,
}

impl Default for LidarPattern {
    fn default() -> Self {
        LidarPattern {
            n_azimuth: 64,
            n_elevation: 16,
            fov_azimuth: 1.2,
            fov_elevation: 0.7,
        }
    }
}

/// One raycast per (azimuth, elevation) cell from the sensor origin; hits
/// become world points.
pub fn simulate_lidar(scene: &SceneSpec, sensor: &CameraView, pattern: &LidarPattern) -> Result<LidarScan> {
    if pattern.n_azimuth == 0 || pattern.n_elevation == 0 {
        return Err(Error::InvalidParameter("lidar pattern must be at least 1x1".into()));
    }
    let origin = sensor.center();
    let mut points = Vec::new();
    for ei in 0..pattern.n_elevation {
        for ai in 0..pattern.n_azimuth {
            let az = if pattern.n_azimuth == 1 {
                0.0
            } else {
                -pattern.fov_azimuth / 2.0
                    + pattern.fov_azimuth * ai as f64 / (pattern.n_azimuth - 1) as f64
            };
            let el = if pattern.n_elevation == 1 {
                0.0
            } else {
                -pattern.fov_elevation / 2.0
                    + pattern.fov_elevation * ei as f64 / (pattern.n_elevation - 1) as f64
            };
            // Sensor frame: el > 0 tips the beam toward +y (down).
            let dir_local = [az.sin() * el.cos(), el.sin(), az.cos() * el.cos()];
            let dir = sensor.pose.rotate(dir_local);
            if let Some(hit) = raycast(scene, origin, dir, 1e-9) {
                points.push(hit.point);
            }
        }
    }
    LidarScan::new(points)
}

/// Two overlapping crops of one image, each with shifted intrinsics — a
/// training pair with identity relative pose synthesized from one capture.
#[derive(Clone, Debug)]
pub struct CropPair {
    pub images: [RgbImage; 2],
    pub depths: [DepthMap; 2],
    pub intrinsics: [Intrinsics; 2],
    pub offsets: [(usize, usize); 2],
}

fn crop_depth(d: &DepthMap, x0: usize, y0: usize, w: usize, h: usize) -> Result<DepthMap> {
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let idx = (y0 + j) * d.width() + (x0 + i);
            data.push(d.data()[idx]);
            valid.push(d.mask()[idx]);
        }
    }
    DepthMap::new(w, h, data, valid)
}

/// Draws two random crop windows of size `crop_w x crop_h` from one image
/// and its depth, shifting each crop's principal point by its offset.
pub fn random_crop_pair(
    image: &RgbImage,
    depth: &DepthMap,
    k: &Intrinsics,
    crop_w: usize,
    crop_h: usize,
    seed: u64,
) -> Result<CropPair> {
    if crop_w > k.width || crop_h > k.height {
        return Err(Error::InvalidParameter(format!(
            "crop {}x{} larger than image {}x{}",
            crop_w, crop_h, k.width, k.height
        )));
    }
    if image.width() != k.width || image.height() != k.height || depth.width() != k.width {
        return Err(Error::shape("random_crop_pair", "image/depth/intrinsics disagree".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_: usize| {
        let x0 = rng.gen_range(0..=(k.width - crop_w));
        let y0 = rng.gen_range(0..=(k.height - crop_h));
        (x0, y0)
    };
    let o0 = draw(0);
    let o1 = draw(1);
    let build = |o: (usize, usize)| -> Result<(RgbImage, DepthMap, Intrinsics)> {
        Ok((
            image.crop(o.0, o.1, crop_w, crop_h)?,
            crop_depth(depth, o.0, o.1, crop_w, crop_h)?,
            k.cropped(o.0, o.1, crop_w, crop_h),
        ))
    };
    let (i0, d0, k0) = build(o0)?;
    let (i1, d1, k1) = build(o1)?;
    Ok(CropPair { images: [i0, i1], depths: [d0, d1], intrinsics: [k0, k1], offsets: [o0, o1] })
}

/// Random driving-flavored scene: ground plane, a back wall, and a clutter
/// of boxes and spheres with a saturated per-scene palette. Distinct
/// palettes are what give a wrong-reference condition its penalty, so the
/// generator leans colorful.
pub fn random_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::new();
    let palette: Vec<[f64; 3]> = (0..8)
        .map(|_| {
            let hue: f64 = rng.gen_range(0.0..6.0);
            let (r, g, b) = hsv_ish(hue, rng.gen_range(0.7..1.0), rng.gen_range(0.6..1.0));
            [r, g, b]
        })
        .collect();
    objects.push(SceneObject {
        shape: Shape::GroundPlane { y: 1.5 },
        surface: if rng.gen_bool(0.5) {
            Surface::Checker { a: palette[0], b: palette[1], period: rng.gen_range(1.0..2.5) }
        } else {
            Surface::Solid { color: palette[0] }
        },
    });
    // Back wall keeps rays from escaping to the sky in most directions.
    objects.push(SceneObject {
        shape: Shape::Box {
            min: [-14.0, -6.0, rng.gen_range(16.0..22.0)],
            max: [14.0, 1.5, 26.0],
        },
        surface: Surface::Solid { color: palette[2] },
    });
    let n_clutter = rng.gen_range(4..8);
    for c in 0..n_clutter {
        let color = palette[3 + (c % 5)];
        let x = rng.gen_range(-5.0..5.0);
        let z = rng.gen_range(4.0..14.0);
        if rng.gen_bool(0.5) {
            let r = rng.gen_range(0.5..1.4);
            objects.push(SceneObject {
                shape: Shape::Sphere { center: [x, 1.5 - r, z], radius: r },
                surface: Surface::Solid { color },
            });
        } else {
            let (sx, sy, sz) =
                (rng.gen_range(0.6..2.0), rng.gen_range(0.8..2.2), rng.gen_range(0.6..2.0));
            objects.push(SceneObject {
                shape: Shape::Box {
                    min: [x - sx / 2.0, 1.5 - sy, z - sz / 2.0],
                    max: [x + sx / 2.0, 1.5, z + sz / 2.0],
                },
                surface: Surface::Solid { color },
            });
        }
    }
    SceneSpec { objects, sky: [0.55, 0.7, 0.9], seed }
}

fn hsv_ish(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
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
