//! Cameras, rigid transforms and point-map geometry.
//!
//! Conventions (fixed across the crate):
//! - camera frame: x right, y down, z forward;
//! - pixel `i` is the column, `j` the row, and rays pass through the
//!   integer pixel coordinates `[i, j, 1]` — no half-pixel offset;
//! - poses are stored camera-to-world; relative transforms are computed on
//!   demand;
//! - invalid point-map pixels hold exactly `(0,0,0)` plus a mask bit, never
//!   NaN.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies the camera frame a point map is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameId(pub u32);

impl std::fmt::Display for FrameId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "frame{}", self.0)
    }
}

/// Default near-plane for projections, in meters.
pub const Z_NEAR: f64 = 1e-3;

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Ray direction through integer pixel (i, j): `K^-1 [i, j, 1]^T`.
    pub fn ray(&self, i: f64, j: f64) -> [f64; 3] {
        [(i - self.cx) / self.fx, (j - self.cy) / self.fy, 1.0]
    }

    /// Projects a camera-frame point; no bounds or near-plane policy here.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    /// Intrinsics of a crop window whose top-left corner is `(x0, y0)`:
    /// the principal point shifts by the crop offset.
    pub fn cropped(&self, x0: usize, y0: usize, width: usize, height: usize) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx - x0 as f64,
            cy: self.cy - y0 as f64,
            width,
            height,
        }
    }
}

/// Rigid SE(3) transform, stored as a row-major 4x4 homogeneous matrix.
/// Used both for camera-to-world poses and frame-to-frame maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    m: [f64; 16],
}

impl Pose {
    pub fn identity() -> Self {
        let mut m = [0.0; 16];
        m[0] = 1.0;
        m[5] = 1.0;
        m[10] = 1.0;
        m[15] = 1.0;
        Pose { m }
    }

    /// Validates rigidity: orthonormal rotation with det +1 (within 1e-9)
    /// and homogeneous last row.
    pub fn from_matrix(m: [f64; 16]) -> Result<Self> {
        let p = Pose { m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.m;
        let bottom_ok = m[12] == 0.0 && m[13] == 0.0 && m[14] == 0.0 && m[15] == 1.0;
        if !bottom_ok {
            return Err(Error::InvalidParameter("pose last row must be (0,0,0,1)".into()));
        }
        let r = self.rotation();
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += r[i][k] * r[j][k];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((dot - expect).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        max_dev = max_dev.max((det - 1.0).abs());
        if max_dev > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "matrix is not rigid (orthonormality/determinant deviation {max_dev:.3e})"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &[f64; 16] {
        &self.m
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[3], self.m[7], self.m[11]]
    }

    pub fn from_rt(r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        Pose::from_matrix([
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2], //
            0.0, 0.0, 0.0, 1.0,
        ])
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        let mut p = Pose::identity();
        p.m[3] = t[0];
        p.m[7] = t[1];
        p.m[11] = t[2];
        p
    }

    /// Rotation about the camera/world x axis (pitch).
    pub fn rotation_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Pose::from_rt([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], [0.0; 3]).unwrap()
    }

    /// Rotation about the y axis (yaw, the vertical axis in the y-down
    /// convention).
    pub fn rotation_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Pose::from_rt([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], [0.0; 3]).unwrap()
    }

    /// Rotation about the z axis (roll).
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Pose::from_rt([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]).unwrap()
    }

    /// Composition: `(self * other)` applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let a = &self.m;
        let b = &other.m;
        let mut m = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a[i * 4 + k] * b[k * 4 + j];
                }
                m[i * 4 + j] = acc;
            }
        }
        Pose { m }
    }

    /// Rigid inverse `(R^T, -R^T t)`.
    pub fn inverse(&self) -> Pose {
        let r = self.rotation();
        let t = self.translation();
        let rt =
            [[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]];
        let nt = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Pose {
            m: [
                rt[0][0], rt[0][1], rt[0][2], nt[0], //
                rt[1][0], rt[1][1], rt[1][2], nt[1], //
                rt[2][0], rt[2][1], rt[2][2], nt[2], //
                0.0, 0.0, 0.0, 1.0,
            ],
        }
    }

    /// Applies the transform to a point: `h^-1(P h(p))`.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    /// Rotates a direction (no translation).
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[4] * v[0] + m[5] * v[1] + m[6] * v[2],
            m[8] * v[0] + m[9] * v[1] + m[10] * v[2],
        ]
    }
}

/// A camera: intrinsics plus camera-to-world pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl CameraView {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        CameraView { intrinsics, pose }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        self.pose.translation()
    }
}

/// Per-pixel metric depth with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a depth map; entries that are non-finite or <= 0 are marked
    /// invalid regardless of `valid`.
    pub fn new(width: usize, height: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(
                "DepthMap::new",
                format!("{}x{} vs {} values", width, height, data.len()),
            ));
        }
        let mut data = data;
        let mut valid = valid;
        for (v, d) in valid.iter_mut().zip(data.iter_mut()) {
            if !(*d > 0.0 && d.is_finite()) {
                *v = false;
            }
            if !*v {
                *d = 0.0;
            }
        }
        Ok(DepthMap { width, height, data, valid })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn mask(&self) -> &[bool] {
        &self.valid
    }
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let idx = j * self.width + i;
        self.valid[idx].then(|| self.data[idx])
    }
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Per-pixel 3-D coordinates in a declared camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    width: usize,
    height: usize,
    points: Vec<[f64; 3]>,
    valid: Vec<bool>,
    frame: FrameId,
}

impl PointMap {
    pub fn new(
        width: usize,
        height: usize,
        points: Vec<[f64; 3]>,
        valid: Vec<bool>,
        frame: FrameId,
    ) -> Result<Self> {
        if points.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(
                "PointMap::new",
                format!("{}x{} vs {} points", width, height, points.len()),
            ));
        }
        let mut points = points;
        for (p, &v) in points.iter_mut().zip(valid.iter()) {
            if !v {
                *p = [0.0; 3]; // invalid sentinel is exactly zero
            }
        }
        Ok(PointMap { width, height, points, valid, frame })
    }

    pub fn invalid(width: usize, height: usize, frame: FrameId) -> Self {
        PointMap {
            width,
            height,
            points: vec![[0.0; 3]; width * height],
            valid: vec![false; width * height],
            frame,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn frame(&self) -> FrameId {
        self.frame
    }
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }
    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, i: usize, j: usize) -> Option<[f64; 3]> {
        let idx = j * self.width + i;
        self.valid[idx].then(|| self.points[idx])
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Indices of valid pixels in linear (row-major) order.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.valid[i]).collect()
    }

    pub fn expect_frame(&self, frame: FrameId) -> Result<()> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame.to_string(),
                actual: self.frame.to_string(),
            });
        }
        Ok(())
    }
}

/// Unordered 3-D points in the world frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LidarScan {
    pub points: Vec<[f64; 3]>,
    pub intensity: Option<Vec<f64>>,
}

impl LidarScan {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("lidar scan contains non-finite points".into()));
        }
        Ok(LidarScan { points, intensity: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Yaw-oriented 3-D box used to select points for editing.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bbox3 {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub yaw: f64,
}

impl Bbox3 {
    pub fn new(center: [f64; 3], half_extents: [f64; 3], yaw: f64) -> Result<Self> {
        if half_extents.iter().any(|&h| h <= 0.0) {
            return Err(Error::InvalidParameter("bbox half-extents must be positive".into()));
        }
        Ok(Bbox3 { center, half_extents, yaw })
    }

    /// Membership test; yaw rotates the box about the vertical (y) axis.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let (s, c) = (-self.yaw).sin_cos();
        let local = [c * d[0] + s * d[2], d[1], -s * d[0] + c * d[2]];
        local[0].abs() <= self.half_extents[0]
            && local[1].abs() <= self.half_extents[1]
            && local[2].abs() <= self.half_extents[2]
    }
}

/// Lifts a depth map into a point map: per valid pixel,
/// `X = K^-1 [i, j, 1]^T * D_ij`, expressed in the camera's own frame.
pub fn pointmap_from_depth(k: &Intrinsics, d: &DepthMap, frame: FrameId) -> Result<PointMap> {
    if d.width() != k.width || d.height() != k.height {
        return Err(Error::shape(
            "pointmap_from_depth",
            format!("depth {}x{} vs camera {}x{}", d.width(), d.height(), k.width, k.height),
        ));
    }
    let mut points = vec![[0.0; 3]; d.width() * d.height()];
    let mut valid = vec![false; d.width() * d.height()];
    for j in 0..d.height() {
        for i in 0..d.width() {
            let idx = j * d.width() + i;
            if let Some(depth) = d.get(i, j) {
                let ray = k.ray(i as f64, j as f64);
                points[idx] = [ray[0] * depth, ray[1] * depth, ray[2] * depth];
                valid[idx] = true;
            }
        }
    }
    PointMap::new(d.width(), d.height(), points, valid, frame)
}

/// Relative transform taking camera-n coordinates into camera-m
/// coordinates: `P_{n->m} = pose_m^-1 * pose_n`.
pub fn relative_pose(pose_n: &Pose, pose_m: &Pose) -> Result<Pose> {
    pose_n.validate()?;
    pose_m.validate()?;
    Ok(pose_m.inverse().compose(pose_n))
}

/// Maps every valid point of `x` (in frame `from`) through `rel`,
/// re-tagging the result as frame `to`. The mask is unchanged.
pub fn transform_pointmap(
    x: &PointMap,
    rel: &Pose,
    from: FrameId,
    to: FrameId,
) -> Result<PointMap> {
    x.expect_frame(from)?;
    let mut points = vec![[0.0; 3]; x.points().len()];
    for (idx, p) in x.points().iter().enumerate() {
        if x.is_valid(idx) {
            points[idx] = rel.apply(*p);
        }
    }
    PointMap::new(x.width(), x.height(), points, x.mask().to_vec(), to)
}

/// One projected point: continuous pixel coordinates, camera depth, and
/// visibility flags.
#[derive(Clone, Copy, Debug)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Depth exceeded the near plane.
    pub in_front: bool,
    /// Rounded pixel lies inside the image.
    pub in_bounds: bool,
}

impl Projected {
    pub fn visible(&self) -> bool {
        self.in_front && self.in_bounds
    }

    /// Nearest integer pixel.
    pub fn pixel(&self) -> (i64, i64) {
        (self.u.round() as i64, self.v.round() as i64)
    }
}

/// Projects a camera-frame point with the near-plane and bounds policy.
pub fn project_cam_point(k: &Intrinsics, p: [f64; 3], z_near: f64) -> Projected {
    if p[2] <= z_near {
        return Projected { u: 0.0, v: 0.0, depth: p[2], in_front: false, in_bounds: false };
    }
    let (u, v) = k.project(p);
    let (pi, pj) = (u.round() as i64, v.round() as i64);
    let in_bounds = pi >= 0 && pj >= 0 && (pi as usize) < k.width && (pj as usize) < k.height;
    Projected { u, v, depth: p[2], in_front: true, in_bounds }
}

/// Projects world-frame points into a camera. Points behind the near plane
/// or outside the image are flagged, never dropped.
pub fn project_points(points: &[[f64; 3]], view: &CameraView, z_near: f64) -> Vec<Projected> {
    let world_to_cam = view.pose.inverse();
    points
        .iter()
        .map(|&p| project_cam_point(&view.intrinsics, world_to_cam.apply(p), z_near))
        .collect()
}

/// Z-buffered splat of a LiDAR scan into a sparse point map holding
/// camera-frame coordinates. Nearest depth wins; ties keep the earliest
/// point (smallest scan index).
pub fn lidar_to_sparse_pointmap(
    scan: &LidarScan,
    view: &CameraView,
    frame: FrameId,
    z_near: f64,
) -> PointMap {
    let (w, h) = (view.intrinsics.width, view.intrinsics.height);
    let world_to_cam = view.pose.inverse();
    let mut points = vec![[0.0; 3]; w * h];
    let mut valid = vec![false; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];
    for p in &scan.points {
        let cam = world_to_cam.apply(*p);
        let proj = project_cam_point(&view.intrinsics, cam, z_near);
        if !proj.visible() {
            continue;
        }
        let (pi, pj) = proj.pixel();
        let idx = pj as usize * w + pi as usize;
        if proj.depth < zbuf[idx] {
            zbuf[idx] = proj.depth;
            points[idx] = cam;
            valid[idx] = true;
        }
    }
    PointMap::new(w, h, points, valid, frame).expect("sizes are consistent by construction")
}

/// Point-map editing mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    /// Selected points move; vacated pixels become invalid.
    Translate,
    /// Selected points are copied; originals stay in place.
    Duplicate,
}

/// Result of [`edit_pointmap`].
#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub map: PointMap,
    /// Number of points the box selected; 0 means the map is unchanged.
    pub selected: usize,
}

/// Moves or duplicates the points selected by a world-frame box, applying a
/// world-frame rigid `transform` to their *positions* while each
/// re-rasterized pixel keeps the point's original coordinate value. The
/// camera `view` supplies the frame the map lives in and the projection
/// used for re-rasterization. Depth conflicts are z-buffered on the
/// transformed geometry.
pub fn edit_pointmap(
    x: &PointMap,
    view: &CameraView,
    bbox: &Bbox3,
    transform: &Pose,
    mode: EditMode,
) -> Result<EditOutcome> {
    let (w, h) = (x.width(), x.height());
    let cam_to_world = view.pose;
    let world_to_cam = view.pose.inverse();

    // Selection happens in world coordinates.
    let mut selected = Vec::new();
    for idx in x.valid_indices() {
        let p_world = cam_to_world.apply(x.points()[idx]);
        if bbox.contains(p_world) {
            selected.push((idx, p_world));
        }
    }
    if selected.is_empty() {
        log::warn!("edit_pointmap: box selected no points; returning the map unchanged");
        return Ok(EditOutcome { map: x.clone(), selected: 0 });
    }

    let mut points = x.points().to_vec();
    let mut valid = x.mask().to_vec();
    if mode == EditMode::Translate {
        for &(idx, _) in &selected {
            points[idx] = [0.0; 3];
            valid[idx] = false;
        }
    }
    // Depth buffer over the surviving geometry.
    let mut zbuf = vec![f64::INFINITY; w * h];
    for idx in 0..w * h {
        if valid[idx] {
            zbuf[idx] = points[idx][2];
        }
    }
    // Splat moved copies: new position, original stored value.
    for &(idx, p_world) in &selected {
        let moved_world = transform.apply(p_world);
        let moved_cam = world_to_cam.apply(moved_world);
        let proj = project_cam_point(&view.intrinsics, moved_cam, Z_NEAR);
        if !proj.visible() {
            continue;
        }
        let (pi, pj) = proj.pixel();
        let target = pj as usize * w + pi as usize;
        if proj.depth < zbuf[target] {
            zbuf[target] = proj.depth;
            points[target] = x.points()[idx]; // original value, by design
            valid[target] = true;
        }
    }
    let n_selected = selected.len();
    Ok(EditOutcome { map: PointMap::new(w, h, points, valid, x.frame())?, selected: n_selected })
}
