use serde::{Deserialize, Serialize};

use super::{GeometryError, Mat3, Vec3, WorldBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl CameraIntrinsics {
    pub fn diagonal(&self) -> f64 {
        self.image_w.hypot(self.image_h)
    }
}

/// Pitch `beta` and roll `gamma`, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraPose {
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

impl LayoutBox {
    pub fn world_box(&self) -> WorldBox {
        WorldBox::new(Vec3::from(self.center), Vec3::from(self.size), self.yaw)
    }
}

/// Camera-relative object box: the 3D center is recovered from the 2D box
/// center shifted by `delta` and the distance `distance` from the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBoxParam {
    pub delta: [f64; 2],
    pub distance: f64,
    pub size: [f64; 3],
    pub yaw: f64,
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox2d: [f64; 4],
    pub category: usize,
}

impl ObjectBoxParam {
    pub fn bbox_center(&self) -> [f64; 2] {
        [
            0.5 * (self.bbox2d[0] + self.bbox2d[2]),
            0.5 * (self.bbox2d[1] + self.bbox2d[3]),
        ]
    }

    pub fn bbox_size(&self) -> [f64; 2] {
        [
            self.bbox2d[2] - self.bbox2d[0],
            self.bbox2d[3] - self.bbox2d[1],
        ]
    }
}

fn rz(b: f64) -> Mat3 {
    let (s, c) = b.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rz_d(b: f64) -> Mat3 {
    let (s, c) = b.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn rx(g: f64) -> Mat3 {
    let (s, c) = g.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rx_d(g: f64) -> Mat3 {
    let (s, c) = g.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// Camera-to-world rotation: roll about the forward axis, then pitch about
/// the right axis. Camera axes are forward, up, right.
pub fn camera_rotation(pose: &CameraPose) -> Mat3 {
    rz(pose.beta) * rx(pose.gamma)
}

/// `(∂R/∂β, ∂R/∂γ)`.
pub fn camera_rotation_derivatives(pose: &CameraPose) -> (Mat3, Mat3) {
    (
        rz_d(pose.beta) * rx(pose.gamma),
        rz(pose.beta) * rx_d(pose.gamma),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Forward depth in the camera frame.
    pub depth: f64,
}

const MIN_DEPTH: f64 = 1e-9;

pub fn project_point(
    p: &Vec3,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<Projection, GeometryError> {
    let c = camera_rotation(pose).transpose() * p;
    if c.x <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(c.x));
    }
    Ok(Projection {
        u: k.cx + k.fx * c.z / c.x,
        v: k.cy - k.fy * c.y / c.x,
        depth: c.x,
    })
}

/// Projection with derivatives: rows `(u, v)` against the world point and
/// against `(β, γ)`.
#[allow(clippy::type_complexity)]
pub fn project_point_jacobian(
    p: &Vec3,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<(Projection, [[f64; 3]; 2], [[f64; 2]; 2]), GeometryError> {
    let rt = camera_rotation(pose).transpose();
    let (db, dg) = camera_rotation_derivatives(pose);
    let c = rt * p;
    if c.x <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(c.x));
    }
    let inv = 1.0 / c.x;
    // derivatives of (u, v) with respect to camera-frame coordinates
    let du = Vec3::new(-k.fx * c.z * inv * inv, 0.0, k.fx * inv);
    let dv = Vec3::new(k.fy * c.y * inv * inv, -k.fy * inv, 0.0);
    let du_dp = rt.transpose() * du;
    let dv_dp = rt.transpose() * dv;
    let cb = db.transpose() * p;
    let cg = dg.transpose() * p;
    let proj = Projection {
        u: k.cx + k.fx * c.z * inv,
        v: k.cy - k.fy * c.y * inv,
        depth: c.x,
    };
    Ok((
        proj,
        [
            [du_dp.x, du_dp.y, du_dp.z],
            [dv_dp.x, dv_dp.y, dv_dp.z],
        ],
        [[du.dot(&cb), du.dot(&cg)], [dv.dot(&cb), dv.dot(&cg)]],
    ))
}

fn pixel_ray(u: f64, v: f64, k: &CameraIntrinsics) -> Vec3 {
    Vec3::new(1.0, -(v - k.cy) / k.fy, (u - k.cx) / k.fx)
}

/// World-frame box of a camera-relative object parameterization.
pub fn recover_world_box(
    p: &ObjectBoxParam,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<WorldBox, GeometryError> {
    if !(p.distance > 0.0) {
        return Err(GeometryError::NonPositiveDistance(p.distance));
    }
    let [bu, bv] = p.bbox_center();
    let ray = pixel_ray(bu + p.delta[0], bv + p.delta[1], k);
    let center = camera_rotation(pose) * ray.normalize() * p.distance;
    Ok(WorldBox::new(center, Vec3::from(p.size), p.yaw))
}

/// Inverse of [`recover_world_box`] for the center: the 2D offset and
/// distance that reproduce `center` given the detection box.
pub fn forward_project(
    center: &Vec3,
    bbox2d: &[f64; 4],
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<([f64; 2], f64), GeometryError> {
    let proj = project_point(center, pose, k)?;
    let bu = 0.5 * (bbox2d[0] + bbox2d[2]);
    let bv = 0.5 * (bbox2d[1] + bbox2d[3]);
    Ok(([proj.u - bu, proj.v - bv], center.norm()))
}

/// Bounds `[u0, v0, u1, v1]` of a box's projected corners; `None` when a
/// corner is behind the camera.
pub fn projected_box_bounds(b: &WorldBox, pose: &CameraPose, k: &CameraIntrinsics) -> Option<[f64; 4]> {
    let mut out = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in super::box_corners(b) {
        let p = project_point(&c, pose, k).ok()?;
        out[0] = out[0].min(p.u);
        out[1] = out[1].min(p.v);
        out[2] = out[2].max(p.u);
        out[3] = out[3].max(p.v);
    }
    Some(out)
}

/// Recovered center and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterJacobian {
    pub center: Vec3,
    pub d_delta: [Vec3; 2],
    pub d_distance: Vec3,
    pub d_beta: Vec3,
    pub d_gamma: Vec3,
}

pub fn recover_center_jacobian(
    p: &ObjectBoxParam,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<CenterJacobian, GeometryError> {
    if !(p.distance > 0.0) {
        return Err(GeometryError::NonPositiveDistance(p.distance));
    }
    let [bu, bv] = p.bbox_center();
    let ray = pixel_ray(bu + p.delta[0], bv + p.delta[1], k);
    let len = ray.norm();
    let n = ray / len;
    let r = camera_rotation(pose);
    let (rb, rg) = camera_rotation_derivatives(pose);
    // ∂n/∂ray = (I − n nᵀ)/|ray|
    let proj = (Mat3::identity() - n * n.transpose()) / len;
    let d_u = proj * Vec3::new(0.0, 0.0, 1.0 / k.fx);
    let d_v = proj * Vec3::new(0.0, -1.0 / k.fy, 0.0);
    let d = p.distance;
    Ok(CenterJacobian {
        center: r * n * d,
        d_delta: [r * d_u * d, r * d_v * d],
        d_distance: r * n,
        d_beta: rb * n * d,
        d_gamma: rg * n * d,
    })
}
