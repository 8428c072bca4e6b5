use super::{LdifShape, ShapeField};
use crate::geometry::{yaw_matrix, yaw_matrix_derivative, Vec3, WorldBox};

/// Placement of a shape's object frame in the world: scale, then yaw, then
/// translation. The object frame's `[−1, 1]³` cube maps onto a box of
/// extents `2 · scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectPose {
    pub translation: Vec3,
    pub scale: Vec3,
    pub yaw: f64,
}

impl ObjectPose {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            scale: Vec3::new(1.0, 1.0, 1.0),
            yaw: 0.0,
        }
    }

    /// Pose whose unit cube fills `b`.
    pub fn from_box(b: &WorldBox) -> Self {
        Self {
            translation: b.center,
            scale: b.size * 0.5,
            yaw: b.yaw,
        }
    }

    pub fn to_object(&self, x: &Vec3) -> Vec3 {
        (yaw_matrix(self.yaw).transpose() * (x - self.translation)).component_div(&self.scale)
    }

    pub fn to_world(&self, u: &Vec3) -> Vec3 {
        self.translation + yaw_matrix(self.yaw) * u.component_mul(&self.scale)
    }

    /// Field value at a world point.
    pub fn world_value(&self, field: &ShapeField, x: &Vec3) -> f64 {
        field.value(&self.to_object(x))
    }

    /// Field value and gradient with respect to the world point.
    pub fn world_value_and_gradient(&self, field: &ShapeField, x: &Vec3) -> (f64, Vec3) {
        let (v, g) = field.value_and_gradient(&self.to_object(x));
        (v, yaw_matrix(self.yaw) * g.component_div(&self.scale))
    }

    /// Value and derivatives of the world-frame evaluation with respect to
    /// the seven pose scalars: translation (3), scale (3), yaw.
    pub fn pose_gradients(&self, field: &ShapeField, x: &Vec3) -> (f64, [f64; 7]) {
        let r = yaw_matrix(self.yaw);
        let diff = x - self.translation;
        let u = (r.transpose() * diff).component_div(&self.scale);
        let (v, g) = field.value_and_gradient(&u);
        let d_t = -(r * g.component_div(&self.scale));
        let du_yaw = (yaw_matrix_derivative(self.yaw).transpose() * diff).component_div(&self.scale);
        let mut out = [0.0; 7];
        for a in 0..3 {
            out[a] = d_t[a];
            out[3 + a] = -g[a] * u[a] / self.scale[a];
        }
        out[6] = g.dot(&du_yaw);
        (v, out)
    }

    /// Branch pattern at a world point (see [`ShapeField::branch_signature`]).
    pub fn branch_signature(&self, field: &ShapeField, x: &Vec3) -> Vec<i8> {
        field.branch_signature(&self.to_object(x))
    }
}

/// Element centers mapped to the world. Symmetric elements report their
/// primary center only.
pub fn world_element_centers(shape: &LdifShape, pose: &ObjectPose) -> Vec<Vec3> {
    shape.elements.iter().map(|e| pose.to_world(&e.center)).collect()
}

impl LdifShape {
    pub fn world_element_centers(&self, pose: &ObjectPose) -> Vec<Vec3> {
        world_element_centers(self, pose)
    }
}
