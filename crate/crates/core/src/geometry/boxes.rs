use super::{Mat3, Vec3};

/// Yaw-oriented box in the world frame. `size` holds full extents along the
/// box's local axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldBox {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
}

/// Rotation about world `+y`, counterclockwise seen from above.
pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn yaw_matrix_derivative(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

/// Sign of corner `i` along `axis`: bit 0 selects x, bit 1 y, bit 2 z.
fn corner_sign(i: usize, axis: usize) -> f64 {
    if i >> axis & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

impl WorldBox {
    pub fn new(center: Vec3, size: Vec3, yaw: f64) -> Self {
        Self { center, size, yaw }
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    pub fn bottom(&self) -> f64 {
        self.center.y - 0.5 * self.size.y
    }

    pub fn top(&self) -> f64 {
        self.center.y + 0.5 * self.size.y
    }

    /// World point expressed in the box's local (unrotated) frame.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        yaw_matrix(self.yaw).transpose() * (p - self.center)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| l[i].abs() <= 0.5 * self.size[i])
    }

    /// Axis-aligned bounds `(min, max)` of the box.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let corners = box_corners(self);
        let mut lo = corners[0];
        let mut hi = corners[0];
        for c in &corners[1..] {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        (lo, hi)
    }

    /// Ground-plane rectangle as `(x, z)` vertices, counterclockwise in the
    /// `(x, z)` coordinate plane.
    fn footprint(&self) -> [[f64; 2]; 4] {
        let r = yaw_matrix(self.yaw);
        let (hx, hz) = (0.5 * self.size.x, 0.5 * self.size.z);
        let mut pts = [[0.0; 2]; 4];
        for (k, (sx, sz)) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .into_iter()
            .enumerate()
        {
            let l = Vec3::new(sx * hx, 0.0, sz * hz);
            let w = r * l + self.center;
            pts[k] = [w.x, w.z];
        }
        if polygon_area_signed(&pts) < 0.0 {
            pts.reverse();
        }
        pts
    }

    fn sort_key(&self) -> [f64; 7] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.x,
            self.size.y,
            self.size.z,
            self.yaw,
        ]
    }
}

/// Corners in canonical order: corner `i` takes `+size/2` along local axis
/// `a` when bit `a` of `i` is set (bit 0 = x, bit 1 = y, bit 2 = z).
pub fn box_corners(b: &WorldBox) -> [Vec3; 8] {
    let r = yaw_matrix(b.yaw);
    std::array::from_fn(|i| {
        let l = Vec3::new(
            corner_sign(i, 0) * 0.5 * b.size.x,
            corner_sign(i, 1) * 0.5 * b.size.y,
            corner_sign(i, 2) * 0.5 * b.size.z,
        );
        b.center + r * l
    })
}

/// Per corner: derivatives with respect to the three extents and the yaw.
/// The derivative with respect to the center is the identity.
pub fn corners_jacobian(b: &WorldBox) -> [([Vec3; 3], Vec3); 8] {
    let r = yaw_matrix(b.yaw);
    let dr = yaw_matrix_derivative(b.yaw);
    std::array::from_fn(|i| {
        let signs = Vec3::new(corner_sign(i, 0), corner_sign(i, 1), corner_sign(i, 2));
        let l = signs.component_mul(&b.size) * 0.5;
        let d_size = std::array::from_fn(|a| r.column(a) * (0.5 * signs[a]));
        (d_size, dr * l)
    })
}

fn polygon_area_signed(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` by the convex counterclockwise
/// polygon `clip`.
fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if dp >= 0.0 {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Exact IoU of two yaw-oriented boxes. Symmetric bit-for-bit: the pair is
/// put in a canonical order before clipping. Identical boxes give exactly 1.
pub fn iou3d(a: &WorldBox, b: &WorldBox) -> f64 {
    if a == b && a.volume() > 0.0 {
        return 1.0;
    }
    let swap = a
        .sort_key()
        .iter()
        .zip(b.sort_key().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .is_some_and(|o| o.is_gt());
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let h = a.top().min(b.top()) - a.bottom().max(b.bottom());
    if h <= 0.0 {
        return 0.0;
    }
    let poly = clip_polygon(&a.footprint(), &b.footprint());
    if poly.len() < 3 {
        return 0.0;
    }
    let inter = polygon_area_signed(&poly).abs() * h;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
