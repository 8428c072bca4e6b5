use super::{
    euler_rotation_derivatives, mirror, ElementDecoder, LdifShape, ANALYTIC_DIM, CODE_LEN,
    CODE_WIDTH, DECODER_HIDDEN, LATENT_DIM,
};
use crate::geometry::{Mat3, Vec3};
use crate::tensor::sigmoid;

/// Gaussian terms whose exponent exceeds this are treated as zero.
const EXPONENT_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone)]
struct Prepared {
    index: usize,
    c: f64,
    center: Vec3,
    rotation: Mat3,
    inv_r2: Vec3,
    symmetric: bool,
    /// Hidden pre-activation from the latent code and bias.
    hidden0: [f64; DECODER_HIDDEN],
}

/// A shape bound to a decoder, precomputed for repeated point queries in
/// the object frame.
#[derive(Debug, Clone)]
pub struct ShapeField {
    elements: Vec<Prepared>,
    shape: LdifShape,
    decoder: ElementDecoder,
    position_weights: [[f64; 3]; DECODER_HIDDEN],
    decoder_active: bool,
}

struct Local {
    local: Vec3,
    g: f64,
}

impl ShapeField {
    pub fn new(shape: &LdifShape, decoder: &ElementDecoder) -> Self {
        let elements = shape
            .active_elements()
            .map(|i| {
                let e = &shape.elements[i];
                Prepared {
                    index: i,
                    c: e.c,
                    center: e.center,
                    rotation: e.rotation(),
                    inv_r2: e.radii.map(|r| 1.0 / (r * r)),
                    symmetric: LdifShape::is_symmetric(i),
                    hidden0: decoder.latent_bias(&shape.latents[i]),
                }
            })
            .collect();
        Self {
            elements,
            shape: shape.clone(),
            decoder: decoder.clone(),
            position_weights: std::array::from_fn(|k| {
                std::array::from_fn(|a| decoder.position_weight(k, a))
            }),
            decoder_active: !decoder.is_zero(),
        }
    }

    pub fn shape(&self) -> &LdifShape {
        &self.shape
    }

    pub fn decoder(&self) -> &ElementDecoder {
        &self.decoder
    }

    pub fn iso_level(&self) -> f64 {
        self.shape.iso_level
    }

    fn local(&self, e: &Prepared, x: &Vec3) -> Option<Local> {
        let local = e.rotation.transpose() * (x - e.center);
        let q = 0.5 * local.component_mul(&local).dot(&e.inv_r2);
        if q > EXPONENT_CUTOFF {
            None
        } else {
            Some(Local { local, g: (-q).exp() })
        }
    }

    fn residual(&self, e: &Prepared, local: &Vec3) -> f64 {
        if !self.decoder_active {
            return 0.0;
        }
        let mut out = self.decoder.b2;
        for k in 0..DECODER_HIDDEN {
            let w = &self.position_weights[k];
            let h = e.hidden0[k] + w[0] * local.x + w[1] * local.y + w[2] * local.z;
            if h > 0.0 {
                out += self.decoder.w2[k] * h;
            }
        }
        out
    }

    /// Residual and its derivative with respect to the local coordinates.
    fn residual_grad(&self, e: &Prepared, local: &Vec3) -> (f64, Vec3) {
        if !self.decoder_active {
            return (0.0, Vec3::zeros());
        }
        let mut out = self.decoder.b2;
        let mut grad = Vec3::zeros();
        for k in 0..DECODER_HIDDEN {
            let w = &self.position_weights[k];
            let h = e.hidden0[k] + w[0] * local.x + w[1] * local.y + w[2] * local.z;
            if h > 0.0 {
                let w2 = self.decoder.w2[k];
                out += w2 * h;
                grad += Vec3::new(w[0], w[1], w[2]) * w2;
            }
        }
        (out, grad)
    }

    fn term(&self, e: &Prepared, x: &Vec3) -> f64 {
        match self.local(e, x) {
            Some(l) => e.c * l.g * (1.0 + self.residual(e, &l.local)),
            None => 0.0,
        }
    }

    /// Term value and its gradient with respect to `x`.
    fn term_grad(&self, e: &Prepared, x: &Vec3) -> (f64, Vec3) {
        let Some(l) = self.local(e, x) else {
            return (0.0, Vec3::zeros());
        };
        let (d, dd) = self.residual_grad(e, &l.local);
        let dg = -l.local.component_mul(&e.inv_r2) * l.g;
        let d_local = (dg * (1.0 + d) + dd * l.g) * e.c;
        (e.c * l.g * (1.0 + d), e.rotation * d_local)
    }

    /// Field value at an object-frame point.
    pub fn value(&self, x: &Vec3) -> f64 {
        let mut sum = 0.0;
        for e in &self.elements {
            if e.symmetric {
                sum += self.term(e, x) + self.term(e, &mirror(x));
            } else {
                sum += self.term(e, x);
            }
        }
        sum - self.shape.iso_level
    }

    /// Field value and spatial gradient at an object-frame point.
    pub fn value_and_gradient(&self, x: &Vec3) -> (f64, Vec3) {
        let mut sum = 0.0;
        let mut grad = Vec3::zeros();
        for e in &self.elements {
            let (t, g) = self.term_grad(e, x);
            if e.symmetric {
                let (tm, gm) = self.term_grad(e, &mirror(x));
                sum += t + tm;
                grad += g + mirror(&gm);
            } else {
                sum += t;
                grad += g;
            }
        }
        (sum - self.shape.iso_level, grad)
    }

    /// Soft inside/outside label: `sigmoid(α · value)`; 0 inside, 1 outside.
    pub fn classify(&self, x: &Vec3, alpha: f64) -> f64 {
        sigmoid(alpha * self.value(x))
    }

    /// Field value and its gradient with respect to every entry of the
    /// packed 1344-value code (decoder weights fixed).
    pub fn code_gradient(&self, x: &Vec3) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; CODE_LEN];
        let mut sum = 0.0;
        for e in &self.elements {
            let row = &mut grad[e.index * CODE_WIDTH..(e.index + 1) * CODE_WIDTH];
            sum += self.accumulate_code_grad(e, x, row);
            if e.symmetric {
                sum += self.accumulate_code_grad(e, &mirror(x), row);
            }
        }
        (sum - self.shape.iso_level, grad)
    }

    fn accumulate_code_grad(&self, e: &Prepared, x: &Vec3, row: &mut [f64]) -> f64 {
        let Some(l) = self.local(e, x) else {
            return 0.0;
        };
        let el = &self.shape.elements[e.index];
        let diff = x - e.center;
        let mut d = self.decoder.b2;
        let mut d_local = Vec3::zeros();
        let mut d_latent = [0.0; LATENT_DIM];
        if self.decoder_active {
            for k in 0..DECODER_HIDDEN {
                let w = &self.position_weights[k];
                let h = e.hidden0[k] + w[0] * l.local.x + w[1] * l.local.y + w[2] * l.local.z;
                if h > 0.0 {
                    let w2 = self.decoder.w2[k];
                    d += w2 * h;
                    d_local += Vec3::new(w[0], w[1], w[2]) * w2;
                    for (j, dz) in d_latent.iter_mut().enumerate() {
                        *dz += w2 * self.decoder.latent_weight(k, j);
                    }
                }
            }
        } else {
            d = 0.0;
        }
        let value = e.c * l.g * (1.0 + d);
        // ∂t/∂local
        let dg_local = -l.local.component_mul(&e.inv_r2) * l.g;
        let dt_local = (dg_local * (1.0 + d) + d_local * l.g) * e.c;
        row[0] += l.g * (1.0 + d);
        let dt_center = -(e.rotation * dt_local);
        for a in 0..3 {
            row[1 + a] += dt_center[a];
            let r = el.radii[a];
            row[4 + a] += e.c * (1.0 + d) * l.g * l.local[a] * l.local[a] / (r * r * r);
        }
        let dr = euler_rotation_derivatives(&el.euler);
        for a in 0..3 {
            let dl = dr[a].transpose() * diff;
            row[7 + a] += dt_local.dot(&dl);
        }
        for j in 0..LATENT_DIM {
            row[ANALYTIC_DIM + j] += e.c * l.g * d_latent[j];
        }
        value
    }

    /// Branch pattern of the evaluation at `x`: decoder ReLU signs and
    /// exponent cutoffs for every active term. Two points with equal
    /// signatures lie on the same smooth piece of the field.
    pub fn branch_signature(&self, x: &Vec3) -> Vec<i8> {
        let mut sig = Vec::new();
        for e in &self.elements {
            let pts: &[Vec3] = if e.symmetric { &[*x, mirror(x)] } else { &[*x] };
            for p in pts {
                match self.local(e, p) {
                    None => sig.push(2),
                    Some(l) => {
                        if self.decoder_active {
                            for k in 0..DECODER_HIDDEN {
                                let w = &self.position_weights[k];
                                let h = e.hidden0[k]
                                    + w[0] * l.local.x
                                    + w[1] * l.local.y
                                    + w[2] * l.local.z;
                                sig.push(if h > 0.0 { 1 } else { -1 });
                            }
                        }
                    }
                }
            }
        }
        sig
    }
}
