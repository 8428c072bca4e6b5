use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut r = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    if r >= PI {
        r -= 2.0 * PI;
    }
    if r < -PI {
        r += 2.0 * PI;
    }
    r
}

/// Equal-width bins over `[lo, hi)`. Residuals are measured from a bin's
/// center in units of half the bin width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Periodic range (angles).
    pub wrap: bool,
}

impl BinSpec {
    pub fn new(lo: f64, hi: f64, count: usize, wrap: bool) -> Self {
        assert!(hi > lo && count > 0, "empty bin spec");
        Self { lo, hi, count, wrap }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    fn normalize(&self, x: f64) -> Result<f64, GeometryError> {
        if self.wrap {
            let period = self.hi - self.lo;
            let mut r = x - period * ((x - self.lo) / period).floor();
            if r >= self.hi {
                r -= period;
            }
            Ok(r)
        } else if x < self.lo || x > self.hi || !x.is_finite() {
            Err(GeometryError::OutOfRange {
                value: x,
                lo: self.lo,
                hi: self.hi,
            })
        } else {
            Ok(x)
        }
    }

    /// Offset `x − center(k)`, taken along the shorter arc for periodic
    /// specs.
    fn offset(&self, x: f64, k: usize) -> f64 {
        let d = x - self.center(k);
        if self.wrap {
            let period = self.hi - self.lo;
            d - period * ((d + 0.5 * period) / period).floor()
        } else {
            d
        }
    }

    pub fn index_of(&self, x: f64) -> Result<usize, GeometryError> {
        let x = self.normalize(x)?;
        let k = ((x - self.lo) / self.width()).floor();
        Ok((k.max(0.0) as usize).min(self.count - 1))
    }

    /// Bin index and normalized residual of `x`.
    pub fn encode(&self, x: f64) -> Result<(usize, f64), GeometryError> {
        let k = self.index_of(x)?;
        let x = self.normalize(x)?;
        Ok((k, (x - self.center(k)) / self.half_width()))
    }

    /// Residual of `x` with respect to every bin's center.
    pub fn residuals(&self, x: f64) -> Result<Vec<f64>, GeometryError> {
        let x = self.normalize(x)?;
        Ok((0..self.count)
            .map(|k| self.offset(x, k) / self.half_width())
            .collect())
    }

    pub fn decode(&self, k: usize, residual: f64) -> Result<f64, GeometryError> {
        if k >= self.count {
            return Err(GeometryError::BadBin {
                index: k,
                count: self.count,
            });
        }
        let x = self.center(k) + residual * self.half_width();
        Ok(if self.wrap {
            self.normalize(x).expect("periodic specs accept every finite value")
        } else {
            x
        })
    }
}

/// Bin layout of every binned scene parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpecs {
    pub yaw: BinSpec,
    pub distance: BinSpec,
    pub pitch: BinSpec,
    pub roll: BinSpec,
    pub layout_yaw: BinSpec,
}

impl Default for BinSpecs {
    fn default() -> Self {
        Self {
            yaw: BinSpec::new(-PI, PI, 8, true),
            distance: BinSpec::new(0.0, 12.0, 6, false),
            pitch: BinSpec::new(-PI / 3.0, PI / 3.0, 2, false),
            roll: BinSpec::new(-PI / 3.0, PI / 3.0, 2, false),
            layout_yaw: BinSpec::new(-PI, PI, 8, true),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_lands_in_half_open_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(7.0 * PI / 2.0) - (-PI / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn center_has_zero_residual() {
        let s = BinSpecs::default().yaw;
        for k in 0..8 {
            let (i, r) = s.encode(s.center(k)).unwrap();
            assert_eq!(i, k);
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn minus_pi_is_first_bin_lower_edge() {
        let s = BinSpecs::default().yaw;
        let (k, r) = s.encode(-PI).unwrap();
        assert_eq!(k, 0);
        assert!((r + 1.0).abs() < 1e-12);
        assert!((s.decode(k, r).unwrap() + PI).abs() < 1e-12);
    }

    #[test]
    fn non_wrapping_rejects_out_of_range() {
        let d = BinSpecs::default().distance;
        assert!(d.encode(-0.5).is_err());
        assert!(d.encode(12.5).is_err());
        assert_eq!(d.encode(12.0).unwrap().0, 5);
    }

    #[test]
    fn residual_wrap_crosses_the_seam() {
        // θ₀ = π − 0.1 plus an angle residual of +0.2 becomes −π + 0.1
        let s = BinSpecs::default().yaw;
        let (k, r) = s.encode(PI - 0.1).unwrap();
        let out = s.decode(k, r + 0.2 / s.half_width()).unwrap();
        assert!((out - (-PI + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn all_bin_residuals_agree_with_encode() {
        let s = BinSpecs::default().yaw;
        let x = 2.9;
        let (k, r) = s.encode(x).unwrap();
        let all = s.residuals(x).unwrap();
        assert!((all[k] - r).abs() < 1e-12);
        for (j, rj) in all.iter().enumerate() {
            assert!((s.decode(j, *rj).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn thousand_random_angles_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = BinSpecs::default().yaw;
        for _ in 0..1000 {
            let x = rng.random_range(-PI..PI);
            let (k, r) = s.encode(x).unwrap();
            assert!((s.decode(k, r).unwrap() - x).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn distance_round_trip(x in 1e-6f64..12.0) {
            let s = BinSpecs::default().distance;
            let (k, r) = s.encode(x).unwrap();
            prop_assert!((s.decode(k, r).unwrap() - x).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }

        #[test]
        fn wrap_is_idempotent(x in -50.0f64..50.0) {
            let w = wrap_angle(x);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert_eq!(wrap_angle(w), w);
        }
    }
}
