//! Surface sampling, point-to-point ICP and the Chamfer distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{KdTree, MeshError, TriMesh};
use crate::geometry::{Mat3, Vec3};

/// `n` points distributed uniformly by area. Triangles are chosen by
/// binary search of a uniform draw in the cumulative area table (in
/// triangle order), then a point inside by the square-root barycentric
/// map, both from one seeded stream.
pub fn sample_surface(m: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>, MeshError> {
    let mut cumulative = Vec::with_capacity(m.triangles.len());
    let mut total = 0.0;
    for t in 0..m.triangles.len() {
        total += m.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(MeshError::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let [a, b, c] = m.triangle(t);
        out.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
    }
    Ok(out)
}

/// `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Least-squares rotation and translation taking `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Rigid {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Mat3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p - cs) * (q - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Rigid {
        rotation,
        translation: cd - rotation * cs,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps the source points onto the target.
    pub transform: Rigid,
    pub iterations: usize,
    /// Mean nearest-neighbor distance after alignment.
    pub mean_distance: f64,
}

pub const ICP_MAX_ITERATIONS: usize = 50;
pub const ICP_TOLERANCE: f64 = 1e-6;

fn nearest_all(tree: &KdTree, pts: &[Vec3]) -> Vec<(usize, f64)> {
    pts.par_iter().map(|p| tree.nearest(p).expect("nonempty tree")).collect()
}

/// Point-to-point ICP of `src` onto the points indexed by `target`. Stops
/// after [`ICP_MAX_ITERATIONS`] or when the mean correspondence distance
/// changes by less than [`ICP_TOLERANCE`].
pub fn icp_align(src: &[Vec3], target: &KdTree, target_points: &[Vec3]) -> IcpResult {
    let mut moved = src.to_vec();
    let mut total = Rigid::identity();
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mut mean = 0.0;
    for _ in 0..ICP_MAX_ITERATIONS {
        let nn = nearest_all(target, &moved);
        mean = nn.iter().map(|(_, d)| d.sqrt()).sum::<f64>() / nn.len() as f64;
        if mean == 0.0 || (prev - mean).abs() < ICP_TOLERANCE {
            break;
        }
        prev = mean;
        iterations += 1;
        let matched: Vec<Vec3> = nn.iter().map(|&(i, _)| target_points[i]).collect();
        let step = kabsch(&moved, &matched);
        for p in moved.iter_mut() {
            *p = step.apply(p);
        }
        total = step.compose(&total);
    }
    IcpResult {
        transform: total,
        iterations,
        mean_distance: mean,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferConfig {
    pub samples: usize,
    pub align: bool,
    /// Both meshes are sampled with this seed.
    pub seed: u64,
}

impl Default for ChamferConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            align: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChamferResult {
    /// Sum of the two mean squared nearest-neighbor distances, ×10³.
    pub distance: f64,
    pub icp: Option<IcpResult>,
}

fn mean_sq_nn(from: &[Vec3], tree: &KdTree) -> f64 {
    nearest_all(tree, from).iter().map(|(_, d)| d).sum::<f64>() / from.len() as f64
}

/// Chamfer distance between two point sets, after optionally aligning
/// `pred` to `gt` by ICP.
pub fn chamfer_points(pred: &[Vec3], gt: &[Vec3], align: bool) -> Result<ChamferResult, MeshError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    let mut p = pred.to_vec();
    let gtree = KdTree::new(gt);
    let icp = align.then(|| {
        let r = icp_align(&p, &gtree, gt);
        for x in p.iter_mut() {
            *x = r.transform.apply(x);
        }
        r
    });
    let ptree = KdTree::new(&p);
    let distance = (mean_sq_nn(&p, &gtree) + mean_sq_nn(gt, &ptree)) * 1e3;
    Ok(ChamferResult { distance, icp })
}

/// Chamfer distance between surface samples of `pred` and `gt`, after
/// optionally aligning the prediction's samples to the ground truth's.
pub fn chamfer_icp(pred: &TriMesh, gt: &TriMesh, config: &ChamferConfig) -> Result<ChamferResult, MeshError> {
    if config.samples == 0 {
        return Err(MeshError::EmptyMesh);
    }
    let p = sample_surface(pred, config.samples, config.seed)?;
    let g = sample_surface(gt, config.samples, config.seed)?;
    chamfer_points(&p, &g, config.align)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesher::{marching_cubes, GridSpec};

    fn sphere(res: usize) -> TriMesh {
        marching_cubes(&|p: &Vec3| p.norm() - 0.5, &GridSpec::cube(res), 0.0).unwrap()
    }

    #[test]
    fn kabsch_recovers_a_rigid_motion() {
        let pts: Vec<Vec3> = (0..20)
            .map(|i| Vec3::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), i as f64 * 0.1))
            .collect();
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 0.5).into_inner();
        let t = Vec3::new(0.4, -1.0, 2.0);
        let moved: Vec<Vec3> = pts.iter().map(|p| r * p + t).collect();
        let k = kabsch(&pts, &moved);
        assert!((k.rotation - r).norm() < 1e-12);
        assert!((k.translation - t).norm() < 1e-12);
    }

    #[test]
    fn samples_lie_on_the_surface() {
        let m = sphere(24);
        let s = sample_surface(&m, 500, 3).unwrap();
        assert!(s.iter().all(|p| (p.norm() - 0.5).abs() < 0.01));
        assert_eq!(s, sample_surface(&m, 500, 3).unwrap());
        assert!(sample_surface(&TriMesh::default(), 5, 0).is_err());
    }

    #[test]
    fn identical_meshes_give_zero() {
        let m = sphere(20);
        for align in [false, true] {
            let r = chamfer_icp(&m, &m, &ChamferConfig { samples: 2000, align, seed: 4 }).unwrap();
            assert_eq!(r.distance, 0.0);
        }
    }

    #[test]
    fn unaligned_chamfer_is_symmetric() {
        let (a, b) = (sphere(16), sphere(23));
        let c = ChamferConfig {
            samples: 1500,
            align: false,
            seed: 1,
        };
        let ab = chamfer_icp(&a, &b, &c).unwrap().distance;
        let ba = chamfer_icp(&b, &a, &c).unwrap().distance;
        assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn icp_undoes_a_translation() {
        let a = sphere(24);
        let t = Vec3::new(0.15, 0.0, 0.0);
        let moved = a.map_vertices(|v| v + t);
        let c = ChamferConfig {
            samples: 3000,
            align: true,
            seed: 2,
        };
        let r = chamfer_icp(&moved, &a, &c).unwrap();
        let icp = r.icp.unwrap();
        assert!((icp.transform.translation + t).norm() < 1e-3, "{:?}", icp.transform.translation);
        assert!(r.distance < 1e-3);
    }
}
