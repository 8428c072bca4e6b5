//! Isosurface extraction, watertightness checks, surface sampling and the
//! ICP-aligned Chamfer distance.

mod chamfer;
mod kdtree;
mod marching;

pub use chamfer::{chamfer_icp, chamfer_points, icp_align, kabsch, sample_surface, ChamferConfig, ChamferResult, IcpResult, Rigid};
pub use kdtree::KdTree;
pub use marching::{case_triangle_count, marching_cubes};

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::ldif::{ObjectPose, ShapeField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("field is not finite at ({}, {}, {})", at[0], at[1], at[2])]
    NonFinite { at: [f64; 3] },
    #[error("grid resolution must be at least 2 per axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("grid bounds are empty")]
    EmptyBounds,
    #[error("mesh has no triangles")]
    EmptyMesh,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward-facing windings.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Drops triangles with repeated indices or zero area, then unused
    /// vertices.
    pub fn cleaned(&self) -> TriMesh {
        let keep: Vec<[u32; 3]> = (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) > 0.0
            })
            .map(|t| self.triangles[t])
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let triangles = keep
            .iter()
            .map(|tri| {
                tri.map(|i| {
                    let r = &mut remap[i as usize];
                    if *r == u32::MAX {
                        *r = vertices.len() as u32;
                        vertices.push(self.vertices[i as usize]);
                    }
                    *r
                })
            })
            .collect();
        TriMesh { vertices, triangles }
    }

    /// ASCII OBJ: `v x y z` with six decimals, then 1-based `f a b c`.
    pub fn write_obj(&self, out: &mut impl Write) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    /// Binary little-endian PLY with `float` vertices and `uchar`/`int`
    /// face lists.
    pub fn write_ply(&self, out: &mut impl Write) -> std::io::Result<()> {
        write!(
            out,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )?;
        let mut buf = Vec::with_capacity(self.vertices.len() * 12 + self.triangles.len() * 13);
        for v in &self.vertices {
            for c in [v.x, v.y, v.z] {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        for t in &self.triangles {
            buf.push(3);
            for i in t {
                buf.extend_from_slice(&(*i as i32).to_le_bytes());
            }
        }
        out.write_all(&buf)
    }
}

/// Regular sampling grid; `resolution` counts samples per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: Vec3,
    pub max: Vec3,
    pub resolution: [usize; 3],
}

pub const DEFAULT_RESOLUTION: usize = 256;

impl Default for GridSpec {
    /// The object code frame `[-1, 1]³` at the default resolution.
    fn default() -> Self {
        Self::cube(DEFAULT_RESOLUTION)
    }
}

impl GridSpec {
    pub fn cube(resolution: usize) -> Self {
        Self {
            min: Vec3::new(-1.0, -1.0, -1.0),
            max: Vec3::new(1.0, 1.0, 1.0),
            resolution: [resolution; 3],
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.resolution.iter().any(|&r| r < 2) {
            return Err(MeshError::Resolution(self.resolution));
        }
        if (0..3).any(|a| !(self.max[a] > self.min[a])) {
            return Err(MeshError::EmptyBounds);
        }
        Ok(())
    }

    pub fn cell_size(&self) -> Vec3 {
        Vec3::from_fn(|a, _| (self.max[a] - self.min[a]) / (self.resolution[a] - 1) as f64)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.cell_size();
        Vec3::new(
            self.min.x + i as f64 * h.x,
            self.min.y + j as f64 * h.y,
            self.min.z + k as f64 * h.z,
        )
    }
}

/// Bound on `|field(v) − iso|` at a vertex interpolated on a grid edge,
/// for a field with Lipschitz constant `lipschitz`: the true crossing lies
/// on the same edge, at most one cell edge away.
pub fn interpolation_bound(lipschitz: f64, grid: &GridSpec) -> f64 {
    lipschitz * grid.cell_size().max()
}

/// Mesh of a shape in its object frame.
pub fn extract_shape(field: &ShapeField, grid: &GridSpec) -> Result<TriMesh, MeshError> {
    marching_cubes(&|p: &Vec3| field.value(p), grid, 0.0)
}

/// Mesh of a shape posed into the world frame.
pub fn extract_world_shape(field: &ShapeField, pose: &ObjectPose, grid: &GridSpec) -> Result<TriMesh, MeshError> {
    Ok(extract_shape(field, grid)?.map_vertices(|v| pose.to_world(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshDefect {
    /// Edge used by a single triangle.
    Boundary(u32, u32),
    /// Edge used by more than two triangles.
    NonManifold(u32, u32),
    /// Edge whose two triangles traverse it in the same direction.
    Orientation(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatertightReport {
    pub passed: bool,
    /// Sorted by vertex pair.
    pub defects: Vec<MeshDefect>,
}

/// Passes iff every edge is shared by exactly two triangles that traverse
/// it in opposite directions.
pub fn watertight_check(m: &TriMesh) -> WatertightReport {
    let mut uses: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
    for t in &m.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = uses.entry((a.min(b), a.max(b))).or_insert((0, 0));
            if a < b {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    let mut edges: Vec<_> = uses.into_iter().collect();
    edges.sort_unstable();
    let defects: Vec<MeshDefect> = edges
        .into_iter()
        .filter_map(|((a, b), (fwd, back))| match fwd + back {
            1 => Some(MeshDefect::Boundary(a, b)),
            2 if fwd == 1 => None,
            2 => Some(MeshDefect::Orientation(a, b)),
            _ => Some(MeshDefect::NonManifold(a, b)),
        })
        .collect();
    WatertightReport {
        passed: defects.is_empty() && !m.is_empty(),
        defects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> TriMesh {
        TriMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            triangles: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        }
    }

    #[test]
    fn closed_tetrahedron_passes() {
        let t = tetrahedron();
        assert!(watertight_check(&t).passed);
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn open_tetrahedron_reports_three_boundary_edges() {
        let mut t = tetrahedron();
        t.triangles.pop();
        let r = watertight_check(&t);
        assert!(!r.passed);
        assert_eq!(
            r.defects,
            vec![MeshDefect::Boundary(1, 2), MeshDefect::Boundary(1, 3), MeshDefect::Boundary(2, 3)]
        );
    }

    #[test]
    fn flipped_face_is_an_orientation_defect() {
        let mut t = tetrahedron();
        t.triangles[3] = [1, 3, 2];
        let r = watertight_check(&t);
        assert_eq!(r.defects.len(), 3);
        assert!(r.defects.iter().all(|d| matches!(d, MeshDefect::Orientation(..))));
    }

    #[test]
    fn positive_field_gives_empty_mesh() {
        let m = marching_cubes(&|_: &Vec3| 1.0, &GridSpec::cube(8), 0.0).unwrap();
        assert!(m.is_empty());
        assert!(!watertight_check(&m).passed);
    }

    #[test]
    fn non_finite_field_reports_location() {
        let err = marching_cubes(&|p: &Vec3| if p.x > 0.9 { f64::NAN } else { 1.0 }, &GridSpec::cube(3), 0.0);
        assert_eq!(err.unwrap_err(), MeshError::NonFinite { at: [1.0, -1.0, -1.0] });
    }

    #[test]
    fn sphere_is_watertight_and_outward() {
        for res in [8, 17, 32] {
            let m = marching_cubes(&|p: &Vec3| p.norm() - 0.6, &GridSpec::cube(res), 0.0).unwrap();
            let r = watertight_check(&m);
            assert!(r.passed, "res {res}: {:?}", &r.defects[..r.defects.len().min(4)]);
            let v = m.signed_volume();
            let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.216;
            assert!(v > 0.0 && (v - exact).abs() < 0.15 * exact, "res {res}: {v}");
        }
    }

    #[test]
    fn obj_format_is_fixed() {
        let mut out = Vec::new();
        tetrahedron().write_obj(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("v 0.000000 0.000000 0.000000\nv 1.000000 0.000000 0.000000\n"));
        assert!(s.ends_with("f 2 3 4\n"));
    }

    #[test]
    fn ply_size_matches_header() {
        let mut out = Vec::new();
        let t = tetrahedron();
        t.write_ply(&mut out).unwrap();
        let header_end = out.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        assert_eq!(out.len() - header_end, 4 * 12 + 4 * 13);
    }

    #[test]
    fn cleaning_drops_degenerate_triangles() {
        let mut t = tetrahedron();
        t.triangles.push([0, 0, 1]);
        t.vertices.push(Vec3::new(5.0, 5.0, 5.0));
        let c = t.cleaned();
        assert_eq!(c.triangles.len(), 4);
        assert_eq!(c.vertices.len(), 4);
    }
}
