//! Marching cubes over a sampled grid with a case table generated from one
//! rule.
//!
//! On every cube face the inside corners (value below the iso level) are
//! cut off by segments, and on a face whose two inside corners sit on a
//! diagonal the two corners are cut off separately. Neighboring cubes see
//! the same corner values on their shared face and therefore produce the
//! same segments, so the surface closes up across cells. Per case, the
//! face segments chain into loops that are fan-triangulated.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::{GridSpec, MeshError, TriMesh};
use crate::geometry::Vec3;

/// Corner `c` of the unit cube sits at `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The twelve cube edges as corner pairs: four per axis, low corner first.
pub(crate) const EDGES: [(usize, usize); 12] = {
    let mut out = [(0, 0); 12];
    let mut a = 0;
    while a < 3 {
        let mut k = 0;
        let mut c = 0;
        while c < 8 {
            if c & (1 << a) == 0 {
                out[a * 4 + k] = (c, c | (1 << a));
                k += 1;
            }
            c += 1;
        }
        a += 1;
    }
    out
};

fn edge_index(p: usize, q: usize) -> usize {
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    EDGES.iter().position(|&e| e == (lo, hi)).expect("corners share an edge")
}

/// Corners of each face, counterclockwise seen from outside the cube.
fn faces() -> [[usize; 4]; 6] {
    let mut out = [[0; 4]; 6];
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        for s in 0..2 {
            let ring = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(u, v)| (s << a) | (u << b) | (v << c));
            out[a * 2 + s] = if s == 1 { ring } else { [ring[0], ring[3], ring[2], ring[1]] };
        }
    }
    out
}

/// Triangles of one case as edge-index triples.
fn case_triangles(case: usize) -> Vec<[usize; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut next: HashMap<usize, usize> = HashMap::new();
    for ring in faces() {
        let crossing = |k: usize| inside(ring[k]) != inside(ring[(k + 1) % 4]);
        let enters = |k: usize| !inside(ring[k]) && inside(ring[(k + 1) % 4]);
        for k in 0..4 {
            if crossing(k) && inside(ring[k]) {
                // exit edge; pair with the closest entering edge behind it
                let back = (1..4).map(|d| (k + 4 - d) % 4).find(|&j| enters(j)).expect("entry exists");
                let from = edge_index(ring[k], ring[(k + 1) % 4]);
                let to = edge_index(ring[back], ring[(back + 1) % 4]);
                next.insert(from, to);
            }
        }
    }
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for s in starts {
        if seen[s] {
            continue;
        }
        let mut ring = vec![s];
        seen[s] = true;
        let mut e = next[&s];
        while e != s {
            seen[e] = true;
            ring.push(e);
            e = next[&e];
        }
        for k in 1..ring.len() - 1 {
            // the loop runs clockwise around the outward normal
            tris.push([ring[0], ring[k + 1], ring[k]]);
        }
    }
    tris
}

fn table() -> &'static Vec<Vec<[usize; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[usize; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(case_triangles).collect())
}

/// Number of triangles the table emits for `case`.
pub fn case_triangle_count(case: u8) -> usize {
    table()[case as usize].len()
}

/// Field values at every grid point, `x` fastest.
fn sample_grid<F>(field: &F, grid: &GridSpec) -> Result<Vec<f64>, MeshError>
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    let [nx, ny, nz] = grid.resolution;
    let slabs: Vec<Result<Vec<f64>, MeshError>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let p = grid.point(i, j, k);
                    let v = field(&p);
                    if !v.is_finite() {
                        return Err(MeshError::NonFinite { at: p.into() });
                    }
                    out.push(v);
                }
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(nx * ny * nz);
    for s in slabs {
        values.extend(s?);
    }
    Ok(values)
}

/// Extracts the `iso` level set; the inside is where the field is below
/// `iso`, and triangles wind counterclockwise seen from outside.
pub fn marching_cubes<F>(field: &F, grid: &GridSpec, iso: f64) -> Result<TriMesh, MeshError>
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    grid.validate()?;
    let values = sample_grid(field, grid)?;
    let [nx, ny, nz] = grid.resolution;
    let at = |i: usize, j: usize, k: usize| values[(k * ny + j) * nx + i];
    let table = table();
    let mut mesh = TriMesh::default();
    // grid edges keyed by low endpoint and axis
    let mut vertex_of: HashMap<(usize, usize), u32> = HashMap::new();
    let point_id = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0usize;
                let mut corner = [0.0; 8];
                for (c, v) in corner.iter_mut().enumerate() {
                    let [di, dj, dk] = corner_offset(c);
                    *v = at(i + di, j + dj, k + dk);
                    if *v < iso {
                        case |= 1 << c;
                    }
                }
                let tris = &table[case];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        if local[e] == u32::MAX {
                            let (p, q) = EDGES[e];
                            let [pi, pj, pk] = corner_offset(p);
                            let axis = e / 4;
                            let key = (point_id(i + pi, j + pj, k + pk), axis);
                            let id = *vertex_of.entry(key).or_insert_with(|| {
                                let (fp, fq) = (corner[p], corner[q]);
                                let t = ((iso - fp) / (fq - fp)).clamp(1e-9, 1.0 - 1e-9);
                                let a = grid.point(i + pi, j + pj, k + pk);
                                let [qi, qj, qk] = corner_offset(q);
                                let b = grid.point(i + qi, j + qj, k + qk);
                                mesh.vertices.push(a + (b - a) * t);
                                (mesh.vertices.len() - 1) as u32
                            });
                            local[e] = id;
                        }
                        ids[slot] = local[e];
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_cover_the_cube() {
        for (a, &(p, q)) in EDGES.iter().enumerate() {
            assert_eq!(q - p, 1 << (a / 4));
        }
    }

    #[test]
    fn empty_and_full_cases_emit_nothing() {
        assert_eq!(case_triangle_count(0), 0);
        assert_eq!(case_triangle_count(255), 0);
        assert_eq!(case_triangle_count(1), 1);
        assert_eq!(case_triangle_count(3), 2);
        // two diagonal corners on one face stay separate
        assert_eq!(case_triangle_count(0b1001), 2);
    }

    #[test]
    fn single_corner_normal_points_away_from_inside() {
        let tri = table()[1][0];
        let mid = |e: usize| {
            let (p, q) = EDGES[e];
            let a = corner_offset(p).map(|v| v as f64);
            let b = corner_offset(q).map(|v| v as f64);
            Vec3::new(a[0] + b[0], a[1] + b[1], a[2] + b[2]) * 0.5
        };
        let (a, b, c) = (mid(tri[0]), mid(tri[1]), mid(tri[2]));
        let n = (b - a).cross(&(c - a));
        assert!(n.dot(&Vec3::new(1.0, 1.0, 1.0)) > 0.0);
    }

    #[test]
    fn complementary_cases_have_matching_triangle_counts_when_unambiguous() {
        for case in 0..=255u8 {
            let on_faces = faces().iter().any(|r| {
                let f: Vec<bool> = r.iter().map(|&c| case & (1 << c) != 0).collect();
                f[0] == f[2] && f[1] == f[3] && f[0] != f[1]
            });
            if !on_faces {
                assert_eq!(case_triangle_count(case), case_triangle_count(!case), "case {case}");
            }
        }
    }
}
