use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tables::{CORNERS, EDGES, TRIANGLE_TABLE};
use super::{Shape, GRID_EXTENT};

const MIN_RESOLUTION: usize = 8;
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("resolution must be at least {MIN_RESOLUTION}, got {0}")]
    Resolution(usize),
    #[error("iso level must be positive and finite, got {0}")]
    IsoLevel(f64),
    #[error(
        "iso level {iso} is not below the field maximum {max} on the grid; mesh would be empty"
    )]
    EmptyMesh { iso: f64, max: f64 },
    #[error("mesh has no triangles")]
    NoTriangles,
    #[error("triangle {triangle} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("malformed OBJ at line {line}: {reason}")]
    Obj { line: usize, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let count = self.vertices.len();
        for (triangle, tri) in self.triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= count) {
                return Err(MeshError::IndexOutOfRange {
                    triangle,
                    index,
                    count,
                });
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, tri: &[u32; 3]) -> f64 {
        let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

struct Grid {
    n: usize,
    step: f64,
    values: Vec<f64>,
}

impl Grid {
    fn sample(shape: &Shape, n: usize) -> Grid {
        let step = 2.0 * GRID_EXTENT / (n - 1) as f64;
        let mut values = vec![0.0; n * n * n];
        values
            .par_chunks_mut(n * n)
            .enumerate()
            .for_each(|(i, slab)| {
                for j in 0..n {
                    for k in 0..n {
                        let p = Vector3::new(coord(i, step), coord(j, step), coord(k, step));
                        slab[j * n + k] = shape.occupancy(&p);
                    }
                }
            });
        Grid { n, step, values }
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    fn point(&self, index: usize) -> Vector3<f64> {
        let n = self.n;
        Vector3::new(
            coord(index / (n * n), self.step),
            coord((index / n) % n, self.step),
            coord(index % n, self.step),
        )
    }

    fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn coord(i: usize, step: f64) -> f64 {
    -GRID_EXTENT + i as f64 * step
}

/// Marching cubes over a `resolution³` lattice spanning `[-1.1, 1.1]³`.
///
/// Vertices are shared between adjacent cells, so the output is a closed
/// manifold wherever the isosurface stays inside the grid.
pub fn extract_mesh(
    shape: &Shape,
    resolution: usize,
    iso_level: f64,
) -> Result<TriangleMesh, MeshError> {
    if resolution < MIN_RESOLUTION {
        return Err(MeshError::Resolution(resolution));
    }
    if !(iso_level.is_finite() && iso_level > 0.0) {
        return Err(MeshError::IsoLevel(iso_level));
    }
    let grid = Grid::sample(shape, resolution);
    let max = grid.max();
    if max <= iso_level {
        return Err(MeshError::EmptyMesh {
            iso: iso_level,
            max,
        });
    }

    let n = resolution;
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    let mut triangles = Vec::new();

    for i in 0..n - 1 {
        for j in 0..n - 1 {
            for k in 0..n - 1 {
                let corner_index: [usize; 8] =
                    CORNERS.map(|[di, dj, dk]| grid.index(i + di, j + dj, k + dk));
                let mut case = 0usize;
                for (c, &idx) in corner_index.iter().enumerate() {
                    if grid.values[idx] < iso_level {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0u32; 3];
                    for (slot, &edge) in ids.iter_mut().zip(tri) {
                        let [ca, cb] = EDGES[edge as usize];
                        let (lo, hi) = ordered(corner_index[ca], corner_index[cb]);
                        let axis = axis_of(hi - lo, n);
                        *slot = *edge_vertex.entry((lo, axis)).or_insert_with(|| {
                            let v = interpolate(&grid, lo, hi, iso_level);
                            vertices.push(v);
                            (vertices.len() - 1) as u32
                        });
                    }
                    if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                        continue;
                    }
                    triangles.push(ids);
                }
            }
        }
    }

    let mut mesh = TriangleMesh {
        vertices,
        triangles,
        normals: None,
    };
    mesh.triangles
        .retain(|t| mesh_area(&mesh.vertices, t) >= DEGENERATE_AREA);
    mesh.normals = Some(
        mesh.vertices
            .iter()
            .map(|v| {
                let g = shape.occupancy_gradient(v);
                let norm = g.norm();
                if norm > 0.0 {
                    -g / norm
                } else {
                    Vector3::zeros()
                }
            })
            .collect(),
    );
    Ok(mesh)
}

fn mesh_area(vertices: &[Vector3<f64>], tri: &[u32; 3]) -> f64 {
    let [a, b, c] = tri.map(|i| vertices[i as usize]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn axis_of(delta: usize, n: usize) -> u8 {
    if delta == n * n {
        0
    } else if delta == n {
        1
    } else {
        2
    }
}

fn interpolate(grid: &Grid, lo: usize, hi: usize, iso: f64) -> Vector3<f64> {
    let (v0, v1) = (grid.values[lo], grid.values[hi]);
    let (p0, p1) = (grid.point(lo), grid.point(hi));
    let t = if (v1 - v0).abs() > 0.0 {
        ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    p0 + (p1 - p0) * t
}

/// Wavefront OBJ text: `v x y z` lines then `f a b c` lines, 1-based.
pub fn export_obj(mesh: &TriangleMesh) -> Result<Vec<u8>, MeshError> {
    if mesh.triangles.is_empty() {
        return Err(MeshError::NoTriangles);
    }
    mesh.validate()?;
    let mut out = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).expect("write to string");
    }
    for [a, b, c] in &mesh.triangles {
        writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1).expect("write to string");
    }
    Ok(out.into_bytes())
}

/// Reads the `v` and triangular `f` records of an OBJ file.
pub fn parse_obj(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MeshError::Obj {
        line: 0,
        reason: e.to_string(),
    })?;
    let mut mesh = TriangleMesh::default();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let bad = |reason: &str| MeshError::Obj {
            line: line_no,
            reason: reason.to_string(),
        };
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let xyz: Vec<f64> = fields
                    .map(|f| f.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad vertex coordinate"))?;
                if xyz.len() < 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                mesh.vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = fields
                    .map(|f| f.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad face index"))?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(bad("expected a triangle with 1-based indices"));
                }
                mesh.triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobshape::{PartLatent, Provenance, ShapeId, PART_COUNT};

    fn shape_with(blobs: &[(Vector3<f64>, f64, f64)]) -> Shape {
        let mut parts: Vec<PartLatent> = blobs
            .iter()
            .map(|&(c, var, w)| PartLatent::isotropic(c, var, w))
            .collect();
        while parts.len() < PART_COUNT {
            parts.push(PartLatent::isotropic(Vector3::zeros(), 0.01, 0.0));
        }
        Shape::new(ShapeId::new("m"), Provenance::Procedural, parts).unwrap()
    }

    fn components(mesh: &TriangleMesh) -> usize {
        let mut parent: Vec<usize> = (0..mesh.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &mesh.triangles {
            for e in [(t[0], t[1]), (t[1], t[2])] {
                let (a, b) = (
                    find(&mut parent, e.0 as usize),
                    find(&mut parent, e.1 as usize),
                );
                parent[a] = b;
            }
        }
        let mut roots: Vec<usize> = mesh
            .triangles
            .iter()
            .map(|t| find(&mut parent, t[0] as usize))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    #[test]
    fn single_blob_vertices_sit_on_iso_radius() {
        let c = Vector3::new(0.05, -0.1, 0.0);
        let shape = shape_with(&[(c, 0.04, 1.0)]);
        let mesh = extract_mesh(&shape, 64, 0.125).unwrap();
        let radius = (-2.0 * 0.04 * 0.125f64.ln()).sqrt();
        assert!(!mesh.vertices.is_empty());
        for v in &mesh.vertices {
            let d = (v - c).norm();
            assert!((d - radius).abs() / radius < 0.02, "distance {d}");
        }
        assert_eq!(components(&mesh), 1);
    }

    #[test]
    fn sphere_mesh_is_closed() {
        let shape = shape_with(&[(Vector3::zeros(), 0.04, 1.0)]);
        let mesh = extract_mesh(&shape, 32, 0.125).unwrap();
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn faces_point_outward() {
        let shape = shape_with(&[(Vector3::zeros(), 0.04, 1.0)]);
        let mesh = extract_mesh(&shape, 24, 0.125).unwrap();
        let outward = mesh
            .triangles
            .iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                let centroid = (a + b + c) / 3.0;
                (b - a).cross(&(c - a)).dot(&centroid) > 0.0
            })
            .count();
        assert_eq!(outward, mesh.triangles.len());
    }

    #[test]
    fn vertices_lie_on_straddling_grid_edges() {
        let shape = shape_with(&[(Vector3::new(0.2, 0.1, -0.3), 0.02, 0.8)]);
        let n = 20;
        let iso = 0.2;
        let mesh = extract_mesh(&shape, n, iso).unwrap();
        let step = 2.0 * GRID_EXTENT / (n - 1) as f64;
        for v in &mesh.vertices {
            let cell = v.map(|x| (x + GRID_EXTENT) / step);
            let on_lattice = cell
                .iter()
                .filter(|c| (*c - c.round()).abs() < 1e-9)
                .count();
            assert!(on_lattice >= 2, "vertex {v:?} is not on a grid edge");
            assert!(v.iter().all(|x| x.abs() <= GRID_EXTENT + 1e-12));
        }
    }

    #[test]
    fn empty_field_is_an_error() {
        let shape = shape_with(&[]);
        match extract_mesh(&shape, 16, 0.125) {
            Err(MeshError::EmptyMesh { max, .. }) => assert_eq!(max, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_arguments_rejected() {
        let shape = shape_with(&[(Vector3::zeros(), 0.04, 1.0)]);
        assert_eq!(extract_mesh(&shape, 4, 0.1), Err(MeshError::Resolution(4)));
        assert_eq!(extract_mesh(&shape, 16, 0.0), Err(MeshError::IsoLevel(0.0)));
    }

    #[test]
    fn separated_blobs_give_two_components() {
        let shape = shape_with(&[
            (Vector3::new(-0.5, 0.0, 0.0), 0.02, 1.0),
            (Vector3::new(0.5, 0.0, 0.0), 0.02, 1.0),
        ]);
        let mesh = extract_mesh(&shape, 48, 0.125).unwrap();
        assert_eq!(components(&mesh), 2);
    }

    #[test]
    fn vertex_count_grows_with_resolution() {
        let shape = shape_with(&[(Vector3::zeros(), 0.04, 1.0)]);
        let counts: Vec<usize> = [16, 24, 32, 48, 64]
            .iter()
            .map(|&r| extract_mesh(&shape, r, 0.125).unwrap().vertices.len())
            .collect();
        for w in counts.windows(2) {
            assert!(w[1] as f64 >= w[0] as f64 * 0.95, "{counts:?}");
        }
    }

    #[test]
    fn meshing_is_deterministic() {
        let shape =
            crate::blobshape::generate_procedural_chair(crate::blobshape::Archetype::Armchair, 9);
        let a = extract_mesh(&shape, 32, 0.125).unwrap();
        let b = extract_mesh(&shape, 32, 0.125).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_triangle_obj() {
        let mesh = TriangleMesh {
            vertices: vec![Vector3::zeros(), Vector3::x(), Vector3::y()],
            triangles: vec![[0, 1, 2]],
            normals: None,
        };
        let text = String::from_utf8(export_obj(&mesh).unwrap()).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        let faces: Vec<&str> = text.lines().filter(|l| l.starts_with("f ")).collect();
        assert_eq!(faces, vec!["f 1 2 3"]);
    }

    #[test]
    fn obj_round_trip_preserves_counts() {
        let shape = shape_with(&[(Vector3::zeros(), 0.04, 1.0)]);
        let mesh = extract_mesh(&shape, 32, 0.125).unwrap();
        let parsed = parse_obj(&export_obj(&mesh).unwrap()).unwrap();
        assert_eq!(parsed.vertices.len(), mesh.vertices.len());
        assert_eq!(parsed.triangles, mesh.triangles);
        assert_eq!(parsed.vertices, mesh.vertices);
    }

    #[test]
    fn empty_mesh_not_exported() {
        assert_eq!(
            export_obj(&TriangleMesh::default()),
            Err(MeshError::NoTriangles)
        );
    }
}
