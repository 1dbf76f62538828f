use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

/// Triangles with area at or below this (m²) are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Indexed triangle surface.
///
/// Construction validates indices, finiteness, triangle area and (when
/// present) vertex-normal length, so downstream code can assume a clean mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    vertex_normals: Option<Vec<Vector3<f64>>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            triangles,
            vertex_normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh, silently dropping triangles whose area is below
    /// [`MIN_TRIANGLE_AREA`]. Vertices are kept as given.
    pub fn new_dropping_degenerate(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let triangles = triangles
            .into_iter()
            .filter(|t| {
                t.iter().all(|&i| (i as usize) < vertices.len())
                    && triangle_area(
                        &vertices[t[0] as usize],
                        &vertices[t[1] as usize],
                        &vertices[t[2] as usize],
                    ) > MIN_TRIANGLE_AREA
            })
            .collect();
        TriMesh::new(vertices, triangles)
    }

    pub fn with_vertex_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "{} vertex normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            if !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidMesh(format!("vertex normal {i} is not unit length")));
            }
        }
        self.vertex_normals = Some(normals);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} references a vertex out of range ({t:?}, {n} vertices)"
                )));
            }
            let area = self.triangle_area(i);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} is degenerate (area {area:e} m²)"
                )));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn vertex_normals(&self) -> Option<&[Vector3<f64>]> {
        self.vertex_normals.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn corners(&self, tri: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[tri];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        triangle_area(&a, &b, &c)
    }

    /// Unit geometric normal following the counter-clockwise winding.
    pub fn face_normal(&self, tri: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn centroid(&self, tri: usize) -> Point3<f64> {
        let [a, b, c] = self.corners(tri);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        bounds_of(self.vertices.iter())
    }

    /// Area-weighted vertex normals. Isolated vertices get `(0, 0, 1)`.
    pub fn area_weighted_normals(&self) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for (i, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = self.corners(i);
            // the unnormalised cross product carries twice the area
            let n = (b - a).cross(&(c - a));
            for &k in t {
                acc[k as usize] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vector3::z()
                }
            })
            .collect()
    }

    /// Applies `x -> rotation * x + translation` to every vertex.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point3::from(rotation * v.coords + translation))
                .collect(),
            triangles: self.triangles.clone(),
            vertex_normals: self
                .vertex_normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| rotation * n).collect()),
        }
    }

    /// Same surface with every triangle's winding reversed.
    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            vertex_normals: self.vertex_normals.as_ref().map(|ns| ns.iter().map(|n| -n).collect()),
        }
    }

    /// Per undirected edge, the number of incident triangles.
    pub fn edge_valences(&self) -> HashMap<(u32, u32), u32> {
        let mut map = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *map.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        map
    }

    /// Number of edges not shared by exactly two triangles.
    pub fn open_edge_count(&self) -> usize {
        self.edge_valences().values().filter(|&&c| c != 2).count()
    }

    /// True when every edge borders exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.is_empty() && self.open_edge_count() == 0
    }

    /// V - E + F over the referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &k in t {
                used[k as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_valences().len() as i64;
        v - e + self.triangles.len() as i64
    }

    /// Triangle-connected components (sharing a vertex), as lists of
    /// triangle indices ordered by their smallest triangle index.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for t in &self.triangles {
            let a = find(&mut parent, t[0] as usize);
            for &k in &t[1..] {
                let b = find(&mut parent, k as usize);
                if a != b {
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi] = lo;
                }
            }
        }
        let mut by_root: HashMap<usize, usize> = HashMap::new();
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for (i, t) in self.triangles.iter().enumerate() {
            let r = find(&mut parent, t[0] as usize);
            let slot = *by_root.entry(r).or_insert_with(|| {
                comps.push(Vec::new());
                comps.len() - 1
            });
            comps[slot].push(i);
        }
        comps
    }

    /// New mesh containing only the listed triangles, with unused vertices
    /// removed (vertex order preserved).
    pub fn subset(&self, tris: &[usize]) -> Result<TriMesh> {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut used: Vec<usize> = tris
            .iter()
            .flat_map(|&i| self.triangles[i].iter().map(|&k| k as usize))
            .collect();
        used.sort_unstable();
        used.dedup();
        let mut vertices = Vec::with_capacity(used.len());
        for &k in &used {
            remap[k] = vertices.len() as u32;
            vertices.push(self.vertices[k]);
        }
        let triangles = tris
            .iter()
            .map(|&i| {
                let t = self.triangles[i];
                [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]]
            })
            .collect();
        let mut mesh = TriMesh::new(vertices, triangles)?;
        if let Some(ns) = &self.vertex_normals {
            mesh.vertex_normals = Some(used.iter().map(|&k| ns[k]).collect());
        }
        Ok(mesh)
    }

    /// Concatenates two meshes into one vertex/triangle list.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let offset = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut triangles = self.triangles.clone();
        triangles.extend(other.triangles.iter().map(|t| t.map(|k| k + offset)));
        TriMesh {
            vertices,
            triangles,
            vertex_normals: None,
        }
    }
}

pub fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub(crate) fn bounds_of<'a>(points: impl Iterator<Item = &'a Point3<f64>>) -> Option<(Point3<f64>, Point3<f64>)> {
    let mut it = points.peekable();
    let first = **it.peek()?;
    Some(it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}
