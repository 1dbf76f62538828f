//! Bounding-volume hierarchy over a [`TriMesh`] for nearest-surface queries.

use nalgebra::{Point3, Vector3};

use super::mesh::TriMesh;
use super::sampling::SurfaceSample;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Nearest point on a mesh surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub sample: SurfaceSample,
    pub distance: f64,
}

/// Median-split BVH (longest centroid axis, leaves of at most four triangles).
#[derive(Debug, Clone)]
pub struct Bvh<'a> {
    mesh: &'a TriMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
    normals: Vec<Vector3<f64>>,
}

impl<'a> Bvh<'a> {
    pub fn build(mesh: &'a TriMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyInput("closest-point query on an empty mesh".into()));
        }
        let n = mesh.triangle_count();
        let centroids: Vec<Point3<f64>> = (0..n).map(|i| mesh.centroid(i)).collect();
        let boxes: Vec<Aabb> = (0..n)
            .map(|i| {
                let mut b = Aabb::empty();
                for c in mesh.corners(i) {
                    b.grow(&c);
                }
                b
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        build_node(&mut nodes, &mut order, 0, n, &centroids, &boxes);
        let normals = (0..n).map(|i| mesh.face_normal(i)).collect();
        Ok(Bvh {
            mesh,
            nodes,
            order,
            normals,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    /// Nearest surface point. Triangles within [`TIE_TOLERANCE`] of the
    /// minimum distance count as tied and the lowest index wins, so the
    /// reported triangle (and normal) does not depend on rounding.
    pub fn closest_point(&self, q: &Point3<f64>) -> ClosestPoint {
        let nearest = std::cell::Cell::new(f64::INFINITY);
        self.visit(q, || nearest.get(), |_, d2| nearest.set(nearest.get().min(d2)));
        let best_d2 = nearest.get();
        let limit = tie_limit(best_d2.sqrt());
        let limit2 = limit * limit;
        let mut best = (usize::MAX, Point3::origin());
        self.visit(
            q,
            || limit2,
            |(t, p), d2| {
                if d2 <= limit2 && t < best.0 {
                    best = (t, p);
                }
            },
        );
        ClosestPoint {
            sample: SurfaceSample {
                position: best.1,
                normal: self.normals[best.0],
                triangle_index: best.0,
            },
            distance: best_d2.sqrt(),
        }
    }

    /// Depth-first traversal skipping boxes farther than `bound()` (squared);
    /// `hit` receives each visited triangle with its closest point and
    /// squared distance.
    fn visit(&self, q: &Point3<f64>, bound: impl Fn() -> f64, mut hit: impl FnMut((usize, Point3<f64>), f64)) {
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds().distance_squared(q) > bound() {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let [a, b, c] = self.mesh.corners(t);
                        let p = closest_point_on_triangle(q, &a, &b, &c);
                        hit((t, p), (p - q).norm_squared());
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(q);
                    let dr = self.nodes[right].bounds().distance_squared(q);
                    // visit the nearer child first
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
    }
}

/// Relative distance within which two triangles tie for closest.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Largest distance still tied with a minimum distance of `d`.
pub fn tie_limit(d: f64) -> f64 {
    d * (1.0 + TIE_TOLERANCE) + 1e-15
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    centroids: &[Point3<f64>],
    boxes: &[Aabb],
) -> usize {
    let bounds = order[start..end]
        .iter()
        .fold(Aabb::empty(), |acc, &t| acc.union(&boxes[t]));
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let mut cb = Aabb::empty();
    for &t in &order[start..end] {
        cb.grow(&centroids[t]);
    }
    let ext = cb.max - cb.min;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build_node(nodes, order, start, mid, centroids, boxes);
    let right = build_node(nodes, order, mid, end, centroids, boxes);
    nodes[idx] = Node::Inner { bounds, left, right };
    idx
}

/// Nearest point to `p` on triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Convenience wrapper: builds a BVH and answers one query.
pub fn closest_point(mesh: &TriMesh, query: &Point3<f64>) -> Result<ClosestPoint> {
    Ok(Bvh::build(mesh)?.closest_point(query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: minimum over the triangle plane projection (if
    /// inside) and the three edge segments.
    fn oracle_triangle_distance(p: &Point3<f64>, tri: [Point3<f64>; 3]) -> f64 {
        let [a, b, c] = tri;
        let n = (b - a).cross(&(c - a)).normalize();
        let proj = p - n * n.dot(&(p - a));
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|(s, e)| (e - s).cross(&(proj - s)).dot(&n) >= 0.0);
        let mut best = f64::INFINITY;
        if inside {
            best = (p - proj).norm();
        }
        for (s, e) in [(a, b), (b, c), (c, a)] {
            let d = e - s;
            let t = ((p - s).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            best = best.min((p - (s + d * t)).norm());
        }
        best
    }

    fn random_mesh(rng: &mut ChaCha8Rng, tris: usize) -> TriMesh {
        let mut v = Vec::new();
        let mut t = Vec::new();
        while t.len() < tris {
            let c = Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let base = v.len() as u32;
            for _ in 0..3 {
                v.push(
                    c + Vector3::new(
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                    ),
                );
            }
            t.push([base, base + 1, base + 2]);
        }
        TriMesh::new_dropping_degenerate(v, t).unwrap()
    }

    #[test]
    fn query_on_vertex_and_above_square() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let cp = closest_point(&m, &Point3::new(1.0, 1.0, 0.0)).unwrap();
        assert_eq!(cp.distance, 0.0);
        let cp = closest_point(&m, &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(cp.sample.position, Point3::origin());
        assert_eq!(cp.distance, 1.0);
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let m = TriMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(Bvh::build(&m), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn matches_brute_force_on_random_meshes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let tris = if trial == 0 { 200 } else { rng.random_range(1..=500) };
            let mesh = random_mesh(&mut rng, tris);
            let bvh = Bvh::build(&mesh).unwrap();
            for _ in 0..20 {
                let q = Point3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                );
                let cp = bvh.closest_point(&q);
                let brute = (0..mesh.triangle_count())
                    .map(|i| oracle_triangle_distance(&q, mesh.corners(i)))
                    .fold(f64::INFINITY, f64::min);
                assert!((cp.distance - brute).abs() < 1e-12, "{} vs {}", cp.distance, brute);
                assert!(((cp.sample.position - q).norm() - cp.distance).abs() < 1e-12);
            }
        }
    }
}
