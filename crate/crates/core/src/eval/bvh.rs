use crate::geometry::{Mesh, Vec3};

/// Closest point to `p` on triangle `abc`, by Voronoi-region classification.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
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
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self { lo: Vec3::repeat(f64::INFINITY), hi: Vec3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        let d = (self.lo - p).sup(&(p - self.hi)).sup(&Vec3::zeros());
        d.norm_squared()
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

const LEAF_SIZE: usize = 4;

/// Bounding-volume hierarchy over a mesh's triangles for exact nearest-surface queries.
/// Immutable once built; queries take `&self` and may run concurrently.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    triangles: Vec<[Vec3; 3]>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn new(mesh: &Mesh) -> Self {
        let mut triangles: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len().div_ceil(LEAF_SIZE));
        if !triangles.is_empty() {
            let n = triangles.len();
            build(&mut triangles, 0, n, &mut nodes);
        }
        Self { triangles, nodes }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Exact distance from `p` to the nearest triangle; infinite for an empty mesh.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.closest_point(p).map_or(f64::INFINITY, |q| (q - p).norm())
    }

    pub fn closest_point(&self, p: &Vec3) -> Option<Vec3> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        let mut best_point = None;
        let mut stack = vec![(0usize, self.nodes[0].bounds().distance_sq(p))];
        while let Some((id, d)) = stack.pop() {
            if d >= best {
                continue;
            }
            match &self.nodes[id] {
                Node::Leaf { start, end, .. } => {
                    for [a, b, c] in &self.triangles[*start..*end] {
                        let q = closest_point_on_triangle(p, a, b, c);
                        let dq = (q - p).norm_squared();
                        if dq < best {
                            best = dq;
                            best_point = Some(q);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_sq(p);
                    let dr = self.nodes[*right].bounds().distance_sq(p);
                    // Nearer child is popped first.
                    if dl < dr {
                        stack.push((*right, dr));
                        stack.push((*left, dl));
                    } else {
                        stack.push((*left, dl));
                        stack.push((*right, dr));
                    }
                }
            }
        }
        best_point
    }
}

fn build(tris: &mut [[Vec3; 3]], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let mut bounds = Aabb::empty();
    let mut centroids = Aabb::empty();
    for t in &tris[start..end] {
        t.iter().for_each(|v| bounds.grow(v));
        centroids.grow(&((t[0] + t[1] + t[2]) / 3.0));
    }
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return id;
    }
    nodes.push(Node::Leaf { bounds, start, end });
    let axis = (centroids.hi - centroids.lo).imax();
    let mid = start + (end - start) / 2;
    let key = |t: &[Vec3; 3]| t[0][axis] + t[1][axis] + t[2][axis];
    tris[start..end].select_nth_unstable_by(mid - start, |a, b| key(a).total_cmp(&key(b)));
    let left = build(tris, start, mid, nodes);
    let right = build(tris, mid, end, nodes);
    nodes[id] = Node::Inner { bounds, left, right };
    id
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::primitives::{random_blob, uv_sphere};

    fn brute_force(mesh: &Mesh, p: &Vec3) -> f64 {
        (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn triangle_regions() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        let cases = [
            (Vec3::new(0.2, 0.2, 1.0), Vec3::new(0.2, 0.2, 0.0)),
            (Vec3::new(-1.0, -1.0, 0.0), a),
            (Vec3::new(2.0, -0.5, 0.0), b),
            (Vec3::new(-0.5, 2.0, 3.0), c),
            (Vec3::new(0.5, -1.0, 0.0), Vec3::new(0.5, 0.0, 0.0)),
            (Vec3::new(-1.0, 0.5, 0.0), Vec3::new(0.0, 0.5, 0.0)),
            (Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.5, 0.5, 0.0)),
        ];
        for (p, expected) in cases {
            let q = closest_point_on_triangle(&p, &a, &b, &c);
            assert!((q - expected).norm() < 1e-12, "{p:?} -> {q:?}");
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mesh in [uv_sphere(Vec3::zeros(), 0.4, 12, 16), random_blob(3, Vec3::new(0.1, 0.0, 0.0), 0.3, 0.1)] {
            let bvh = TriangleBvh::new(&mesh);
            for _ in 0..300 {
                let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                assert!((bvh.distance(&p) - brute_force(&mesh, &p)).abs() < 1e-12);
            }
        }
        assert!(TriangleBvh::new(&Mesh::empty()).distance(&Vec3::zeros()).is_infinite());
    }
}
