use super::{GeometryError, Vec3};

/// Triangle mesh with optional per-vertex color and normal.
///
/// Vertices are in meters. Colors are linear RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_colors: Option<Vec<[f32; 3]>>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

impl Mesh {
    /// Builds a mesh and checks index ranges and face areas.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let mesh = Self { vertices, faces, vertex_colors: None, vertex_normals: None };
        mesh.validate()?;
        Ok(mesh)
    }

    /// A mesh with no vertices and no faces. Skips validation since there is nothing to check.
    pub fn empty() -> Self {
        Self { vertices: Vec::new(), faces: Vec::new(), vertex_colors: None, vertex_normals: None }
    }

    pub fn with_colors(mut self, colors: Vec<[f32; 3]>) -> Result<Self, GeometryError> {
        if colors.len() != self.vertices.len() {
            return Err(GeometryError::AttributeLength {
                attribute: "vertex_colors",
                got: colors.len(),
                expected: self.vertices.len(),
            });
        }
        self.vertex_colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self, GeometryError> {
        if normals.len() != self.vertices.len() {
            return Err(GeometryError::AttributeLength {
                attribute: "vertex_normals",
                got: normals.len(),
                expected: self.vertices.len(),
            });
        }
        if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(GeometryError::NonUnitNormal(i));
        }
        self.vertex_normals = Some(normals);
        Ok(self)
    }

    /// Replaces vertex normals with area-weighted averages of the incident face normals.
    pub fn with_computed_normals(mut self) -> Self {
        self.vertex_normals = Some(self.compute_vertex_normals());
        self
    }

    /// Paints every vertex with one color.
    pub fn painted(mut self, color: [f32; 3]) -> Self {
        self.vertex_colors = Some(vec![color; self.vertices.len()]);
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let count = self.vertices.len();
        for (face, tri) in self.faces.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= count) {
                return Err(GeometryError::FaceIndexOutOfRange { face, index, count });
            }
            if self.face_area(face) <= 0.0 {
                return Err(GeometryError::DegenerateFace(face));
            }
        }
        if let Some(colors) = &self.vertex_colors {
            if colors.len() != count {
                return Err(GeometryError::AttributeLength {
                    attribute: "vertex_colors",
                    got: colors.len(),
                    expected: count,
                });
            }
        }
        if let Some(normals) = &self.vertex_normals {
            if normals.len() != count {
                return Err(GeometryError::AttributeLength {
                    attribute: "vertex_normals",
                    got: normals.len(),
                    expected: count,
                });
            }
            if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(GeometryError::NonUnitNormal(i));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        self.face_cross(face).normalize()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive for closed meshes with outward winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Axis-aligned bounds `(min, max)`. Returns `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut area = 0.0;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let w = self.face_area(f);
            acc += (a + b + c) * (w / 3.0);
            area += w;
        }
        if area > 0.0 {
            acc / area
        } else {
            Vec3::zeros()
        }
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        let mut out = self.clone();
        out.vertices.iter_mut().for_each(|v| *v += offset);
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.vertices.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Shifts the mesh so its surface centroid sits at the origin.
    pub fn centered(&self) -> Self {
        self.translated(-self.surface_centroid())
    }

    pub fn compute_vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (f, tri) in self.faces.iter().enumerate() {
            let n = self.face_cross(f);
            for &i in tri {
                acc[i as usize] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect()
    }

    /// Concatenates meshes. Color is kept only when every part has colors.
    pub fn merge(parts: &[Mesh]) -> Self {
        let mut out = Mesh::empty();
        let keep_colors = parts.iter().all(|p| p.vertex_colors.is_some());
        let keep_normals = parts.iter().all(|p| p.vertex_normals.is_some());
        let mut colors = Vec::new();
        let mut normals = Vec::new();
        for part in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&part.vertices);
            out.faces.extend(part.faces.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
            if keep_colors {
                colors.extend_from_slice(part.vertex_colors.as_ref().unwrap());
            }
            if keep_normals {
                normals.extend_from_slice(part.vertex_normals.as_ref().unwrap());
            }
        }
        if keep_colors && !parts.is_empty() {
            out.vertex_colors = Some(colors);
        }
        if keep_normals && !parts.is_empty() {
            out.vertex_normals = Some(normals);
        }
        out
    }
}
