use rayon::prelude::*;
use rustc_hash::FxHashMap;

use super::{FusionError, VolumeGrid};
use crate::geometry::{Mesh, Vec3};

/// Triangles with area at or below this are dropped.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Edge fraction below which a crossing is moved onto the nearer sample.
const SNAP: f64 = 1e-3;

/// Cube corner `c` sits at offset `(c >> 2 & 1, c >> 1 & 1, c & 1)` in `(row, col, k)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [(c >> 2) & 1, (c >> 1) & 1, c & 1]
}

/// Kuhn split of the cube along the 0-7 diagonal. Faces shared by neighboring cubes are
/// split identically, so the tetrahedral mesh is conforming.
const TETS: [[usize; 4]; 6] = [
    [0, 4, 6, 7],
    [0, 4, 5, 7],
    [0, 2, 6, 7],
    [0, 2, 3, 7],
    [0, 1, 5, 7],
    [0, 1, 3, 7],
];

type EdgeKey = (usize, usize);

/// Up to two triangles per tetrahedron sign pattern, each given as three cube-corner edges.
#[derive(Clone, Copy, Default)]
struct Case {
    count: u8,
    tris: [[[u8; 2]; 3]; 2],
}

/// Triangle table indexed by tetrahedron and the inside bits of its four corners.
///
/// Inside a tetrahedron the interpolated field is affine, so its level set is planar and the
/// winding of each triangle depends only on the sign pattern. Windings are fixed once from the
/// grid's axis directions so that normals point from `< iso` toward `>= iso`.
fn case_table(corner: impl Fn(usize) -> Vec3) -> [[Case; 16]; 6] {
    let mut table = [[Case::default(); 16]; 6];
    for (t, tet) in TETS.iter().enumerate() {
        for (pattern, case) in table[t].iter_mut().enumerate() {
            let (mut inside, mut outside) = (Vec::new(), Vec::new());
            for (bit, &c) in tet.iter().enumerate() {
                if pattern >> bit & 1 == 1 { inside.push(c) } else { outside.push(c) }
            }
            let edges: Vec<[[usize; 2]; 3]> = match inside.len() {
                1 => vec![[0, 1, 2].map(|k| [inside[0], outside[k]])],
                3 => vec![[0, 1, 2].map(|k| [outside[0], inside[k]])],
                2 => {
                    // Quad with corners ordered around the tetrahedron: i0-o0, i0-o1, i1-o1, i1-o0.
                    let (i0, i1, o0, o1) = (inside[0], inside[1], outside[0], outside[1]);
                    let q = [[i0, o0], [i0, o1], [i1, o1], [i1, o0]];
                    vec![[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
                }
                _ => vec![],
            };
            let hint = inside.iter().map(|&c| corner(c)).sum::<Vec3>() / inside.len().max(1) as f64;
            for (n, tri) in edges.iter().enumerate() {
                let [a, b, c] = tri.map(|[u, v]| (corner(u) + corner(v)) / 2.0);
                let normal = (b - a).cross(&(c - a));
                let tri = if normal.dot(&((a + b + c) / 3.0 - hint)) >= 0.0 { *tri } else { [tri[0], tri[2], tri[1]] };
                case.tris[n] = tri.map(|e| e.map(|c| c as u8));
            }
            case.count = edges.len() as u8;
        }
    }
    table
}

#[derive(Default)]
struct SlabMesh {
    keys: Vec<EdgeKey>,
    positions: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

/// Sample coordinates along each grid axis.
struct Axes {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

struct SlabBuilder<'a> {
    grid: &'a VolumeGrid,
    axes: &'a Axes,
    table: &'a [[Case; 16]; 6],
    /// Linear index offset of each cube corner.
    offsets: [usize; 8],
    iso: f32,
    lookup: FxHashMap<EdgeKey, u32>,
    /// Vertex of each corner pair in the current cube, `u32::MAX` when not yet computed.
    local: [[u32; 8]; 8],
    out: SlabMesh,
}

impl SlabBuilder<'_> {
    fn edge_vertex(&mut self, cell: [usize; 3], a: usize, b: usize) -> u32 {
        let cached = self.local[a][b];
        if cached != u32::MAX {
            return cached;
        }
        let base = self.grid.index(cell[0], cell[1], cell[2]);
        let (ia, ib) = (base + self.offsets[a], base + self.offsets[b]);
        let (va, vb) = (self.grid.values[ia], self.grid.values[ib]);
        let t = ((self.iso - va) / (vb - va)).clamp(0.0, 1.0) as f64;
        // Crossings next to a sample snap onto it and are keyed by it, so every edge
        // touching that sample shares one vertex and slivers collapse to repeated indices.
        let (key, t) = if t < SNAP {
            ((ia, ia), 0.0)
        } else if t > 1.0 - SNAP {
            ((ib, ib), 1.0)
        } else {
            ((ia.min(ib), ia.max(ib)), t)
        };
        let id = match self.lookup.get(&key) {
            Some(&v) => v,
            None => {
                let (pa, pb) = (self.corner(cell, a), self.corner(cell, b));
                let id = self.out.positions.len() as u32;
                self.out.positions.push(pa + (pb - pa) * t);
                self.out.keys.push(key);
                self.lookup.insert(key, id);
                id
            }
        };
        self.local[a][b] = id;
        self.local[b][a] = id;
        id
    }

    fn corner(&self, cell: [usize; 3], c: usize) -> Vec3 {
        let o = corner_offset(c);
        Vec3::new(self.axes.x[cell[1] + o[1]], self.axes.y[cell[0] + o[0]], self.axes.z[cell[2] + o[2]])
    }

    fn emit(&mut self, tri: [u32; 3]) {
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return;
        }
        let [a, b, c] = tri.map(|v| self.out.positions[v as usize]);
        if 0.5 * (b - a).cross(&(c - a)).norm() > MIN_TRIANGLE_AREA {
            self.out.triangles.push(tri);
        }
    }

    fn cube(&mut self, i: usize, j: usize, k: usize) {
        let base = self.grid.index(i, j, k);
        let values = &self.grid.values;
        let mut mask = 0u8;
        for (c, &o) in self.offsets.iter().enumerate() {
            mask |= ((values[base + o] < self.iso) as u8) << c;
        }
        if mask == 0 || mask == u8::MAX {
            return;
        }
        self.local = [[u32::MAX; 8]; 8];
        let cell = [i, j, k];
        for (t, tet) in TETS.iter().enumerate() {
            let pattern = tet.iter().enumerate().fold(0, |p, (bit, &c)| p | ((mask >> c & 1) as usize) << bit);
            let case = self.table[t][pattern];
            for tri in &case.tris[..case.count as usize] {
                let v = tri.map(|[a, b]| self.edge_vertex(cell, a as usize, b as usize));
                self.emit(v);
            }
        }
    }
}

/// Rows per parallel work unit.
const SLAB_ROWS: usize = 8;

/// Polygonizes the `iso` level set of `grid` with marching tetrahedra.
///
/// Each cube is split into six tetrahedra and every tetrahedron contributes up to two
/// triangles with vertices linearly interpolated along its edges. Vertices on the same
/// grid edge are shared, so closed level sets give closed meshes. Triangles face from
/// `< iso` toward `>= iso`. Row slabs are processed in parallel and merged in slab order,
/// so output is deterministic.
pub fn extract_surface(grid: &VolumeGrid, iso: f32) -> Result<Mesh, FusionError> {
    let (h, w, nz) = (grid.rows(), grid.cols(), grid.nz);
    if h < 2 || w < 2 || nz < 2 {
        return Err(FusionError::NoSurface);
    }
    // Cubes with every corner outside are skipped per column: only `k` within the union of
    // the four columns' inside-sample ranges, widened by one, can cross the level set.
    let ranges: Vec<Option<(usize, usize)>> = grid
        .values
        .par_chunks(nz)
        .map(|col| {
            let lo = col.iter().position(|&v| v < iso)?;
            let hi = col.iter().rposition(|&v| v < iso)?;
            Some((lo, hi))
        })
        .collect();
    let axes = Axes {
        x: (0..w).map(|j| grid.position(0, j, 0).x).collect(),
        y: (0..h).map(|i| grid.position(i, 0, 0).y).collect(),
        z: (0..nz).map(|k| grid.position(0, 0, k).z).collect(),
    };
    let offsets: [usize; 8] = std::array::from_fn(|c| {
        let o = corner_offset(c);
        grid.index(o[0], o[1], o[2])
    });
    let table = case_table(|c| {
        let o = corner_offset(c);
        grid.position(o[0], o[1], o[2])
    });
    let cube_rows = h - 1;
    let slabs: Vec<SlabMesh> = (0..cube_rows.div_ceil(SLAB_ROWS))
        .into_par_iter()
        .map(|s| {
            let mut b = SlabBuilder {
                grid,
                axes: &axes,
                table: &table,
                offsets,
                iso,
                lookup: FxHashMap::default(),
                local: [[u32::MAX; 8]; 8],
                out: SlabMesh::default(),
            };
            for i in s * SLAB_ROWS..((s + 1) * SLAB_ROWS).min(cube_rows) {
                for j in 0..w - 1 {
                    let span = [(i, j), (i, j + 1), (i + 1, j), (i + 1, j + 1)]
                        .iter()
                        .filter_map(|&(r, c)| ranges[r * w + c])
                        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)));
                    let Some((lo, hi)) = span else { continue };
                    for k in lo.saturating_sub(1)..hi.min(nz - 2) + 1 {
                        b.cube(i, j, k);
                    }
                }
            }
            b.out
        })
        .collect();

    // Only vertices whose edge lies in a row shared by two slabs can repeat across slabs.
    let row_of = |linear: usize| linear / (w * nz);
    let shared = |key: &EdgeKey| {
        let (ra, rb) = (row_of(key.0), row_of(key.1));
        ra == rb && ra % SLAB_ROWS == 0
    };
    let mut lookup: FxHashMap<EdgeKey, u32> = FxHashMap::default();
    let mut vertices = Vec::with_capacity(slabs.iter().map(|s| s.positions.len()).sum());
    let mut faces = Vec::with_capacity(slabs.iter().map(|s| s.triangles.len()).sum());
    for slab in slabs {
        let remap: Vec<u32> = slab
            .keys
            .iter()
            .zip(&slab.positions)
            .map(|(key, p)| {
                let fresh = |vertices: &mut Vec<Vec3>| {
                    vertices.push(*p);
                    (vertices.len() - 1) as u32
                };
                if shared(key) {
                    *lookup.entry(*key).or_insert_with(|| fresh(&mut vertices))
                } else {
                    fresh(&mut vertices)
                }
            })
            .collect();
        faces.extend(slab.triangles.iter().map(|t| t.map(|v| remap[v as usize])));
    }
    if faces.is_empty() {
        return Err(FusionError::NoSurface);
    }
    // Indices are in range and degenerate triangles were dropped in `emit`.
    Ok(Mesh { vertices, faces, vertex_colors: None, vertex_normals: None })
}
