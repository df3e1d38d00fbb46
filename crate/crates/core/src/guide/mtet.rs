use std::collections::HashMap;

use rayon::prelude::*;

use super::grid::TetGrid;
use crate::error::{Error, Result};
use crate::linalg::{cross3, dot3, norm3, sub3};
use crate::real::Real;

/// Faces at or below this area are dropped.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Explicit surface cut from a [`TetGrid`]. Each vertex remembers the lattice
/// edge `(a, b)`, `a < b`, it lies on and its crossing parameter `t` measured
/// from `a`, which is all the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct GuideMesh<T> {
    pub channels: usize,
    pub vertices: Vec<T>,
    pub faces: Vec<[u32; 3]>,
    pub features: Vec<T>,
    pub edges: Vec<[u32; 2]>,
    pub t: Vec<T>,
}

impl<T: Real> GuideMesh<T> {
    pub fn empty(channels: usize) -> Self {
        GuideMesh {
            channels,
            vertices: Vec::new(),
            faces: Vec::new(),
            features: Vec::new(),
            edges: Vec::new(),
            t: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, v: usize) -> [T; 3] {
        [self.vertices[v * 3], self.vertices[v * 3 + 1], self.vertices[v * 3 + 2]]
    }

    /// Unique undirected edges, sorted.
    pub fn edge_list(&self) -> Vec<[u32; 2]> {
        let mut e: Vec<[u32; 2]> = self
            .faces
            .iter()
            .flat_map(|f| [[f[0], f[1]], [f[1], f[2]], [f[2], f[0]]])
            .map(|[a, b]| [a.min(b), a.max(b)])
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.len() as i64 - self.edge_list().len() as i64 + self.faces.len() as i64
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edge_list();
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&[a, b]| norm3(&sub3(&self.vertex(a as usize), &self.vertex(b as usize))).to_f64_lossy())
            .sum();
        total / edges.len() as f64
    }

    /// ASCII Wavefront OBJ with positions and 1-based faces.
    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(self.len() * 40 + self.faces.len() * 24);
        for v in self.vertices.chunks_exact(3) {
            s.push_str(&format!("v {} {} {}\n", v[0].to_f64_lossy(), v[1].to_f64_lossy(), v[2].to_f64_lossy()));
        }
        for f in &self.faces {
            s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        s
    }

    pub fn write_obj(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

type EdgeKey = (u32, u32);

fn key(a: u32, b: u32) -> EdgeKey {
    (a.min(b), a.max(b))
}

fn crossing<T: Real>(grid: &TetGrid<T>, (a, b): EdgeKey) -> (T, [T; 3]) {
    let (sa, sb) = (grid.sdf[a as usize], grid.sdf[b as usize]);
    let t = sa / (sa - sb);
    let (pa, pb) = (grid.position(a as usize), grid.position(b as usize));
    (t, [0, 1, 2].map(|i| pa[i] + t * (pb[i] - pa[i])))
}

/// Oriented triangles (as edge keys) produced by one tet.
fn tet_triangles<T: Real>(grid: &TetGrid<T>, tet: &[u32; 4]) -> Vec<[EdgeKey; 3]> {
    let inside: Vec<bool> = tet.iter().map(|&v| grid.sdf[v as usize] < T::zero()).collect();
    let n_in = inside.iter().filter(|&&b| b).count();
    let ins: Vec<u32> = (0..4).filter(|&k| inside[k]).map(|k| tet[k]).collect();
    let outs: Vec<u32> = (0..4).filter(|&k| !inside[k]).map(|k| tet[k]).collect();
    let tris: Vec<[EdgeKey; 3]> = match n_in {
        1 => vec![[key(ins[0], outs[0]), key(ins[0], outs[1]), key(ins[0], outs[2])]],
        3 => vec![[key(outs[0], ins[0]), key(outs[0], ins[1]), key(outs[0], ins[2])]],
        2 => {
            let (a, b, c, d) = (ins[0], ins[1], outs[0], outs[1]);
            let quad = [key(a, c), key(a, d), key(b, d), key(b, c)];
            // split along the diagonal through the smallest key so the result
            // does not depend on how the tet lists its corners
            let m = (0..4).min_by_key(|&i| quad[i]).unwrap();
            let q = |i: usize| quad[(m + i) % 4];
            vec![[q(0), q(1), q(2)], [q(0), q(2), q(3)]]
        }
        _ => return Vec::new(),
    };
    // The linear interpolant increases from the inside corners to the outside
    // ones, so that direction is the outward normal of the cut.
    let centroid = |vs: &[u32]| {
        let mut c = [T::zero(); 3];
        for &v in vs {
            let p = grid.position(v as usize);
            (0..3).for_each(|i| c[i] += p[i]);
        }
        c.map(|x| x / T::lit(vs.len() as f64))
    };
    let outward = sub3(&centroid(&outs), &centroid(&ins));
    let min_area = T::lit(MIN_FACE_AREA);
    tris.into_iter()
        .filter_map(|mut tri| {
            let p = tri.map(|k| crossing(grid, k).1);
            let n = cross3(&sub3(&p[1], &p[0]), &sub3(&p[2], &p[0]));
            if norm3(&n) * T::lit(0.5) <= min_area {
                return None;
            }
            if dot3(&n, &outward) < T::zero() {
                tri.swap(1, 2);
            }
            Some(tri)
        })
        .collect()
}

/// Extracts the zero level of `grid.sdf` (negative = inside). Output is
/// canonical: vertices sorted by lattice edge, faces rotated to start at their
/// smallest index and sorted, so it does not depend on tet order or threads.
pub fn marching_tets<T: Real>(grid: &TetGrid<T>) -> GuideMesh<T> {
    let tris: Vec<[EdgeKey; 3]> = grid.tets.par_iter().flat_map_iter(|tet| tet_triangles(grid, tet)).collect();
    build_mesh(grid, tris)
}

/// Single-threaded reference path; also lets tests feed a shuffled tet list.
pub fn marching_tets_serial<T: Real>(grid: &TetGrid<T>) -> GuideMesh<T> {
    let tris: Vec<[EdgeKey; 3]> = grid.tets.iter().flat_map(|tet| tet_triangles(grid, tet)).collect();
    build_mesh(grid, tris)
}

fn build_mesh<T: Real>(grid: &TetGrid<T>, tris: Vec<[EdgeKey; 3]>) -> GuideMesh<T> {
    let ch = grid.channels;
    let mut keys: Vec<EdgeKey> = tris.iter().flatten().copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let index: HashMap<EdgeKey, u32> = keys.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect();
    let mut mesh = GuideMesh::empty(ch);
    mesh.vertices.reserve(keys.len() * 3);
    mesh.features.reserve(keys.len() * ch);
    for &(a, b) in &keys {
        let (t, p) = crossing(grid, (a, b));
        mesh.vertices.extend_from_slice(&p);
        let (fa, fb) = (
            &grid.features[a as usize * ch..(a as usize + 1) * ch],
            &grid.features[b as usize * ch..(b as usize + 1) * ch],
        );
        mesh.features.extend(fa.iter().zip(fb).map(|(&x, &y)| x + t * (y - x)));
        mesh.edges.push([a, b]);
        mesh.t.push(t);
    }
    mesh.faces = tris
        .iter()
        .map(|tri| {
            let f = tri.map(|k| index[&k]);
            let m = (0..3).min_by_key(|&i| f[i]).unwrap();
            [f[m], f[(m + 1) % 3], f[(m + 2) % 3]]
        })
        .collect();
    mesh.faces.sort_unstable();
    mesh
}

/// Lattice gradients `(d_sdf, d_features)` from gradients on the mesh vertex
/// positions and features.
pub fn marching_tets_backward<T: Real>(
    grid: &TetGrid<T>,
    mesh: &GuideMesh<T>,
    d_vertices: &[T],
    d_features: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let ch = mesh.channels;
    if d_vertices.len() != mesh.vertices.len() {
        return Err(Error::shape("mesh vertex gradient", mesh.vertices.len(), d_vertices.len()));
    }
    if d_features.len() != mesh.features.len() {
        return Err(Error::shape("mesh feature gradient", mesh.features.len(), d_features.len()));
    }
    let mut d_sdf = vec![T::zero(); grid.len()];
    let mut d_feat = vec![T::zero(); grid.len() * ch];
    for (v, (&[a, b], &t)) in mesh.edges.iter().zip(&mesh.t).enumerate() {
        let (a, b) = (a as usize, b as usize);
        let (pa, pb) = (grid.position(a), grid.position(b));
        let mut dt = T::zero();
        for i in 0..3 {
            dt += d_vertices[v * 3 + i] * (pb[i] - pa[i]);
        }
        for c in 0..ch {
            let g = d_features[v * ch + c];
            dt += g * (grid.features[b * ch + c] - grid.features[a * ch + c]);
            d_feat[a * ch + c] += (T::one() - t) * g;
            d_feat[b * ch + c] += t * g;
        }
        let (sa, sb) = (grid.sdf[a], grid.sdf[b]);
        let den = (sa - sb) * (sa - sb);
        d_sdf[a] += dt * (-sb / den);
        d_sdf[b] += dt * (sa / den);
    }
    Ok((d_sdf, d_feat))
}
