use crate::error::{Error, Result};
use crate::real::Real;

/// One-ring neighbourhoods in compressed row form.
#[derive(Clone, Debug)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl Adjacency {
    pub fn from_faces(n_vertices: usize, faces: &[[u32; 3]]) -> Result<Self> {
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(faces.len() * 6);
        for f in faces {
            if let Some(&bad) = f.iter().find(|&&v| v as usize >= n_vertices) {
                return Err(Error::Invalid(format!("face index {bad} out of range for {n_vertices} vertices")));
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; n_vertices + 1];
        for &(a, _) in &pairs {
            offsets[a as usize + 1] += 1;
        }
        for i in 0..n_vertices {
            offsets[i + 1] += offsets[i];
        }
        Ok(Adjacency {
            offsets,
            neighbors: pairs.into_iter().map(|(_, b)| b).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// `v - mean(one-ring)` per vertex; zero for isolated vertices.
pub fn umbrella_residuals<T: Real>(vertices: &[T], adj: &Adjacency) -> Vec<T> {
    let mut r = vec![T::zero(); vertices.len()];
    for v in 0..adj.len() {
        let nb = adj.neighbors(v);
        if nb.is_empty() {
            continue;
        }
        let inv = T::lit(1.0 / nb.len() as f64);
        for i in 0..3 {
            let mean = nb.iter().map(|&j| vertices[j as usize * 3 + i]).sum::<T>() * inv;
            r[v * 3 + i] = vertices[v * 3 + i] - mean;
        }
    }
    r
}

/// Mean over vertices of the squared umbrella residual.
pub fn laplacian_loss<T: Real>(vertices: &[T], adj: &Adjacency) -> Result<T> {
    check(vertices, adj)?;
    let r = umbrella_residuals(vertices, adj);
    Ok(r.iter().map(|&x| x * x).sum::<T>() / T::lit(adj.len() as f64))
}

/// Gradient of [`laplacian_loss`] scaled by `d_loss`.
pub fn laplacian_backward<T: Real>(vertices: &[T], adj: &Adjacency, d_loss: T) -> Result<Vec<T>> {
    check(vertices, adj)?;
    let r = umbrella_residuals(vertices, adj);
    let scale = d_loss * T::lit(2.0 / adj.len() as f64);
    let mut g = vec![T::zero(); vertices.len()];
    for v in 0..adj.len() {
        let nb = adj.neighbors(v);
        if nb.is_empty() {
            continue;
        }
        let share = T::lit(1.0 / nb.len() as f64);
        for i in 0..3 {
            let gr = scale * r[v * 3 + i];
            g[v * 3 + i] += gr;
            for &j in nb {
                g[j as usize * 3 + i] -= gr * share;
            }
        }
    }
    Ok(g)
}

fn check<T>(vertices: &[T], adj: &Adjacency) -> Result<()> {
    if adj.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if vertices.len() != adj.len() * 3 {
        return Err(Error::shape("laplacian vertices", adj.len() * 3, vertices.len()));
    }
    Ok(())
}
