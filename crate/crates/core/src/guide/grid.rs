use crate::error::{Error, Result};
use crate::real::Real;

/// Corner offsets of a lattice cube, bit 0 = x, bit 1 = y, bit 2 = z.
const CORNER: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Kuhn split of a cube along its 0-7 diagonal. Neighbouring cubes agree on
/// their shared face diagonals, so the tetrahedralization is conforming.
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// The six edges of a tetrahedron as local vertex pairs.
pub const TET_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Regular `res^3` lattice over the cube `[lo, hi]^3`, split into tetrahedra,
/// carrying an SDF value and a feature vector per lattice vertex.
#[derive(Clone, Debug)]
pub struct TetGrid<T> {
    pub res: usize,
    pub lo: f64,
    pub hi: f64,
    pub channels: usize,
    pub positions: Vec<T>,
    pub tets: Vec<[u32; 4]>,
    pub sdf: Vec<T>,
    pub features: Vec<T>,
}

impl<T: Real> TetGrid<T> {
    pub fn new(res: usize, lo: f64, hi: f64, channels: usize) -> Result<Self> {
        if res < 2 {
            return Err(Error::Invalid(format!("lattice resolution must be at least 2, got {res}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Invalid(format!("lattice bounds [{lo}, {hi}] are empty")));
        }
        let n = res * res * res;
        if n > u32::MAX as usize {
            return Err(Error::Invalid(format!("lattice resolution {res} too large")));
        }
        let h = (hi - lo) / (res - 1) as f64;
        let mut positions = Vec::with_capacity(n * 3);
        for k in 0..res {
            for j in 0..res {
                for i in 0..res {
                    positions.extend([i, j, k].map(|c| T::lit(lo + c as f64 * h)));
                }
            }
        }
        let cells = res - 1;
        let mut tets = Vec::with_capacity(cells * cells * cells * 6);
        for k in 0..cells {
            for j in 0..cells {
                for i in 0..cells {
                    let corner = |c: usize| {
                        let [di, dj, dk] = CORNER[c];
                        (i + di + res * (j + dj + res * (k + dk))) as u32
                    };
                    for tet in KUHN {
                        tets.push(tet.map(corner));
                    }
                }
            }
        }
        Ok(TetGrid {
            res,
            lo,
            hi,
            channels,
            positions,
            tets,
            sdf: vec![T::zero(); n],
            features: vec![T::zero(); n * channels],
        })
    }

    pub fn len(&self) -> usize {
        self.sdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sdf.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.res - 1) as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res * (j + self.res * k)
    }

    pub fn position(&self, v: usize) -> [T; 3] {
        [self.positions[v * 3], self.positions[v * 3 + 1], self.positions[v * 3 + 2]]
    }

    /// Fills the SDF from a closure; features are left untouched.
    pub fn fill_sdf(&mut self, f: impl Fn([T; 3]) -> T) {
        for v in 0..self.len() {
            self.sdf[v] = f(self.position(v));
        }
    }

    /// Lattice vertices within `width` lattice spacings of the zero level, plus
    /// both endpoints of every sign-changing tet edge.
    pub fn band(&self, width: f64) -> Vec<u32> {
        let limit = T::lit(width * self.spacing());
        let mut keep: Vec<bool> = self.sdf.iter().map(|s| s.abs() < limit).collect();
        for tet in &self.tets {
            for [a, b] in TET_EDGES {
                let (va, vb) = (tet[a] as usize, tet[b] as usize);
                if (self.sdf[va] < T::zero()) != (self.sdf[vb] < T::zero()) {
                    keep[va] = true;
                    keep[vb] = true;
                }
            }
        }
        keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i as u32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_counts_and_spacing() {
        let g = TetGrid::<f64>::new(5, -1.0, 1.0, 2).unwrap();
        assert_eq!(g.len(), 125);
        assert_eq!(g.tets.len(), 4 * 4 * 4 * 6);
        assert_eq!(g.features.len(), 250);
        assert!((g.spacing() - 0.5).abs() < 1e-15);
        assert_eq!(g.position(g.index(4, 0, 2)), [1.0, -1.0, 0.0]);
        assert!(g.tets.iter().flatten().all(|&v| (v as usize) < g.len()));
    }

    #[test]
    fn kuhn_tets_fill_the_cube() {
        let g = TetGrid::<f64>::new(2, 0.0, 1.0, 0).unwrap();
        let volume: f64 = g
            .tets
            .iter()
            .map(|t| {
                let p = t.map(|v| g.position(v as usize));
                let e = |k: usize| [p[k][0] - p[0][0], p[k][1] - p[0][1], p[k][2] - p[0][2]];
                crate::linalg::det3(&[e(1), e(2), e(3)]).abs() / 6.0
            })
            .sum();
        assert!((volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_lattice_is_rejected() {
        assert!(TetGrid::<f64>::new(1, -1.0, 1.0, 0).is_err());
        assert!(TetGrid::<f64>::new(4, 1.0, 1.0, 0).is_err());
    }
}
