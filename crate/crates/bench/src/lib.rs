//! Inputs shared by the criterion benches.

use headsplat::diff::ParamStore;
use headsplat::guide::{SdfNet, TetGrid};
use headsplat::splat::random::random_scene;
use headsplat::splat::SplatSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scene(n: usize, channels: usize) -> SplatSet<f32> {
    random_scene(&mut rng(n as u64), n, channels)
}

/// Lattice holding a sphere SDF of radius 0.5.
pub fn sphere_grid(res: usize) -> TetGrid<f32> {
    let mut g = TetGrid::new(res, -0.8, 0.8, 8).expect("valid lattice");
    g.fill_sdf(|p: [f32; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.5);
    g
}

pub fn sdf_net() -> (SdfNet, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let net = SdfNet::register(&mut store, 8, &mut rng(7)).expect("fresh store");
    (net, store)
}

/// `n` points spread through the lattice cube.
pub fn probe_points(n: usize) -> Vec<f32> {
    (0..n * 3).map(|i| ((i as f32 * 0.618_034).fract() - 0.5) * 1.6).collect()
}
