use std::collections::HashMap;

use headsplat::diff::{finite_diff_check, GradCheck, ParamStore};
use headsplat::guide::*;
use headsplat::splat::Camera;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere_grid(res: usize, r: f64) -> TetGrid<f64> {
    let mut g = TetGrid::new(res, -1.0, 1.0, 2).unwrap();
    g.fill_sdf(|p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r);
    for v in 0..g.len() {
        let p = g.position(v);
        g.features[v * 2] = p[0] + 2.0 * p[1];
        g.features[v * 2 + 1] = p[2] * p[2];
    }
    g
}

fn radius(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[test]
fn sphere_extraction_is_a_closed_outward_sphere() {
    let g = sphere_grid(32, 0.5);
    let m = marching_tets(&g);
    assert!(m.len() > 500);
    let half = 0.5 * g.spacing();
    for v in 0..m.len() {
        let r = radius(m.vertex(v));
        assert!((r - 0.5).abs() <= half, "vertex {v} radius {r}");
    }
    assert_eq!(m.euler_characteristic(), 2);
    // closed and consistently oriented: every directed edge appears exactly once
    // and its reverse exists
    let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
    for f in &m.faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    for (&(a, b), &n) in &directed {
        assert_eq!(n, 1, "edge {a}-{b} used twice in the same direction");
        assert_eq!(directed.get(&(b, a)), Some(&1), "edge {a}-{b} is a boundary");
    }
    for f in &m.faces {
        let p = f.map(|v| m.vertex(v as usize));
        let e1 = [0, 1, 2].map(|i| p[1][i] - p[0][i]);
        let e2 = [0, 1, 2].map(|i| p[2][i] - p[0][i]);
        let n = [e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]];
        let c = [0, 1, 2].map(|i| (p[0][i] + p[1][i] + p[2][i]) / 3.0);
        assert!(n[0] * c[0] + n[1] * c[1] + n[2] * c[2] > 0.0, "inward face {f:?}");
        assert!(0.5 * radius(n) > 1e-12);
    }
}

#[test]
fn vertices_sit_on_sign_changing_edges_near_the_surface() {
    let g = sphere_grid(20, 0.6);
    let m = marching_tets(&g);
    for (v, &[a, b]) in m.edges.iter().enumerate() {
        let (sa, sb) = (g.sdf[a as usize], g.sdf[b as usize]);
        assert!((sa < 0.0) != (sb < 0.0));
        assert!(a < b);
        let s_true = radius(m.vertex(v)) - 0.6;
        assert!(s_true.abs() < g.spacing());
        // features are interpolated with the same parameter
        let t = m.t[v];
        let fa = g.features[a as usize * 2];
        let fb = g.features[b as usize * 2];
        assert!((m.features[v * 2] - (fa + t * (fb - fa))).abs() < 1e-12);
    }
}

#[test]
fn linear_field_is_reproduced_exactly() {
    let mut g = TetGrid::<f64>::new(32, -1.0, 1.0, 0).unwrap();
    g.fill_sdf(|p: [f64; 3]| p[2] - 0.1);
    let m = marching_tets(&g);
    assert!(!m.is_empty());
    for v in 0..m.len() {
        assert!((m.vertex(v)[2] - 0.1).abs() < 1e-6);
    }
}

#[test]
fn single_signed_fields_give_empty_meshes() {
    for value in [1.0, -1.0] {
        let mut g = TetGrid::<f64>::new(8, -1.0, 1.0, 3).unwrap();
        g.fill_sdf(|_| value);
        let m = marching_tets(&g);
        assert!(m.is_empty() && m.faces.is_empty());
    }
}

#[test]
fn extraction_ignores_tet_order_and_threads() {
    let g = sphere_grid(16, 0.55);
    let reference = marching_tets_serial(&g);
    assert_eq!(marching_tets(&g), reference);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut shuffled = g.clone();
    shuffled.tets.shuffle(&mut rng);
    for t in shuffled.tets.iter_mut() {
        t.shuffle(&mut rng);
    }
    assert_eq!(marching_tets_serial(&shuffled), reference);
}

#[test]
fn extraction_gradients_match_finite_differences() {
    let g = sphere_grid(10, 0.55);
    let m = marching_tets(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let wv: Vec<f64> = (0..m.vertices.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wf: Vec<f64> = (0..m.features.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut store = ParamStore::new();
    store.insert("sdf", &[g.len()], g.sdf.clone()).unwrap();
    store.insert("feat", &[g.len(), 2], g.features.clone()).unwrap();
    let cfg = GradCheck::f64_default().with_max_entries(400);
    let report = finite_diff_check(&mut store, &cfg, |s| {
        let mut grid = g.clone();
        grid.sdf.copy_from_slice(s.value(s.id("sdf")?));
        grid.features.copy_from_slice(s.value(s.id("feat")?));
        let mesh = marching_tets(&grid);
        assert_eq!(mesh.edges, m.edges, "topology changed under perturbation");
        let loss = mesh.vertices.iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>()
            + mesh.features.iter().zip(&wf).map(|(a, b)| a * b).sum::<f64>();
        let (ds, df) = marching_tets_backward(&grid, &mesh, &wv, &wf)?;
        let id = s.id("sdf")?;
        s.grad_mut(id).iter_mut().zip(&ds).for_each(|(g, d)| *g += d);
        let id = s.id("feat")?;
        s.grad_mut(id).iter_mut().zip(&df).for_each(|(g, d)| *g += d);
        Ok(loss)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn raising_the_field_shrinks_the_sphere_by_the_offset() {
    let g = sphere_grid(24, 0.5);
    let m = marching_tets(&g);
    let delta = 1e-5;
    let shifted = |d: f64| {
        let mut g2 = g.clone();
        g2.sdf.iter_mut().for_each(|s| *s += d);
        marching_tets(&g2)
    };
    let (up, down) = (shifted(delta), shifted(-delta));
    assert_eq!(m.edges, up.edges);
    assert_eq!(m.edges, down.edges);
    // per vertex, the finite-difference displacement matches the analytic one
    // from the backward pass, and on average it is an inward move of delta
    let mut mean_shift = 0.0;
    for v in 0..m.len() {
        let shift = (radius(up.vertex(v)) - radius(down.vertex(v))) / 2.0;
        mean_shift += shift / m.len() as f64;
        let p = m.vertex(v);
        let r = radius(p);
        let mut dv = vec![0.0; m.vertices.len()];
        (0..3).for_each(|i| dv[v * 3 + i] = p[i] / r);
        let (ds, _) = marching_tets_backward(&g, &m, &dv, &vec![0.0; m.features.len()]).unwrap();
        let predicted: f64 = ds.iter().sum::<f64>() * delta;
        assert!((shift - predicted).abs() < 1e-4 * delta, "vertex {v}: {shift} vs {predicted}");
    }
    // linear interpolation along a chord moves a little more than delta
    assert!(mean_shift < 0.0 && (mean_shift + delta).abs() < 0.3 * delta, "{mean_shift}");
}

fn flat_patch(n: usize) -> (Vec<f64>, Vec<[u32; 3]>) {
    let mut v = Vec::new();
    for j in 0..n {
        for i in 0..n {
            v.extend([i as f64 * 0.1, j as f64 * 0.1, 0.0]);
        }
    }
    let mut f = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = (j * n + i) as u32;
            let (b, c, d) = (a + 1, a + n as u32, a + n as u32 + 1);
            f.push([a, b, d]);
            f.push([a, d, c]);
        }
    }
    (v, f)
}

#[test]
fn umbrella_residual_of_flat_interior_is_zero_and_bump_is_exact() {
    let n = 7;
    let (mut v, f) = flat_patch(n);
    let adj = Adjacency::from_faces(n * n, &f).unwrap();
    let r = umbrella_residuals(&v, &adj);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = j * n + i;
            assert!(r[k * 3..k * 3 + 3].iter().all(|x| x.abs() < 1e-12));
        }
    }
    let c = 3 * n + 3;
    let d = [0.01, -0.02, 0.05];
    (0..3).for_each(|i| v[c * 3 + i] += d[i]);
    let r = umbrella_residuals(&v, &adj);
    let got: f64 = r[c * 3..c * 3 + 3].iter().map(|x| x * x).sum();
    let want: f64 = d.iter().map(|x| x * x).sum();
    assert!((got - want).abs() < 1e-15);
}

#[test]
fn laplacian_loss_is_rigid_invariant_and_differentiable() {
    let g = sphere_grid(12, 0.5);
    let m = marching_tets(&g);
    let adj = Adjacency::from_faces(m.len(), &m.faces).unwrap();
    let base = laplacian_loss(&m.vertices, &adj).unwrap();
    let rot = headsplat::linalg::rotation_xyz(0.3, -1.1, 2.0);
    let moved: Vec<f64> = m
        .vertices
        .chunks_exact(3)
        .flat_map(|p| {
            let q = headsplat::linalg::mat_vec(&rot, &[p[0], p[1], p[2]]);
            [q[0] + 0.7, q[1] - 2.0, q[2] + 0.1]
        })
        .collect();
    assert!((laplacian_loss(&moved, &adj).unwrap() - base).abs() < 1e-10);

    let mut store = ParamStore::new();
    let id = store.insert("v", &[m.len(), 3], m.vertices.clone()).unwrap();
    let report = finite_diff_check(&mut store, &GradCheck::f64_default(), |s| {
        let loss = laplacian_loss(s.value(id), &adj)?;
        let g = laplacian_backward(s.value(id), &adj, 1.0)?;
        s.grad_mut(id).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        Ok(loss)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn isolated_vertex_contributes_nothing() {
    let v = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 5.0, 5.0, 5.0];
    let adj = Adjacency::from_faces(4, &[[0, 1, 2]]).unwrap();
    assert!(adj.neighbors(3).is_empty());
    let r = umbrella_residuals(&v, &adj);
    assert_eq!(&r[9..12], &[0.0, 0.0, 0.0]);
    assert!(Adjacency::from_faces(2, &[[0, 1, 2]]).is_err());
}

#[test]
fn sdf_network_pretrains_to_a_signed_blob() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    let net = SdfNet::register(&mut store, 4, &mut rng).unwrap();
    let cfg = PretrainConfig {
        radii: [0.5; 3],
        center: [0.0; 3],
        steps: 150,
        batch: 512,
        lr: 3e-3,
    };
    let mse = pretrain_ellipsoid(&net, &mut store, (-1.0, 1.0), &cfg, &mut rng).unwrap();
    assert!(mse < 2e-3, "mse {mse}");
    let mut grid = TetGrid::<f32>::new(12, -1.0, 1.0, 4).unwrap();
    eval_sdf_field(&net, &store, &mut grid, None).unwrap();
    assert_eq!(grid.features.len(), grid.len() * 4);
    let center = grid.index(6, 6, 6);
    assert!(grid.sdf[center] < 0.0);
    assert!(grid.sdf[grid.index(0, 0, 0)] > 0.0 && grid.sdf[grid.index(11, 11, 11)] > 0.0);
    let mesh = marching_tets(&grid);
    assert!(!mesh.is_empty());
    assert_eq!(mesh.euler_characteristic(), 2);
}

#[test]
fn sdf_field_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let net = SdfNet::register(&mut store, 3, &mut rng).unwrap();
    let grid0 = TetGrid::<f64>::new(4, -1.0, 1.0, 3).unwrap();
    let report = finite_diff_check(&mut store, &GradCheck::f64_default(), |s| {
        let mut grid = grid0.clone();
        let tape = eval_sdf_field(&net, s, &mut grid, None)?;
        let loss: f64 = grid.sdf.iter().map(|x| x * x).sum();
        let ds: Vec<f64> = grid.sdf.iter().map(|x| 2.0 * x).collect();
        eval_sdf_field_backward(&net, s, &tape, &ds, &vec![0.0; grid.features.len()])?;
        Ok(loss)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn band_covers_every_crossing_edge() {
    let g = sphere_grid(16, 0.5);
    let band = g.band(1.0);
    assert!(band.len() < g.len() / 2);
    let mut restricted = g.clone();
    let keep: std::collections::HashSet<u32> = band.iter().copied().collect();
    // outside the band only the sign matters to extraction
    for v in 0..g.len() {
        if !keep.contains(&(v as u32)) {
            restricted.sdf[v] = g.sdf[v].signum() * 10.0;
        }
    }
    assert_eq!(marching_tets(&restricted), marching_tets(&g));
}

fn axis_camera(size: usize) -> Camera {
    Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, -1.0, 0.0], size as f64 * 1.5, size, size)
}

/// Subdivided icosahedron projected onto a sphere.
fn icosphere(levels: usize, r: f64) -> GuideMesh<f64> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ];
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        for tri in &f {
            let mut m = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                m[k] = *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    let (p, q) = (v[a as usize], v[b as usize]);
                    v.push([0, 1, 2].map(|i| (p[i] + q[i]) / 2.0));
                    (v.len() - 1) as u32
                });
            }
            next.extend([[tri[0], m[0], m[2]], [tri[1], m[1], m[0]], [tri[2], m[2], m[1]], m]);
        }
        f = next;
    }
    let mut mesh = GuideMesh::empty(0);
    for p in v {
        let n = radius(p);
        mesh.vertices.extend(p.map(|x| x / n * r));
    }
    mesh.faces = f;
    mesh
}

#[test]
fn rendered_guide_sphere_matches_the_analytic_disk() {
    let m = icosphere(6, 0.5);
    let style = GuideSplatStyle::for_mesh(&m);
    let c = [0.3, 0.7, 0.1];
    let colors: Vec<f64> = (0..m.len()).flat_map(|_| c).collect();
    let size = 256;
    let cam = axis_camera(size);
    let out = render_guide(&m.vertices, &colors, 3, style, &cam).unwrap();
    let (d, r) = (3.0f64, 0.5f64);
    let disk = cam.fx * r / (d * d - r * r).sqrt();
    let (mut inter, mut union) = (0usize, 0usize);
    for row in 0..size {
        for col in 0..size {
            let (x, y) = (col as f64 + 0.5 - cam.cx, row as f64 + 0.5 - cam.cy);
            let dist = (x * x + y * y).sqrt();
            let covered = out.image.alpha[row * size + col] > 0.5;
            let inside = dist < disk;
            inter += (covered && inside) as usize;
            union += (covered || inside) as usize;
            if dist < disk - 1.5 {
                let px = out.image.pixel(row, col);
                for k in 0..3 {
                    assert!((px[k] - c[k]).abs() <= 2e-2, "pixel ({row},{col}) channel {k}: {}", px[k]);
                }
            }
        }
    }
    let iou = inter as f64 / union as f64;
    assert!(iou >= 0.95, "iou {iou}");
}

#[test]
fn empty_guide_renders_nothing() {
    let m = GuideMesh::<f64>::empty(3);
    let out = render_guide(&m.vertices, &[], 3, GuideSplatStyle::for_mesh(&m), &axis_camera(32)).unwrap();
    assert!(out.image.data.iter().all(|&x| x == 0.0));
    assert!(out.image.alpha.iter().all(|&x| x == 0.0));
}

#[test]
fn guide_render_gradient_reaches_vertices() {
    let g = sphere_grid(8, 0.5);
    let m = marching_tets(&g);
    let style = GuideSplatStyle {
        log_scale: (0.08f64).ln(),
        opacity_logit: 0.5,
    };
    // oblique view: the lattice-symmetric mesh has exact depth ties head-on,
    // and a tie flipping under perturbation is a true jump in the image
    let cam = Camera::look_at([0.9, -0.6, -2.7], [0.0; 3], [0.0, -1.0, 0.0], 36.0, 24, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let colors: Vec<f64> = (0..m.len() * 2).map(|_| rng.random_range(0.0..1.0)).collect();
    let w: Vec<f64> = (0..24 * 24 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut store = ParamStore::new();
    let id = store.insert("v", &[m.len(), 3], m.vertices.clone()).unwrap();
    let report = finite_diff_check(&mut store, &GradCheck::f64_default().with_h(1e-6), |s| {
        let out = render_guide(s.value(id), &colors, 2, style, &cam)?;
        let loss = out.image.data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (dv, _) = render_guide_backward(&out, &w, None)?;
        s.grad_mut(id).iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
        Ok(loss)
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn obj_export_lists_vertices_then_one_based_faces() {
    let g = sphere_grid(6, 0.5);
    let m = marching_tets(&g);
    let obj = m.to_obj();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), m.len());
    assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), m.faces.len());
    assert!(!obj.contains("f 0 ") && !obj.lines().any(|l| l.starts_with("f ") && l.split(' ').any(|x| x == "0")));
}
