use std::f64::consts::PI;

use tuvf::autodiff::gradcheck::{self, GradCheckConfig};
use tuvf::dpsr::{self, DpsrConfig, IndicatorGrid};
use tuvf::geometry::mesh::cube_mesh;
use tuvf::geometry::{sample_mesh_surface, Vec3};
use tuvf::Tensor;

fn eigen_case(r: usize) -> f64 {
    let n3 = r * r * r;
    let c = |i: usize| -0.5 + i as f64 / r as f64;
    let truth = |x: f64, y: f64, z: f64| (2.0 * PI * x).cos() + (4.0 * PI * y).sin() * (2.0 * PI * z).cos();
    let mut v = vec![0.0; 3 * n3];
    let mut expect = vec![0.0; n3];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let (x, y, z) = (c(i), c(j), c(k));
                let idx = (i * r + j) * r + k;
                v[idx] = -2.0 * PI * (2.0 * PI * x).sin();
                v[n3 + idx] = 4.0 * PI * (4.0 * PI * y).cos() * (2.0 * PI * z).cos();
                v[2 * n3 + idx] = -2.0 * PI * (4.0 * PI * y).sin() * (2.0 * PI * z).sin();
                expect[idx] = truth(x, y, z);
            }
        }
    }
    let got = dpsr::spectral_solve_raw(&v, r, 0.0).unwrap();
    let mean = got.iter().sum::<f64>() / n3 as f64;
    let scale = expect.iter().map(|x| x.abs()).fold(0.0, f64::max);
    got.iter()
        .zip(&expect)
        .map(|(g, e)| (g - mean - e).abs())
        .fold(0.0, f64::max)
        / scale
}

#[test]
fn recovers_periodic_laplacian_eigenfunctions() {
    for r in [32, 64, 128] {
        let err = eigen_case(r);
        assert!(err < 1e-5, "R={r}: rel err {err}");
    }
}

fn sphere_points(n: usize, radius: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    // Fibonacci lattice
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut pts = Vec::with_capacity(n);
    let mut nrm = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let rho = (1.0 - z * z).sqrt();
        let t = golden * i as f64;
        let d = [rho * t.cos(), rho * t.sin(), z];
        nrm.push(d);
        pts.push([radius * d[0], radius * d[1], radius * d[2]]);
    }
    (pts, nrm)
}

const INSIDE: [Vec3; 5] = [
    [0.0, 0.0, 0.0],
    [0.1, 0.0, 0.0],
    [0.0, -0.1, 0.05],
    [-0.08, 0.08, -0.08],
    [0.0, 0.0, 0.15],
];
const OUTSIDE: [Vec3; 5] = [
    [0.5, 0.5, 0.5],
    [0.45, 0.0, 0.0],
    [0.0, -0.45, 0.1],
    [-0.4, 0.4, 0.0],
    [0.3, 0.3, 0.3],
];

#[test]
fn sphere_sign_convention() {
    let (pts, nrm) = sphere_points(10_000, 0.3);
    let g = dpsr::indicator_grid(&pts, &nrm, &DpsrConfig::default()).unwrap();
    for p in INSIDE {
        assert!(g.query(p) < 0.0, "inside probe {p:?} = {}", g.query(p));
    }
    for p in OUTSIDE {
        assert!(g.query(p) > 0.0, "outside probe {p:?} = {}", g.query(p));
    }
    let (lo, hi) = g.min_max();
    let mean = pts.iter().map(|&p| g.query(p)).sum::<f64>() / pts.len() as f64;
    assert!(mean.abs() < 1e-3 * (hi - lo));
}

#[test]
fn cube_sign_convention() {
    let mesh = cube_mesh(0.6);
    let cloud = sample_mesh_surface(&mesh, 20_000, &mut tuvf::rng(3)).unwrap();
    let cfg = DpsrConfig { resolution: 64, sigma: 2.0 };
    let g = dpsr::indicator_grid(&cloud.points, cloud.normals.as_ref().unwrap(), &cfg).unwrap();
    for p in INSIDE {
        assert!(g.query(p) < 0.0);
    }
    for p in [[0.5, 0.5, 0.5], [0.45, 0.0, 0.0], [0.0, -0.45, 0.1], [-0.4, 0.4, 0.0], [0.0, 0.0, -0.42]] {
        assert!(g.query(p) > 0.0);
    }
}

#[test]
fn negated_normals_negate_indicator() {
    let (pts, nrm) = sphere_points(2000, 0.25);
    let neg: Vec<Vec3> = nrm.iter().map(|n| [-n[0], -n[1], -n[2]]).collect();
    let cfg = DpsrConfig { resolution: 32, sigma: 2.0 };
    let a = dpsr::indicator_grid(&pts, &nrm, &cfg).unwrap();
    let b = dpsr::indicator_grid(&pts, &neg, &cfg).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x + y).abs() < 1e-12);
    }
}

#[test]
fn splat_partition_of_unity() {
    let (pts, nrm) = sphere_points(500, 0.33);
    let v = dpsr::splat(&pts, &nrm, 16).unwrap();
    let n3 = 16 * 16 * 16;
    for c in 0..3 {
        let total: f64 = v[c * n3..(c + 1) * n3].iter().sum();
        let expect: f64 = nrm.iter().map(|n| n[c]).sum();
        assert!((total - expect).abs() < 1e-9);
    }
}

#[test]
fn query_reproduces_axis_linear_field() {
    let r = 8;
    let vals: Vec<f64> = (0..r * r * r).map(|i| (i / (r * r)) as f64 * 0.5).collect();
    let g = IndicatorGrid::new(r, vals).unwrap();
    let mid = (g.coord(2) + g.coord(3)) / 2.0;
    assert!((g.query([mid, 0.1, -0.2]) - 1.25).abs() < 1e-12);
}

#[test]
fn l_dpsr_matches_loop() {
    let mut rng = tuvf::rng(4);
    let a = Tensor::uniform(&[512], 1.0, &mut rng);
    let b = Tensor::uniform(&[512], 1.0, &mut rng);
    let mut expect = 0.0;
    for i in 0..512 {
        expect += (a.data()[i] - b.data()[i]).powi(2);
    }
    expect /= 512.0;
    let mut tape = tuvf::autodiff::Tape::new();
    let (va, vb) = (tape.constant_tensor(&a).unwrap(), tape.constant_tensor(&b).unwrap());
    let l = dpsr::l_dpsr(&mut tape, va, vb).unwrap();
    assert!((tape.scalar(l) - expect).abs() < 1e-12);
}

#[test]
fn pipeline_gradient_matches_finite_differences() {
    // radius chosen so no coordinate sits on a lattice plane, where trilinear weights have a kink
    let (pts, nrm) = sphere_points(40, 0.3013);
    let cfg = DpsrConfig { resolution: 16, sigma: 1.0 };
    let target_pts: Vec<Vec3> = pts.iter().map(|p| [p[0] * 0.8 + 0.02, p[1] * 0.9, p[2] * 0.85]).collect();
    let target = dpsr::indicator_grid(&target_pts, &nrm, &cfg).unwrap();
    let p = Tensor::new(vec![40, 3], pts.concat()).unwrap().with_grad();
    let n = Tensor::new(vec![40, 3], nrm.concat()).unwrap().with_grad();
    let t = Tensor::new(vec![16 * 16 * 16], target.values.clone()).unwrap();
    let report = gradcheck::check(
        &[p, n, t],
        |tape, v| {
            let chi = dpsr::indicator_op(tape, v[0], v[1], &cfg)?;
            dpsr::l_dpsr(tape, chi, v[2])
        },
        GradCheckConfig {
            step: 1e-6,
            rel_tol: 1e-3,
            abs_floor: 1e-8,
            max_coords: 120,
        },
        &mut tuvf::rng(0),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn trilinear_gradient_wrt_grid_and_points() {
    let mut rng = tuvf::rng(6);
    let grid = Tensor::uniform(&[512], 1.0, &mut rng).with_grad();
    let pts = Tensor::uniform(&[10, 3], 0.45, &mut rng).with_grad();
    let report = gradcheck::check(
        &[grid, pts],
        |tape, v| {
            let q = dpsr::trilinear_op(tape, v[0], v[1], 8)?;
            let sq = tape.square(q)?;
            tape.sum(sq)
        },
        GradCheckConfig::default(),
        &mut tuvf::rng(1),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}
