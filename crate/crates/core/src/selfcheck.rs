//! Fast invariant battery behind the `selfcheck` command.
//!
//! Every check is seeded, so the printed report is identical across runs.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;

use crate::autodiff::gradcheck::{self, GradCheckConfig};
use crate::autodiff::Tape;
use crate::checkpoint;
use crate::config::Config;
use crate::dpsr::{self, DpsrConfig};
use crate::error::Result;
use crate::geometry::{build_icosphere, vec3};
use crate::params::ParamStore;
use crate::renderer::sampling::{composite_weights, select_shading};
use crate::renderer::{density, idw_weights, Camera, Renderer, RendererConfig, SceneGeometry, TransmittanceMode};
use crate::tensor::Tensor;
use crate::texgen::UvTextureField;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:<22} {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn density_checks() -> Check {
    let at_zero = density(0.0, 5e-4);
    let sweep: Vec<f64> = (0..=200).map(|i| density(-0.05 + i as f64 * 5e-4, 5e-4)).collect();
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0]);
    check("density", at_zero == 1000.0 && monotone, format!("sigma(0)={at_zero:?} monotone={monotone}"))
}

fn fusion_checks() -> Check {
    let w = idw_weights(&[1.0, 3.0]);
    let pair = (w[0] - 0.75).abs() < 1e-6 && (w[1] - 0.25).abs() < 1e-6;
    let single = idw_weights(&[0.37]) == vec![1.0];
    let mut rng = crate::rng(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0).collect();
        worst = worst.max((idw_weights(&d).iter().sum::<f64>() - 1.0).abs());
    }
    check(
        "fusion weights",
        pair && single && worst < 1e-6,
        format!("pair=({:.6},{:.6}) k1={single} max|sum-1|={worst:.1e}", w[0], w[1]),
    )
}

fn ray_checks() -> Check {
    let mut rng = crate::rng(2);
    let mut ok = true;
    for _ in 0..300 {
        let n = 128;
        let sigma: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.2 { rng.random::<f64>() * 10f64.powi(rng.random_range(-2..5)) } else { 0.0 })
            .collect();
        let (alpha, t, w) = composite_weights(&sigma, &vec![2.0 / n as f64; n], TransmittanceMode::Standard);
        ok &= t.windows(2).all(|p| p[1] <= p[0]);
        ok &= alpha.iter().all(|a| (0.0..=1.0).contains(a));
        ok &= w.iter().sum::<f64>() <= 1.0 + 1e-5;
    }
    let mut slab = vec![0.0; 64];
    slab[20..40].iter_mut().for_each(|s| *s = 1e6);
    let (_, _, w) = composite_weights(&slab, &[0.01; 64], TransmittanceMode::Standard);
    let (idx, _) = select_shading(&w, 3, 1e-4);
    let first = w[20];
    ok &= first > 0.99 && idx.first() == Some(&20);
    check("ray invariants", ok, format!("300 profiles, slab first weight {first:.6}"))
}

fn poisson_check() -> Check {
    let r = 32;
    let n3 = r * r * r;
    let c = |i: usize| -0.5 + i as f64 / r as f64;
    let mut v = vec![0.0; 3 * n3];
    let mut expect = vec![0.0; n3];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let idx = (i * r + j) * r + k;
                let (x, y) = (c(i), c(j));
                v[idx] = -2.0 * PI * (2.0 * PI * x).sin();
                v[n3 + idx] = 2.0 * PI * (2.0 * PI * y).cos();
                expect[idx] = (2.0 * PI * x).cos() + (2.0 * PI * y).sin();
            }
        }
    }
    let err = match dpsr::spectral_solve_raw(&v, r, 0.0) {
        Ok(got) => {
            let mean = got.iter().sum::<f64>() / n3 as f64;
            got.iter().zip(&expect).map(|(g, e)| (g - mean - e).abs()).fold(0.0, f64::max) / 2.0
        }
        Err(_) => f64::INFINITY,
    };
    check("poisson eigenfunction", err < 1e-5, format!("R=32 rel err {err:.2e}"))
}

fn autodiff_check() -> Check {
    let mut rng = crate::rng(3);
    let a = Tensor::uniform(&[4, 5], 1.0, &mut rng).with_grad();
    let b = Tensor::uniform(&[5, 3], 1.0, &mut rng).with_grad();
    let report = gradcheck::check(
        &[a, b],
        |t, v| {
            let m = t.matmul(v[0], v[1])?;
            let s = t.tanh(m)?;
            let q = t.softplus(s)?;
            let sm = t.softmax(q)?;
            let l = t.square(sm)?;
            t.sum(l)
        },
        GradCheckConfig::default(),
        &mut rng,
    );
    match report {
        Ok(r) => check("autodiff", r.passed(), format!("{} coords, max rel err {:.2e}", r.checked, r.max_rel_err)),
        Err(e) => check("autodiff", false, e.to_string()),
    }
}

fn checkpoint_check() -> Check {
    let mut s = ParamStore::new();
    s.insert("a.w", Tensor::uniform(&[3, 4], 1.0, &mut crate::rng(4)));
    s.insert("b", Tensor::new(vec![], vec![0.5]).expect("scalar"));
    let bytes = checkpoint::to_bytes(&s);
    let again = checkpoint::from_bytes(&bytes).map(|l| checkpoint::to_bytes(&l));
    let same = again.as_ref().is_ok_and(|b| *b == bytes);
    check("checkpoint round trip", same, format!("{} bytes", bytes.len()))
}

fn config_check() -> Check {
    let d = Config::default();
    let ok = Config::parse("", "empty").is_ok_and(|c| c == d)
        && Config::parse(&d.to_toml(), "printed").is_ok_and(|c| c == d)
        && Config::parse("[render]\ngamma = -1.0\n", "bad").is_err();
    check("config", ok, format!("gamma={} k={} level={} grid={}", d.render.gamma, d.render.k, d.geometry.level, d.dpsr.resolution))
}

fn render_check() -> Result<Check> {
    let sphere = build_icosphere(2)?;
    let pos = sphere.vertices.iter().map(|v| vec3::scale(*v, 0.3)).collect();
    let scene = SceneGeometry::from_surface(pos, sphere.vertices.clone(), &DpsrConfig { resolution: 32, sigma: 2.0 })?;
    let r = Renderer::new(RendererConfig {
        coarse_samples: 64,
        ..RendererConfig::default()
    })?;
    let mut store = ParamStore::new();
    r.init(&mut store);
    let field = UvTextureField::new(Tensor::uniform(&[sphere.len(), 32], 1.0, &mut crate::rng(5)))?;
    let cam = Camera::orbit(30.0, 20.0, 2.0, 40.0, 16, 16)?;
    let a = r.render_image(&scene, &field, &store, &cam, 7)?;
    let b = r.render_image(&scene, &field, &store, &cam, 7)?;
    let mut tape = Tape::inference();
    let img = tape.constant(&[a.rgb.len()], a.rgb.clone())?;
    let total = tape.sum(img)?;
    let sum = tape.scalar(total);
    let finite = a.rgb.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
    Ok(check(
        "render determinism",
        a == b && finite,
        format!("16x16 coverage {:.4} rgb sum {sum:.10}", a.coverage()),
    ))
}

/// Runs the battery; `Err` only for failures to set a check up.
pub fn run() -> Result<Vec<Check>> {
    Ok(vec![
        density_checks(),
        fusion_checks(),
        ray_checks(),
        poisson_check(),
        autodiff_check(),
        checkpoint_check(),
        config_check(),
        render_check()?,
    ])
}
