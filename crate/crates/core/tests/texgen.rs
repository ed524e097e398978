use rand::Rng;
use tuvf::autodiff::gradcheck::{self, rel_err, GradCheckConfig};
use tuvf::autodiff::Tape;
use tuvf::geometry::build_icosphere;
use tuvf::texgen::{sample_code, TexGenConfig, TextureGenerator};
use tuvf::{ParamStore, Tensor};

fn small() -> (TextureGenerator, ParamStore) {
    let g = TextureGenerator::new(TexGenConfig {
        level: 2,
        n_freq: 3,
        layers: 3,
        hidden: 16,
        z_dim: 8,
        feature_dim: 6,
        ..TexGenConfig::default()
    })
    .unwrap();
    let mut s = ParamStore::new();
    g.init(&mut s);
    (g, s)
}

#[test]
fn subset_rows_equal_full_rows_exactly() {
    let (g, s) = small();
    let sphere = build_icosphere(2).unwrap();
    let z = sample_code(&mut tuvf::rng(1), 8);
    let full = g.generate(&s, &sphere, &z).unwrap();
    let pick = [41usize, 0, 7, 7, 161];
    let mut tape = Tape::inference();
    let coords: Vec<f64> = pick.iter().flat_map(|&i| sphere.vertices[i]).collect();
    let c = tape.constant(&[pick.len(), 3], coords).unwrap();
    let zv = tape.constant(&[8], z.clone()).unwrap();
    let f = g.features(&mut tape, &s, c, zv).unwrap();
    for (r, &i) in pick.iter().enumerate() {
        assert_eq!(&tape.value(f)[r * 6..(r + 1) * 6], full.row(i));
    }
}

#[test]
fn field_is_a_function_of_params_level_and_code() {
    let (g, s) = small();
    let sphere = build_icosphere(2).unwrap();
    let z = sample_code(&mut tuvf::rng(2), 8);
    let a = g.generate(&s, &sphere, &z).unwrap();
    let (g2, s2) = small();
    assert_eq!(g2.generate(&s2, &sphere, &z).unwrap().checksum(), a.checksum());
    let other = sample_code(&mut tuvf::rng(3), 8);
    assert_ne!(g.generate(&s, &sphere, &other).unwrap().checksum(), a.checksum());
}

#[test]
fn gradients_reach_code_and_parameters() {
    let (g, mut s) = small();
    let sphere = build_icosphere(1).unwrap();
    let coords = Tensor::new(vec![sphere.len(), 3], sphere.flat()).unwrap();
    let z = Tensor::new(vec![8], sample_code(&mut tuvf::rng(4), 8)).unwrap().with_grad();
    let w = Tensor::uniform(&[sphere.len(), 6], 1.0, &mut tuvf::rng(5));
    let probe = |tape: &mut Tape, store: &ParamStore, zv| {
        let c = tape.constant_tensor(&coords)?;
        let f = g.features(tape, store, c, zv)?;
        let wv = tape.constant_tensor(&w)?;
        let p = tape.mul(f, wv)?;
        tape.sum(p)
    };
    let report = gradcheck::check(&[z.clone()], |t, v| probe(t, &s, v[0]), GradCheckConfig::default(), &mut tuvf::rng(6)).unwrap();
    assert!(report.passed(), "{report:?}");
    let mut tape = Tape::new();
    let zl = tape.leaf(&z).unwrap();
    let l = probe(&mut tape, &s, zl).unwrap();
    let gz = tape.backward(l).unwrap().wrt(zl).unwrap().to_vec();
    assert!(gz.iter().all(|v| v.abs() > 1e-9), "{gz:?}");

    let mut tape = Tape::new();
    let zv = tape.constant_tensor(&z).unwrap();
    let l = probe(&mut tape, &s, zv).unwrap();
    s.zero_grad();
    tape.backward_into(l, &mut s).unwrap();
    let names: Vec<String> = s.iter().map(|(k, _)| k.to_string()).collect();
    let eval = |store: &ParamStore| {
        let mut t = Tape::inference();
        let zv = t.constant_tensor(&z).unwrap();
        let l = probe(&mut t, store, zv).unwrap();
        t.scalar(l)
    };
    let mut rng = tuvf::rng(7);
    let mut nonzero = 0;
    for _ in 0..30 {
        let name = &names[rng.random_range(0..names.len())];
        let i = rng.random_range(0..s.get(name).unwrap().len());
        let analytic = s.get(name).unwrap().grad.as_ref().map_or(0.0, |g| g[i]);
        let mut p = s.clone();
        p.get_mut(name).unwrap().data_mut()[i] += 1e-6;
        let up = eval(&p);
        p.get_mut(name).unwrap().data_mut()[i] -= 2e-6;
        let numeric = (up - eval(&p)) / 2e-6;
        if (analytic - numeric).abs() > 1e-6 {
            assert!(rel_err(analytic, numeric) < 1e-4, "{name}[{i}]: {analytic} vs {numeric}");
        }
        nonzero += (analytic != 0.0) as usize;
    }
    assert!(nonzero > 15);
}
