//! Finite-difference sweep over every differentiable op, including the
//! custom ops of the geometry, DPSR and network modules, plus randomly
//! composed graphs.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::gradcheck::{self, GradCheckConfig, GradCheckReport};
use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::dpsr;
use crate::error::Result;
use crate::geometry::{chamfer_loss, Vec3};
use crate::nets::{Activation, EdgeConv};
use crate::params::ParamStore;
use crate::tensor::Tensor;

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync>;

pub struct OpCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub f: Loss,
}

impl OpCase {
    pub fn check(&self, cfg: GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
        gradcheck::check(&self.inputs, &self.f, cfg, &mut crate::rng(seed))
    }
}

/// Uniform values with magnitude in `[0.1, 1]`, away from the kinks at zero.
fn away(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).expect("shape matches").with_grad()
}

fn positive(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    Tensor::new(shape.to_vec(), v).expect("shape matches").with_grad()
}

/// Scalar `sum(out * w)` for a fixed random `w`, so every output element
/// carries a distinct weight.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = Tensor::uniform(&shape, 1.0, &mut crate::rng(seed ^ 0x7765));
    let w = tape.constant_tensor(&w)?;
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn case(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync + 'static) -> OpCase {
    let seed = name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    OpCase {
        name: name.to_string(),
        inputs,
        f: Box::new(move |t, v| {
            let out = f(t, v)?;
            project(t, out, seed)
        }),
    }
}

fn unary(name: &str, x: Tensor, op: fn(&mut Tape, Var) -> Result<Var>) -> OpCase {
    case(name, vec![x], move |t, v| op(t, v[0]))
}

/// One case per op.
pub fn op_cases(seed: u64) -> Result<Vec<OpCase>> {
    let mut rng = crate::rng(seed);
    let r = &mut rng;
    let mut cases = vec![
        case("add", vec![away(&[3, 4], r), away(&[4], r)], |t, v| t.add(v[0], v[1])),
        case("sub", vec![away(&[3, 4], r), away(&[3, 1], r)], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![away(&[2, 3, 4], r), away(&[3, 4], r)], |t, v| t.mul(v[0], v[1])),
        case("div", vec![away(&[3, 4], r), positive(&[3, 4], r)], |t, v| t.div(v[0], v[1])),
        case("matmul", vec![away(&[3, 4], r), away(&[4, 2], r)], |t, v| t.matmul(v[0], v[1])),
        unary("transpose", away(&[3, 5], r), |t, x| t.transpose(x)),
        unary("neg", away(&[6], r), |t, x| t.neg(x)),
        unary("exp", away(&[6], r), |t, x| t.exp(x)),
        unary("log", positive(&[6], r), |t, x| t.log(x)),
        unary("sigmoid", away(&[6], r), |t, x| t.sigmoid(x)),
        unary("tanh", away(&[6], r), |t, x| t.tanh(x)),
        unary("relu", away(&[8], r), |t, x| t.relu(x)),
        unary("leaky_relu", away(&[8], r), |t, x| t.leaky_relu(x, 0.2)),
        unary("softplus", away(&[6], r), |t, x| t.softplus(x)),
        unary("sqrt", positive(&[6], r), |t, x| t.sqrt(x)),
        unary("powf", positive(&[6], r), |t, x| t.powf(x, 1.7)),
        unary("abs", away(&[8], r), |t, x| t.abs(x)),
        unary("scale", away(&[6], r), |t, x| t.scale(x, -2.5)),
        unary("offset", away(&[6], r), |t, x| t.offset(x, 0.3)),
        unary("sin", away(&[6], r), |t, x| t.sin(x)),
        unary("cos", away(&[6], r), |t, x| t.cos(x)),
        unary("clamp_min", away(&[8], r), |t, x| t.clamp_min(x, 0.05)),
        unary("clamp", away(&[8], r), |t, x| t.clamp(x, -0.5, 0.55)),
        unary("square", away(&[6], r), |t, x| t.square(x)),
        unary("sum", away(&[3, 4], r), |t, x| t.sum(x)),
        unary("mean", away(&[3, 4], r), |t, x| t.mean(x)),
        unary("sum_axis", away(&[2, 3, 4], r), |t, x| t.sum_axis(x, 1)),
        unary("mean_axis", away(&[2, 3, 4], r), |t, x| t.mean_axis(x, 2)),
        unary("max_axis", away(&[4, 5], r), |t, x| t.max_axis(x, 1)),
        unary("broadcast_to", away(&[3, 1], r), |t, x| t.broadcast_to(x, &[2, 3, 4])),
        case("concat", vec![away(&[2, 3], r), away(&[2, 2], r)], |t, v| t.concat(&[v[0], v[1]], 1)),
        unary("slice", away(&[3, 5], r), |t, x| t.slice(x, 1, 1, 4)),
        unary("reshape", away(&[3, 4], r), |t, x| t.reshape(x, &[2, 6])),
        unary("norm", away(&[4, 3], r), |t, x| t.norm(x)),
        unary("gather_rows", away(&[4, 3], r), |t, x| t.gather_rows(x, &[2, 0, 2, 3])),
        unary("softmax", away(&[3, 5], r), |t, x| t.softmax(x)),
    ];

    let rows: Vec<Vec<(usize, f64)>> = (0..4)
        .map(|_| (0..3).map(|_| (r.random_range(0..6), r.random_range(-1.0..1.0))).collect())
        .collect();
    let m = Arc::new(SparseMatrix::from_rows(6, rows));
    cases.push(case("sparse", vec![away(&[2, 6], r)], move |t, v| t.sparse(v[0], m.clone())));

    let conv = EdgeConv::new("gs", 3, &[5], 3, Activation::leaky());
    let mut store = ParamStore::new();
    conv.init(&mut store, r);
    let h = away(&[6, 3], r);
    let neighbors = crate::nets::knn_graph(h.data(), 6, 3, 3)?;
    cases.push(case("edge_max", vec![h], move |t, v| conv.forward_with_neighbors(t, &store, v[0], &neighbors)));

    let target: Vec<Vec3> = (0..7).map(|_| [0, 1, 2].map(|_| r.random_range(-0.4..0.4))).collect();
    let pts = Tensor::uniform(&[5, 3], 0.4, r).with_grad();
    cases.push(OpCase {
        name: "chamfer".into(),
        inputs: vec![pts],
        f: Box::new(move |t, v| chamfer_loss(t, v[0], &target)),
    });

    let (p, n) = (Tensor::uniform(&[6, 3], 0.4, r).with_grad(), away(&[6, 3], r));
    cases.push(case("splat", vec![p, n], |t, v| dpsr::splat_op(t, v[0], v[1], 8)));
    cases.push(case("spectral_solve", vec![away(&[3, 512], r)], |t, v| dpsr::solve_op(t, v[0], 8, 1.0)));
    let (g, q) = (away(&[512], r), Tensor::uniform(&[5, 3], 0.4, r).with_grad());
    cases.push(case("trilinear", vec![g, q], |t, v| dpsr::trilinear_op(t, v[0], v[1], 8)));
    Ok(cases)
}

/// Chain of `depth` ops drawn at random over two `[3, 4]` inputs, mixing
/// elementwise, broadcast, reduction and matrix ops.
pub fn random_graph(seed: u64, depth: usize) -> OpCase {
    let mut rng = crate::rng(seed);
    let inputs = vec![away(&[3, 4], &mut rng), away(&[3, 4], &mut rng)];
    let plan: Vec<(u32, usize)> = (0..depth).map(|_| (rng.random_range(0..10), rng.random_range(0..usize::MAX))).collect();
    case(&format!("random_graph_{seed}"), inputs, move |t, v| {
        let mut pool = vec![v[0], v[1]];
        for &(op, pick) in &plan {
            let a = pool[pick % pool.len()];
            let b = pool[(pick / 7) % pool.len()];
            let next = match op {
                0 => t.add(a, b)?,
                1 => t.mul(a, b)?,
                2 => t.tanh(a)?,
                3 => t.sigmoid(a)?,
                4 => t.sin(a)?,
                5 => t.softmax(a)?,
                6 => {
                    let bt = t.transpose(b)?;
                    let m = t.matmul(a, bt)?;
                    let s = t.scale(m, 0.25)?;
                    let m2 = t.matmul(s, b)?;
                    t.tanh(m2)?
                }
                7 => {
                    let s = t.square(b)?;
                    let d = t.offset(s, 1.0)?;
                    t.div(a, d)?
                }
                8 => {
                    let m = t.mean_axis(a, 0)?;
                    t.sub(b, m)?
                }
                _ => t.softplus(a)?,
            };
            pool.push(next);
        }
        Ok(*pool.last().expect("non-empty"))
    })
}

/// Runs every op case and `graphs` random graphs of depth 12.
pub fn run(seed: u64, graphs: usize, cfg: GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    let mut cases = op_cases(seed)?;
    cases.extend((0..graphs as u64).map(|g| random_graph(seed ^ (g + 1).wrapping_mul(0x9e37_79b9), 12)));
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| Ok((c.name.clone(), c.check(cfg, seed ^ i as u64)?)))
        .collect()
}
