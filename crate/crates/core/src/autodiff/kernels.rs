//! Dense numeric kernels shared by the tape ops.

use rayon::prelude::*;

/// Work (multiply-adds) above which matmul rows are spread over the rayon pool.
const PAR_THRESHOLD: usize = 1 << 16;

/// Row-major `[m,k] x [k,n]`.
///
/// Every output element is accumulated over `k` in ascending order no matter
/// how many rows are in the batch or how rows are split across threads, so a
/// row's result is independent of the rows evaluated alongside it.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    if n == 0 || m == 0 {
        return out;
    }
    let row = |(i, out_row): (usize, &mut [f64])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// How an operand of a broadcasting binary op maps onto the output.
#[derive(Debug, Clone)]
pub enum BroadcastIndex {
    Same,
    Scalar,
    Map(Vec<usize>),
}

impl BroadcastIndex {
    #[inline]
    pub fn at(&self, out_index: usize) -> usize {
        match self {
            BroadcastIndex::Same => out_index,
            BroadcastIndex::Scalar => 0,
            BroadcastIndex::Map(m) => m[out_index],
        }
    }
}

/// Trailing-dimension aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

pub fn broadcast_index(input: &[usize], out: &[usize]) -> BroadcastIndex {
    let in_n: usize = input.iter().product();
    let out_n: usize = out.iter().product();
    if in_n == out_n {
        return BroadcastIndex::Same;
    }
    if in_n == 1 {
        return BroadcastIndex::Scalar;
    }
    let rank = out.len();
    let offset = rank - input.len();
    // Stride of each output axis inside the input; zero on broadcast axes.
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..input.len()).rev() {
        if input[i] != 1 {
            strides[i + offset] = s;
        }
        s *= input[i];
    }
    let mut map = Vec::with_capacity(out_n);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..out_n {
        map.push(flat);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            flat += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            flat -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    BroadcastIndex::Map(map)
}
