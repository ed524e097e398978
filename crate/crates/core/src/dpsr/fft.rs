use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub type C64 = Complex<f64>;

/// In-place 3-D transform of an `r^3` grid stored as `(x * r + y) * r + z`.
/// The inverse is unnormalised; callers divide by `r^3`.
pub struct Fft3 {
    r: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(r: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            r,
            forward: planner.plan_fft_forward(r),
            inverse: planner.plan_fft_inverse(r),
        }
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [C64], fft: &Arc<dyn Fft<f64>>) {
        let r = self.r;
        assert_eq!(data.len(), r * r * r);
        // z: contiguous lines
        data.par_chunks_mut(r).for_each(|line| fft.process(line));
        // y: strided within each x-plane
        data.par_chunks_mut(r * r).for_each(|plane| {
            let mut buf = vec![C64::default(); r];
            for z in 0..r {
                for y in 0..r {
                    buf[y] = plane[y * r + z];
                }
                fft.process(&mut buf);
                for y in 0..r {
                    plane[y * r + z] = buf[y];
                }
            }
        });
        // x: gather each line, transform, scatter
        let plane = r * r;
        let lines: Vec<Vec<C64>> = (0..plane)
            .into_par_iter()
            .map(|yz| {
                let mut buf: Vec<C64> = (0..r).map(|x| data[x * plane + yz]).collect();
                fft.process(&mut buf);
                buf
            })
            .collect();
        for (yz, line) in lines.into_iter().enumerate() {
            for (x, v) in line.into_iter().enumerate() {
                data[x * plane + yz] = v;
            }
        }
    }
}

/// Signed frequency of FFT bin `m` for a length-`r` transform.
pub fn signed_freq(m: usize, r: usize) -> f64 {
    if m < r / 2 {
        m as f64
    } else {
        m as f64 - r as f64
    }
}
