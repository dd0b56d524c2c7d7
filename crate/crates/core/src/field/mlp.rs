//! Two-layer perceptron with a rectifier hidden layer, stored flat.

use crate::Real;

/// Upper bound on any layer width, so activations fit on the stack.
pub const MAX_WIDTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        assert!(
            input <= MAX_WIDTH && hidden <= MAX_WIDTH && output <= MAX_WIDTH,
            "layer widths are limited to {MAX_WIDTH}"
        );
        Self { input, hidden, output }
    }

    /// Layout: `w1[hidden][input] | b1[hidden] | w2[output][hidden] | b2[output]`.
    pub fn len(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    #[inline]
    fn b1(&self) -> usize {
        self.hidden * self.input
    }

    #[inline]
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }

    #[inline]
    fn b2(&self) -> usize {
        self.w2() + self.output * self.hidden
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) weights, zero biases.
    pub fn init<T: Real>(&self, rng: &mut impl rand::Rng) -> Vec<T> {
        let mut p = vec![T::zero(); self.len()];
        let l1 = 1.0 / (self.input as f64).sqrt();
        for w in &mut p[..self.b1()] {
            *w = T::lit(rng.gen_range(-l1..l1));
        }
        let l2 = 1.0 / (self.hidden as f64).sqrt();
        let (w2, b2) = (self.w2(), self.b2());
        for w in &mut p[w2..b2] {
            *w = T::lit(rng.gen_range(-l2..l2));
        }
        p
    }

    /// Forward pass; `hidden` receives post-rectifier activations and `out`
    /// the raw (pre-activation) outputs.
    #[inline]
    pub fn forward<T: Real>(&self, params: &[T], x: &[T], hidden: &mut [T], out: &mut [T]) {
        debug_assert_eq!(params.len(), self.len());
        let (ni, nh) = (self.input, self.hidden);
        let b1 = self.b1();
        for h in 0..nh {
            let row = &params[h * ni..(h + 1) * ni];
            let mut acc = params[b1 + h];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            hidden[h] = acc.max(T::zero());
        }
        let (w2, b2) = (self.w2(), self.b2());
        for o in 0..self.output {
            let row = &params[w2 + o * nh..w2 + (o + 1) * nh];
            let mut acc = params[b2 + o];
            for (w, hv) in row.iter().zip(hidden.iter()) {
                acc += *w * *hv;
            }
            out[o] = acc;
        }
    }

    /// Reverse pass given the upstream gradient on the raw outputs.
    ///
    /// Parameter gradients accumulate into `grad` when given; input gradients
    /// are written (not accumulated) into `d_x` when given.
    #[inline]
    pub fn backward<T: Real>(&self, params: &[T], x: &[T], hidden: &[T], d_out: &[T], grad: Option<&mut [T]>, d_x: Option<&mut [T]>) {
        let (ni, nh) = (self.input, self.hidden);
        let (w2, b2) = (self.w2(), self.b2());
        let mut d_hidden = [T::zero(); MAX_WIDTH];
        for o in 0..self.output {
            let g = d_out[o];
            if g == T::zero() {
                continue;
            }
            let row = &params[w2 + o * nh..w2 + (o + 1) * nh];
            for (dh, w) in d_hidden.iter_mut().zip(row) {
                *dh += g * *w;
            }
        }
        for (h, dh) in d_hidden.iter_mut().enumerate().take(nh) {
            if hidden[h] <= T::zero() {
                *dh = T::zero();
            }
        }
        if let Some(grad) = grad {
            let b1 = self.b1();
            for o in 0..self.output {
                let g = d_out[o];
                if g == T::zero() {
                    continue;
                }
                grad[b2 + o] += g;
                let row = &mut grad[w2 + o * nh..w2 + (o + 1) * nh];
                for (gw, hv) in row.iter_mut().zip(hidden) {
                    *gw += g * *hv;
                }
            }
            for h in 0..nh {
                let g = d_hidden[h];
                if g == T::zero() {
                    continue;
                }
                grad[b1 + h] += g;
                let row = &mut grad[h * ni..(h + 1) * ni];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += g * *xi;
                }
            }
        }
        if let Some(d_x) = d_x {
            for (i, dx) in d_x.iter_mut().enumerate().take(ni) {
                let mut acc = T::zero();
                for h in 0..nh {
                    acc += d_hidden[h] * params[h * ni + i];
                }
                *dx = acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_matrix_oracle() {
        let shape = MlpShape::new(5, 7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut h, mut o) = ([0.0; MAX_WIDTH], [0.0; 3]);
        shape.forward(&p, &x, &mut h, &mut o);
        // oracle: explicit matrices
        let w1: Vec<Vec<f64>> = (0..7).map(|r| p[r * 5..r * 5 + 5].to_vec()).collect();
        let b1 = &p[35..42];
        let w2: Vec<Vec<f64>> = (0..3).map(|r| p[42 + r * 7..42 + r * 7 + 7].to_vec()).collect();
        let b2 = &p[63..66];
        let hid: Vec<f64> = (0..7).map(|r| (w1[r].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b1[r]).max(0.0)).collect();
        for r in 0..3 {
            let expect = w2[r].iter().zip(&hid).map(|(a, b)| a * b).sum::<f64>() + b2[r];
            assert!((expect - o[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let shape = MlpShape::new(4, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up = [0.7, -1.3];
        let loss = |p: &[f64], x: &[f64]| {
            let (mut h, mut o) = ([0.0; MAX_WIDTH], [0.0; 2]);
            shape.forward(p, x, &mut h, &mut o);
            o[0] * up[0] + o[1] * up[1]
        };
        let (mut h, mut o) = ([0.0; MAX_WIDTH], [0.0; 2]);
        shape.forward(&p, &x, &mut h, &mut o);
        let mut g = vec![0.0; shape.len()];
        let mut dx = [0.0; 4];
        shape.backward(&p, &x, &h, &up, Some(&mut g), Some(&mut dx));
        let eps = 1e-6;
        for i in 0..shape.len() {
            let mut a = p.clone();
            a[i] += eps;
            let mut b = p.clone();
            b[i] -= eps;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: {} vs {fd}", g[i]);
        }
        for i in 0..4 {
            let mut a = x.clone();
            a[i] += eps;
            let mut b = x.clone();
            b[i] -= eps;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }
}
