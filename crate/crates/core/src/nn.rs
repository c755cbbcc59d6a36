//! Minimal dense-layer machinery with hand-written backprop, shared by the
//! cluster feature network and the Siamese CNN's fully-connected stage.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fully-connected layer, row-major weights `[output x input]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    /// Seeded uniform init in `[-sqrt(1/fan_in), +sqrt(1/fan_in)]`.
    pub fn seeded(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        Dense {
            input,
            output,
            w: (0..input * output).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: (0..output).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense { input, output, w: vec![0.0; input * output], b: vec![0.0; output] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        let mut y = self.b.clone();
        for o in 0..self.output {
            let row = &self.w[o * self.input..(o + 1) * self.input];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y[o] += acc;
        }
        y
    }

    /// Backprop: accumulates weight/bias gradients into `grads` and returns
    /// the gradient with respect to the input.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut DenseGrads) -> Vec<f64> {
        debug_assert_eq!(grad_out.len(), self.output);
        let mut grad_in = vec![0.0; self.input];
        for o in 0..self.output {
            let g = grad_out[o];
            if g == 0.0 {
                continue;
            }
            grads.db[o] += g;
            let row = &self.w[o * self.input..(o + 1) * self.input];
            let grow = &mut grads.dw[o * self.input..(o + 1) * self.input];
            for i in 0..self.input {
                grow[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }

    pub fn apply_step(&mut self, grads: &DenseGrads, lr: f64) {
        for (w, g) in self.w.iter_mut().zip(&grads.dw) {
            *w -= lr * g;
        }
        for (b, g) in self.b.iter_mut().zip(&grads.db) {
            *b -= lr * g;
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Gradient accumulator matching one [`Dense`] layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl DenseGrads {
    pub fn for_layer(layer: &Dense) -> Self {
        DenseGrads { dw: vec![0.0; layer.w.len()], db: vec![0.0; layer.b.len()] }
    }

    pub fn zero(&mut self) {
        self.dw.fill(0.0);
        self.db.fill(0.0);
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.dw.iter_mut() {
            *v *= s;
        }
        for v in self.db.iter_mut() {
            *v *= s;
        }
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its pre-activation values.
pub fn relu_backward(pre: &[f64], grad_out: &[f64]) -> Vec<f64> {
    pre.iter().zip(grad_out).map(|(p, g)| if *p > 0.0 { *g } else { 0.0 }).collect()
}

/// Element-wise max over rows; returns the pooled vector and per-dimension
/// argmax row indices (first maximizer wins ties).
pub fn max_pool_rows(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    assert!(!rows.is_empty());
    let dim = rows[0].len();
    let mut out = rows[0].clone();
    let mut arg = vec![0usize; dim];
    for (ri, row) in rows.iter().enumerate().skip(1) {
        for d in 0..dim {
            if row[d] > out[d] {
                out[d] = row[d];
                arg[d] = ri;
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dense_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Dense::seeded(4, 3, &mut rng);
        let x: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();
        // Loss: sum of squares of output.
        let loss = |l: &Dense| -> f64 { l.forward(&x).iter().map(|v| v * v).sum() };
        let y = layer.forward(&x);
        let grad_out: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let mut grads = DenseGrads::for_layer(&layer);
        layer.backward(&x, &grad_out, &mut grads);
        let eps = 1e-6;
        for idx in [0usize, 3, 7, 11] {
            let mut plus = layer.clone();
            plus.w[idx] += eps;
            let mut minus = layer.clone();
            minus.w[idx] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            assert!((fd - grads.dw[idx]).abs() < 1e-6, "idx {idx}: {fd} vs {}", grads.dw[idx]);
        }
    }

    #[test]
    fn max_pool_routes_to_first_maximizer() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![3.0, 2.0]];
        let (out, arg) = max_pool_rows(&rows);
        assert_eq!(out, vec![3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
    }
}
