use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Mat, Tape, Var};

/// Flat list of named parameter matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub names: Vec<String>,
    pub values: Vec<Mat>,
}

impl Params {
    pub fn add(&mut self, name: String, value: Mat) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.values
            .iter()
            .map(|v| Mat::zeros(v.nrows(), v.ncols()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Fully connected network with leaky-tanh on hidden layers and a linear
/// output layer. Weights are `in x out`, biases `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `(weight, bias)` parameter indices per layer.
    pub layers: Vec<(usize, usize)>,
}

impl Mlp {
    /// Uniform `+-1/sqrt(fan_in)` initialization; `zero_output` zeroes the
    /// last layer so the network starts as the constant 0.
    pub fn new(
        params: &mut Params,
        name: &str,
        widths: &[usize],
        zero_output: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::new();
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let last = l + 2 == widths.len();
            let mut draw = |r, c| {
                if last && zero_output {
                    Mat::zeros(r, c)
                } else {
                    Mat::from_fn(r, c, |_, _| rng.random_range(-bound..bound))
                }
            };
            let weight = draw(fan_in, fan_out);
            let bias = draw(1, fan_out);
            let wi = params.add(format!("{name}.{l}.weight"), weight);
            let bi = params.add(format!("{name}.{l}.bias"), bias);
            layers.push((wi, bi));
        }
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Params, input: Var) -> Var {
        let mut h = input;
        for (l, &(wi, bi)) in self.layers.iter().enumerate() {
            let w = tape.param(wi, params.values[wi].clone());
            let b = tape.param(bi, params.values[bi].clone());
            let lin = tape.matmul(h, w);
            h = tape.add_row(lin, b);
            if l + 1 < self.layers.len() {
                h = tape.leaky_tanh(h);
            }
        }
        h
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &[Mat]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = &mut params.values[i];
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                p[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_output_mlp_is_constant_zero() {
        let mut p = Params::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut p, "f", &[3, 8, 2], true, &mut rng);
        let mut t = Tape::new();
        let x = t.constant(Mat::from_fn(5, 3, |i, j| (i * 3 + j) as f64));
        let y = mlp.forward(&mut t, &p, x);
        assert!(t.value(y).iter().all(|&v| v == 0.0));
        assert_eq!(p.count(), 3 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = Params::default();
        p.add("x".into(), Mat::from_element(1, 2, 3.0));
        let mut opt = Adam::new(&p, 0.1);
        for _ in 0..500 {
            let g = vec![&p.values[0] * 2.0];
            opt.update(&mut p, &g);
        }
        assert!(p.values[0].amax() < 1e-2);
    }
}
