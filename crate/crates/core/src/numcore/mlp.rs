use rand::Rng;

use super::matrix::{gemm, Matrix};
use super::ParamSet;
use crate::error::{Error, Result};

/// Weights and biases of a dense ReLU network with a linear output layer.
///
/// Weight matrix `i` is stored row-major with shape
/// `(layer_sizes[i + 1], layer_sizes[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`mlp_forward`], enough to run [`mlp_backward`].
#[derive(Debug, Clone)]
pub struct ActivationTape {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ActivationTape {
    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn post_activations(&self) -> &[Matrix] {
        &self.post
    }
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {layer_sizes:?}"
            )));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes)?;
        for i in 0..params.layer_count() {
            let bound = 1.0 / (layer_sizes[i] as f64).sqrt();
            for w in params.weights[i].iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
            for b in params.biases[i].iter_mut() {
                *b = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn from_parts(layer_sizes: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let shell = Self::zeros(&layer_sizes)?;
        if weights.len() != shell.weights.len() || biases.len() != shell.biases.len() {
            return Err(Error::shape(
                "MlpParams::from_parts",
                format!("{} layers", shell.layer_count()),
                format!("{} weights / {} biases", weights.len(), biases.len()),
            ));
        }
        for i in 0..shell.layer_count() {
            if weights[i].len() != shell.weights[i].len() || biases[i].len() != shell.biases[i].len() {
                return Err(Error::shape(
                    "MlpParams::from_parts",
                    format!("layer {i}: {} weights, {} biases", shell.weights[i].len(), shell.biases[i].len()),
                    format!("{} weights, {} biases", weights[i].len(), biases[i].len()),
                ));
            }
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layer sizes")
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Smallest `|pre-activation|` over all hidden units and rows; the network
    /// is differentiable within this distance of `input` in pre-activation space.
    pub fn relu_margin(&self, input: &Matrix) -> Result<f64> {
        let (_, tape) = mlp_forward(self, input)?;
        let hidden = &tape.pre[..self.layer_count() - 1];
        Ok(hidden.iter().flat_map(|z| z.as_slice().iter()).fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        mlp_forward(self, input).map(|(out, _)| out)
    }
}

impl ParamSet for MlpParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    fn group_of(&self, slice_index: usize) -> usize {
        slice_index / 2
    }
}

/// Batched forward pass. Hidden layers use ReLU, the output layer is linear.
pub fn mlp_forward(params: &MlpParams, input: &Matrix) -> Result<(Matrix, ActivationTape)> {
    if input.cols() != params.input_dim() {
        return Err(Error::shape(
            "mlp_forward input",
            format!("{} columns", params.input_dim()),
            format!("{} columns", input.cols()),
        ));
    }
    let batch = input.rows();
    let layers = params.layer_count();
    let mut pre = Vec::with_capacity(layers);
    let mut post: Vec<Matrix> = Vec::with_capacity(layers);
    for i in 0..layers {
        let (fan_in, fan_out) = (params.layer_sizes[i], params.layer_sizes[i + 1]);
        let h = if i == 0 { input } else { &post[i - 1] };
        let mut z = Matrix::zeros(batch, fan_out);
        {
            let bias = &params.biases[i];
            for r in 0..batch {
                z.row_mut(r).copy_from_slice(bias);
            }
        }
        // z += h · Wᵀ
        gemm(
            batch,
            fan_in,
            fan_out,
            h.as_slice(),
            (fan_in as isize, 1),
            &params.weights[i],
            (1, fan_in as isize),
            1.0,
            z.as_mut_slice(),
        );
        let mut a = z.clone();
        if i + 1 < layers {
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        pre.push(z);
        post.push(a);
    }
    let output = post.last().expect("at least one layer").clone();
    Ok((
        output,
        ActivationTape {
            input: input.clone(),
            pre,
            post,
        },
    ))
}

/// Reverse-mode gradients of `sum(output ⊙ output_grad)`.
///
/// Returns the parameter gradients and the gradient with respect to the input.
pub fn mlp_backward(params: &MlpParams, tape: &ActivationTape, output_grad: &Matrix) -> Result<(MlpParams, Matrix)> {
    let layers = params.layer_count();
    if tape.layer_count() != layers || tape.input.cols() != params.input_dim() {
        return Err(Error::shape(
            "mlp_backward tape",
            format!("{layers} layers, input {}", params.input_dim()),
            format!("{} layers, input {}", tape.layer_count(), tape.input.cols()),
        ));
    }
    for i in 0..layers {
        if tape.pre[i].cols() != params.layer_sizes[i + 1] {
            return Err(Error::shape(
                "mlp_backward tape",
                format!("layer {i} width {}", params.layer_sizes[i + 1]),
                format!("{}", tape.pre[i].cols()),
            ));
        }
    }
    let batch = tape.batch_size();
    if output_grad.rows() != batch || output_grad.cols() != params.output_dim() {
        return Err(Error::shape(
            "mlp_backward output_grad",
            format!("{batch}x{}", params.output_dim()),
            format!("{}x{}", output_grad.rows(), output_grad.cols()),
        ));
    }

    let mut grads = MlpParams::zeros(&params.layer_sizes)?;
    let mut delta = output_grad.clone();
    for i in (0..layers).rev() {
        let (fan_in, fan_out) = (params.layer_sizes[i], params.layer_sizes[i + 1]);
        if i + 1 < layers {
            for (d, z) in delta.as_mut_slice().iter_mut().zip(tape.pre[i].as_slice()) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let h = if i == 0 { &tape.input } else { &tape.post[i - 1] };
        // dW = deltaᵀ · h
        gemm(
            fan_out,
            batch,
            fan_in,
            delta.as_slice(),
            (1, fan_out as isize),
            h.as_slice(),
            (fan_in as isize, 1),
            0.0,
            &mut grads.weights[i],
        );
        let db = &mut grads.biases[i];
        for r in 0..batch {
            for (g, d) in db.iter_mut().zip(delta.row(r)) {
                *g += d;
            }
        }
        // dh = delta · W
        let mut dh = Matrix::zeros(batch, fan_in);
        gemm(
            batch,
            fan_out,
            fan_in,
            delta.as_slice(),
            (fan_out as isize, 1),
            &params.weights[i],
            (fan_in as isize, 1),
            0.0,
            dh.as_mut_slice(),
        );
        delta = dh;
    }
    Ok((grads, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line forward pass: one sample at a time, no gemm.
    fn naive_forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let layers = params.layer_count();
        for i in 0..layers {
            let (fan_in, fan_out) = (params.layer_sizes()[i], params.layer_sizes()[i + 1]);
            let w = params.weights(i);
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut acc = params.biases(i)[o];
                for k in 0..fan_in {
                    acc += w[o * fan_in + k] * h[k];
                }
                z[o] = if i + 1 < layers { acc.max(0.0) } else { acc };
            }
            h = z;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[3, 5, 2]).unwrap();
        let x = Matrix::from_rows(&[[1.0, -4.0, 2.5]]).unwrap();
        let y = p.predict(&x).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = MlpParams::from_parts(vec![2, 2], vec![vec![1.0, 0.0, 0.0, 1.0]], vec![vec![0.0, 0.0]]).unwrap();
        let y = p.predict(&Matrix::row_vector(&[1.0, -2.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = MlpParams::init(&[2, 16, 1], &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let y = p.predict(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for (r, x) in rows.iter().enumerate() {
            let expect = naive_forward(&p, x)[0];
            assert!((y.get(r, 0) - expect).abs() < 1e-12, "{} vs {}", y.get(r, 0), expect);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = MlpParams::zeros(&[3, 1]).unwrap();
        let err = mlp_forward(&p, &Matrix::zeros(2, 4)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(&[4, 32, 32, 3], &mut rng).unwrap();
        let x = Matrix::from_vec(8, 4, (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let a = p.predict(&x).unwrap();
        let b = p.predict(&x).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::init(&[3, 8, 2], &mut rng).unwrap();
        let x = Matrix::from_vec(4, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (_, tape) = mlp_forward(&p, &x).unwrap();
        let (g, dx) = mlp_backward(&p, &tape, &Matrix::zeros(4, 2)).unwrap();
        assert!(g.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_input() {
        let p = MlpParams::from_parts(vec![3, 1], vec![vec![0.3, -0.2, 0.9]], vec![vec![0.1]]).unwrap();
        let x = Matrix::row_vector(&[1.5, -2.0, 0.25]);
        let (_, tape) = mlp_forward(&p, &x).unwrap();
        let (g, _) = mlp_backward(&p, &tape, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(g.weights(0), x.as_slice());
        assert_eq!(g.biases(0), &[1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = MlpParams::init(&[3, 8, 8, 1], &mut rng).unwrap();
            let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let weights: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = grad_check(
                |q: &MlpParams| {
                    let (y, tape) = mlp_forward(q, &x).unwrap();
                    let og = Matrix::from_vec(6, 1, weights.clone()).unwrap();
                    let loss: f64 = y.as_slice().iter().zip(&weights).map(|(a, b)| a * b).sum();
                    (loss, mlp_backward(q, &tape, &og).unwrap().0)
                },
                &p,
            );
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::init(&[2, 16, 1], &mut rng).unwrap();
        let x = [0.3, -0.7];
        let (_, tape) = mlp_forward(&p, &Matrix::row_vector(&x)).unwrap();
        let (_, dx) = mlp_backward(&p, &tape, &Matrix::row_vector(&[1.0])).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[k] += h;
            dn[k] -= h;
            let fd = (naive_forward(&p, &up)[0] - naive_forward(&p, &dn)[0]) / (2.0 * h);
            assert!((fd - dx.get(0, k)).abs() < 1e-7);
        }
    }
}
