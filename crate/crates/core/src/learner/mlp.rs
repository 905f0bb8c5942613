use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Fully connected network with rectifier hidden layers and a linear output.
///
/// All parameters live in one flat vector. Layer `l` stores its weights
/// input-major (`w[i * out + o]`) followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Reusable buffers for forward/backward passes.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    /// Post-activation values per layer, `acts[0]` being the input.
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_next: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Zero-initialised network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp { sizes: sizes.to_vec(), params: vec![T::zero(); count] })
    }

    /// Uniform Glorot initialisation of weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = T::of(rng.random_range(-limit..=limit));
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::Contract(format!(
                "{} parameters for sizes {sizes:?}, expected {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn workspace(&self) -> Workspace<T> {
        Workspace {
            acts: self.sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            delta: Vec::new(),
            delta_next: Vec::new(),
        }
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Contract(format!(
                "input of length {} for a network expecting {}",
                input.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Forward pass, leaving every layer's activations in `ws`.
    fn forward_into(&self, input: &[T], ws: &mut Workspace<T>) {
        ws.acts[0].copy_from_slice(input);
        let last = self.sizes.len() - 2;
        let mut off = 0;
        for l in 0..=last {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (lower, upper) = ws.acts.split_at_mut(l + 1);
            let x = &lower[l];
            let y = &mut upper[0];
            y.copy_from_slice(b);
            for (i, &xi) in x.iter().enumerate() {
                if xi != T::zero() {
                    axpy(y, xi, &w[i * n_out..(i + 1) * n_out]);
                }
            }
            if l < last {
                for v in y.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            off += n_in * n_out + n_out;
        }
    }

    /// Action values for one input.
    pub fn q_values(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut ws = self.workspace();
        self.forward_into(input, &mut ws);
        Ok(ws.acts.pop().expect("output layer"))
    }

    /// Same as [`q_values`](Self::q_values) with caller-provided buffers.
    pub fn q_values_with<'w>(&self, input: &[T], ws: &'w mut Workspace<T>) -> Result<&'w [T]> {
        self.check_input(input)?;
        self.forward_into(input, ws);
        Ok(ws.acts.last().expect("output layer"))
    }

    /// Backpropagates `d_out` (the loss gradient at the output) through the
    /// activations left in `ws` by the last [`q_values_with`](Self::q_values_with)
    /// call, adding the parameter gradient into `grad`.
    pub fn backprop(&self, d_out: &[T], grad: &mut [T], ws: &mut Workspace<T>) -> Result<()> {
        if d_out.len() != self.output_len() || grad.len() != self.params.len() {
            return Err(Error::Contract("gradient buffer shape mismatch".into()));
        }
        self.backward(d_out, grad, ws);
        Ok(())
    }

    fn backward(&self, d_out: &[T], grad: &mut [T], ws: &mut Workspace<T>) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        ws.delta.clear();
        ws.delta.extend_from_slice(d_out);
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &ws.acts[l];
            let delta = &ws.delta;
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (g, &d) in gb.iter_mut().zip(delta.iter()) {
                    *g += d;
                }
                for (i, &xi) in x.iter().enumerate() {
                    if xi != T::zero() {
                        axpy(&mut gw[i * n_out..(i + 1) * n_out], xi, delta);
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            ws.delta_next.clear();
            for (i, &xi) in x.iter().enumerate() {
                // x is a rectifier output: zero means an inactive unit.
                let d = if xi > T::zero() { dot(&w[i * n_out..(i + 1) * n_out], delta) } else { T::zero() };
                ws.delta_next.push(d);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
    }
}

/// Lane count of the unrolled kernels; layer widths here are a few dozen,
/// so a fixed short chunk keeps the vector body in use.
const LANES: usize = 8;

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    let mut yc = y.chunks_exact_mut(LANES);
    let mut xc = x.chunks_exact(LANES);
    for (ys, xs) in (&mut yc).zip(&mut xc) {
        for k in 0..LANES {
            ys[k] += a * xs[k];
        }
    }
    for (yi, &xi) in yc.into_remainder().iter_mut().zip(xc.remainder()) {
        *yi += a * xi;
    }
}

/// Dot product with one accumulator per lane.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    acc.iter().fold(T::zero(), |s, &v| s + v) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zeros() {
        let net = Mlp::<f64>::zeros(&[13, 50, 25, 6]).unwrap();
        let q = net.q_values(&[1.0; 13]).unwrap();
        assert_eq!(q, vec![0.0; 6]);
    }

    #[test]
    fn hand_computed_two_two_two() {
        // Layer 1: w[i][o] input-major, b; layer 2 likewise.
        // h = relu([1*0.5 + 2*(-1) + 0.1, 1*1 + 2*0.25 - 0.2]) = relu([-1.4, 1.3]) = [0, 1.3]
        // y = [0*2 + 1.3*(-1) + 0.3, 0*1 + 1.3*3 - 0.5] = [-1.0, 3.4]
        let params: Vec<f64> = vec![0.5, 1.0, -1.0, 0.25, 0.1, -0.2, 2.0, 1.0, -1.0, 3.0, 0.3, -0.5];
        let net = Mlp::from_params(&[2, 2, 2], params).unwrap();
        let q = net.q_values(&[1.0, 2.0]).unwrap();
        assert!((q[0] + 1.0).abs() < 1e-12 && (q[1] - 3.4).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn output_length_and_input_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f32>::glorot(&[17, 50, 25, 8], &mut rng).unwrap();
        assert_eq!(net.q_values(&[0.0; 17]).unwrap().len(), 8);
        assert!(matches!(net.q_values(&[0.0; 16]), Err(Error::Contract(_))));
    }

    #[test]
    fn glorot_respects_limits_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f64>::glorot(&[4, 3, 2], &mut rng).unwrap();
        let l1 = (6.0f64 / 7.0).sqrt();
        assert!(net.params()[..12].iter().all(|w| w.abs() <= l1));
        assert!(net.params()[12..15].iter().all(|b| *b == 0.0));
        assert!(net.params()[21..].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..27).map(|k| k as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..27).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
