use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{AgailError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Dense layer `y = act(W x + b)` with `W: out×in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Multilayer perceptron. Adjacent layer dimensions chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Cached post-activations of a batch forward pass.
///
/// `activations[0]` is the input batch; `activations[i + 1]` the output of
/// layer `i`.
pub struct BatchCache {
    activations: Vec<Matrix>,
}

impl BatchCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache has at least the input")
    }
}

impl Mlp {
    /// Builds a network with the given dimension chain and one activation
    /// per layer. Weights are uniform in `±1/√fan_in`; biases zero.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut ChaCha8Rng) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert_eq!(dims.len() - 1, activations.len(), "one activation per layer");
        let mut layers = Vec::with_capacity(activations.len());
        for (i, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut w = Matrix::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
            layers.push(Layer {
                weight: w,
                bias: vec![0.0; fan_out],
                activation: act,
            });
        }
        Mlp { layers }
    }

    /// The default body used everywhere: three hidden layers of 100
    /// tanh units.
    pub fn standard(input_dim: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Mlp {
        Mlp::new(
            &[input_dim, 100, 100, 100, output_dim],
            &[
                Activation::Tanh,
                Activation::Tanh,
                Activation::Tanh,
                Activation::Identity,
            ],
            rng,
        )
    }

    /// Builds a network from explicit layers; dimensions must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Mlp {
        assert!(!layers.is_empty(), "need at least one layer");
        for w in layers.windows(2) {
            assert_eq!(w[0].out_dim(), w[1].in_dim(), "layer dims must chain");
        }
        Mlp { layers }
    }

    /// Writes layer shapes and row-major values as text. Values print in
    /// shortest round-trip form, so `read_text` recovers them bit-exactly.
    pub fn write_text(&self, out: &mut String) {
        use std::fmt::Write;
        writeln!(out, "mlp {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(out, "layer {} {} {}", l.out_dim(), l.in_dim(), l.activation.name()).unwrap();
            let ws: Vec<String> = l.weight.data().iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", ws.join(" ")).unwrap();
            let bs: Vec<String> = l.bias.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", bs.join(" ")).unwrap();
        }
    }

    /// Parses the `write_text` format from a line iterator.
    pub fn read_text<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Mlp> {
        let bad = |msg: &str| AgailError::Input(format!("mlp parse: {msg}"));
        let header = lines.next().ok_or_else(|| bad("missing mlp header"))?;
        let n: usize = header
            .strip_prefix("mlp ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("malformed mlp header"))?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let lh = lines.next().ok_or_else(|| bad("missing layer header"))?;
            let parts: Vec<&str> = lh.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(bad("malformed layer header"));
            }
            let out_dim: usize = parts[1].parse().map_err(|_| bad("bad out dim"))?;
            let in_dim: usize = parts[2].parse().map_err(|_| bad("bad in dim"))?;
            let act = Activation::from_name(parts[3]).ok_or_else(|| bad("bad activation"))?;
            let wline = lines.next().ok_or_else(|| bad("missing weights"))?;
            let weights: Vec<f64> = wline
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad("bad weight value")))
                .collect::<Result<_>>()?;
            if weights.len() != out_dim * in_dim {
                return Err(bad("weight count mismatch"));
            }
            let bline = lines.next().ok_or_else(|| bad("missing biases"))?;
            let bias: Vec<f64> = bline
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad("bad bias value")))
                .collect::<Result<_>>()?;
            if bias.len() != out_dim {
                return Err(bad("bias count mismatch"));
            }
            layers.push(Layer {
                weight: Matrix::from_vec(out_dim, in_dim, weights),
                bias,
                activation: act,
            });
        }
        Ok(Mlp::from_layers(layers))
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty").in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Flattens parameters: per layer, weights row-major then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "param vector length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    /// Single-input forward pass. Pure; no cache.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(AgailError::Input(format!(
                "forward: expected input dim {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut a = x.to_vec();
        for l in &self.layers {
            let mut z = l.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let wrow = l.weight.row(o);
                let mut acc = 0.0;
                for k in 0..a.len() {
                    acc += wrow[k] * a[k];
                }
                *zo += acc;
            }
            for v in &mut z {
                *v = l.activation.apply(*v);
            }
            a = z;
        }
        Ok(a)
    }

    /// Batch forward pass keeping per-layer activations for backprop.
    pub fn forward_batch(&self, x: &Matrix) -> BatchCache {
        assert_eq!(x.cols(), self.input_dim(), "batch input dim");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for l in &self.layers {
            let mut z = activations.last().unwrap().matmul_nt(&l.weight);
            for i in 0..z.rows() {
                let row = z.row_mut(i);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = l.activation.apply(*v + l.bias[j]);
                }
            }
            activations.push(z);
        }
        BatchCache { activations }
    }

    /// Reverse-mode gradients of `Σ_rows ⟨upstream_row, output_row⟩`.
    ///
    /// Returns flat parameter gradients (same layout as [`params_flat`])
    /// and the gradient with respect to the input batch.
    ///
    /// [`params_flat`]: Mlp::params_flat
    pub fn backward_batch(&self, cache: &BatchCache, upstream: &Matrix) -> (Vec<f64>, Matrix) {
        let out = cache.output();
        assert_eq!(upstream.rows(), out.rows(), "upstream batch size");
        assert_eq!(upstream.cols(), out.cols(), "upstream dim");

        let mut grads = vec![0.0; self.param_count()];
        // Offsets of each layer's weight block in the flat layout.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weight.data().len() + l.bias.len();
        }

        let mut delta = upstream.clone();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let post = &cache.activations[li + 1];
            for i in 0..delta.rows() {
                let post_row = post.row(i);
                let d_row = delta.row_mut(i);
                for j in 0..d_row.len() {
                    d_row[j] *= l.activation.deriv_from_output(post_row[j]);
                }
            }
            let input_act = &cache.activations[li];
            let dw = delta.matmul_tn(input_act); // out×in
            let woff = offsets[li];
            let nw = l.weight.data().len();
            for (g, d) in grads[woff..woff + nw].iter_mut().zip(dw.data()) {
                *g += d;
            }
            let boff = woff + nw;
            for i in 0..delta.rows() {
                let d_row = delta.row(i);
                for (j, d) in d_row.iter().enumerate() {
                    grads[boff + j] += d;
                }
            }
            delta = delta.matmul_nn(&l.weight);
        }
        (grads, delta)
    }

    /// Forward-mode directional derivative of the batch output along a
    /// parameter tangent (flat layout) and an optional input tangent.
    pub fn jvp_batch(
        &self,
        cache: &BatchCache,
        tangent: &[f64],
        input_tangent: Option<&Matrix>,
    ) -> Matrix {
        assert_eq!(tangent.len(), self.param_count(), "tangent length");
        let n = cache.activations[0].rows();
        let mut da = match input_tangent {
            Some(t) => t.clone(),
            None => Matrix::zeros(n, self.input_dim()),
        };
        let mut off = 0;
        for (li, l) in self.layers.iter().enumerate() {
            let nw = l.weight.data().len();
            let dw = Matrix::from_vec(l.out_dim(), l.in_dim(), tangent[off..off + nw].to_vec());
            let db = &tangent[off + nw..off + nw + l.bias.len()];
            off += nw + l.bias.len();

            let input_act = &cache.activations[li];
            let post = &cache.activations[li + 1];
            // dz = dA Wᵀ + A dWᵀ + db
            let mut dz = da.matmul_nt(&l.weight);
            let extra = input_act.matmul_nt(&dw);
            for i in 0..n {
                let post_row = post.row(i);
                let extra_row = extra.row(i);
                let dz_row = dz.row_mut(i);
                for j in 0..dz_row.len() {
                    dz_row[j] = (dz_row[j] + extra_row[j] + db[j])
                        * l.activation.deriv_from_output(post_row[j]);
                }
            }
            da = dz;
        }
        da
    }
}
