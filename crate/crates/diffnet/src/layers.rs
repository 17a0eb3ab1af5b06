//! The fixed architectures: dense stacks, a two-layer strided conv encoder
//! and a GRU cell. Each layer is a small descriptor that knows its parameter
//! names (under a prefix), how to initialize them and how to record its
//! forward pass on a [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

/// Uniform Glorot initialization, `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Fully-connected stack: `sizes = [input, hidden.., output]`, activation
/// between layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub hidden_activation: Activation,
}

impl Mlp {
    pub fn new(prefix: &str, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        Self { prefix: prefix.to_string(), sizes: sizes.to_vec(), hidden_activation: Activation::Tanh }
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.hidden_activation = act;
        self
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}w{}", self.prefix, layer + 1)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}b{}", self.prefix, layer + 1)
    }

    pub fn layout(&self) -> Value {
        json!({"type": "mlp", "prefix": self.prefix, "sizes": self.sizes, "hidden_activation": self.hidden_activation})
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParameterSet {
        let mut p = ParameterSet::new(self.layout());
        for (l, w) in self.sizes.windows(2).enumerate() {
            p.insert(&self.weight_name(l), glorot(rng, &[w[0], w[1]], w[0], w[1]));
            p.insert(&self.bias_name(l), Tensor::zeros(&[w[1]]));
        }
        p
    }

    /// Records the forward pass for a batch `x: [N, input]`.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, params: &'a ParameterSet, x: Var) -> Result<Var> {
        let xv = g.value(x);
        if xv.cols() != self.input_size() {
            return Err(shape_err("mlp input", [xv.rows(), self.input_size()], xv.shape()));
        }
        let mut h = x;
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            let w = g.param_from(params, &self.weight_name(l))?;
            let b = g.param_from(params, &self.bias_name(l))?;
            let z = g.matmul(h, w)?;
            h = g.add_row(z, b)?;
            if l < last && self.hidden_activation == Activation::Tanh {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    /// Inference on a single vector or a `[N, input]` batch.
    pub fn apply(&self, params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input_ref(input);
        let y = self.forward(&mut g, params, x)?;
        let out = g.value(y).clone();
        if input.shape().len() == 1 {
            return out.reshape(&[self.output_size()]);
        }
        Ok(out)
    }
}

/// Two 3×3 stride-2 convolutions with tanh, flattened and projected linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoder {
    pub prefix: String,
    /// `[height, width, channels]` of the input image.
    pub input: [usize; 3],
    pub channels: [usize; 2],
    pub output: usize,
}

const KERNEL: usize = 3;
const STRIDE: usize = 2;

impl ConvEncoder {
    pub fn new(prefix: &str, input: [usize; 3], channels: [usize; 2], output: usize) -> Result<Self> {
        let min = KERNEL + STRIDE * (KERNEL - 1);
        if input[0] < min || input[1] < min {
            return Err(Error::Shape(format!(
                "image {}x{} smaller than the {min}x{min} receptive field",
                input[0], input[1]
            )));
        }
        Ok(Self { prefix: prefix.to_string(), input, channels, output })
    }

    fn conv_out(n: usize) -> usize {
        (n - KERNEL) / STRIDE + 1
    }

    /// Spatial size after both convolutions.
    pub fn feature_hw(&self) -> (usize, usize) {
        (Self::conv_out(Self::conv_out(self.input[0])), Self::conv_out(Self::conv_out(self.input[1])))
    }

    pub fn flat_size(&self) -> usize {
        let (h, w) = self.feature_hw();
        h * w * self.channels[1]
    }

    fn name(&self, s: &str) -> String {
        format!("{}{}", self.prefix, s)
    }

    pub fn layout(&self) -> Value {
        json!({"type": "conv", "prefix": self.prefix, "input": self.input, "channels": self.channels, "output": self.output})
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParameterSet {
        let [_, _, c] = self.input;
        let [c1, c2] = self.channels;
        let k2 = KERNEL * KERNEL;
        let mut p = ParameterSet::new(self.layout());
        p.insert(&self.name("k1"), glorot(rng, &[KERNEL, KERNEL, c, c1], k2 * c, k2 * c1));
        p.insert(&self.name("c1"), Tensor::zeros(&[c1]));
        p.insert(&self.name("k2"), glorot(rng, &[KERNEL, KERNEL, c1, c2], k2 * c1, k2 * c2));
        p.insert(&self.name("c2"), Tensor::zeros(&[c2]));
        let flat = self.flat_size();
        p.insert(&self.name("proj_w"), glorot(rng, &[flat, self.output], flat, self.output));
        p.insert(&self.name("proj_b"), Tensor::zeros(&[self.output]));
        p
    }

    /// Records the forward pass for `x: [N, H, W, C]` (or `[H, W, C]`) → `[N, output]`.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, params: &'a ParameterSet, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let n = match shape.as_slice() {
            [h, w, c] if [*h, *w, *c] == self.input => 1,
            [n, h, w, c] if [*h, *w, *c] == self.input => *n,
            _ => return Err(shape_err("conv input", self.input, shape)),
        };
        let x = g.reshape(x, &[n, self.input[0], self.input[1], self.input[2]])?;
        let mut h = x;
        for (k, c) in [("k1", "c1"), ("k2", "c2")] {
            let kv = g.param_from(params, &self.name(k))?;
            let bv = g.param_from(params, &self.name(c))?;
            let y = g.conv2d(h, kv, STRIDE)?;
            let shape = g.value(y).shape().to_vec();
            let pixels = g.reshape(y, &[shape[0] * shape[1] * shape[2], shape[3]])?;
            let biased = g.add_row(pixels, bv)?;
            let act = g.tanh(biased);
            h = g.reshape(act, &shape)?;
        }
        let flat = g.reshape(h, &[n, self.flat_size()])?;
        let w = g.param_from(params, &self.name("proj_w"))?;
        let b = g.param_from(params, &self.name("proj_b"))?;
        let z = g.matmul(flat, w)?;
        g.add_row(z, b)
    }

    pub fn apply(&self, params: &ParameterSet, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input_ref(image);
        let y = self.forward(&mut g, params, x)?;
        let out = g.value(y).clone();
        if image.shape().len() == 3 {
            return out.reshape(&[self.output]);
        }
        Ok(out)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// n  = tanh(x·Wn + (r ⊙ h)·Un + bn)
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self { prefix: prefix.to_string(), input, hidden }
    }

    fn name(&self, kind: &str, gate: &str) -> String {
        format!("{}{kind}{gate}", self.prefix)
    }

    pub fn layout(&self) -> Value {
        json!({"type": "gru", "prefix": self.prefix, "input": self.input, "hidden": self.hidden})
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParameterSet {
        let mut p = ParameterSet::new(self.layout());
        for gate in GATES {
            p.insert(&self.name("w", gate), glorot(rng, &[self.input, self.hidden], self.input, self.hidden));
            p.insert(&self.name("u", gate), glorot(rng, &[self.hidden, self.hidden], self.hidden, self.hidden));
            p.insert(&self.name("b", gate), Tensor::zeros(&[self.hidden]));
        }
        p
    }

    /// One step for a batch: `x: [N, input]`, `h: [N, hidden]`.
    pub fn step<'a>(&self, g: &mut Graph<'a>, params: &'a ParameterSet, x: Var, h: Var) -> Result<Var> {
        let xv = g.value(x);
        if xv.cols() != self.input {
            return Err(shape_err("gru input", self.input, xv.shape()));
        }
        let gate = |g: &mut Graph<'a>, name: &str, hin: Var| -> Result<Var> {
            let w = g.param_from(params, &self.name("w", name))?;
            let u = g.param_from(params, &self.name("u", name))?;
            let b = g.param_from(params, &self.name("b", name))?;
            let a = g.matmul(x, w)?;
            let c = g.matmul(hin, u)?;
            let s = g.add(a, c)?;
            g.add_row(s, b)
        };
        let z = gate(g, "z", h)?;
        let z = g.sigmoid(z);
        let r = gate(g, "r", h)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let n = gate(g, "n", rh)?;
        let n = g.tanh(n);
        let diff = g.sub(n, h)?;
        let upd = g.mul(z, diff)?;
        g.add(h, upd)
    }

    /// Runs the cell over `inputs` from a zero hidden state and returns the final state.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, params: &'a ParameterSet, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Invalid("gru over an empty sequence".into()))?;
        let n = g.value(*first).rows();
        let mut h = g.input(Tensor::zeros(&[n, self.hidden]));
        for &x in inputs {
            h = self.step(g, params, x, h)?;
        }
        Ok(h)
    }

    /// Inference over a sequence of 1-D inputs.
    pub fn apply(&self, params: &ParameterSet, inputs: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut vars = Vec::with_capacity(inputs.len());
        for t in inputs {
            if t.len() != self.input {
                return Err(shape_err("gru input", self.input, t.shape()));
            }
            vars.push(g.input_ref(t));
        }
        let h = self.forward(&mut g, params, &vars)?;
        g.value(h).clone().reshape(&[self.hidden])
    }
}
