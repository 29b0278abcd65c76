//! Parameter registry and small trainable layers built on the tape ops.
//!
//! Parameters live in a flat, name-ordered registry so the optimizer and
//! checkpoint code never have to know the model structure. A forward pass
//! first calls `Params::track` to register every parameter on the pass's
//! tape; layers then index into the tracked set.

use std::ops::Index;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Gradients, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Default)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.values[id.0].shape(), value.shape());
        self.values[id.0] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Register every parameter on `tape`, in registry order.
    pub fn track(&self, tape: &mut Tape) -> Tracked {
        Tracked {
            tensors: self.values.iter().map(|t| tape.param(t)).collect(),
        }
    }

    /// Gradients in registry order; `None` for parameters the loss never saw.
    pub fn gradients(&self, tracked: &Tracked, grads: &Gradients) -> Vec<Option<Vec<f64>>> {
        tracked
            .tensors
            .iter()
            .map(|t| grads.wrt(t).map(|g| g.to_vec()))
            .collect()
    }

    /// Write one tensor file per parameter into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, value) in self.iter() {
            write_tensor(&dir.join(format!("{name}.dtns")), value)?;
        }
        Ok(())
    }

    /// Load values for all registered parameters from `dir`, enforcing shape
    /// agreement (catches checkpoint/config mismatches).
    pub fn load_dir(&mut self, dir: &Path) -> Result<()> {
        for i in 0..self.values.len() {
            let path = dir.join(format!("{}.dtns", self.names[i]));
            let t = read_tensor(&path)?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} has shape {:?}, model expects {:?}",
                    self.names[i],
                    t.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = t;
        }
        Ok(())
    }
}

/// Tape-registered parameter tensors, parallel to a `Params` registry.
pub struct Tracked {
    tensors: Vec<Tensor>,
}

impl Index<ParamId> for Tracked {
    type Output = Tensor;
    fn index(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}

impl Tracked {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}

/// Uniform init in ±sqrt(1/fan_in).
fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Fully connected layer `[N, in] -> [N, out]` with bias.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Linear {
        let w = params.add(
            format!("{name}.w"),
            init_uniform(rng, &[in_dim, out_dim], in_dim),
        );
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[1, out_dim]));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, tr: &Tracked, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let xw = tape.matmul(x, &tr[self.w])?;
        // Broadcast the bias row over all N rows.
        let ones = Tensor::ones(&[n, 1]);
        let brows = tape.matmul(&ones, &tr[self.b])?;
        tape.add(&xw, &brows)
    }
}

/// Two-layer perceptron with ReLU after the first layer.
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Mlp {
        Mlp {
            l1: Linear::new(params, rng, &format!("{name}.fc1"), in_dim, hidden),
            l2: Linear::new(params, rng, &format!("{name}.fc2"), hidden, out_dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, tr: &Tracked, x: &Tensor) -> Result<Tensor> {
        let h = self.l1.forward(tape, tr, x)?;
        let h = tape.relu(&h)?;
        self.l2.forward(tape, tr, &h)
    }
}

/// Convolution layer with bias: `[C_in, H, W] -> [C_out, OH, OW]`.
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cout: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Conv2d {
        let w = params.add(
            format!("{name}.w"),
            init_uniform(rng, &[cout, cin, k, k], cin * k * k),
        );
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[cout, 1]));
        Conv2d {
            w,
            b,
            cout,
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape, tr: &Tracked, x: &Tensor) -> Result<Tensor> {
        let y = tape.conv2d(x, &tr[self.w], self.stride, self.padding)?;
        add_channel_bias(tape, &y, &tr[self.b])
    }
}

/// Transposed convolution layer with bias.
pub struct TransposedConv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cout: usize,
    pub stride: usize,
}

impl TransposedConv2d {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> TransposedConv2d {
        let w = params.add(
            format!("{name}.w"),
            init_uniform(rng, &[cin, cout, k, k], cin * k * k),
        );
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[cout, 1]));
        TransposedConv2d { w, b, cout, stride }
    }

    pub fn forward(&self, tape: &mut Tape, tr: &Tracked, x: &Tensor) -> Result<Tensor> {
        let y = tape.transposed_conv2d(x, &tr[self.w], self.stride)?;
        add_channel_bias(tape, &y, &tr[self.b])
    }
}

/// Broadcast a `[C, 1]` bias over the spatial plane of `[C, H, W]`.
pub fn add_channel_bias(tape: &mut Tape, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ones = Tensor::ones(&[1, h * w]);
    let field = tape.matmul(bias, &ones)?;
    let field = tape.reshape(&field, &[c, h, w])?;
    tape.add(x, &field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_forward_and_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::new();
        let lin = Linear::new(&mut params, &mut rng, "fc", 3, 2);

        let x = Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let tr = params.track(&mut tape);
        let y = lin.forward(&mut tape, &tr, &x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        // Row 0 picks W row 0 (+ bias 0).
        let w = params.get(lin.w);
        assert!((y.at2(0, 0) - w.at2(0, 0)).abs() < 1e-15);

        let loss = tape.sum_all(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let gw = grads.wrt(&tr[lin.w]).unwrap();
        let gb = grads.wrt(&tr[lin.b]).unwrap();
        // Bias gradient is the row count; W rows beyond the active inputs get 0.
        assert_eq!(gb, &[2.0, 2.0]);
        assert_eq!(&gw[4..6], &[0.0, 0.0]);
    }

    #[test]
    fn conv_layer_bias_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = Params::new();
        let conv = Conv2d::new(&mut params, &mut rng, "c", 1, 2, 3, 1, 1);
        params.set(
            conv.b,
            Tensor::new(&[2, 1], vec![0.25, -0.5]).unwrap(),
        );
        let x = Tensor::zeros(&[1, 4, 4]);
        let mut tape = Tape::new();
        let tr = params.track(&mut tape);
        let y = conv.forward(&mut tape, &tr, &x).unwrap();
        assert!(y.data()[..16].iter().all(|&v| v == 0.25));
        assert!(y.data()[16..].iter().all(|&v| v == -0.5));
    }

    #[test]
    fn params_save_load_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        Linear::new(&mut params, &mut rng, "a", 4, 3);
        Mlp::new(&mut params, &mut rng, "m", 3, 6, 3);

        let dir = tempfile::tempdir().unwrap();
        params.save_dir(dir.path()).unwrap();

        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let mut params2 = Params::new();
        Linear::new(&mut params2, &mut rng2, "a", 4, 3);
        Mlp::new(&mut params2, &mut rng2, "m", 3, 6, 3);
        params2.load_dir(dir.path()).unwrap();
        for ((_, a), (_, b)) in params.iter().zip(params2.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }
}
