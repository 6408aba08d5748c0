//! Two-level convolutional encoder-decoder shared by the velocity generator
//! and the initializer.
//!
//! ```text
//! x ─ conv3 ─ tanh ─ conv3 ─ tanh ─┬───────────────────────────┐
//!   (in → c1)      (c1 → c1)       │                           │ skip
//!                                  pool2 ─ conv3 ─ tanh ─ conv3 ─ tanh ─ up2 ─ concat ─ conv3 ─ tanh ─ conv1 ─ out
//!                                        (c1 → c2)      (c2 → c2)          (c2+c1 → c1)        (c1 → 1)
//! ```
//!
//! All convolutions are zero-padded so the output has the input's spatial
//! size; inputs need even dimensions for the pooling round trip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::Params;
use crate::nn::tape::{Graph, Tape, Var};
use crate::nn::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub wide_channels: usize,
}

impl ConvNetSpec {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            base_channels: 8,
            wide_channels: 16,
        }
    }

    /// `(name, in, out, kernel)` for every convolution, in registration order.
    pub fn layers(&self) -> [(&'static str, usize, usize, usize); 6] {
        let (i, c1, c2) = (self.in_channels, self.base_channels, self.wide_channels);
        [
            ("enc1", i, c1, 3),
            ("enc2", c1, c1, 3),
            ("mid1", c1, c2, 3),
            ("mid2", c2, c2, 3),
            ("dec", c2 + c1, c1, 3),
            ("out", c1, 1, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|&(_, i, o, k)| o * i * k * k + o)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    spec: ConvNetSpec,
    params: Params,
}

impl ConvNet {
    /// Scaled uniform init with `gain`; biases start at zero.
    pub fn init(spec: ConvNetSpec, seed: u64, gain: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::default();
        for (name, cin, cout, k) in spec.layers() {
            let fan = ((cin + cout) * k * k) as f64;
            let bound = gain * (6.0 / fan).sqrt();
            let w: Vec<f64> = (0..cout * cin * k * k)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.push(
                format!("{name}.weight"),
                Tensor::new(vec![cout, cin, k, k], w),
            );
            params.push(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        }
        Self { spec, params }
    }

    pub fn zeros(spec: ConvNetSpec) -> Self {
        let mut params = Params::default();
        for (name, cin, cout, k) in spec.layers() {
            params.push(
                format!("{name}.weight"),
                Tensor::zeros(vec![cout, cin, k, k]),
            );
            params.push(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        }
        Self { spec, params }
    }

    pub fn from_params(spec: ConvNetSpec, params: Params) -> Result<Self> {
        let expected = Self::zeros(spec);
        if !expected.params.same_layout(&params) {
            return Err(Error::Checkpoint(format!(
                "parameter layout does not match architecture {spec:?}"
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> ConvNetSpec {
        self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Registers every parameter on the tape in registration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect()
    }

    pub fn check_input(&self, channels: usize, height: usize, width: usize) -> Result<()> {
        if channels != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {channels}",
                self.spec.in_channels
            )));
        }
        if width < 8 || height < 8 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "network input must be even-sized and at least 8x8, got {width}x{height}"
            )));
        }
        Ok(())
    }

    /// Forward pass through any [`Graph`]. `params` must come from
    /// [`ConvNet::bind`] (tape) or a clone of the parameter tensors (eager).
    pub fn forward_graph<G: Graph>(
        &self,
        g: &mut G,
        params: &[G::Value],
        x: &G::Value,
    ) -> G::Value {
        let layer = |i: usize| (&params[2 * i], &params[2 * i + 1]);
        let (w, b) = layer(0);
        let e = g.conv(x, w, b);
        let e = g.tanh(&e);
        let (w, b) = layer(1);
        let e = g.conv(&e, w, b);
        let skip = g.tanh(&e);

        let d = g.avg_pool2(&skip);
        let (w, b) = layer(2);
        let m = g.conv(&d, w, b);
        let m = g.tanh(&m);
        let (w, b) = layer(3);
        let m = g.conv(&m, w, b);
        let m = g.tanh(&m);

        let u = g.upsample2(&m);
        let c = g.concat(&u, &skip);
        let (w, b) = layer(4);
        let o = g.conv(&c, w, b);
        let o = g.tanh(&o);
        let (w, b) = layer(5);
        g.conv(&o, w, b)
    }

    pub fn forward_eager(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.chw();
        self.check_input(c, h, w)?;
        let params: Vec<Tensor> = self.params.iter().map(|(_, t)| t.clone()).collect();
        Ok(self.forward_graph(&mut crate::nn::tape::Eager, &params, x))
    }
}
