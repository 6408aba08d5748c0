//! The learned normal-velocity generator.

use crate::error::{Error, Result};
use crate::evolution::VelocityProvider;
use crate::field::ScalarField;
use crate::nn::params::Params;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::{self, Tensor};
use crate::nn::unet::{ConvNet, ConvNetSpec};

/// Image intensity and prompt heatmap.
pub const DEFAULT_CONTEXT_CHANNELS: usize = 2;
/// `phi` is scaled by this before entering the network so typical distances
/// stay in the responsive range of `tanh`.
pub const DEFAULT_PHI_SCALE: f64 = 0.1;
pub const INIT_GAIN: f64 = 0.5;

/// Encoder-decoder mapping `[phi * phi_scale, context...]` to a velocity field.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    net: ConvNet,
    phi_scale: f64,
}

impl VelocityModel {
    pub fn new(spec: ConvNetSpec, phi_scale: f64, seed: u64) -> Self {
        assert!(spec.in_channels >= 1);
        Self {
            net: ConvNet::init(spec, seed, INIT_GAIN),
            phi_scale,
        }
    }

    /// Default architecture with `context_channels` static inputs.
    pub fn with_context(context_channels: usize, seed: u64) -> Self {
        Self::new(
            ConvNetSpec::new(1 + context_channels),
            DEFAULT_PHI_SCALE,
            seed,
        )
    }

    pub fn zeros(spec: ConvNetSpec, phi_scale: f64) -> Self {
        Self {
            net: ConvNet::zeros(spec),
            phi_scale,
        }
    }

    pub fn from_params(spec: ConvNetSpec, phi_scale: f64, params: Params) -> Result<Self> {
        Ok(Self {
            net: ConvNet::from_params(spec, params)?,
            phi_scale,
        })
    }

    pub fn spec(&self) -> ConvNetSpec {
        self.net.spec()
    }

    pub fn phi_scale(&self) -> f64 {
        self.phi_scale
    }

    pub fn context_channels(&self) -> usize {
        self.net.spec().in_channels - 1
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn params(&self) -> &Params {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut Params {
        self.net.params_mut()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.net.bind(tape)
    }

    fn check(&self, phi: &ScalarField, context: &[ScalarField]) -> Result<()> {
        if context.len() != self.context_channels() {
            return Err(Error::Shape(format!(
                "velocity model expects {} context channels, got {}",
                self.context_channels(),
                context.len()
            )));
        }
        if let Some(c) = context.iter().find(|c| c.dims() != phi.dims()) {
            return Err(Error::Shape(format!(
                "context {}x{} vs phi {}x{}",
                c.width(),
                c.height(),
                phi.width(),
                phi.height()
            )));
        }
        self.net
            .check_input(1 + context.len(), phi.height(), phi.width())
    }

    /// Context channels stacked into one tensor, for use as a tape input.
    pub fn context_tensor(context: &[ScalarField]) -> Tensor {
        Tensor::from_fields(&context.iter().collect::<Vec<_>>())
    }

    /// Eager forward pass.
    pub fn forward(&self, phi: &ScalarField, context: &[ScalarField]) -> Result<ScalarField> {
        self.check(phi, context)?;
        let scaled = tensor::scale(&Tensor::from_fields(&[phi]), self.phi_scale);
        let x = if context.is_empty() {
            scaled
        } else {
            tensor::concat(&scaled, &Self::context_tensor(context))
        };
        let out = self.net.forward_eager(&x)?;
        ScalarField::new(phi.width(), phi.height(), out.into_data()).map_err(|_| {
            Error::NumericOverflow("velocity network produced non-finite output".into())
        })
    }

    /// Records the forward pass on `tape`. `phi` is a `[1, h, w]` node and
    /// `context` a `[k, h, w]` node; `params` come from [`Self::bind`].
    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        params: &[Var],
        phi: Var,
        context: Option<Var>,
    ) -> Result<Var> {
        let (_, h, w) = tape.value(phi).chw();
        let k = context.map_or(0, |c| tape.value(c).chw().0);
        self.net.check_input(1 + k, h, w)?;
        let scaled = tape.scale(phi, self.phi_scale);
        let x = match context {
            Some(c) => tape.concat(scaled, c),
            None => scaled,
        };
        Ok(self.net.forward_graph(tape, params, &x))
    }

    /// Forward pass that optionally records every intermediate on `tape`.
    pub fn forward_with_tape(
        &self,
        phi: &ScalarField,
        context: &[ScalarField],
        tape: Option<&mut Tape>,
    ) -> Result<ScalarField> {
        let Some(tape) = tape else {
            return self.forward(phi, context);
        };
        self.check(phi, context)?;
        let params = self.bind(tape);
        let phi_var = tape.input(Tensor::from_fields(&[phi]));
        let ctx = (!context.is_empty()).then(|| tape.input(Self::context_tensor(context)));
        let out = self.forward_taped(tape, &params, phi_var, ctx)?;
        ScalarField::new(phi.width(), phi.height(), tape.value(out).data().to_vec()).map_err(|_| {
            Error::NumericOverflow("velocity network produced non-finite output".into())
        })
    }
}

impl VelocityProvider for VelocityModel {
    fn velocity(&self, phi: &ScalarField, context: &[ScalarField]) -> Result<ScalarField> {
        self.forward(phi, context)
    }
}
