//! Joint training of the initializer and the velocity model through the
//! unrolled evolution.
//!
//! Per sample the tape records the initializer forward pass and its logit
//! loss against the visible mask, converts the thresholded logits to `phi_0`
//! (a constant on the tape), then unrolls `T` evolution steps with the
//! velocity network and adds the Heaviside BCE of the supervised states
//! against the amodal mask.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AmodalSample;
use crate::error::{Error, Result};
use crate::evolution::EvolutionConfig;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::loss::{mask_as_target, Supervision};
use crate::nn::optim::{optimizer_step, AdamWConfig, OptimizerState};
use crate::nn::params::Params;
use crate::nn::tape::{RegularizerGrad, Tape, Var};
use crate::nn::tensor::Tensor;
use crate::nn::unet::ConvNetSpec;
use crate::nn::velocity::{VelocityModel, DEFAULT_CONTEXT_CHANNELS, DEFAULT_PHI_SCALE};
use crate::par::Exec;
use crate::pipeline::{context_fields, Pipeline};
use crate::prompt::{phi_from_logits, prompt_heatmap, InitConfig, InitializerModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub supervision: Supervision,
    /// Prompts per sample (the first `prompts` of each sample are used).
    pub prompts: usize,
    pub seed: u64,
    pub evolution: EvolutionConfig,
    pub init: InitConfig,
    pub regularizer_grad: RegularizerGrad,
    pub context_channels: usize,
    pub phi_scale: f64,
    /// Leading epochs during which only the initializer is updated. The
    /// velocity model sees a meaningful φ_0 before its first step; starting
    /// both from scratch tends to saturate it into a constant output.
    pub velocity_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            supervision: Supervision::All,
            prompts: 5,
            seed: 0,
            evolution: EvolutionConfig::default(),
            init: InitConfig::default(),
            regularizer_grad: RegularizerGrad::Exact,
            context_channels: DEFAULT_CONTEXT_CHANNELS,
            phi_scale: DEFAULT_PHI_SCALE,
            velocity_warmup_epochs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.prompts == 0 {
            return bad("prompt count must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0
            && o.weight_decay >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0)
        {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        if self.context_channels > 2 {
            return bad(format!(
                "context channels must be 0, 1 or 2, got {}",
                self.context_channels
            ));
        }
        if !(self.phi_scale > 0.0 && self.phi_scale.is_finite()) {
            return bad(format!(
                "phi scale must be positive, got {}",
                self.phi_scale
            ));
        }
        Ok(())
    }

    /// Freshly initialized models for this config.
    pub fn init_models(&self) -> (InitializerModel, VelocityModel) {
        let init = InitializerModel::new(
            ConvNetSpec::new(2),
            self.seed.wrapping_mul(2).wrapping_add(1),
        );
        let vel = VelocityModel::new(
            ConvNetSpec::new(1 + self.context_channels),
            self.phi_scale,
            self.seed.wrapping_mul(2).wrapping_add(2),
        );
        (init, vel)
    }
}

/// Losses and parameter gradients for one sample.
#[derive(Clone, Debug)]
pub struct SampleGradients {
    pub loss: f64,
    pub loss_init: f64,
    pub loss_evo: f64,
    pub per_step: Vec<f64>,
    pub init: Params,
    pub velocity: Params,
}

fn collect_grads(params: &Params, vars: &[Var], grads: &crate::nn::tape::Gradients) -> Params {
    let mut out = Params::default();
    for ((name, t), &v) in params.iter().zip(vars) {
        out.push(name, grads.get_or_zeros(v, t));
    }
    out
}

/// Records the full training objective for `sample` and differentiates it.
pub fn sample_gradients(
    initializer: &InitializerModel,
    velocity: &VelocityModel,
    sample: &AmodalSample,
    cfg: &TrainConfig,
) -> Result<SampleGradients> {
    let (w, h) = sample.image.dims();
    let n = cfg.prompts.min(sample.prompts.len());
    let prompts = &sample.prompts[..n];
    let heatmap = prompt_heatmap(prompts, cfg.init.heatmap_sigma, w, h)?;
    let mut tape = Tape::new();

    let init_vars = initializer.bind(&mut tape);
    let init_in = tape.input(InitializerModel::input_tensor(&sample.image, &heatmap));
    let logits = initializer.logits_taped(&mut tape, &init_vars, init_in)?;
    let loss_init = tape.logit_bce(logits, &mask_as_target(&sample.visible))?;

    let logits_field = tape.value(logits).channel_field(0);
    let phi0 = phi_from_logits(&logits_field, prompts, &cfg.init)?.phi;

    let vel_vars = velocity.bind(&mut tape);
    let context = context_fields(&sample.image, &heatmap, velocity.context_channels())?;
    let ctx = (!context.is_empty()).then(|| tape.input(VelocityModel::context_tensor(&context)));
    let mut phi = tape.input(Tensor::from_fields(&[&phi0]));
    let evo = &cfg.evolution;
    let target = mask_as_target(&sample.amodal);
    let supervised = cfg.supervision.supervised(evo.steps());
    let mut terms = vec![loss_init];
    let mut per_step = Vec::new();
    for i in 1..=evo.steps() {
        let v = velocity.forward_taped(&mut tape, &vel_vars, phi, ctx)?;
        phi = tape.evolve_step(phi, v, evo.dt(), evo.mu(), cfg.regularizer_grad)?;
        if supervised.contains(&(i - 1)) {
            let l = tape.heaviside_bce(phi, &target, evo.heaviside_eps())?;
            per_step.push(tape.value(l).item());
            terms.push(l);
        }
    }
    let total = tape.sum(&terms);
    let loss = tape.value(total).item();
    if !loss.is_finite() {
        return Err(Error::Diverged {
            seed: sample.seed,
            reason: format!("loss is {loss}"),
        });
    }
    let grads = tape.backward(total, 1.0)?;
    Ok(SampleGradients {
        loss,
        loss_init: tape.value(loss_init).item(),
        loss_evo: per_step.iter().sum(),
        per_step,
        init: collect_grads(initializer.params(), &init_vars, &grads),
        velocity: collect_grads(velocity.params(), &vel_vars, &grads),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over samples of the total objective.
    pub loss: f64,
    pub loss_init: f64,
    pub loss_evo: f64,
    /// Mean loss of each supervised state.
    pub per_step: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub initializer: InitializerModel,
    pub velocity: VelocityModel,
    pub history: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn pipeline(&self, cfg: &TrainConfig) -> Pipeline {
        Pipeline {
            initializer: self.initializer.clone(),
            velocity: self.velocity.clone(),
            init: cfg.init,
            evolution: cfg.evolution,
        }
    }

    /// Checkpoint carrying the training config and final epoch losses as
    /// metadata.
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            initializer: self.initializer.clone(),
            velocity: self.velocity.clone(),
            init: cfg.init,
            evolution: cfg.evolution,
            metadata: serde_json::json!({
                "train": cfg,
                "final_epoch": self.history.last(),
            }),
        }
    }
}

/// Sums per-sample gradients in sample order and divides by the batch size.
fn reduce(batch: &[SampleGradients]) -> (Params, Params) {
    let mut init = batch[0].init.clone();
    let mut vel = batch[0].velocity.clone();
    for g in &batch[1..] {
        init.add_assign(&g.init);
        vel.add_assign(&g.velocity);
    }
    let k = 1.0 / batch.len() as f64;
    init.map_inplace(|v| v * k);
    vel.map_inplace(|v| v * k);
    (init, vel)
}

/// Trains both models from the seeded initialization of `cfg`.
pub fn train(
    samples: &[AmodalSample],
    cfg: &TrainConfig,
    exec: Exec,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let (init, vel) = cfg.init_models();
    train_from(samples, init, vel, cfg, exec, on_epoch)
}

pub fn train_from(
    samples: &[AmodalSample],
    mut initializer: InitializerModel,
    mut velocity: VelocityModel,
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let mut init_state = OptimizerState::new(cfg.optimizer);
    let mut vel_state = OptimizerState::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let supervised = cfg.supervision.supervised(cfg.evolution.steps()).len();
        let mut sums = (0.0, 0.0, 0.0, vec![0.0; supervised]);
        for batch in order.chunks(cfg.batch_size) {
            let (i_ref, v_ref) = (&initializer, &velocity);
            let grads =
                exec.try_map(batch, |&i| sample_gradients(i_ref, v_ref, &samples[i], cfg))?;
            for g in &grads {
                sums.0 += g.loss;
                sums.1 += g.loss_init;
                sums.2 += g.loss_evo;
                for (s, l) in sums.3.iter_mut().zip(&g.per_step) {
                    *s += l;
                }
            }
            let (gi, gv) = reduce(&grads);
            optimizer_step(initializer.params_mut(), &gi, &mut init_state)?;
            if epoch >= cfg.velocity_warmup_epochs {
                optimizer_step(velocity.params_mut(), &gv, &mut vel_state)?;
            }
            if !initializer.params().is_finite() || !velocity.params().is_finite() {
                return Err(Error::Diverged {
                    seed: samples[batch[0]].seed,
                    reason: "parameters became non-finite".into(),
                });
            }
        }
        let n = samples.len() as f64;
        let log = EpochLog {
            epoch,
            loss: sums.0 / n,
            loss_init: sums.1 / n,
            loss_evo: sums.2 / n,
            per_step: sums.3.iter().map(|s| s / n).collect(),
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok(TrainOutcome {
        initializer,
        velocity,
        history,
    })
}
