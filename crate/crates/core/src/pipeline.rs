//! End-to-end inference: prompts → `phi_0` → `T` evolution steps → mask.

use serde::{Deserialize, Serialize};

use crate::dataset::AmodalSample;
use crate::error::{Error, Result};
use crate::evolution::{evolve, ConstantVelocity, EvolutionConfig};
use crate::field::ScalarField;
use crate::mask::BinaryMask;
use crate::metrics::{EvalInstance, EvalReport};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::velocity::VelocityModel;
use crate::par::Exec;
use crate::prompt::{
    geometric_init, init_phi, prompt_heatmap, InitConfig, Initialization, InitializerModel,
    PointPrompt,
};
use crate::sdf::mask_from_phi;

/// Static context channels handed to a velocity network with `k` context
/// inputs: image intensity, then the prompt heatmap.
pub fn context_fields(
    image: &ScalarField,
    heatmap: &ScalarField,
    k: usize,
) -> Result<Vec<ScalarField>> {
    match k {
        0 => Ok(vec![]),
        1 => Ok(vec![image.clone()]),
        2 => Ok(vec![image.clone(), heatmap.clone()]),
        _ => Err(Error::Shape(format!(
            "unsupported context channel count {k}"
        ))),
    }
}

/// How `phi_T` is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Learned initializer and learned velocity.
    Learned,
    /// Learned initializer only: the mask of `phi_0`.
    Phi0Only,
    /// Disks around the prompts evolved with zero velocity (regularization only).
    Geometric,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Self::Learned),
            "phi0" | "phi0_only" => Ok(Self::Phi0Only),
            "geometric" => Ok(Self::Geometric),
            other => Err(Error::Parameter(format!(
                "unknown method {other:?} (learned, phi0, geometric)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub initializer: InitializerModel,
    pub velocity: VelocityModel,
    pub init: InitConfig,
    pub evolution: EvolutionConfig,
}

/// Every intermediate of one run. `phis` holds `phi_0 .. phi_T` and
/// `velocities` holds `V_0 .. V_{T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub init: Initialization,
    pub heatmap: ScalarField,
    pub phis: Vec<ScalarField>,
    pub velocities: Vec<ScalarField>,
    pub mask: BinaryMask,
}

impl PipelineRun {
    /// Foreground pixel count of every `phi_i`.
    pub fn areas(&self) -> Vec<usize> {
        self.phis.iter().map(|p| mask_from_phi(p).count()).collect()
    }
}

impl From<Checkpoint> for Pipeline {
    fn from(c: Checkpoint) -> Self {
        Self {
            initializer: c.initializer,
            velocity: c.velocity,
            init: c.init,
            evolution: c.evolution,
        }
    }
}

impl Pipeline {
    pub fn with_evolution(mut self, evolution: EvolutionConfig) -> Self {
        self.evolution = evolution;
        self
    }

    pub fn run(&self, image: &ScalarField, prompts: &[PointPrompt]) -> Result<PipelineRun> {
        self.run_method(image, prompts, Method::Learned)
    }

    pub fn run_method(
        &self,
        image: &ScalarField,
        prompts: &[PointPrompt],
        method: Method,
    ) -> Result<PipelineRun> {
        let (w, h) = image.dims();
        let heatmap = prompt_heatmap(prompts, self.init.heatmap_sigma, w, h)?;
        let init = match method {
            Method::Learned | Method::Phi0Only => {
                init_phi(&self.initializer, image, prompts, &self.init)?
            }
            Method::Geometric => {
                let phi = geometric_init(prompts, self.init.fallback_radius, w, h)?;
                Initialization {
                    visible_estimate: mask_from_phi(&phi),
                    logits: ScalarField::zeros(w, h),
                    phi,
                    used_fallback: true,
                }
            }
        };
        let cfg = self.evolution.recording(true);
        let trajectory = match method {
            Method::Phi0Only => None,
            Method::Learned => {
                let context = context_fields(image, &heatmap, self.velocity.context_channels())?;
                Some(evolve(&init.phi, &self.velocity, &context, &cfg)?)
            }
            Method::Geometric => Some(evolve(&init.phi, &ConstantVelocity(0.0), &[], &cfg)?),
        };
        let mut phis = vec![init.phi.clone()];
        let mut velocities = Vec::new();
        if let Some(t) = trajectory {
            phis.extend(t.states);
            velocities = t.velocities;
        }
        let mask = mask_from_phi(phis.last().expect("phi_0 is always present"));
        Ok(PipelineRun {
            init,
            heatmap,
            phis,
            velocities,
            mask,
        })
    }

    /// Final masks for `samples`, using at most `max_prompts` prompts each.
    pub fn predict(
        &self,
        samples: &[AmodalSample],
        method: Method,
        max_prompts: Option<usize>,
        exec: Exec,
    ) -> Result<Vec<BinaryMask>> {
        exec.try_map(samples, |s| {
            let n = max_prompts
                .unwrap_or(s.prompts.len())
                .clamp(1, s.prompts.len());
            Ok(self.run_method(&s.image, &s.prompts[..n], method)?.mask)
        })
    }

    pub fn evaluate(
        &self,
        label: &str,
        samples: &[AmodalSample],
        method: Method,
        max_prompts: Option<usize>,
        exec: Exec,
    ) -> Result<EvalReport> {
        let preds = self.predict(samples, method, max_prompts, exec)?;
        EvalReport::from_instances(
            label,
            samples.iter().zip(&preds).map(|(s, p)| EvalInstance {
                seed: s.seed,
                pred: p,
                amodal: &s.amodal,
                visible: &s.visible,
                occlusion_rate: s.occlusion_rate,
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::unet::ConvNetSpec;
    use crate::nn::velocity::DEFAULT_PHI_SCALE;

    fn zero_pipeline() -> Pipeline {
        Pipeline {
            initializer: InitializerModel::zeros(ConvNetSpec::new(2)),
            velocity: VelocityModel::zeros(ConvNetSpec::new(3), DEFAULT_PHI_SCALE),
            init: InitConfig::default(),
            evolution: EvolutionConfig::default(),
        }
    }

    #[test]
    fn frame_counts() {
        let p = zero_pipeline();
        let image = ScalarField::filled(16, 16, 0.2);
        let run = p.run(&image, &[PointPrompt::new(8.0, 8.0)]).unwrap();
        assert_eq!(run.phis.len(), 4);
        assert_eq!(run.velocities.len(), 3);
        let only = p
            .run_method(&image, &[PointPrompt::new(8.0, 8.0)], Method::Phi0Only)
            .unwrap();
        assert_eq!(only.phis.len(), 1);
        assert!(only.velocities.is_empty());
    }

    #[test]
    fn zero_velocity_keeps_phi0_mask() {
        // a non-integer radius keeps pixel centers off the zero level set
        let mut p = zero_pipeline();
        p.init.fallback_radius = 4.5;
        let image = ScalarField::filled(32, 32, 0.2);
        let prompts = [PointPrompt::new(12.0, 14.0), PointPrompt::new(20.0, 15.0)];
        let run = p.run(&image, &prompts).unwrap();
        let m0 = mask_from_phi(&run.phis[0]);
        let diff = m0.symmetric_difference(&run.mask).unwrap() as f64;
        assert!(diff <= 0.02 * m0.count() as f64, "{diff} of {}", m0.count());
        // the zero network matches the geometric baseline exactly
        let geo = p.run_method(&image, &prompts, Method::Geometric).unwrap();
        assert_eq!(geo.phis, run.phis);
    }
}
