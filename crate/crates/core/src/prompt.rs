//! Point prompts and the initial level set function.
//!
//! The initializer sees the raw image and a Gaussian prompt heatmap, predicts
//! visible-mask logits, and the thresholded mask is converted to a signed
//! distance function. When the prediction is degenerate, a union of disks
//! around the prompts is used instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::mask::BinaryMask;
use crate::nn::loss::{logit_bce, mask_as_target};
use crate::nn::params::Params;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::nn::unet::{ConvNet, ConvNetSpec};
use crate::nn::velocity::INIT_GAIN;
use crate::sdf::{mask_from_phi, signed_distance};

pub const DEFAULT_HEATMAP_SIGMA: f64 = 2.0;
pub const DEFAULT_FALLBACK_RADIUS: f64 = 4.0;
/// Initial output bias of the initializer: the logit of a typical visible
/// fraction. Starting at the class prior keeps the first updates from
/// saturating the hidden layers just to push every logit negative.
pub const LOGIT_PRIOR: f64 = -2.5;

/// Foreground point in pixel coordinates; origin top-left, x right, y down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
}

impl PointPrompt {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x < width as f64 && self.y < height as f64
    }

    /// Pixel containing the prompt.
    pub fn pixel(&self) -> (usize, usize) {
        (self.x.floor() as usize, self.y.floor() as usize)
    }
}

pub fn check_prompts(prompts: &[PointPrompt], width: usize, height: usize) -> Result<()> {
    if prompts.is_empty() {
        return Err(Error::Prompt("at least one prompt is required".into()));
    }
    if let Some(p) = prompts.iter().find(|p| !p.in_bounds(width, height)) {
        return Err(Error::Prompt(format!(
            "prompt ({}, {}) outside {width}x{height} image",
            p.x, p.y
        )));
    }
    Ok(())
}

/// Pixelwise max over prompts of `exp(-|p - c|^2 / (2 sigma^2))`.
pub fn prompt_heatmap(
    prompts: &[PointPrompt],
    sigma: f64,
    width: usize,
    height: usize,
) -> Result<ScalarField> {
    check_prompts(prompts, width, height)?;
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "heatmap sigma must be positive, got {sigma}"
        )));
    }
    let denom = 2.0 * sigma * sigma;
    Ok(ScalarField::from_fn(width, height, |x, y| {
        prompts
            .iter()
            .map(|p| {
                let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                (-d2 / denom).exp()
            })
            .fold(f64::MIN_POSITIVE, f64::max)
    }))
}

/// Union of disks of radius `r0` around the prompts, as the pointwise max of
/// per-disk signed distances `r0 - |p - c|`.
pub fn geometric_init(
    prompts: &[PointPrompt],
    r0: f64,
    width: usize,
    height: usize,
) -> Result<ScalarField> {
    check_prompts(prompts, width, height)?;
    if !(r0 >= 1.0) {
        return Err(Error::Parameter(format!(
            "fallback radius must be at least 1, got {r0}"
        )));
    }
    Ok(ScalarField::from_fn(width, height, |x, y| {
        prompts
            .iter()
            .map(|p| r0 - (x as f64 - p.x).hypot(y as f64 - p.y))
            .fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// Mean per-pixel BCE between `sigmoid(logits)` and the visible mask.
pub fn initializer_loss(logits: &ScalarField, visible: &BinaryMask) -> Result<f64> {
    if logits.dims() != visible.dims() {
        return Err(Error::Shape(format!(
            "logits {}x{} vs mask {}x{}",
            logits.width(),
            logits.height(),
            visible.width(),
            visible.height()
        )));
    }
    Ok(logit_bce(logits.values(), &mask_as_target(visible)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub heatmap_sigma: f64,
    pub fallback_radius: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            heatmap_sigma: DEFAULT_HEATMAP_SIGMA,
            fallback_radius: DEFAULT_FALLBACK_RADIUS,
        }
    }
}

/// Result of initialization, with the intermediate products kept for
/// inspection and training.
#[derive(Clone, Debug, PartialEq)]
pub struct Initialization {
    pub phi: ScalarField,
    pub logits: ScalarField,
    pub visible_estimate: BinaryMask,
    pub used_fallback: bool,
}

/// Converts visible-mask logits to `phi_0`: threshold at 0 (ties go to
/// background), then signed distance; degenerate masks use the disks.
pub fn phi_from_logits(
    logits: &ScalarField,
    prompts: &[PointPrompt],
    cfg: &InitConfig,
) -> Result<Initialization> {
    let (w, h) = logits.dims();
    let mask = mask_from_phi(logits);
    if mask.is_uniform() {
        let phi = geometric_init(prompts, cfg.fallback_radius, w, h)?;
        return Ok(Initialization {
            visible_estimate: mask_from_phi(&phi),
            phi,
            logits: logits.clone(),
            used_fallback: true,
        });
    }
    Ok(Initialization {
        phi: signed_distance(&mask)?,
        logits: logits.clone(),
        visible_estimate: mask,
        used_fallback: false,
    })
}

/// Encoder-decoder mapping `[image, prompt heatmap]` to visible-mask logits.
#[derive(Clone, Debug, PartialEq)]
pub struct InitializerModel {
    net: ConvNet,
}

impl InitializerModel {
    pub fn new(spec: ConvNetSpec, seed: u64) -> Self {
        let mut net = ConvNet::init(spec, seed, INIT_GAIN);
        if let Some(b) = net.params_mut().get_mut("out.bias") {
            b.data_mut()[0] = LOGIT_PRIOR;
        }
        Self { net }
    }

    pub fn with_default_spec(seed: u64) -> Self {
        Self::new(ConvNetSpec::new(2), seed)
    }

    pub fn zeros(spec: ConvNetSpec) -> Self {
        Self {
            net: ConvNet::zeros(spec),
        }
    }

    pub fn from_params(spec: ConvNetSpec, params: Params) -> Result<Self> {
        Ok(Self {
            net: ConvNet::from_params(spec, params)?,
        })
    }

    pub fn spec(&self) -> ConvNetSpec {
        self.net.spec()
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

    pub fn input_tensor(image: &ScalarField, heatmap: &ScalarField) -> Tensor {
        Tensor::from_fields(&[image, heatmap])
    }

    pub fn logits(&self, image: &ScalarField, heatmap: &ScalarField) -> Result<ScalarField> {
        if image.dims() != heatmap.dims() {
            return Err(Error::Shape("image and heatmap dimensions differ".into()));
        }
        let out = self
            .net
            .forward_eager(&Self::input_tensor(image, heatmap))?;
        ScalarField::new(image.width(), image.height(), out.into_data())
            .map_err(|_| Error::NumericOverflow("initializer produced non-finite logits".into()))
    }

    pub fn logits_taped(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<Var> {
        let (c, h, w) = tape.value(input).chw();
        self.net.check_input(c, h, w)?;
        Ok(self.net.forward_graph(tape, params, &input))
    }
}

/// Initial level set function for `image` and `prompts`.
pub fn init_phi(
    model: &InitializerModel,
    image: &ScalarField,
    prompts: &[PointPrompt],
    cfg: &InitConfig,
) -> Result<Initialization> {
    let (w, h) = image.dims();
    let heatmap = prompt_heatmap(prompts, cfg.heatmap_sigma, w, h)?;
    let logits = model.logits(image, &heatmap)?;
    phi_from_logits(&logits, prompts, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::mean_contour_radius;
    use crate::field::gradient_magnitude;

    #[test]
    fn heatmap_values() {
        let hm = prompt_heatmap(&[PointPrompt::new(8.0, 8.0)], 2.0, 16, 16).unwrap();
        assert_eq!(hm.get(8, 8), 1.0);
        assert!((hm.get(10, 8) - (-0.5f64).exp()).abs() < 1e-15);
        assert!(hm.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        let twice = prompt_heatmap(
            &[PointPrompt::new(8.0, 8.0), PointPrompt::new(8.0, 8.0)],
            2.0,
            16,
            16,
        )
        .unwrap();
        assert_eq!(hm, twice);
    }

    #[test]
    fn heatmap_rejects_bad_prompts() {
        assert!(matches!(
            prompt_heatmap(&[], 2.0, 8, 8),
            Err(Error::Prompt(_))
        ));
        assert!(matches!(
            prompt_heatmap(&[PointPrompt::new(8.0, 1.0)], 2.0, 8, 8),
            Err(Error::Prompt(_))
        ));
        assert!(matches!(
            prompt_heatmap(&[PointPrompt::new(-0.5, 1.0)], 2.0, 8, 8),
            Err(Error::Prompt(_))
        ));
    }

    #[test]
    fn geometric_disk() {
        let phi = geometric_init(&[PointPrompt::new(10.0, 10.0)], 5.0, 24, 24).unwrap();
        assert_eq!(phi.get(10, 10), 5.0);
        let r = mean_contour_radius(&phi, 10.0, 10.0).unwrap();
        assert!((r - 5.0).abs() < 0.1);
    }

    #[test]
    fn geometric_far_prompts_give_two_components() {
        let prompts = [PointPrompt::new(5.0, 5.0), PointPrompt::new(25.0, 20.0)];
        let phi = geometric_init(&prompts, 4.0, 32, 32).unwrap();
        assert_eq!(mask_from_phi(&phi).connected_components(), 2);
    }

    #[test]
    fn overlapping_disks_have_no_interior_crossings() {
        // centers closer than 2 r0: the whole segment between them stays inside
        let (a, b) = (PointPrompt::new(8.0, 10.0), PointPrompt::new(15.0, 13.0));
        let phi = geometric_init(&[a, b], 4.0, 24, 24).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let (x, y) = (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            let v = [a, b]
                .iter()
                .map(|c| 4.0 - (x - c.x).hypot(y - c.y))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(v > 0.0, "sign change at t={t}");
        }
        let m = mask_from_phi(&phi);
        assert_eq!(m.connected_components(), 1);
    }

    #[test]
    fn geometric_is_translation_equivariant() {
        let p = [PointPrompt::new(6.0, 7.0), PointPrompt::new(11.0, 9.0)];
        let q: Vec<_> = p
            .iter()
            .map(|c| PointPrompt::new(c.x + 3.0, c.y + 2.0))
            .collect();
        let a = geometric_init(&p, 4.0, 24, 24).unwrap();
        let b = geometric_init(&q, 4.0, 24, 24).unwrap();
        for y in 0..22 {
            for x in 0..21 {
                assert_eq!(a.get(x, y), b.get(x + 3, y + 2));
            }
        }
    }

    #[test]
    fn zero_model_falls_back_to_disk() {
        let model = InitializerModel::zeros(ConvNetSpec::new(2));
        let image = ScalarField::filled(16, 16, 0.3);
        let prompts = [PointPrompt::new(8.0, 8.0)];
        let init = init_phi(&model, &image, &prompts, &InitConfig::default()).unwrap();
        assert!(init.used_fallback);
        assert_eq!(
            init.phi,
            geometric_init(&prompts, DEFAULT_FALLBACK_RADIUS, 16, 16).unwrap()
        );
    }

    #[test]
    fn learned_path_yields_sdf() {
        let logits = ScalarField::from_fn(32, 32, |x, y| {
            9.0 - (x as f64 - 15.0).hypot(y as f64 - 16.0)
        });
        let init = phi_from_logits(
            &logits,
            &[PointPrompt::new(15.0, 16.0)],
            &InitConfig::default(),
        )
        .unwrap();
        assert!(!init.used_fallback);
        assert_eq!(mask_from_phi(&init.phi), init.visible_estimate);
        // distance to a pixelated contour has kinks where the nearest pixel
        // switches, so the unit-gradient band holds for most pixels, not all
        let g = gradient_magnitude(&init.phi).unwrap();
        let (mut inside_band, mut total) = (0, 0);
        for y in 2..30 {
            for x in 2..30 {
                if init.phi.get(x, y).abs() >= 2.0 {
                    total += 1;
                    assert!(g.get(x, y) <= 1.05);
                    inside_band += (g.get(x, y) >= 0.95) as usize;
                }
            }
        }
        assert!(
            inside_band as f64 >= 0.85 * total as f64,
            "{inside_band} of {total}"
        );
    }

    #[test]
    fn init_loss_examples() {
        let visible = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let l = initializer_loss(&ScalarField::zeros(4, 4), &visible).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let sure = ScalarField::from_fn(4, 4, |x, _| if x < 2 { 1000.0 } else { -1000.0 });
        assert!(initializer_loss(&sure, &visible).unwrap() < 1e-6);
        let logits = ScalarField::from_fn(4, 4, |x, y| x as f64 - 1.3 * y as f64);
        let flipped = logits.map(|v| -v);
        let a = initializer_loss(&logits, &visible).unwrap();
        let b = initializer_loss(&flipped, &visible.not()).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(initializer_loss(&ScalarField::zeros(4, 2), &visible).is_err());
    }
}
