//! Velocity-guided level set evolution.
//!
//! One step moves the level set function along its normal with the supplied
//! velocity and then applies distance regularization:
//!
//! ```text
//! psi      = phi - dt * V
//! phi_next = psi + mu * R(psi)
//! ```
//!
//! `R` is the double-well distance regularizer
//! `div(d_p(|grad phi|) grad phi)`, which keeps `|grad phi|` near 1 so the
//! plain `-dt * V` update stays a valid normal-velocity step.
//!
//! With inside-positive `phi`, negative velocity grows the foreground and
//! positive velocity shrinks it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    curvature, diff_x, diff_x_adjoint, diff_y, diff_y_adjoint, ensure_same_dims,
    gradient_magnitude, ScalarField, CURVATURE_ETA,
};
use crate::sdf::HEAVISIDE_EPS;

const TWO_PI: f64 = 2.0 * PI;

/// Parameters of the evolution loop. Construction enforces `steps >= 1`,
/// `dt > 0`, `mu >= 0`, `eps > 0` and the explicit stability bound
/// `mu * dt < 0.25`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvolutionConfig", into = "RawEvolutionConfig")]
pub struct EvolutionConfig {
    steps: usize,
    dt: f64,
    mu: f64,
    heaviside_eps: f64,
    record_intermediate: bool,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawEvolutionConfig {
    steps: usize,
    dt: f64,
    mu: f64,
    heaviside_eps: f64,
    record_intermediate: bool,
}

impl Default for RawEvolutionConfig {
    fn default() -> Self {
        EvolutionConfig::default().into()
    }
}

impl TryFrom<RawEvolutionConfig> for EvolutionConfig {
    type Error = Error;

    fn try_from(r: RawEvolutionConfig) -> Result<Self> {
        let mut cfg = EvolutionConfig::new(r.steps, r.dt, r.mu, r.heaviside_eps)?;
        cfg.record_intermediate = r.record_intermediate;
        Ok(cfg)
    }
}

impl From<EvolutionConfig> for RawEvolutionConfig {
    fn from(c: EvolutionConfig) -> Self {
        RawEvolutionConfig {
            steps: c.steps,
            dt: c.dt,
            mu: c.mu,
            heaviside_eps: c.heaviside_eps,
            record_intermediate: c.record_intermediate,
        }
    }
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            dt: 1.0,
            mu: 0.2,
            heaviside_eps: HEAVISIDE_EPS,
            record_intermediate: true,
        }
    }
}

impl EvolutionConfig {
    pub fn new(steps: usize, dt: f64, mu: f64, heaviside_eps: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Parameter("steps must be at least 1".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::Parameter(format!(
                "mu must be non-negative, got {mu}"
            )));
        }
        if !(heaviside_eps > 0.0) || !heaviside_eps.is_finite() {
            return Err(Error::Parameter(format!(
                "heaviside eps must be positive, got {heaviside_eps}"
            )));
        }
        if mu * dt >= 0.25 {
            return Err(Error::Parameter(format!(
                "stability bound violated: mu*dt = {} must be < 0.25",
                mu * dt
            )));
        }
        Ok(Self {
            steps,
            dt,
            mu,
            heaviside_eps,
            record_intermediate: true,
        })
    }

    pub fn with_steps(self, steps: usize) -> Result<Self> {
        Self::new(steps, self.dt, self.mu, self.heaviside_eps)
            .map(|c| c.recording(self.record_intermediate))
    }

    pub fn with_dt(self, dt: f64) -> Result<Self> {
        Self::new(self.steps, dt, self.mu, self.heaviside_eps)
            .map(|c| c.recording(self.record_intermediate))
    }

    pub fn with_mu(self, mu: f64) -> Result<Self> {
        Self::new(self.steps, self.dt, mu, self.heaviside_eps)
            .map(|c| c.recording(self.record_intermediate))
    }

    pub fn with_heaviside_eps(self, eps: f64) -> Result<Self> {
        Self::new(self.steps, self.dt, self.mu, eps).map(|c| c.recording(self.record_intermediate))
    }

    pub fn recording(mut self, record: bool) -> Self {
        self.record_intermediate = record;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn heaviside_eps(&self) -> f64 {
        self.heaviside_eps
    }

    pub fn record_intermediate(&self) -> bool {
        self.record_intermediate
    }
}

/// Supplies the normal velocity for the current level set function.
///
/// `context` holds static per-image channels (for the learned provider: the
/// image intensities and the prompt heatmap). Output must match `phi`'s
/// dimensions.
pub trait VelocityProvider {
    fn velocity(&self, phi: &ScalarField, context: &[ScalarField]) -> Result<ScalarField>;
}

impl<F> VelocityProvider for F
where
    F: Fn(&ScalarField, &[ScalarField]) -> Result<ScalarField>,
{
    fn velocity(&self, phi: &ScalarField, context: &[ScalarField]) -> Result<ScalarField> {
        self(phi, context)
    }
}

/// `V ≡ c`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantVelocity(pub f64);

impl VelocityProvider for ConstantVelocity {
    fn velocity(&self, phi: &ScalarField, _context: &[ScalarField]) -> Result<ScalarField> {
        Ok(ScalarField::filled(phi.width(), phi.height(), self.0))
    }
}

/// Mean curvature motion, `V = kappa |grad phi|`.
///
/// The `|grad phi|` factor matters at the medial axis of a shape: there the
/// discrete curvature of the cone tip is large while the true level set
/// speed is not, and plain `V = kappa` punches a hole through the interior.
#[derive(Clone, Copy, Debug)]
pub struct CurvatureVelocity {
    pub eta: f64,
}

impl VelocityProvider for CurvatureVelocity {
    fn velocity(&self, phi: &ScalarField, _context: &[ScalarField]) -> Result<ScalarField> {
        curvature(phi, self.eta)?.zip_map(&gradient_magnitude(phi)?, |k, g| k * g)
    }
}

pub fn constant_velocity(c: f64) -> ConstantVelocity {
    ConstantVelocity(c)
}

pub fn curvature_velocity() -> CurvatureVelocity {
    CurvatureVelocity { eta: CURVATURE_ETA }
}

/// Diffusion rate `d_p(s) = p'(s) / s` of the double-well potential
/// `p(s) = (1 - cos 2 pi s) / (2 pi)^2` for `s <= 1`, `(s - 1)^2 / 2` above.
#[inline]
pub fn double_well_rate(s: f64) -> f64 {
    if s <= 1.0 {
        let x = TWO_PI * s;
        if x < 1e-4 {
            1.0 - x * x / 6.0
        } else {
            x.sin() / x
        }
    } else {
        1.0 - 1.0 / s
    }
}

/// `d_p'(s) / s`, finite as `s -> 0`.
#[inline]
fn double_well_rate_slope_over_s(s: f64) -> f64 {
    if s <= 1.0 {
        let x = TWO_PI * s;
        let r = if x < 1e-2 {
            -1.0 / 3.0 + x * x / 30.0
        } else {
            (x * x.cos() - x.sin()) / (x * x * x)
        };
        TWO_PI * TWO_PI * r
    } else {
        1.0 / (s * s * s)
    }
}

fn regularizer_raw(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut fx = diff_x(values, w, h);
    let mut fy = diff_y(values, w, h);
    for (a, b) in fx.iter_mut().zip(fy.iter_mut()) {
        let d = double_well_rate(a.hypot(*b));
        *a *= d;
        *b *= d;
    }
    let mut out = diff_x(&fx, w, h);
    for (o, v) in out.iter_mut().zip(diff_y(&fy, w, h)) {
        *o += v;
    }
    out
}

/// Distance regularization `R(phi) = div(d_p(|grad phi|) grad phi)`.
pub fn regularizer(phi: &ScalarField) -> Result<ScalarField> {
    phi.require_stencil()?;
    let (w, h) = phi.dims();
    Ok(ScalarField::from_raw(
        w,
        h,
        regularizer_raw(phi.values(), w, h),
    ))
}

/// Vector-Jacobian product of the regularizer: returns `J_R(phi)^T grad`.
pub fn regularizer_vjp(phi: &[f64], grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let gx = diff_x(phi, w, h);
    let gy = diff_y(phi, w, h);
    let bar_fx = diff_x_adjoint(grad, w, h);
    let bar_fy = diff_y_adjoint(grad, w, h);
    let mut bar_gx = vec![0.0; phi.len()];
    let mut bar_gy = vec![0.0; phi.len()];
    for i in 0..phi.len() {
        let (a, b) = (gx[i], gy[i]);
        let s = a.hypot(b);
        let d = double_well_rate(s);
        let e = double_well_rate_slope_over_s(s);
        // f = d(s) * g, so df_i/dg_j = d delta_ij + (d'(s)/s) g_i g_j
        let (jxx, jxy, jyy) = (d + e * a * a, e * a * b, d + e * b * b);
        bar_gx[i] = bar_fx[i] * jxx + bar_fy[i] * jxy;
        bar_gy[i] = bar_fx[i] * jxy + bar_fy[i] * jyy;
    }
    let mut out = diff_x_adjoint(&bar_gx, w, h);
    for (o, v) in out.iter_mut().zip(diff_y_adjoint(&bar_gy, w, h)) {
        *o += v;
    }
    out
}

/// Raw kernel shared with the differentiable path: returns `(psi, phi_next)`.
pub(crate) fn step_raw(
    phi: &[f64],
    velocity: &[f64],
    w: usize,
    h: usize,
    dt: f64,
    mu: f64,
) -> (Vec<f64>, Vec<f64>) {
    let psi: Vec<f64> = phi.iter().zip(velocity).map(|(p, v)| p - dt * v).collect();
    let mut next = psi.clone();
    if mu != 0.0 {
        for (n, r) in next.iter_mut().zip(regularizer_raw(&psi, w, h)) {
            *n += mu * r;
        }
    }
    (psi, next)
}

/// One evolution step: `psi = phi - dt V`, then `psi + mu R(psi)`.
pub fn evolve_step(
    phi: &ScalarField,
    velocity: &ScalarField,
    cfg: &EvolutionConfig,
) -> Result<ScalarField> {
    ensure_same_dims(phi, velocity)?;
    phi.require_stencil()?;
    let (w, h) = phi.dims();
    let (_, next) = step_raw(phi.values(), velocity.values(), w, h, cfg.dt, cfg.mu);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow(format!(
            "evolution step produced non-finite values (dt={}, mu={})",
            cfg.dt, cfg.mu
        )));
    }
    Ok(ScalarField::from_raw(w, h, next))
}

/// States and velocities of an evolution run.
///
/// With `record_intermediate`, `states` holds `phi_1 .. phi_T` and
/// `velocities` holds `V_0 .. V_{T-1}`; otherwise `states` is `[phi_T]` and
/// `velocities` is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ScalarField>,
    pub velocities: Vec<ScalarField>,
}

impl Trajectory {
    pub fn last(&self) -> &ScalarField {
        self.states
            .last()
            .expect("trajectory holds at least one state")
    }
}

pub fn evolve(
    phi0: &ScalarField,
    provider: &dyn VelocityProvider,
    context: &[ScalarField],
    cfg: &EvolutionConfig,
) -> Result<Trajectory> {
    let record = cfg.record_intermediate;
    let mut states = Vec::with_capacity(if record { cfg.steps } else { 1 });
    let mut velocities = Vec::new();
    let mut phi = phi0.clone();
    for step in 0..cfg.steps {
        let wrap = |e: Error| Error::Provider {
            step,
            source: Box::new(e),
        };
        let v = provider.velocity(&phi, context).map_err(wrap)?;
        if v.dims() != phi.dims() {
            return Err(wrap(Error::Shape(format!(
                "velocity {}x{} for a {}x{} field",
                v.width(),
                v.height(),
                phi.width(),
                phi.height()
            ))));
        }
        phi = evolve_step(&phi, &v, cfg)?;
        if record {
            states.push(phi.clone());
            velocities.push(v);
        }
    }
    if !record {
        states.push(phi);
    }
    Ok(Trajectory { states, velocities })
}
