//! Binary cross-entropy losses for the evolution and the initializer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::mask::BinaryMask;
use crate::sdf::{dirac, heaviside, heaviside_complement};

/// Which evolved states the evolution loss supervises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Every evolved state `phi_1 .. phi_T`.
    #[default]
    All,
    /// Only the final state `phi_T`.
    Final,
}

impl std::str::FromStr for Supervision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_steps" => Ok(Supervision::All),
            "final" | "final_only" => Ok(Supervision::Final),
            other => Err(Error::Parameter(format!(
                "unknown supervision mode '{other}' (all|final)"
            ))),
        }
    }
}

impl std::fmt::Display for Supervision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Supervision::All => "all",
            Supervision::Final => "final",
        })
    }
}

impl Supervision {
    /// Indices into `phi_1 .. phi_T` (zero-based) that carry loss.
    pub fn supervised(self, steps: usize) -> std::ops::Range<usize> {
        match self {
            Supervision::All => 0..steps,
            Supervision::Final => steps.saturating_sub(1)..steps,
        }
    }
}

/// Mean per-pixel `BCE(H_eps(phi), target)`.
pub fn heaviside_bce(phi: &[f64], target: &[f64], eps: f64) -> f64 {
    let sum: f64 = phi
        .iter()
        .zip(target)
        .map(|(&z, &y)| {
            let p = heaviside(z, eps);
            let q = heaviside_complement(z, eps);
            -(y * p.ln() + (1.0 - y) * q.ln())
        })
        .sum();
    sum / phi.len() as f64
}

pub fn heaviside_bce_grad(phi: &[f64], target: &[f64], eps: f64, seed: f64) -> Vec<f64> {
    let scale = seed / phi.len() as f64;
    phi.iter()
        .zip(target)
        .map(|(&z, &y)| {
            let p = heaviside(z, eps);
            let q = heaviside_complement(z, eps);
            scale * ((1.0 - y) / q - y / p) * dirac(z, eps)
        })
        .collect()
}

/// Mean per-pixel `BCE(sigmoid(logit), target)`, in the overflow-free form.
pub fn logit_bce(logits: &[f64], target: &[f64]) -> f64 {
    let sum: f64 = logits
        .iter()
        .zip(target)
        .map(|(&l, &y)| l.max(0.0) - l * y + (-l.abs()).exp().ln_1p())
        .sum();
    sum / logits.len() as f64
}

pub fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

pub fn logit_bce_grad(logits: &[f64], target: &[f64], seed: f64) -> Vec<f64> {
    let scale = seed / logits.len() as f64;
    logits
        .iter()
        .zip(target)
        .map(|(&l, &y)| scale * (sigmoid(l) - y))
        .collect()
}

pub fn mask_as_target(mask: &BinaryMask) -> Vec<f64> {
    mask.bits().iter().map(|&b| b as f64).collect()
}

/// Evolution loss over a sequence of states `phi_1 .. phi_T`.
///
/// Returns the supervised sum and the loss of every state.
pub fn loss_evo(
    phis: &[ScalarField],
    target: &BinaryMask,
    eps: f64,
    mode: Supervision,
) -> Result<(f64, Vec<f64>)> {
    if phis.is_empty() {
        return Err(Error::Parameter(
            "evolution loss needs at least one state".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!(
            "heaviside eps must be positive, got {eps}"
        )));
    }
    let y = mask_as_target(target);
    let mut per_step = Vec::with_capacity(phis.len());
    for phi in phis {
        if phi.dims() != target.dims() {
            return Err(Error::Shape(format!(
                "state {}x{} vs target {}x{}",
                phi.width(),
                phi.height(),
                target.width(),
                target.height()
            )));
        }
        per_step.push(heaviside_bce(phi.values(), &y, eps));
    }
    let total = mode.supervised(phis.len()).map(|i| per_step[i]).sum();
    Ok((total, per_step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn zero_phi_costs_ln2() {
        let phi = ScalarField::zeros(4, 4);
        let target = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let (loss, per) = loss_evo(&[phi], &target, 1.5, Supervision::All).unwrap();
        assert!((loss - LN_2).abs() < 1e-15);
        assert_eq!(per.len(), 1);
    }

    #[test]
    fn confident_correct_phi_is_cheap() {
        let target = BinaryMask::from_fn(6, 6, |x, y| x + y < 6);
        let phi = ScalarField::from_fn(6, 6, |x, y| if x + y < 6 { 1000.0 } else { -1000.0 });
        let (loss, _) = loss_evo(&[phi], &target, 1.5, Supervision::Final).unwrap();
        assert!(loss < 1e-2);
    }

    #[test]
    fn all_steps_sums_identical_states() {
        let target = BinaryMask::from_fn(6, 6, |x, _| x > 2);
        let phi = ScalarField::from_fn(6, 6, |x, y| x as f64 - 2.5 + 0.1 * y as f64);
        let states = vec![phi.clone(), phi.clone(), phi];
        let (all, _) = loss_evo(&states, &target, 1.5, Supervision::All).unwrap();
        let (fin, _) = loss_evo(&states, &target, 1.5, Supervision::Final).unwrap();
        assert!((all - 3.0 * fin).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        let target = BinaryMask::empty(4, 4);
        assert!(loss_evo(&[], &target, 1.5, Supervision::All).is_err());
        assert!(matches!(
            loss_evo(&[ScalarField::zeros(4, 2)], &target, 1.5, Supervision::All),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn logit_bce_saturation_and_symmetry() {
        assert!((logit_bce(&[0.0, 0.0], &[1.0, 0.0]) - LN_2).abs() < 1e-15);
        assert!(logit_bce(&[1000.0, -1000.0], &[1.0, 0.0]) < 1e-6);
        let l = [0.3, -2.0, 5.0];
        let y = [1.0, 0.0, 1.0];
        let neg: Vec<f64> = l.iter().map(|v| -v).collect();
        let comp: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        assert!((logit_bce(&l, &y) - logit_bce(&neg, &comp)).abs() < 1e-15);
    }

    #[test]
    fn supervision_parsing() {
        assert_eq!("all".parse::<Supervision>().unwrap(), Supervision::All);
        assert_eq!("final".parse::<Supervision>().unwrap(), Supervision::Final);
        assert!("some".parse::<Supervision>().is_err());
        assert_eq!(Supervision::Final.supervised(3), 2..3);
    }
}
