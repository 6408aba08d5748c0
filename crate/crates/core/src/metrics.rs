//! mIoU over full amodal masks and over occluded regions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

fn same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "mask {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `|a ∧ b| / |a ∨ b|`, with two empty masks scoring 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    same_dims(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.bits().iter().zip(b.bits()) {
        inter += (p & q) as usize;
        union += (p | q) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// IoU inside the occluded domain `M_a ∧ ¬M_v`. `None` when that domain is empty.
pub fn occluded_iou(
    pred: &BinaryMask,
    amodal: &BinaryMask,
    visible: &BinaryMask,
) -> Result<Option<f64>> {
    same_dims(pred, amodal)?;
    same_dims(pred, visible)?;
    let (mut inter, mut union, mut domain) = (0usize, 0usize, 0usize);
    for ((&p, &a), &v) in pred.bits().iter().zip(amodal.bits()).zip(visible.bits()) {
        if v == 1 {
            continue;
        }
        domain += a as usize;
        inter += (p & a) as usize;
        union += (p | a) as usize;
    }
    Ok((domain > 0).then(|| inter as f64 / union as f64))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unweighted mean of per-instance IoU against the amodal masks.
pub fn miou_full(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Metric("no instances to evaluate".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Metric(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let ious = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| iou(p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&ious))
}

/// Mean occluded-region IoU over instances with a nonempty occluded domain.
/// `None` is the no-occlusion sentinel: every instance was excluded.
pub fn miou_occ(
    preds: &[BinaryMask],
    amodals: &[BinaryMask],
    visibles: &[BinaryMask],
) -> Result<Option<f64>> {
    if preds.len() != amodals.len() || preds.len() != visibles.len() {
        return Err(Error::Metric(format!(
            "list lengths differ: {} predictions, {} amodal, {} visible",
            preds.len(),
            amodals.len(),
            visibles.len()
        )));
    }
    let mut scores = Vec::new();
    for ((p, a), v) in preds.iter().zip(amodals).zip(visibles) {
        if let Some(s) = occluded_iou(p, a, v)? {
            scores.push(s);
        }
    }
    Ok((!scores.is_empty()).then(|| mean(&scores)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub seed: u64,
    pub iou_full: f64,
    /// Absent when the instance has no occluded pixels.
    pub iou_occ: Option<f64>,
    pub occlusion_rate: f64,
}

/// Evaluation summary. `miou_occ` is `None` when every instance was excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub instances: Vec<InstanceScore>,
    pub miou_full: f64,
    pub miou_occ: Option<f64>,
    pub excluded: usize,
}

pub struct EvalInstance<'a> {
    pub seed: u64,
    pub pred: &'a BinaryMask,
    pub amodal: &'a BinaryMask,
    pub visible: &'a BinaryMask,
    pub occlusion_rate: f64,
}

impl EvalReport {
    pub fn from_instances<'a>(
        label: impl Into<String>,
        items: impl IntoIterator<Item = EvalInstance<'a>>,
    ) -> Result<Self> {
        let mut instances = Vec::new();
        for it in items {
            instances.push(InstanceScore {
                seed: it.seed,
                iou_full: iou(it.pred, it.amodal)?,
                iou_occ: occluded_iou(it.pred, it.amodal, it.visible)?,
                occlusion_rate: it.occlusion_rate,
            });
        }
        if instances.is_empty() {
            return Err(Error::Metric("no instances to evaluate".into()));
        }
        let full: Vec<f64> = instances.iter().map(|s| s.iou_full).collect();
        let occ: Vec<f64> = instances.iter().filter_map(|s| s.iou_occ).collect();
        Ok(Self {
            label: label.into(),
            miou_full: mean(&full),
            miou_occ: (!occ.is_empty()).then(|| mean(&occ)),
            excluded: instances.len() - occ.len(),
            instances,
        })
    }

    pub fn miou_occ_display(&self) -> String {
        match self.miou_occ {
            Some(v) => format!("{v:.4}"),
            None => "no-occlusion".into(),
        }
    }

    /// Plain-text summary table of several reports.
    pub fn table(reports: &[&EvalReport]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>10} {:>10} {:>9}",
            "run", "instances", "mIoU_full", "mIoU_occ", "excluded"
        );
        for r in reports {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10.4} {:>10} {:>9}",
                r.label,
                r.instances.len(),
                r.miou_full,
                r.miou_occ_display(),
                r.excluded
            );
        }
        out
    }
}
