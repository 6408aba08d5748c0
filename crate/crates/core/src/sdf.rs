//! Mask ↔ signed distance conversions and the smooth Heaviside/Dirac pair.
//!
//! Level set functions are inside-positive: foreground pixels carry positive
//! values and the mask is recovered by `phi > 0`.

use std::f64::consts::FRAC_1_PI;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::mask::BinaryMask;

/// Default Heaviside width, in pixels.
pub const HEAVISIDE_EPS: f64 = 1.5;

/// Squared distance of the 1D lower envelope of parabolas rooted at the
/// finite entries of `f` (Felzenszwalb & Huttenlocher). Infinite entries are
/// skipped, so rows without any site stay infinite.
fn lower_envelope_1d(f: &[f64], out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let s = ((fq + (q * q) as f64) - (f[v] + (v * v) as f64)) / (2 * (q - v)) as f64;
            if s <= *bounds.last().unwrap() {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && bounds[k + 1] < q as f64 {
            k += 1;
        }
        let v = sites[k];
        let d = q as f64 - v as f64;
        *o = d * d + f[v];
    }
}

/// Exact squared Euclidean distance to the nearest set pixel. All values are
/// integers represented exactly in `f64`.
fn squared_edt(mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (w, h) = mask.dims();
    let mut grid: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b == 1 { 0.0 } else { f64::INFINITY })
        .collect();
    let mut sites = Vec::new();
    let mut bounds = Vec::new();

    let mut column = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = grid[y * w + x];
        }
        lower_envelope_1d(&column, &mut col_out, &mut sites, &mut bounds);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        let row = &mut grid[y * w..(y + 1) * w];
        lower_envelope_1d(row, &mut row_out, &mut sites, &mut bounds);
        row.copy_from_slice(&row_out);
    }
    Ok(grid)
}

/// Euclidean distance from every pixel center to the nearest foreground pixel
/// center. Exact, not a chamfer approximation.
pub fn exact_edt(mask: &BinaryMask) -> Result<ScalarField> {
    let (w, h) = mask.dims();
    let values = squared_edt(mask)?.into_iter().map(f64::sqrt).collect();
    Ok(ScalarField::from_raw(w, h, values))
}

/// Half-pixel-offset signed distance: `d - 0.5` inside, `-(d - 0.5)` outside,
/// where `d` is the distance to the nearest pixel of the opposite class. The
/// zero level set sits halfway between neighbouring pixel centers, so
/// [`mask_from_phi`] inverts this exactly.
pub fn signed_distance(mask: &BinaryMask) -> Result<ScalarField> {
    match mask.count() {
        0 => return Err(Error::DegenerateMask("all background")),
        n if n == mask.bits().len() => return Err(Error::DegenerateMask("all foreground")),
        _ => {}
    }
    let to_background = squared_edt(&mask.not())?;
    let to_foreground = squared_edt(mask)?;
    let values = mask
        .bits()
        .iter()
        .zip(to_background.iter().zip(&to_foreground))
        .map(|(&b, (&db, &df))| {
            if b == 1 {
                db.sqrt() - 0.5
            } else {
                0.5 - df.sqrt()
            }
        })
        .collect();
    let (w, h) = mask.dims();
    Ok(ScalarField::from_raw(w, h, values))
}

pub fn mask_from_phi(phi: &ScalarField) -> BinaryMask {
    let (w, h) = phi.dims();
    BinaryMask::new(
        w,
        h,
        phi.values().iter().map(|&v| (v > 0.0) as u8).collect(),
    )
    .expect("dimensions come from a valid field")
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Parameter(format!(
            "heaviside eps must be positive, got {eps}"
        )));
    }
    Ok(())
}

/// `H_eps(z) = 0.5 (1 + (2/pi) atan(z / eps))`.
#[inline]
pub fn heaviside(z: f64, eps: f64) -> f64 {
    0.5 + FRAC_1_PI * (z / eps).atan()
}

/// `1 - H_eps(z)`, computed without cancellation for large positive `z`.
#[inline]
pub fn heaviside_complement(z: f64, eps: f64) -> f64 {
    0.5 - FRAC_1_PI * (z / eps).atan()
}

/// `dH_eps/dz = (1/pi) eps / (eps^2 + z^2)`.
#[inline]
pub fn dirac(z: f64, eps: f64) -> f64 {
    FRAC_1_PI * eps / (eps * eps + z * z)
}

pub fn smooth_heaviside(phi: &ScalarField, eps: f64) -> Result<ScalarField> {
    check_eps(eps)?;
    Ok(phi.map(|z| heaviside(z, eps)))
}

pub fn smooth_dirac(phi: &ScalarField, eps: f64) -> Result<ScalarField> {
    check_eps(eps)?;
    Ok(phi.map(|z| dirac(z, eps)))
}

/// Inside-positive signed distance of an analytic disk, `r - |p - c|`.
pub fn disk_sdf(width: usize, height: usize, cx: f64, cy: f64, radius: f64) -> ScalarField {
    ScalarField::from_fn(width, height, |x, y| {
        radius - (x as f64 - cx).hypot(y as f64 - cy)
    })
}
