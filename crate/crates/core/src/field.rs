//! Dense 2D scalar fields and the finite-difference operators built on them.
//!
//! Grid spacing is one pixel. Interior derivatives use central differences,
//! boundary pixels use one-sided first differences. Every stencil operator
//! needs at least two pixels along each axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default guard against `0/0` when normalizing gradients.
pub const CURVATURE_ETA: f64 = 1e-8;

/// Row-major grid of finite `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidField(format!("empty grid {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::InvalidField(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite value at ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a field by evaluating `f(x, y)` at every pixel center.
    ///
    /// Panics if `f` returns a non-finite value.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite value at ({x}, {y})");
                values.push(v);
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    /// Wraps values computed internally; callers guarantee finiteness.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        assert!(value.is_finite());
        self.values[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        Self::new(self.width, self.height, values).expect("map produced a non-finite value")
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_same_dims(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.width, self.height, values)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub(crate) fn require_stencil(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidField(format!(
                "stencils need at least 2x2 pixels, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

pub(crate) fn ensure_same_dims(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Derivative of a row-major grid along x. Requires `width >= 2`.
pub(crate) fn diff_x(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        let dst = &mut out[y * width..(y + 1) * width];
        dst[0] = row[1] - row[0];
        dst[width - 1] = row[width - 1] - row[width - 2];
        for x in 1..width - 1 {
            dst[x] = (row[x + 1] - row[x - 1]) * 0.5;
        }
    }
    out
}

/// Derivative of a row-major grid along y. Requires `height >= 2`.
pub(crate) fn diff_y(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let at = |x: usize, y: usize| values[y * width + x];
    for x in 0..width {
        out[x] = at(x, 1) - at(x, 0);
        out[(height - 1) * width + x] = at(x, height - 1) - at(x, height - 2);
    }
    for y in 1..height - 1 {
        for x in 0..width {
            out[y * width + x] = (at(x, y + 1) - at(x, y - 1)) * 0.5;
        }
    }
    out
}

/// Transpose of [`diff_x`]: `<diff_x(f), g> == <f, diff_x_adjoint(g)>`.
pub(crate) fn diff_x_adjoint(grad: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    for y in 0..height {
        let g = &grad[y * width..(y + 1) * width];
        let dst = &mut out[y * width..(y + 1) * width];
        dst[1] += g[0];
        dst[0] -= g[0];
        dst[width - 1] += g[width - 1];
        dst[width - 2] -= g[width - 1];
        for x in 1..width - 1 {
            dst[x + 1] += g[x] * 0.5;
            dst[x - 1] -= g[x] * 0.5;
        }
    }
    out
}

/// Transpose of [`diff_y`].
pub(crate) fn diff_y_adjoint(grad: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    let last = height - 1;
    for x in 0..width {
        let g0 = grad[x];
        out[width + x] += g0;
        out[x] -= g0;
        let gl = grad[last * width + x];
        out[last * width + x] += gl;
        out[(last - 1) * width + x] -= gl;
    }
    for y in 1..last {
        for x in 0..width {
            let g = grad[y * width + x] * 0.5;
            out[(y + 1) * width + x] += g;
            out[(y - 1) * width + x] -= g;
        }
    }
    out
}

/// Central-difference gradient `(d/dx, d/dy)` with one-sided boundaries.
pub fn gradient_central(f: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    f.require_stencil()?;
    let (w, h) = f.dims();
    Ok((
        ScalarField::from_raw(w, h, diff_x(&f.values, w, h)),
        ScalarField::from_raw(w, h, diff_y(&f.values, w, h)),
    ))
}

pub fn gradient_magnitude(f: &ScalarField) -> Result<ScalarField> {
    let (gx, gy) = gradient_central(f)?;
    let values = gx
        .values
        .iter()
        .zip(&gy.values)
        .map(|(a, b)| a.hypot(*b))
        .collect();
    Ok(ScalarField::from_raw(f.width, f.height, values))
}

/// `d(gx)/dx + d(gy)/dy` using the same stencils as [`gradient_central`].
pub fn divergence(gx: &ScalarField, gy: &ScalarField) -> Result<ScalarField> {
    ensure_same_dims(gx, gy)?;
    gx.require_stencil()?;
    let (w, h) = gx.dims();
    let mut out = diff_x(&gx.values, w, h);
    for (o, d) in out.iter_mut().zip(diff_y(&gy.values, w, h)) {
        *o += d;
    }
    Ok(ScalarField::from_raw(w, h, out))
}

/// Mean curvature of the level sets of an inside-positive field,
/// `-div(grad f / max(|grad f|, eta))`.
///
/// The sign makes convex foreground regions positive: the zero level set of
/// `r - |p - c|` has curvature `1/r`.
pub fn curvature(f: &ScalarField, eta: f64) -> Result<ScalarField> {
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!(
            "curvature eta must be positive, got {eta}"
        )));
    }
    let (mut gx, mut gy) = gradient_central(f)?;
    for (a, b) in gx.values.iter_mut().zip(gy.values.iter_mut()) {
        let norm = a.hypot(*b).max(eta);
        *a /= norm;
        *b /= norm;
    }
    let mut div = divergence(&gx, &gy)?;
    for v in &mut div.values {
        *v = -*v;
    }
    Ok(div)
}
