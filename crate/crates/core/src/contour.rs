use crate::field::ScalarField;

/// Sub-pixel points where `phi` changes sign along horizontal and vertical
/// grid edges, located by linear interpolation.
pub fn zero_crossings(phi: &ScalarField) -> Vec<(f64, f64)> {
    let (w, h) = phi.dims();
    let mut points = Vec::new();
    let mut edge = |a: f64, b: f64, p: (f64, f64), q: (f64, f64)| {
        if (a > 0.0) != (b > 0.0) {
            let t = a / (a - b);
            points.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
        }
    };
    for y in 0..h {
        for x in 0..w {
            let v = phi.get(x, y);
            let p = (x as f64, y as f64);
            if x + 1 < w {
                edge(v, phi.get(x + 1, y), p, (x as f64 + 1.0, y as f64));
            }
            if y + 1 < h {
                edge(v, phi.get(x, y + 1), p, (x as f64, y as f64 + 1.0));
            }
        }
    }
    points
}

/// Mean distance of the zero crossings of `phi` from `(cx, cy)`, or `None`
/// when `phi` has no zero crossing.
pub fn mean_contour_radius(phi: &ScalarField, cx: f64, cy: f64) -> Option<f64> {
    let pts = zero_crossings(phi);
    if pts.is_empty() {
        return None;
    }
    Some(pts.iter().map(|(x, y)| (x - cx).hypot(y - cy)).sum::<f64>() / pts.len() as f64)
}
