//! Rotary position embedding over real-valued positions, plus position
//! interpolation.

use crate::detmath;
use crate::error::{Error, Result};

/// Rotation frequencies theta_i = base^(-2i/d) for 1-based pair index
/// i = 1..d/2.
pub fn frequencies(dim: usize, base: f64) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Shape(format!("dimension must be even, got {dim}")));
    }
    if base <= 0.0 {
        return Err(Error::Param(format!("rope base must be > 0, got {base}")));
    }
    Ok((1..=dim / 2)
        .map(|i| detmath::pow(base, -2.0 * i as f64 / dim as f64))
        .collect())
}

/// Rotate each 2-plane (x[2i], x[2i+1]) by angle m * theta_i. The position m
/// may be any finite real, fractional positions included. Norm-preserving.
pub fn rope_rotate(x: &[f64], m: f64, base: f64) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::NonFinite("position"));
    }
    let freqs = frequencies(x.len(), base)?;
    Ok(rotate_with(x, m, &freqs))
}

/// Same rotation with precomputed frequencies (hot path for the decoder).
pub fn rotate_with(x: &[f64], m: f64, freqs: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), freqs.len() * 2);
    let mut out = Vec::with_capacity(x.len());
    for (pair, &theta) in freqs.iter().enumerate() {
        let angle = m * theta;
        let (s, c) = (detmath::sin(angle), detmath::cos(angle));
        let (a, b) = (x[2 * pair], x[2 * pair + 1]);
        out.push(a * c - b * s);
        out.push(a * s + b * c);
    }
    out
}

/// Position interpolation: divide every position by `scale` (> 1) so the
/// effective range shrinks into the pre-trained window.
pub fn interpolate_positions(positions: &[f64], scale: f64) -> Result<Vec<f64>> {
    if scale.is_nan() || scale <= 1.0 {
        return Err(Error::Param(format!(
            "interpolation scale must be > 1, got {scale}"
        )));
    }
    Ok(positions.iter().map(|p| p / scale).collect())
}
