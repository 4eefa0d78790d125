//! Directional statistics for hue angles.
//!
//! The public API speaks degrees; all trigonometry runs in radians on `f64`.
//! Hue is a point on the circle, so averaging it with an arithmetic mean is
//! wrong near the 0°/360° seam: `[350, 10]` must average to `0`, not `180`.
//! Everything here goes through the unit-vector embedding instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean resultant length below which the circular mean is undefined.
pub const MEAN_TOLERANCE: f64 = 1e-12;

/// Component-vector norm below which `components_to_hue` refuses to pick an angle.
pub const COMPONENT_TOLERANCE: f64 = 1e-12;

/// Summary of a set of angles: count, circular mean, mean resultant length and
/// circular standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSetSummary {
    pub n: usize,
    pub mean_deg: f64,
    pub resultant_length: f64,
    pub circ_std_deg: f64,
}

/// Maps any finite angle into `[0, 360)`. `360` maps to `0`.
pub fn normalize_deg(angle_deg: f64) -> Result<f64> {
    if !angle_deg.is_finite() {
        return Err(Error::domain(format!("angle {angle_deg} is not finite")));
    }
    let r = angle_deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    Ok(if r >= 360.0 { 0.0 } else { r })
}

fn check_angles(angles_deg: &[f64]) -> Result<()> {
    if angles_deg.is_empty() {
        return Err(Error::domain("empty angle list"));
    }
    if let Some(bad) = angles_deg.iter().find(|a| !a.is_finite()) {
        return Err(Error::domain(format!("angle {bad} is not finite")));
    }
    Ok(())
}

/// Mean sine and cosine of the angles.
fn mean_components(angles_deg: &[f64]) -> (f64, f64) {
    let n = angles_deg.len() as f64;
    let (s, c) = angles_deg.iter().fold((0.0, 0.0), |(s, c), a| {
        let (sin, cos) = a.to_radians().sin_cos();
        (s + sin, c + cos)
    });
    (s / n, c / n)
}

/// R, with a refinement near 1.
///
/// `hypot` of averaged components loses precision when the angles agree
/// closely (identical annotations come out as `1 - 2^-53`, which turns into a
/// spurious ~1e-6° spread after the square-root in the circular std). Near 1 we
/// use the exact identity `R = 1 - (2/N) Σ sin²((θᵢ - θ̄)/2)`, which is exactly
/// 1 for identical angles.
fn resultant(angles_deg: &[f64]) -> (f64, f64, f64) {
    let (s, c) = mean_components(angles_deg);
    let direct = s.hypot(c);
    if direct <= 0.5 {
        return (direct.clamp(0.0, 1.0), s, c);
    }
    let mean = s.atan2(c);
    let n = angles_deg.len() as f64;
    let spread: f64 = angles_deg
        .iter()
        .map(|a| {
            let half = 0.5 * (a.to_radians() - mean);
            half.sin().powi(2)
        })
        .sum();
    ((1.0 - 2.0 * spread / n).clamp(0.0, 1.0), s, c)
}

/// Mean resultant length R of a non-empty list of angles, in `[0, 1]`.
pub fn mean_resultant_length(angles_deg: &[f64]) -> Result<f64> {
    check_angles(angles_deg)?;
    Ok(resultant(angles_deg).0)
}

/// Circular mean in degrees, `[0, 360)`.
///
/// Fails with [`Error::UndefinedMean`] when R is below [`MEAN_TOLERANCE`]:
/// uniformly spread annotations have no meaningful direction.
pub fn circular_mean(angles_deg: &[f64]) -> Result<f64> {
    check_angles(angles_deg)?;
    let (r, s, c) = resultant(angles_deg);
    if r < MEAN_TOLERANCE {
        return Err(Error::UndefinedMean {
            resultant_length: r,
        });
    }
    normalize_deg(s.atan2(c).to_degrees())
}

/// Circular standard deviation `sqrt(-2 ln R)`, reported in degrees.
///
/// R = 0 yields [`Error::InfiniteDispersion`]; callers that want a sentinel
/// can use [`circular_std_or_inf`].
pub fn circular_std(angles_deg: &[f64]) -> Result<f64> {
    check_angles(angles_deg)?;
    let r = resultant(angles_deg).0;
    std_from_resultant(r)
}

/// Like [`circular_std`], but reports infinite dispersion as
/// `(f64::INFINITY, true)` instead of an error.
pub fn circular_std_or_inf(angles_deg: &[f64]) -> Result<(f64, bool)> {
    match circular_std(angles_deg) {
        Ok(v) => Ok((v, false)),
        Err(Error::InfiniteDispersion) => Ok((f64::INFINITY, true)),
        Err(e) => Err(e),
    }
}

fn std_from_resultant(r: f64) -> Result<f64> {
    if r < MEAN_TOLERANCE {
        return Err(Error::InfiniteDispersion);
    }
    if r >= 1.0 {
        return Ok(0.0);
    }
    Ok((-2.0 * r.ln()).sqrt().to_degrees())
}

/// All of the above in one pass.
pub fn summarize(angles_deg: &[f64]) -> Result<AngleSetSummary> {
    check_angles(angles_deg)?;
    let (r, s, c) = resultant(angles_deg);
    if r < MEAN_TOLERANCE {
        return Err(Error::UndefinedMean {
            resultant_length: r,
        });
    }
    Ok(AngleSetSummary {
        n: angles_deg.len(),
        mean_deg: normalize_deg(s.atan2(c).to_degrees())?,
        resultant_length: r,
        circ_std_deg: std_from_resultant(r)?,
    })
}

/// Shortest arc between two angles, in `[0, 180]`.
pub fn angular_error(truth_deg: f64, pred_deg: f64) -> Result<f64> {
    let d = (normalize_deg(truth_deg)? - normalize_deg(pred_deg)?).abs();
    Ok(d.min(360.0 - d))
}

/// Unit-circle embedding `(sin θ, cos θ)` of a hue.
pub fn hue_to_components(hue_deg: f64) -> Result<(f64, f64)> {
    if !hue_deg.is_finite() {
        return Err(Error::domain(format!("hue {hue_deg} is not finite")));
    }
    Ok(hue_deg.to_radians().sin_cos())
}

/// Inverse of [`hue_to_components`] via `atan2`. Scale-invariant in the
/// input vector; a near-zero vector has no direction and is rejected.
pub fn components_to_hue(sin: f64, cos: f64) -> Result<f64> {
    if !sin.is_finite() || !cos.is_finite() {
        return Err(Error::domain(format!("non-finite components ({sin}, {cos})")));
    }
    if sin.hypot(cos) < COMPONENT_TOLERANCE {
        return Err(Error::UndefinedAngle { sin, cos });
    }
    normalize_deg(sin.atan2(cos).to_degrees())
}
