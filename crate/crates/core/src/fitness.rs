//! Scores a vector field for how strongly it reads as illusory motion.
//!
//! A field scores well when it has many vectors of moderate size whose
//! neighbors include both vectors pointing the same way and vectors pointing
//! the opposite way. The four contributions are summed with configurable
//! weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::VectorField;

#[derive(Debug, Error)]
#[error("invalid fitness parameters: {0}")]
pub struct FitnessParamsError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessParams {
    /// Vectors longer than this (px) are treated as tracking instabilities.
    pub magnitude_cap: f64,
    /// Vectors shorter than this (px) are treated as no motion.
    pub min_magnitude: f64,
    pub neighborhood_radius: f64,
    /// Maximum angle (degrees) between two directions counted as aligned.
    pub align_angle: f64,
    /// Maximum deviation (degrees) from exact opposition counted as opposed.
    pub oppose_angle: f64,
    pub weight_count: f64,
    pub weight_magnitude: f64,
    pub weight_align: f64,
    pub weight_oppose: f64,
}

impl Default for FitnessParams {
    fn default() -> Self {
        Self {
            magnitude_cap: 2.0,
            min_magnitude: 0.05,
            neighborhood_radius: 20.0,
            align_angle: 30.0,
            oppose_angle: 30.0,
            weight_count: 1.0,
            weight_magnitude: 1.0,
            weight_align: 1.0,
            weight_oppose: 1.0,
        }
    }
}

impl FitnessParams {
    pub fn validate(&self) -> Result<(), FitnessParamsError> {
        let err = |m: &str| Err(FitnessParamsError(m.to_string()));
        if !(self.min_magnitude >= 0.0 && self.magnitude_cap > self.min_magnitude) {
            return err("need magnitude_cap > min_magnitude >= 0");
        }
        if !(self.neighborhood_radius > 0.0) {
            return err("neighborhood_radius must be positive");
        }
        for a in [self.align_angle, self.oppose_angle] {
            if !(a > 0.0 && a < 90.0) {
                return err("angles must lie strictly between 0 and 90 degrees");
            }
        }
        Ok(())
    }
}

/// Weighted total plus the per-condition breakdown.
///
/// JSON form: `{"total":..,"n_valid":..,"magnitude":..,"align":..,"oppose":..}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitnessScore {
    pub total: f64,
    pub n_valid: usize,
    #[serde(rename = "magnitude")]
    pub magnitude_term: f64,
    #[serde(rename = "align")]
    pub align_term: f64,
    #[serde(rename = "oppose")]
    pub oppose_term: f64,
}

impl FitnessScore {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// Angle between two direction vectors, in degrees.
#[inline]
fn angle_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dot = a.0 * b.0 + a.1 * b.1;
    let norm = a.0.hypot(a.1) * b.0.hypot(b.1);
    (dot / norm).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn score(field: &VectorField, p: &FitnessParams) -> FitnessScore {
    let valid: Vec<(f64, f64, f64, f64)> = field
        .tracked()
        .map(|v| (v.x as f64, v.y as f64, v.dx as f64, v.dy as f64))
        .filter(|&(_, _, dx, dy)| {
            let m = dx.hypot(dy);
            m >= p.min_magnitude && m <= p.magnitude_cap
        })
        .collect();

    let magnitude_term: f64 = valid.iter().map(|&(_, _, dx, dy)| dx.hypot(dy)).sum();
    let r2 = p.neighborhood_radius * p.neighborhood_radius;
    let mut align_term = 0usize;
    let mut oppose_term = 0usize;
    for (i, &(x, y, dx, dy)) in valid.iter().enumerate() {
        let mut aligned = false;
        let mut opposed = false;
        for (j, &(ox, oy, odx, ody)) in valid.iter().enumerate() {
            if i == j || (ox - x).powi(2) + (oy - y).powi(2) > r2 {
                continue;
            }
            let angle = angle_between((dx, dy), (odx, ody));
            aligned |= angle <= p.align_angle;
            opposed |= 180.0 - angle <= p.oppose_angle;
            if aligned && opposed {
                break;
            }
        }
        align_term += usize::from(aligned);
        oppose_term += usize::from(opposed);
    }

    let n_valid = valid.len();
    let (align_term, oppose_term) = (align_term as f64, oppose_term as f64);
    FitnessScore {
        total: p.weight_count * n_valid as f64
            + p.weight_magnitude * magnitude_term
            + p.weight_align * align_term
            + p.weight_oppose * oppose_term,
        n_valid,
        magnitude_term,
        align_term,
        oppose_term,
    }
}

/// Indices ordered best first: total descending, then `n_valid`
/// descending, then input position.
pub fn rank_scores(scores: &[FitnessScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total
            .total_cmp(&scores[a].total)
            .then(scores[b].n_valid.cmp(&scores[a].n_valid))
            .then(a.cmp(&b))
    });
    order
}

pub fn rank(fields: &[VectorField], p: &FitnessParams) -> Vec<usize> {
    let scores: Vec<FitnessScore> = fields.iter().map(|f| score(f, p)).collect();
    rank_scores(&scores)
}
