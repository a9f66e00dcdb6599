//! Hand-tuned edge costs along column profiles.
//!
//! Profiles run from the inner end of a column (k = 0) to the outer end.
//! Bone sees a dark to bright transition going outward, cartilage a bright
//! to dark one. Second-derivative weighting keeps small dips inside the
//! cartilage plateau from looking like its outer edge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::columns::ColumnSet;
use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    DarkToBright,
    BrightToDark,
}

impl Polarity {
    fn sign(self) -> f64 {
        match self {
            Polarity::DarkToBright => 1.0,
            Polarity::BrightToDark => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientCostParams {
    /// Central difference half-width in nodes.
    pub half_width: usize,
    pub w1: f64,
    pub w2: f64,
    pub bone_polarity: Polarity,
    pub cartilage_polarity: Polarity,
}

impl Default for GradientCostParams {
    fn default() -> Self {
        GradientCostParams {
            half_width: 1,
            w1: 0.7,
            w2: 0.3,
            bone_polarity: Polarity::DarkToBright,
            cartilage_polarity: Polarity::BrightToDark,
        }
    }
}

impl GradientCostParams {
    pub fn validate(&self) -> Result<()> {
        if self.half_width < 1 {
            return Err(Error::InvalidInput("derivative half-width must be >= 1".into()));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) || !(self.w1 + self.w2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cartilage weights must be >= 0 with positive sum, got {} and {}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

/// Which surface of an object a cost is meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    Bone,
    Cartilage,
}

impl SurfaceKind {
    pub fn from_index(s: usize) -> SurfaceKind {
        if s == 0 {
            SurfaceKind::Bone
        } else {
            SurfaceKind::Cartilage
        }
    }
}

fn at(p: &[f64], k: isize) -> f64 {
    p[k.clamp(0, p.len() as isize - 1) as usize]
}

/// First derivative by central differences, one-sided samples clamped.
pub fn first_derivative(p: &[f64], h: usize) -> Vec<f64> {
    let h = h as isize;
    (0..p.len() as isize).map(|k| (at(p, k + h) - at(p, k - h)) / (2 * h) as f64).collect()
}

pub fn second_derivative(p: &[f64], h: usize) -> Vec<f64> {
    let hh = h as isize;
    let d = (h * h) as f64;
    (0..p.len() as isize)
        .map(|k| (at(p, k + hh) - 2.0 * p[k as usize] + at(p, k - hh)) / d)
        .collect()
}

/// Edge strength for a bone surface (larger is more edge-like).
pub fn bone_response(profile: &[f64], params: &GradientCostParams) -> Vec<f64> {
    let s = params.bone_polarity.sign();
    first_derivative(profile, params.half_width).iter().map(|d| (s * d).max(0.0)).collect()
}

pub fn cartilage_response(profile: &[f64], params: &GradientCostParams) -> Vec<f64> {
    let s = params.cartilage_polarity.sign();
    let d1 = first_derivative(profile, params.half_width);
    let d2 = second_derivative(profile, params.half_width);
    d1.iter()
        .zip(&d2)
        .map(|(a, b)| params.w1 * (s * a).max(0.0) + params.w2 * (s * b).max(0.0))
        .collect()
}

/// `C - r` with boundary nodes pinned to `C`.
pub fn costs_from_response(r: &[f64], c: f64) -> Vec<f64> {
    let n = r.len();
    r.iter()
        .enumerate()
        .map(|(k, &v)| if k == 0 || k + 1 == n { c } else { (c - v).max(0.0) })
        .collect()
}

/// Single-profile bone cost with `C` taken from the profile itself.
pub fn bone_cost(profile: &[f64], params: &GradientCostParams) -> Vec<f64> {
    let r = bone_response(profile, params);
    let c = r.iter().cloned().fold(0.0, f64::max);
    costs_from_response(&r, c)
}

pub fn cartilage_cost(profile: &[f64], params: &GradientCostParams) -> Vec<f64> {
    let r = cartilage_response(profile, params);
    let c = r.iter().cloned().fold(0.0, f64::max);
    costs_from_response(&r, c)
}

/// Intensities at the nodes of column `c`.
pub fn column_profile(vol: &Volume3D, cs: &ColumnSet, c: usize) -> Vec<f64> {
    (0..cs.n_nodes).map(|k| vol.sample(&cs.node(c, k))).collect()
}

/// Costs for every column of a surface, normalised to `[0, 1]` by the largest
/// response in the set so that edge strength stays comparable across columns.
pub fn gradient_costs(
    vol: &Volume3D,
    cs: &ColumnSet,
    kind: SurfaceKind,
    params: &GradientCostParams,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    let min_k = match kind {
        SurfaceKind::Bone => 3,
        SurfaceKind::Cartilage => 5,
    };
    if cs.n_nodes < min_k {
        return Err(Error::InvalidInput(format!("need at least {min_k} nodes per column")));
    }
    let resp: Vec<Vec<f64>> = (0..cs.n_columns())
        .into_par_iter()
        .map(|c| {
            let p = column_profile(vol, cs, c);
            match kind {
                SurfaceKind::Bone => bone_response(&p, params),
                SurfaceKind::Cartilage => cartilage_response(&p, params),
            }
        })
        .collect();
    let rmax = resp.iter().flatten().cloned().fold(0.0, f64::max);
    let scale = if rmax > 0.0 { 1.0 / rmax } else { 1.0 };
    Ok(resp
        .iter()
        .map(|r| {
            let r: Vec<f64> = r.iter().map(|v| v * scale).collect();
            costs_from_response(&r, 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmin(c: &[f64]) -> usize {
        let mut b = 0;
        for (k, v) in c.iter().enumerate() {
            if *v < c[b] {
                b = k;
            }
        }
        b
    }

    #[test]
    fn step_profile_bone() {
        let m = 9;
        let p: Vec<f64> = (0..20).map(|k| if k < m { 40.0 } else { 180.0 }).collect();
        let c = bone_cost(&p, &GradientCostParams::default());
        let a = argmin(&c);
        assert!(a + 1 >= m && a <= m + 1, "argmin {a}");
        assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn constant_profile_is_flat() {
        let p = vec![100.0; 12];
        let c = bone_cost(&p, &GradientCostParams::default());
        assert!(c.iter().all(|&v| v == c[0]));
        let c = cartilage_cost(&p, &GradientCostParams::default());
        assert!(c.iter().all(|&v| v == c[0]));
    }

    #[test]
    fn plateau_exit_beats_inhomogeneity() {
        let m = 14;
        let mut p: Vec<f64> = (0..24).map(|k| if k < m { 180.0 } else { 100.0 }).collect();
        // a 30-unit dip inside the plateau
        p[6] = 150.0;
        let c = cartilage_cost(&p, &GradientCostParams::default());
        let a = argmin(&c);
        assert!(a + 1 >= m && a <= m + 1, "argmin {a}");
    }

    #[test]
    fn pure_first_derivative_limit() {
        let params = GradientCostParams { w1: 1.0, w2: 0.0, ..Default::default() };
        let p: Vec<f64> = (0..15).map(|k| ((k as f64) * 0.7).sin() * 50.0).collect();
        let r = cartilage_response(&p, &params);
        let d = first_derivative(&p, 1);
        for (a, b) in r.iter().zip(&d) {
            assert_eq!(*a, (-b).max(0.0));
        }
    }

    #[test]
    fn bad_params_rejected() {
        assert!(GradientCostParams { half_width: 0, ..Default::default() }.validate().is_err());
        assert!(GradientCostParams { w1: 0.0, w2: 0.0, ..Default::default() }.validate().is_err());
        assert!(GradientCostParams { w1: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn argmin_shift_and_scale() {
        let base: Vec<f64> = (0..30).map(|k| if k < 12 { 40.0 } else { 180.0 }).collect();
        let shifted: Vec<f64> = (0..30).map(|k| if k < 13 { 40.0 } else { 180.0 }).collect();
        let params = GradientCostParams::default();
        let a = argmin(&bone_cost(&base, &params));
        assert_eq!(argmin(&bone_cost(&shifted, &params)), a + 1);
        let scaled: Vec<f64> = base.iter().map(|v| v * 3.5).collect();
        assert_eq!(argmin(&bone_cost(&scaled, &params)), a);
    }
}
