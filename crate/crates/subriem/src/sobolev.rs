//! Lebesgue-measure baselines: the classical Sobolev inequality and the
//! L1 Poincare inequality on metric balls.
//!
//! These checks run against the unweighted volume (which coincides with
//! Lebesgue measure in the group coordinates) and use deterministic
//! quadrature instead of sampling:
//!
//! * `(int |f|^{1+eps} dx)^{1/(1+eps)} <= a int |grad f| dx + b int |f| dx`
//!   for effectively compactly supported corpus members, with
//!   `eps = 1/(Q-1)` at homogeneous dimension `Q` (an override is
//!   available; a flat fallback of `0.1` is used when `Q = 1` makes the
//!   critical exponent meaningless),
//! * `int_B |f - avg_B f| dx <= (1/m_r) int_B |grad f| dx` over the metric
//!   ball `B` of a chosen radius.
//!
//! At the critical exponent the pure-gradient constant is invariant under
//! the group dilations; the tests exercise that directly.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::corpus::FunctionCorpus;
use crate::distance::cc_distance;
use crate::error::{Error, Result};
use crate::htype::{GroupPoint, HTypeStructure, ScalarField};
use crate::quad::integrate_box;
use crate::report::{config_digest, InequalityKind, InequalityReport};
use crate::stats::Estimate;

/// Configuration for the Lebesgue baselines.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolevConfig {
    /// Exponent `eps`; `None` selects the critical `1/(Q-1)`.
    pub epsilon_override: Option<f64>,
    /// Half-width of the integration box `[-R, R]^dim`.
    pub box_radius: f64,
    /// Metric-ball radius for the Poincare part.
    pub ball_radius: f64,
    /// Absolute quadrature tolerance per integral.
    pub tol: f64,
    /// Midpoint cells per axis for ball integrals.
    pub ball_grid: usize,
}

impl Default for SobolevConfig {
    fn default() -> Self {
        Self {
            epsilon_override: None,
            box_radius: 4.0,
            ball_radius: 1.5,
            tol: 1e-6,
            ball_grid: 48,
        }
    }
}

/// The critical Sobolev exponent `1/(Q-1)`, with a flat `0.1` fallback
/// when the homogeneous dimension is 1 (a single Euclidean coordinate),
/// where the critical exponent degenerates.
pub fn critical_epsilon(structure: &HTypeStructure) -> f64 {
    let q = structure.homogeneous_dimension();
    if q > 1 {
        1.0 / (q as f64 - 1.0)
    } else {
        0.1
    }
}

/// Largest `|f|` over a coarse lattice on the faces of `[-R, R]^dim`;
/// used to decide whether a member is effectively supported in the box.
fn boundary_sup(structure: &HTypeStructure, f: &ScalarField, r: f64) -> f64 {
    let dim = structure.dim();
    let per_axis = 5usize;
    let mut sup = 0.0f64;
    let mut probe = vec![0.0f64; dim];
    for face_axis in 0..dim {
        for side in [-1.0, 1.0] {
            // Sweep a lattice over the remaining axes.
            let count = per_axis.pow((dim - 1) as u32);
            for idx in 0..count {
                let mut rem = idx;
                for (a, slot) in probe.iter_mut().enumerate() {
                    if a == face_axis {
                        *slot = side * r;
                    } else {
                        let k = rem % per_axis;
                        rem /= per_axis;
                        *slot = r * (2.0 * k as f64 / (per_axis - 1) as f64 - 1.0);
                    }
                }
                if let Ok(g) = GroupPoint::from_flat(structure, &probe) {
                    sup = sup.max(f.eval(&g).abs());
                }
            }
        }
    }
    sup
}

/// Verifies the two Lebesgue baselines over the corpus; returns the
/// Sobolev report and the ball-Poincare report.
pub fn verify_sobolev_baseline(
    structure: &HTypeStructure,
    corpus: &FunctionCorpus,
    cfg: &SobolevConfig,
) -> Result<(InequalityReport, InequalityReport)> {
    corpus.require_minimum()?;
    let dim = structure.dim();
    if dim > 3 {
        return Err(Error::Unsupported(format!(
            "quadrature baselines are limited to 3 coordinates, structure has {dim}"
        )));
    }
    if !(cfg.box_radius > 0.0 && cfg.ball_radius > 0.0 && cfg.tol > 0.0) {
        return Err(Error::Domain("box radius, ball radius and tolerance must be positive".into()));
    }
    if cfg.ball_grid < 8 {
        return Err(Error::Domain("ball grid needs at least 8 cells per axis".into()));
    }
    let eps = match cfg.epsilon_override {
        Some(e) if e > 0.0 => e,
        Some(e) => {
            return Err(Error::Domain(format!("exponent override must be positive, got {e}")))
        }
        None => critical_epsilon(structure),
    };
    let digest = config_digest(&("sobolev", structure.m(), structure.n(), eps, cfg));
    let mut sob = InequalityReport::new(InequalityKind::SobolevBaseline, digest.clone(), corpus.id.clone());
    sob.fitted_constants.insert("epsilon".into(), eps);

    let evals = AtomicU64::new(0);
    let lo = vec![-cfg.box_radius; dim];
    let hi = vec![cfg.box_radius; dim];
    let integral = |f: &ScalarField, power: f64, grad: bool| -> Result<f64> {
        let integrand = |flat: &[f64]| -> f64 {
            evals.fetch_add(1, Ordering::Relaxed);
            let g = match GroupPoint::from_flat(structure, flat) {
                Ok(g) => g,
                Err(_) => return f64::NAN,
            };
            if grad {
                structure.gradient_norm(f, &g).unwrap_or(f64::NAN)
            } else {
                f.eval(&g).abs().powf(power)
            }
        };
        integrate_box(&integrand, &lo, &hi, cfg.tol)
    };

    let mut cons = Vec::new();
    let mut rows = Vec::new();
    let mut crit_ratio: f64 = 0.0;
    for e in &corpus.entries {
        let bsup = boundary_sup(structure, &e.field, cfg.box_radius);
        if !(bsup < 1e-5) {
            sob.notes.push(format!(
                "{}: boundary magnitude {bsup:.2e} too large; not effectively supported in the box, excluded",
                e.id
            ));
            continue;
        }
        let ip = integral(&e.field, 1.0 + eps, false)?;
        let ig = integral(&e.field, 1.0, true)?;
        let im = integral(&e.field, 1.0, false)?;
        let lhs = ip.powf(1.0 / (1.0 + eps));
        cons.push((
            Estimate::new(ig, cfg.tol),
            Estimate::new(im, cfg.tol),
            Estimate::new(lhs, cfg.tol),
        ));
        if ig > cfg.tol.max(1e-12) * 10.0 {
            crit_ratio = crit_ratio.max(lhs / ig);
        }
        rows.push((e.id.clone(), lhs, ig, im));
    }
    if cons.is_empty() {
        return Err(Error::Inconclusive(
            "no corpus member is effectively supported in the integration box".into(),
        ));
    }
    let ((a, b), (a_se, b_se)) = crate::functionals::fit_two_constants_se(&cons)?;
    sob.fitted_constants.insert("a".into(), a);
    sob.fitted_constants.insert("a_se".into(), a_se);
    sob.fitted_constants.insert("b".into(), b);
    sob.fitted_constants.insert("b_se".into(), b_se);
    sob.fitted_constants.insert("a_critical".into(), crit_ratio);
    for (id, lhs, ig, im) in rows {
        sob.push_check(
            id,
            Estimate::new(lhs, cfg.tol),
            Estimate::new(a * ig + b * im, cfg.tol * (a + b)),
        );
    }
    sob.n_eff = evals.load(Ordering::Relaxed) as f64;
    sob.notes.push(format!(
        "integration box [-{0}, {0}]^{dim}, absolute tolerance {1:.1e}",
        cfg.box_radius, cfg.tol
    ));

    // ---- Poincare on the metric ball -------------------------------------
    let mut poi = InequalityReport::new(InequalityKind::PoincareBall, digest, corpus.id.clone());
    poi.fitted_constants.insert("radius".into(), cfg.ball_radius);
    let fine = BallGrid::build(structure, cfg.ball_radius, cfg.ball_grid)?;
    let coarse = BallGrid::build(structure, cfg.ball_radius, (2 * cfg.ball_grid) / 3)?;
    poi.n_eff = fine.len() as f64;
    let mut best: Option<(String, Estimate)> = None;
    let mut prows = Vec::new();
    for e in &corpus.entries {
        if e.has_tag("const") {
            poi.notes
                .push(format!("{}: constant member carries no information here, excluded", e.id));
            continue;
        }
        let (num_f, den_f) = fine.centered_moments(structure, &e.field)?;
        let (num_c, den_c) = coarse.centered_moments(structure, &e.field)?;
        let num = Estimate::new(num_f, (num_f - num_c).abs());
        let den = Estimate::new(den_f, (den_f - den_c).abs());
        if !(den.value > 3.0 * den.se) || den.value <= 0.0 {
            poi.notes.push(format!(
                "{}: gradient mass in the ball not resolved away from zero, excluded",
                e.id
            ));
            continue;
        }
        let ratio = num.value / den.value;
        let ratio_se = ratio * ((num.se / num.value.abs().max(1e-300)).hypot(den.se / den.value));
        if best.as_ref().map_or(true, |(_, b)| ratio > b.value) {
            best = Some((e.id.clone(), Estimate::new(ratio, ratio_se.abs())));
        }
        prows.push((e.id.clone(), num, den));
    }
    let (argmax, inv_m) = best
        .ok_or_else(|| Error::Inconclusive("no usable corpus member for the ball bound".into()))?;
    poi.fitted_constants.insert("inv_m_r".into(), inv_m.value);
    poi.fitted_constants.insert("inv_m_r_se".into(), inv_m.se);
    poi.fitted_constants.insert("m_r".into(), 1.0 / inv_m.value);
    poi.notes.push(format!("ratio attained by {argmax}"));
    for (id, num, den) in prows {
        poi.push_check(
            id,
            num,
            Estimate::new(inv_m.value * den.value, inv_m.value * den.se),
        );
    }
    poi.notes.push(format!(
        "midpoint grids with {} and {} cells per axis",
        cfg.ball_grid,
        (2 * cfg.ball_grid) / 3
    ));
    Ok((sob, poi))
}

/// Midpoint quadrature over a metric ball: the cells of a coordinate box
/// around the ball whose centers lie inside it.
pub(crate) struct BallGrid {
    pub centers: Vec<GroupPoint>,
    pub cell_volume: f64,
}

impl BallGrid {
    /// The coordinate box `|x_i| <= r`, `|z_k| <= r^2/(4 pi)` contains the
    /// metric ball of radius `r`: straight horizontal lines realize
    /// `|x| <= d`, and the distance to a purely central point is
    /// `sqrt(4 pi |z|)`. Cells are kept when their center is inside the
    /// ball; a two-sided gauge bracket short-circuits most distance solves.
    pub fn build(structure: &HTypeStructure, r: f64, cells: usize) -> Result<BallGrid> {
        if !(r > 0.0) || cells < 4 {
            return Err(Error::Domain("ball grid needs r > 0 and >= 4 cells".into()));
        }
        let m = structure.m();
        let n = structure.n();
        let dim = m + n;
        let z_half = r * r / (4.0 * std::f64::consts::PI);
        let mut half = vec![r; m];
        half.extend(std::iter::repeat(z_half).take(n));
        let step: Vec<f64> = half.iter().map(|h| 2.0 * h / cells as f64).collect();
        let cell_volume: f64 = step.iter().product();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let total = cells.pow(dim as u32);
        let centers: Vec<GroupPoint> = (0..total)
            .into_par_iter()
            .filter_map(|idx| {
                let mut rem = idx;
                let mut flat = vec![0.0f64; dim];
                for a in 0..dim {
                    let k = rem % cells;
                    rem /= cells;
                    flat[a] = -half[a] + (k as f64 + 0.5) * step[a];
                }
                let g = GroupPoint::from_flat(structure, &flat).ok()?;
                let gauge = structure.kaplan_norm(&g).ok()?;
                if gauge >= r {
                    return None; // the gauge lower-bounds the distance
                }
                if sqrt_pi * gauge < r {
                    return Some(g); // the gauge upper bound is already inside
                }
                match cc_distance(structure, &g) {
                    Ok(d) if d < r => Some(g),
                    _ => None,
                }
            })
            .collect();
        if centers.is_empty() {
            return Err(Error::Domain("ball grid resolved to zero cells".into()));
        }
        Ok(BallGrid {
            centers,
            cell_volume,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    /// `(int_B |f - avg_B f|, int_B |grad f|)` by the midpoint rule.
    pub fn centered_moments(
        &self,
        structure: &HTypeStructure,
        f: &ScalarField,
    ) -> Result<(f64, f64)> {
        let vals: Vec<f64> = self.centers.par_iter().map(|g| f.eval(g)).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ball integrand".into()));
        }
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        let num: f64 = vals.iter().map(|v| (v - avg).abs()).sum::<f64>() * self.cell_volume;
        let grads: Result<Vec<f64>> = self
            .centers
            .par_iter()
            .map(|g| structure.gradient_norm(f, g))
            .collect();
        let den: f64 = grads?.iter().sum::<f64>() * self.cell_volume;
        Ok((num, den))
    }
}
