//! Entropy functionals and the measure-level inequality battery.
//!
//! The battery estimates both sides of a family of coercive inequalities
//! on a sampled measure and fits the smallest constants that make each
//! inequality hold over the whole function corpus:
//!
//! * gradient-weighted moment bounds
//!   `mu(|f| (|U|^beta + |grad U|)) <= A mu|grad f| + B mu|f|`,
//! * the Cheeger bound `mu|f - mu f| <= c0 mu|grad f|`,
//! * the Phi-entropy bound `Ent^Phi(|f|) <= c mu|grad f|` with
//!   `Phi(x) = x (log(1+x))^beta`,
//! * the defective q-log-Sobolev bound,
//! * the profile-based pointwise functional inequality for `[0,1]`-valued
//!   functions,
//! * the tight entropy bound at unit mass,
//! * exponential integrability of the truncated squared distance.
//!
//! Fitted constants are feasible at the point estimates by construction;
//! the informative outputs are their size, their stability across seeds,
//! and the per-function margins. A report never hides a violation: any
//! left side exceeding a *fixed* right side by more than three combined
//! standard errors is listed.

use crate::corpus::{standard_corpus, CorpusEntry, FunctionCorpus};
use crate::error::{Error, Result};
use crate::htype::ScalarField;
use crate::measure::{MeasureSpec, SampleSet};
use crate::profile::ProfileTable;
use crate::report::{config_digest, InequalityKind, InequalityReport};
use crate::stats::{Estimate, BATCH_COUNT};

// ---------------------------------------------------------------------------
// The entropy functional
// ---------------------------------------------------------------------------

/// The convex weight `Phi(x) = x (log(1+x))^beta` on `x >= 0`, with
/// `beta` in `(0, 1]` and conjugate exponent `q = 1/beta`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhiSpec {
    beta: f64,
}

impl PhiSpec {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Domain(format!(
                "entropy exponent beta must lie in (0, 1], got {beta}"
            )));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Conjugate exponent `q = 1/beta`.
    pub fn q(&self) -> f64 {
        1.0 / self.beta
    }

    /// `Phi(x) = x (log(1+x))^beta`; errors for negative arguments.
    pub fn phi(&self, x: f64) -> Result<f64> {
        phi_eval(self, x)
    }
}

/// Evaluates `Phi(x) = x (log(1+x))^beta`.
pub fn phi_eval(ps: &PhiSpec, x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!(
            "Phi is defined on nonnegative arguments, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(x * x.ln_1p().powf(ps.beta))
}

/// The supremum `theta(beta) = sup_{x>=0} beta x (log(1+x))^{beta-1} / (1+x)`,
/// equal to 1 at `beta = 1` and attained at an interior maximum for
/// `beta < 1` (the expression vanishes at both ends of the half-line).
pub fn theta_constant(beta: f64) -> Result<f64> {
    let ps = PhiSpec::new(beta)?;
    let beta = ps.beta();
    if beta == 1.0 {
        return Ok(1.0);
    }
    let maximand = |x: f64| beta * x * x.ln_1p().powf(beta - 1.0) / (1.0 + x);
    // Coarse log-spaced scan, then golden-section refinement in log space.
    let (lo, hi) = (-9.0f64, 9.0f64);
    let npts = 4001usize;
    let mut best_i = 0usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..npts {
        let e = lo + (hi - lo) * i as f64 / (npts - 1) as f64;
        let v = maximand(10f64.powf(e));
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let step = (hi - lo) / (npts - 1) as f64;
    let mut a = lo + step * (best_i.saturating_sub(1)) as f64;
    let mut b = (lo + step * (best_i + 1) as f64).min(hi);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let g = |e: f64| maximand(10f64.powf(e));
    let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
    let (mut fc, mut fd) = (g(c), g(d));
    for _ in 0..200 {
        if b - a < 1e-14 {
            break;
        }
        if fc < fd {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = g(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = g(c);
        }
    }
    Ok(g(0.5 * (a + b)).max(best))
}

// ---------------------------------------------------------------------------
// Batch-means error propagation for nonlinear statistics
// ---------------------------------------------------------------------------

/// Estimate of `f(mu_1, ..., mu_k)` where each `mu_j` is a weighted mean
/// of a per-sample column. The value is the full-sample plug-in; the SE
/// is the spread of the plug-in over [`BATCH_COUNT`] contiguous batches
/// (a leave-one-out jackknife for short series).
fn batch_plugin<F: Fn(&[f64]) -> f64>(
    cols: &[&[f64]],
    weights: Option<&[f64]>,
    stat: F,
) -> Result<Estimate> {
    let k = cols.len();
    let n = cols.first().map_or(0, |c| c.len());
    if n == 0 || cols.iter().any(|c| c.len() != n) {
        return Err(Error::Domain(
            "batch statistic needs equal-length nonempty columns".into(),
        ));
    }
    let wmeans = |range: std::ops::Range<usize>| -> Vec<f64> {
        let mut num = vec![0.0; k];
        let mut den = 0.0;
        for i in range {
            let w = weights.map_or(1.0, |w| w[i]);
            den += w;
            for (acc, col) in num.iter_mut().zip(cols) {
                *acc += w * col[i];
            }
        }
        num.iter().map(|s| s / den).collect()
    };
    let value = stat(&wmeans(0..n));
    if !value.is_finite() {
        return Err(Error::NonFinite("batch statistic".into()));
    }
    let replicate_se = |reps: &[f64], scale: f64| -> f64 {
        let m = reps.len() as f64;
        let mean = reps.iter().sum::<f64>() / m;
        let var = reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        (var * scale).sqrt()
    };
    if n >= 2 * BATCH_COUNT {
        let per = n / BATCH_COUNT;
        let reps: Vec<f64> = (0..BATCH_COUNT)
            .map(|b| {
                let lo = b * per;
                let hi = if b + 1 == BATCH_COUNT { n } else { (b + 1) * per };
                stat(&wmeans(lo..hi))
            })
            .filter(|r| r.is_finite())
            .collect();
        if reps.len() >= 2 {
            return Ok(Estimate::new(value, replicate_se(&reps, 1.0 / reps.len() as f64)));
        }
    }
    // Jackknife fallback for short series.
    let mut tot = vec![0.0; k];
    let mut wtot = 0.0;
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        wtot += w;
        for (acc, col) in tot.iter_mut().zip(cols) {
            *acc += w * col[i];
        }
    }
    let reps: Vec<f64> = (0..n)
        .map(|i| {
            let w = weights.map_or(1.0, |w| w[i]);
            let means: Vec<f64> = tot
                .iter()
                .zip(cols)
                .map(|(s, col)| (s - w * col[i]) / (wtot - w))
                .collect();
            stat(&means)
        })
        .filter(|r| r.is_finite())
        .collect();
    if reps.len() < 2 {
        return Ok(Estimate::new(value, f64::NAN));
    }
    let m = reps.len() as f64;
    Ok(Estimate::new(value, replicate_se(&reps, (m - 1.0) / m)))
}

/// `Ent^Phi(|f|) = mu Phi(|f|) - Phi(mu|f|)` over a sample set.
pub fn entropy_phi(ps: &PhiSpec, set: &SampleSet, f: &ScalarField) -> Result<Estimate> {
    entropy_phi_from_values(ps, &set.eval(f), set.weights.as_deref())
}

/// [`entropy_phi`] on precomputed values (absolute values are taken
/// internally). A constant input yields exactly zero.
pub fn entropy_phi_from_values(
    ps: &PhiSpec,
    values: &[f64],
    weights: Option<&[f64]>,
) -> Result<Estimate> {
    if values.is_empty() {
        return Err(Error::Domain("entropy of an empty sample".into()));
    }
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    if abs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("entropy input values".into()));
    }
    if abs.windows(2).all(|w| w[0] == w[1]) {
        // Jensen's gap vanishes identically for constants; return it
        // exactly rather than through floating-point mean arithmetic.
        return Ok(Estimate::exact(0.0));
    }
    let phi_vals: Vec<f64> = abs
        .iter()
        .map(|v| phi_eval(ps, *v))
        .collect::<Result<_>>()?;
    let ps = *ps;
    batch_plugin(&[&phi_vals, &abs], weights, move |m| {
        m[0] - phi_eval(&ps, m[1].max(0.0)).unwrap_or(f64::NAN)
    })
}

// ---------------------------------------------------------------------------
// Two-constant linear fits
// ---------------------------------------------------------------------------

/// Minimizes `A + B` subject to `A g_i + B m_i >= l_i`, `A, B >= 0`, by
/// enumerating the vertices of the two-dimensional feasible region.
pub(crate) fn fit_two_constants(constraints: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    let active: Vec<&(f64, f64, f64)> = constraints.iter().filter(|(_, _, l)| *l > 0.0).collect();
    if active.is_empty() {
        return Ok((0.0, 0.0));
    }
    for (g, m, l) in &active {
        if *g <= 0.0 && *m <= 0.0 {
            return Err(Error::Infeasible(format!(
                "constraint with zero gradient and zero mass but positive left side {l}"
            )));
        }
    }
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    // Axis points: one constraint binding with the other constant at zero.
    for (g, m, l) in &active {
        if *g > 0.0 {
            candidates.push((l / g, 0.0));
        }
        if *m > 0.0 {
            candidates.push((0.0, l / m));
        }
    }
    // Pairwise intersections.
    for (i, (g1, m1, l1)) in active.iter().enumerate() {
        for (g2, m2, l2) in active.iter().skip(i + 1) {
            let det = g1 * m2 - g2 * m1;
            let scale = (g1.abs() + m1.abs()) * (g2.abs() + m2.abs());
            if det.abs() <= 1e-14 * scale.max(1e-300) {
                continue;
            }
            let a = (l1 * m2 - l2 * m1) / det;
            let b = (g1 * l2 - g2 * l1) / det;
            if a >= 0.0 && b >= 0.0 {
                candidates.push((a, b));
            }
        }
    }
    let feasible = |a: f64, b: f64| -> bool {
        active
            .iter()
            .all(|(g, m, l)| a * g + b * m >= l - 1e-9 * l.abs().max(1e-300))
    };
    let mut best: Option<(f64, f64)> = None;
    for (a, b) in candidates {
        if !a.is_finite() || !b.is_finite() || !feasible(a, b) {
            continue;
        }
        if best.map_or(true, |(ba, bb)| a + b < ba + bb) {
            best = Some((a, b));
        }
    }
    best.ok_or_else(|| Error::Infeasible("no feasible constant pair found".into()))
}

/// [`fit_two_constants`] together with a sensitivity-based standard error:
/// the fit is repeated with every left side moved up and down by one SE
/// and half the spread is reported per constant.
pub(crate) fn fit_two_constants_se(
    constraints: &[(Estimate, Estimate, Estimate)],
) -> Result<((f64, f64), (f64, f64))> {
    let point: Vec<(f64, f64, f64)> = constraints
        .iter()
        .map(|(g, m, l)| (g.value, m.value, l.value))
        .collect();
    let (a, b) = fit_two_constants(&point)?;
    let shift = |dir: f64| -> Result<(f64, f64)> {
        let moved: Vec<(f64, f64, f64)> = constraints
            .iter()
            .map(|(g, m, l)| (g.value, m.value, (l.value + dir * l.se).max(0.0)))
            .collect();
        fit_two_constants(&moved)
    };
    let (au, bu) = shift(1.0)?;
    let (ad, bd) = shift(-1.0)?;
    Ok(((a, b), ((au - ad).abs() / 2.0, (bu - bd).abs() / 2.0)))
}

// ---------------------------------------------------------------------------
// Shared per-entry evaluation
// ---------------------------------------------------------------------------

struct EntryMoments {
    id: String,
    values: Vec<f64>,
    abs_values: Vec<f64>,
    grads: Vec<f64>,
    mean_abs: Estimate,
    mean_grad: Estimate,
}

fn entry_moments(set: &SampleSet, e: &CorpusEntry) -> Result<EntryMoments> {
    let values = e.values(set);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("corpus member {} on samples", e.id)));
    }
    let grads = e.grad_values(set)?;
    if grads.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite(format!(
            "gradient of corpus member {} on samples",
            e.id
        )));
    }
    let abs_values: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let mean_abs = set.expectation_of(&abs_values);
    let mean_grad = set.expectation_of(&grads);
    Ok(EntryMoments {
        id: e.id.clone(),
        values,
        abs_values,
        grads,
        mean_abs,
        mean_grad,
    })
}

fn product(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Delta-method ratio `num/den`; `None` when the denominator is not
/// resolved away from zero (within three standard errors).
fn ratio_estimate(num: &Estimate, den: &Estimate) -> Option<Estimate> {
    if !(den.value > 3.0 * den.se) || den.value <= 0.0 {
        return None;
    }
    let r = num.value / den.value;
    let rel = (num.se / num.value.abs().max(1e-300)).hypot(den.se / den.value);
    Some(Estimate::new(r, r.abs() * rel))
}

fn insert_constant(rep: &mut InequalityReport, name: &str, value: f64, se: f64) {
    rep.fitted_constants.insert(name.to_string(), value);
    rep.fitted_constants.insert(format!("{name}_se"), se);
}

// ---------------------------------------------------------------------------
// Gradient-weighted moment bound
// ---------------------------------------------------------------------------

/// Verifies the gradient-weighted moment bounds
/// `mu(|f| (|U|^beta + |grad U|)) <= A mu|grad f| + B mu|f|` and
/// `mu(|f| d^{p-1}) <= A_dist mu|grad f| + B_dist mu|f|` over the corpus,
/// fitting the smallest feasible constants (minimal `A + B`).
pub fn verify_ubound(
    ps: &PhiSpec,
    spec: &MeasureSpec,
    set: &SampleSet,
    corpus: &FunctionCorpus,
) -> Result<InequalityReport> {
    corpus.require_minimum()?;
    check_same_shape(spec, set)?;
    let digest = config_digest(&("ubound", ps.beta(), spec.p(), spec.alpha(), set.meta.seed));
    let mut rep = InequalityReport::new(InequalityKind::Ubound, digest, corpus.id.clone());
    rep.n_eff = set.n_eff();

    // Per-sample weights |U|^beta + |grad U| and d^{p-1}.
    let p = spec.p();
    let (w_growth, w_dist): (Vec<f64>, Vec<f64>) = if !spec.has_perturbation() {
        let alpha = spec.alpha();
        let beta = ps.beta();
        let growth = set
            .dists
            .iter()
            .map(|d| (alpha * d.powf(p)).powf(beta) + alpha * p * d.powf(p - 1.0))
            .collect();
        let dist = set.dists.iter().map(|d| d.powf(p - 1.0)).collect();
        (growth, dist)
    } else {
        let mut growth = Vec::with_capacity(set.len());
        for (g, d) in set.points.iter().zip(&set.dists) {
            let (u, _) = spec.potential_parts(g)?;
            growth.push(u.abs().powf(ps.beta()) + spec.grad_potential_norm(g)?);
            let _ = d;
        }
        let dist = set.dists.iter().map(|d| d.powf(p - 1.0)).collect();
        (growth, dist)
    };

    let mut cons_growth = Vec::new();
    let mut cons_dist = Vec::new();
    let mut rows = Vec::new();
    for e in &corpus.entries {
        let em = entry_moments(set, e)?;
        let lhs_growth = set.expectation_of(&product(&em.abs_values, &w_growth));
        let lhs_dist = set.expectation_of(&product(&em.abs_values, &w_dist));
        cons_growth.push((em.mean_grad, em.mean_abs, lhs_growth));
        cons_dist.push((em.mean_grad, em.mean_abs, lhs_dist));
        rows.push((em, lhs_growth, lhs_dist));
    }
    let ((a, b), (a_se, b_se)) = fit_two_constants_se(&cons_growth)?;
    let ((ad, bd), (ad_se, bd_se)) = fit_two_constants_se(&cons_dist)?;
    insert_constant(&mut rep, "A", a, a_se);
    insert_constant(&mut rep, "B", b, b_se);
    insert_constant(&mut rep, "A_dist", ad, ad_se);
    insert_constant(&mut rep, "B_dist", bd, bd_se);
    for (em, lhs_growth, lhs_dist) in rows {
        let rhs = Estimate::new(
            a * em.mean_grad.value + b * em.mean_abs.value,
            a * em.mean_grad.se + b * em.mean_abs.se,
        );
        rep.push_check(em.id.clone(), lhs_growth, rhs);
        let rhs_d = Estimate::new(
            ad * em.mean_grad.value + bd * em.mean_abs.value,
            ad * em.mean_grad.se + bd * em.mean_abs.se,
        );
        rep.push_check(format!("{}#dist", em.id), lhs_dist, rhs_d);
    }
    rep.notes.push(format!(
        "left-hand weights: |U|^{} + |grad U| and d^{}",
        ps.beta(),
        p - 1.0
    ));
    Ok(rep)
}

fn check_same_shape(spec: &MeasureSpec, set: &SampleSet) -> Result<()> {
    if spec.structure().m() != set.structure.m() || spec.structure().n() != set.structure.n() {
        return Err(Error::DimensionMismatch(
            "measure specification and sample set use different group shapes".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Cheeger bound
// ---------------------------------------------------------------------------

/// Verifies `mu|f - mu f| <= c0 mu|grad f|`, fitting `c0` as the largest
/// observed ratio. Members whose gradient mass is not resolved away from
/// zero (constants, in particular) are excluded from the fit.
pub fn verify_cheeger(set: &SampleSet, corpus: &FunctionCorpus) -> Result<InequalityReport> {
    corpus.require_minimum()?;
    let digest = config_digest(&("cheeger", set.meta.seed, set.len()));
    let mut rep = InequalityReport::new(InequalityKind::Cheeger, digest, corpus.id.clone());
    rep.n_eff = set.n_eff();
    let mut rows = Vec::new();
    let mut best: Option<(String, Estimate)> = None;
    for e in &corpus.entries {
        let em = entry_moments(set, e)?;
        let mean = set.expectation_of(&em.values);
        let centered: Vec<f64> = em.values.iter().map(|v| (v - mean.value).abs()).collect();
        let mut num = set.expectation_of(&centered);
        // First-order correction for the plugged-in mean.
        let sign_mean = set
            .expectation_of(&em.values.iter().map(|v| (v - mean.value).signum()).collect::<Vec<_>>());
        num.se = num.se.hypot(sign_mean.value * mean.se);
        match ratio_estimate(&num, &em.mean_grad) {
            Some(r) => {
                if best.as_ref().map_or(true, |(_, b)| r.value > b.value) {
                    best = Some((em.id.clone(), r));
                }
                rows.push((em.id.clone(), num, em.mean_grad, false));
            }
            None => {
                rep.notes.push(format!(
                    "{}: gradient mass not resolved away from zero; excluded from the fit",
                    em.id
                ));
                rows.push((em.id.clone(), num, em.mean_grad, true));
            }
        }
    }
    let (argmax, c0) =
        best.ok_or_else(|| Error::Inconclusive("no corpus member with resolvable gradient".into()))?;
    insert_constant(&mut rep, "c0", c0.value, c0.se);
    rep.notes.push(format!("ratio attained by {argmax}"));
    for (id, num, den, excluded) in rows {
        let rhs = Estimate::new(c0.value * den.value, c0.value * den.se);
        if excluded {
            // Excluded members still get a consistency row; for a true
            // constant both sides vanish.
            rep.push_check(format!("{id}#excluded"), num, rhs);
        } else {
            rep.push_check(id, num, rhs);
        }
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Phi-entropy bound
// ---------------------------------------------------------------------------

/// Verifies `Ent^Phi(|f|) <= c mu|grad f|`, fitting `c` as the largest
/// observed ratio. Jensen's inequality forces every left side to be
/// nonnegative; estimates below `-3 SE` are recorded as warnings.
pub fn verify_l1phi_entropy(
    ps: &PhiSpec,
    set: &SampleSet,
    corpus: &FunctionCorpus,
) -> Result<InequalityReport> {
    corpus.require_minimum()?;
    let digest = config_digest(&("l1phi", ps.beta(), set.meta.seed, set.len()));
    let mut rep = InequalityReport::new(InequalityKind::L1Phi, digest, corpus.id.clone());
    rep.n_eff = set.n_eff();
    let mut rows = Vec::new();
    let mut best: Option<(String, Estimate)> = None;
    for e in &corpus.entries {
        let em = entry_moments(set, e)?;
        let ent = entropy_phi_from_values(ps, &em.abs_values, set.weights.as_deref())?;
        if ent.value < -3.0 * ent.se {
            rep.notes.push(format!(
                "{}: entropy estimate {} below the Jensen floor by more than 3 SE",
                em.id, ent.value
            ));
        }
        if let Some(r) = ratio_estimate(&ent, &em.mean_grad) {
            if best.as_ref().map_or(true, |(_, b)| r.value > b.value) {
                best = Some((em.id.clone(), r));
            }
        }
        rows.push((em.id.clone(), ent, em.mean_grad));
    }
    let (argmax, c) =
        best.ok_or_else(|| Error::Inconclusive("no corpus member with resolvable gradient".into()))?;
    insert_constant(&mut rep, "c", c.value.max(0.0), c.se);
    rep.notes.push(format!("ratio attained by {argmax}"));
    let cval = c.value.max(0.0);
    for (id, ent, den) in rows {
        rep.push_check(id, ent, Estimate::new(cval * den.value, cval * den.se));
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Defective q-log-Sobolev bound
// ---------------------------------------------------------------------------

/// Verifies `mu(|f|^q log(|f|^q / mu|f|^q)) <= C mu|grad f|^q` for
/// `q = 1/beta` in `(1, 2]`, fitting `C` as the largest observed ratio.
pub fn verify_lsq(ps: &PhiSpec, set: &SampleSet, corpus: &FunctionCorpus) -> Result<InequalityReport> {
    let q = ps.q();
    if !(q > 1.0 && q <= 2.0) {
        return Err(Error::Domain(format!(
            "the defective log-Sobolev check needs q = 1/beta in (1, 2], got q = {q}"
        )));
    }
    corpus.require_minimum()?;
    let digest = config_digest(&("lsq", q, set.meta.seed, set.len()));
    let mut rep = InequalityReport::new(InequalityKind::Lsq, digest, corpus.id.clone());
    rep.n_eff = set.n_eff();
    let mut rows = Vec::new();
    let mut best: Option<(String, Estimate)> = None;
    for e in &corpus.entries {
        let em = entry_moments(set, e)?;
        let powers: Vec<f64> = em.abs_values.iter().map(|v| v.powf(q)).collect();
        let plogp: Vec<f64> = powers
            .iter()
            .map(|a| if *a > 0.0 { a * a.ln() } else { 0.0 })
            .collect();
        let lhs = batch_plugin(&[&plogp, &powers], set.weights.as_deref(), |m| {
            if m[1] > 0.0 {
                m[0] - m[1] * m[1].ln()
            } else {
                0.0
            }
        })?;
        let grad_q: Vec<f64> = em.grads.iter().map(|v| v.powf(q)).collect();
        let den = set.expectation_of(&grad_q);
        if let Some(r) = ratio_estimate(&lhs, &den) {
            if best.as_ref().map_or(true, |(_, b)| r.value > b.value) {
                best = Some((em.id.clone(), r));
            }
        }
        rows.push((em.id.clone(), lhs, den));
    }
    let (argmax, c) =
        best.ok_or_else(|| Error::Inconclusive("no corpus member with resolvable gradient".into()))?;
    insert_constant(&mut rep, "C_lsq", c.value.max(0.0), c.se);
    rep.notes.push(format!("ratio attained by {argmax}"));
    let cval = c.value.max(0.0);
    for (id, lhs, den) in rows {
        rep.push_check(id, lhs, Estimate::new(cval * den.value, cval * den.se));
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Profile-based functional inequality for [0,1]-valued functions
// ---------------------------------------------------------------------------

/// Smallest `C` with `I(mu f) <= mu sqrt(I(f)^2 + C |grad f|^2)` for one
/// function, given its per-sample values (already in `[0, 1]`) and
/// gradient moduli. Returns the left side and the fitted `C`.
pub(crate) fn ifi2_entry_constant(
    set: &SampleSet,
    table: &ProfileTable,
    vals: &[f64],
    grads: &[f64],
) -> Result<(Estimate, f64)> {
    let mu = set.expectation_of(vals);
    let mu_clamped = mu.value.clamp(0.0, 1.0);
    let lhs = Estimate::new(
        table.eval(mu_clamped)?,
        table.derivative(mu_clamped)?.abs() * mu.se,
    );
    let profile_vals: Vec<f64> = vals
        .iter()
        .map(|v| table.eval(v.clamp(0.0, 1.0)))
        .collect::<Result<_>>()?;
    let rhs_mean = |c: f64| -> f64 {
        let arr: Vec<f64> = profile_vals
            .iter()
            .zip(grads)
            .map(|(u, g)| (u * u + c * g * g).sqrt())
            .collect();
        set.expectation_of(&arr).value
    };
    if rhs_mean(0.0) >= lhs.value {
        return Ok((lhs, 0.0));
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while rhs_mean(hi) < lhs.value {
        hi *= 4.0;
        if hi > 1e12 {
            return Err(Error::Infeasible(
                "profile inequality cannot be closed by any gradient constant".into(),
            ));
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-9 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if rhs_mean(mid) >= lhs.value {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lhs, hi))
}

/// Verifies the profile-based inequality
/// `I(mu f) <= mu sqrt(I(f)^2 + C |grad f|^2)` over the `[0,1]`-valued
/// corpus members against a `q = 2` profile table, fitting the smallest
/// feasible `C` by bisection. Members leaving `[0,1]` beyond a 1% slack
/// are excluded with a warning; values inside the slack are clamped.
pub fn verify_ifi2(
    set: &SampleSet,
    corpus: &FunctionCorpus,
    table: &ProfileTable,
) -> Result<InequalityReport> {
    if (table.q - 2.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "the pointwise profile inequality uses the q = 2 profile, got q = {}",
            table.q
        )));
    }
    corpus.require_minimum()?;
    let digest = config_digest(&("ifi2", set.meta.seed, set.len(), table.grid.len()));
    let mut rep = InequalityReport::new(InequalityKind::Ifi2, digest, corpus.id.clone());
    rep.n_eff = set.n_eff();
    let mut rows = Vec::new();
    let mut c_best: Option<(String, f64)> = None;
    let mut used = 0usize;
    for e in corpus.unit_entries() {
        let em = entry_moments(set, e)?;
        if em.values.iter().any(|v| *v < -0.01 || *v > 1.01) {
            rep.notes.push(format!(
                "{}: values leave [0,1] beyond tolerance; excluded",
                em.id
            ));
            continue;
        }
        used += 1;
        let vals: Vec<f64> = em.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let (lhs, c_e) = ifi2_entry_constant(set, table, &vals, &em.grads)?;
        if c_best.as_ref().map_or(true, |(_, b)| c_e > *b) {
            c_best = Some((em.id.clone(), c_e));
        }
        rows.push((em.id.clone(), lhs, vals, em.grads));
    }
    if used == 0 {
        return Err(Error::Domain(
            "no [0,1]-valued corpus members available".into(),
        ));
    }
    let (argmax, c) = c_best.unwrap();
    // Sensitivity-based SE at the binding member: perturb the gap by the
    // combined SE and divide by the slope of the right side in C.
    let mut c_se = 0.0;
    for (id, lhs, vals, grads) in &rows {
        if id != &argmax {
            continue;
        }
        let profile_vals: Vec<f64> = vals
            .iter()
            .map(|v| table.eval(*v))
            .collect::<Result<_>>()?;
        let arr: Vec<f64> = profile_vals
            .iter()
            .zip(grads)
            .map(|(u, g)| (u * u + c * g * g).sqrt())
            .collect();
        let rhs = set.expectation_of(&arr);
        let slope_arr: Vec<f64> = profile_vals
            .iter()
            .zip(grads)
            .map(|(u, g)| {
                let denom = (u * u + c * g * g).sqrt();
                if denom > 0.0 {
                    g * g / (2.0 * denom)
                } else {
                    0.0
                }
            })
            .collect();
        let slope = set.expectation_of(&slope_arr).value;
        if slope > 0.0 {
            c_se = (lhs.se + rhs.se) / slope;
        }
    }
    insert_constant(&mut rep, "C_ifi2", c, c_se);
    rep.notes.push(format!("constant attained by {argmax}"));
    for (id, lhs, vals, grads) in rows {
        let arr: Vec<f64> = vals
            .iter()
            .zip(&grads)
            .map(|(v, g)| {
                let u = table.eval(v.clamp(0.0, 1.0)).unwrap_or(f64::NAN);
                (u * u + c * g * g).sqrt()
            })
            .collect();
        let rhs = set.expectation_of(&arr);
        rep.push_check(id, lhs, rhs);
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Tight entropy bound at unit mass
// ---------------------------------------------------------------------------

/// Verifies `mu(g (log_+ g)^beta) <= K mu|grad g| + K'` for the
/// mass-normalized `g = |f| / mu|f|`, fitting minimal `K + K'`. The
/// normalization uses the full-sample mean; its statistical error is
/// treated as fixed in the reported SEs.
pub fn verify_tight_ledoux(
    ps: &PhiSpec,
    set: &SampleSet,
    corpus: &FunctionCorpus,
) -> Result<InequalityReport> {
    corpus.require_minimum()?;
    let digest = config_digest(&("tight", ps.beta(), set.meta.seed, set.len()));
    let mut rep = InequalityReport::new(InequalityKind::TightLedoux, digest, corpus.id.clone());
    rep.n_eff = set.n_eff();
    let beta = ps.beta();
    let mut cons = Vec::new();
    let mut rows = Vec::new();
    for e in &corpus.entries {
        let em = entry_moments(set, e)?;
        if !(em.mean_abs.value > 3.0 * em.mean_abs.se) || em.mean_abs.value <= 0.0 {
            rep.notes.push(format!(
                "{}: mass not resolved away from zero; cannot normalize, excluded",
                em.id
            ));
            continue;
        }
        let scale = em.mean_abs.value;
        let lhs_vals: Vec<f64> = em
            .abs_values
            .iter()
            .map(|v| {
                let g = v / scale;
                let lp = g.ln().max(0.0);
                g * lp.powf(beta)
            })
            .collect();
        let lhs = set.expectation_of(&lhs_vals);
        let grad = Estimate::new(em.mean_grad.value / scale, em.mean_grad.se / scale);
        cons.push((grad, Estimate::exact(1.0), lhs));
        rows.push((em.id.clone(), lhs, grad));
    }
    if cons.is_empty() {
        return Err(Error::Inconclusive(
            "no corpus member with resolvable mass".into(),
        ));
    }
    let ((k, kp), (k_se, kp_se)) = fit_two_constants_se(&cons)?;
    insert_constant(&mut rep, "K", k, k_se);
    insert_constant(&mut rep, "K_prime", kp, kp_se);
    for (id, lhs, grad) in rows {
        let rhs = Estimate::new(k * grad.value + kp, k * grad.se);
        rep.push_check(id, lhs, rhs);
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Entropy-vs-exponential-moment duality
// ---------------------------------------------------------------------------

/// Outcome of one duality check
/// `mu(f h)/mu f <= (Ent^Phi(f/mu f) + Theta(s h)) / s`.
#[derive(Debug, Clone)]
pub struct ThetaBoundReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub entropy: Estimate,
    /// The universal constant `theta(beta)`.
    pub theta: f64,
    /// `Theta(s h) = theta + (log 2)^beta + (log mu e^{(s h)^q})^beta`.
    pub capital_theta: f64,
    pub exp_moment: Estimate,
}

impl ThetaBoundReport {
    /// Whether the inequality holds within three combined standard errors.
    pub fn satisfied(&self) -> bool {
        self.lhs.value <= self.rhs.value + 3.0 * (self.lhs.se + self.rhs.se) + 1e-12
    }
}

/// Checks the duality bound `mu(f h) <= s^{-1} Ent^Phi(f) + s^{-1} Theta(s h)`
/// for nonnegative `f` (normalized internally to unit mass) and
/// nonnegative `h`, at scale `s > 0`. Errors when the exponential moment
/// `mu e^{(s h)^q}` is not finite or cannot be estimated stably.
pub fn theta_bound(
    ps: &PhiSpec,
    set: &SampleSet,
    f: &ScalarField,
    h: &ScalarField,
    s: f64,
) -> Result<ThetaBoundReport> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("duality scale must be positive, got {s}")));
    }
    let nonneg = |label: &str, vals: Vec<f64>| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(vals.len());
        for v in vals {
            if !v.is_finite() || v < -1e-9 {
                return Err(Error::Domain(format!(
                    "the duality bound needs nonnegative {label}, found {v}"
                )));
            }
            out.push(v.max(0.0));
        }
        Ok(out)
    };
    let fv = nonneg("f", set.eval(f))?;
    let hv = nonneg("h", set.eval(h))?;
    let mu_f = set.expectation_of(&fv);
    if !(mu_f.value > 0.0) {
        return Err(Error::Domain("f has zero mass; cannot normalize".into()));
    }
    let lhs = batch_plugin(&[&product(&fv, &hv), &fv], set.weights.as_deref(), |m| {
        m[0] / m[1]
    })?;
    let fhat: Vec<f64> = fv.iter().map(|v| v / mu_f.value).collect();
    let entropy = entropy_phi_from_values(ps, &fhat, set.weights.as_deref())?;
    let q = ps.q();
    let ev: Vec<f64> = hv.iter().map(|h| ((s * h).powf(q)).exp()).collect();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "exponential moment mu e^{{(s h)^q}} at s = {s}"
        )));
    }
    let exp_moment = set.expectation_of(&ev);
    if !exp_moment.value.is_finite() || exp_moment.se > 0.5 * exp_moment.value {
        return Err(Error::Inconclusive(format!(
            "exponential moment too heavy-tailed to estimate (value {}, se {})",
            exp_moment.value, exp_moment.se
        )));
    }
    let theta = theta_constant(ps.beta())?;
    let capital_theta =
        theta + std::f64::consts::LN_2.powf(ps.beta()) + exp_moment.value.ln().max(0.0).powf(ps.beta());
    let rhs = Estimate::new((entropy.value + capital_theta) / s, entropy.se / s);
    Ok(ThetaBoundReport {
        lhs,
        rhs,
        entropy,
        theta,
        capital_theta,
        exp_moment,
    })
}

// ---------------------------------------------------------------------------
// Exponential integrability
// ---------------------------------------------------------------------------

/// Verifies exponential integrability of the squared distance: fits
/// `(C, D)` for the distance-weighted bound
/// `mu(|f| d) <= C mu|grad f| + D mu|f|` over the standard corpus, keeps
/// the grid points `lambda < 1/(2C)`, estimates
/// `mu e^{lambda min(d, cutoff)^2}`, and fits the smallest `D''` with
/// every estimate `<= e^{lambda D''}`. A companion fit bounds
/// `mu e^{lambda min(U, alpha cutoff^p)}` by `e^{lambda B}` on the range
/// `lambda < 1/(a C + D)` where `a` makes `|grad U| = a U^{1-1/p}`.
pub fn verify_exp_integrability(
    spec: &MeasureSpec,
    set: &SampleSet,
    lambda_grid: &[f64],
    cutoff: f64,
) -> Result<InequalityReport> {
    if !(cutoff > 0.0) {
        return Err(Error::Domain(format!("cutoff must be positive, got {cutoff}")));
    }
    check_same_shape(spec, set)?;
    let mut grid: Vec<f64> = lambda_grid.iter().copied().filter(|l| *l > 0.0).collect();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::Domain("empty lambda grid".into()));
    }
    let corpus = standard_corpus(spec.structure());
    corpus.require_minimum()?;
    let digest = config_digest(&("expint", spec.p(), spec.alpha(), set.meta.seed, &grid, cutoff));
    let mut rep = InequalityReport::new(InequalityKind::ExpInt, digest, corpus.id.clone());
    rep.n_eff = set.n_eff();

    // Distance-weighted moment bound over the corpus.
    let mut cons = Vec::new();
    for e in &corpus.entries {
        let em = entry_moments(set, e)?;
        let lhs = set.expectation_of(&product(&em.abs_values, &set.dists));
        cons.push((em.mean_grad, em.mean_abs, lhs));
    }
    let ((c_w, d_w), (c_w_se, d_w_se)) = fit_two_constants_se(&cons)?;
    insert_constant(&mut rep, "C", c_w, c_w_se);
    insert_constant(&mut rep, "D", d_w, d_w_se);
    let lambda0 = if c_w > 0.0 { 1.0 / (2.0 * c_w) } else { f64::INFINITY };
    rep.fitted_constants.insert("lambda0".into(), lambda0);

    let mut kept: Vec<(f64, Estimate)> = Vec::new();
    for &l in &grid {
        if !(l < lambda0 * (1.0 - 1e-9)) {
            rep.notes
                .push(format!("lambda = {l} at or beyond 1/(2C) = {lambda0}; dropped"));
            continue;
        }
        let vals: Vec<f64> = set
            .dists
            .iter()
            .map(|d| (l * d.min(cutoff).powi(2)).exp())
            .collect();
        let est = set.expectation_of(&vals);
        if !est.value.is_finite() || est.se > 0.2 * est.value {
            rep.notes.push(format!(
                "grid truncated at lambda = {l}: relative error {:.1}% exceeds 20%",
                100.0 * est.se / est.value
            ));
            break;
        }
        kept.push((l, est));
    }
    if kept.is_empty() {
        return Err(Error::Inconclusive(
            "no lambda grid point below 1/(2C) could be estimated stably".into(),
        ));
    }
    let (d2, d2_se) = kept
        .iter()
        .map(|(l, est)| (est.value.ln() / l, est.se / (l * est.value)))
        .fold((f64::NEG_INFINITY, 0.0), |acc, cur| if cur.0 > acc.0 { cur } else { acc });
    insert_constant(&mut rep, "D_second", d2, d2_se);
    for (l, est) in &kept {
        rep.push_check(format!("lambda={l}"), *est, Estimate::exact((l * d2).exp()));
    }

    // Companion fit for the truncated potential.
    let p = spec.p();
    let a_growth = p * spec.alpha().powf(1.0 / p);
    let lambda0_app = 1.0 / (a_growth * c_w + d_w).max(1e-300);
    rep.fitted_constants
        .insert("lambda0_potential".into(), lambda0_app);
    let u_cut = spec.alpha() * cutoff.powf(p);
    let u_vals: Result<Vec<f64>> = if spec.has_perturbation() {
        set.points.iter().map(|g| spec.potential(g)).collect()
    } else {
        Ok(set
            .dists
            .iter()
            .map(|d| spec.alpha() * d.powf(p))
            .collect())
    };
    let u_vals = u_vals?;
    let mut b_fit: Option<(f64, f64)> = None;
    let mut app_rows = Vec::new();
    for &l in &grid {
        if !(l < lambda0_app * (1.0 - 1e-9)) {
            continue;
        }
        let vals: Vec<f64> = u_vals.iter().map(|u| (l * u.min(u_cut)).exp()).collect();
        let est = set.expectation_of(&vals);
        if !est.value.is_finite() || est.se > 0.2 * est.value {
            break;
        }
        let cand = (est.value.ln() / l, est.se / (l * est.value));
        if b_fit.map_or(true, |(b, _)| cand.0 > b) {
            b_fit = Some(cand);
        }
        app_rows.push((l, est));
    }
    if let Some((b, b_se)) = b_fit {
        insert_constant(&mut rep, "B_potential", b, b_se);
        for (l, est) in app_rows {
            rep.push_check(
                format!("potential-lambda={l}"),
                est,
                Estimate::exact((l * b).exp()),
            );
        }
    } else {
        rep.notes
            .push("no lambda grid point below 1/(aC + D); potential variant skipped".into());
    }
    rep.notes
        .push(format!("squared-distance truncation at d = {cutoff}"));
    Ok(rep)
}
