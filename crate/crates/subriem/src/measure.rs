//! Heavy-tailed probability measures on H-type groups and their sampler.
//!
//! The central object is the measure
//!
//! ```text
//! d mu(g) = exp(-alpha d(g)^p) dLambda(g) / Z,      p > 1, alpha > 0,
//! ```
//!
//! with `d` the Carnot-Caratheodory distance and `Lambda` Lebesgue measure
//! on the flat chart (which is the Haar measure of the group). Optional
//! scalar perturbations `W, V` extend the potential to
//! `U = alpha d^p + W + V`.
//!
//! Sampling is component-wise random-walk Metropolis in the flat chart,
//! fully deterministic given a seed: chain `c` draws from an independent
//! counter-split RNG stream. A gauge pre-screen may reject distant
//! proposals before solving for the distance; the uniform variate is drawn
//! first, so the screen only reorders evaluation and never changes the
//! accept/reject decision.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::cc_distance;
use crate::error::{Error, Result};
use crate::htype::{GroupPoint, HTypeStructure, ScalarField};
use crate::quad::integrate_box;
use crate::stats::{self, Estimate};

/// Acceptance-rate band outside which sampling is rejected as mistuned.
pub const TUNING_BAND: (f64, f64) = (0.01, 0.95);
/// Acceptance-rate band outside which a warning is recorded.
pub const COMFORT_BAND: (f64, f64) = (0.10, 0.60);

// ---------------------------------------------------------------------------
// Measure specification
// ---------------------------------------------------------------------------

/// A measure `exp(-alpha d^p - W - V) dLambda / Z`.
#[derive(Clone)]
pub struct MeasureSpec {
    structure: HTypeStructure,
    p: f64,
    alpha: f64,
    w: Option<ScalarField>,
    v: Option<ScalarField>,
}

impl MeasureSpec {
    pub fn new(structure: HTypeStructure, p: f64, alpha: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Domain(format!("need p > 1, got {p}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("need alpha > 0, got {alpha}")));
        }
        Ok(Self {
            structure,
            p,
            alpha,
            w: None,
            v: None,
        })
    }

    /// Adds a bounded perturbation `W` to the potential.
    pub fn with_w(mut self, w: ScalarField) -> Self {
        self.w = Some(w);
        self
    }

    /// Adds a second perturbation `V` to the potential.
    pub fn with_v(mut self, v: ScalarField) -> Self {
        self.v = Some(v);
        self
    }

    pub fn structure(&self) -> &HTypeStructure {
        &self.structure
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The entropy exponent `beta = 1 - 1/p` naturally paired with the tail
    /// weight `exp(-alpha d^p)`.
    pub fn beta(&self) -> f64 {
        1.0 - 1.0 / self.p
    }

    pub fn has_perturbation(&self) -> bool {
        self.w.is_some() || self.v.is_some()
    }

    /// Potential `U(g) = alpha d(g)^p + W(g) + V(g)` together with `d(g)`.
    pub fn potential_parts(&self, g: &GroupPoint) -> Result<(f64, f64)> {
        let d = cc_distance(&self.structure, g)?;
        let mut u = self.alpha * d.powf(self.p);
        if let Some(w) = &self.w {
            u += w.eval(g);
        }
        if let Some(v) = &self.v {
            u += v.eval(g);
        }
        if !u.is_finite() {
            return Err(Error::NonFinite(format!("potential at {g}")));
        }
        Ok((u, d))
    }

    pub fn potential(&self, g: &GroupPoint) -> Result<f64> {
        Ok(self.potential_parts(g)?.0)
    }

    /// The potential as a scalar field (evaluation only).
    pub fn potential_field(&self) -> ScalarField {
        let spec = self.clone();
        ScalarField::new(move |g| spec.potential(g).unwrap_or(f64::NAN))
    }

    /// `|grad U|` at `g`. Without perturbations this is the closed form
    /// `alpha p d^{p-1}` (the distance has unit horizontal gradient almost
    /// everywhere); with perturbations it falls back to finite differences
    /// of the full potential.
    pub fn grad_potential_norm(&self, g: &GroupPoint) -> Result<f64> {
        if !self.has_perturbation() {
            let d = cc_distance(&self.structure, g)?;
            return Ok(self.alpha * self.p * d.powf(self.p - 1.0));
        }
        self.structure.gradient_norm(&self.potential_field(), g)
    }
}

impl std::fmt::Debug for MeasureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeasureSpec")
            .field("m", &self.structure.m())
            .field("n", &self.structure.n())
            .field("p", &self.p)
            .field("alpha", &self.alpha)
            .field("perturbed", &self.has_perturbation())
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Chains and samples
// ---------------------------------------------------------------------------

/// Sampler configuration. `n_samples` counts kept states per chain after
/// burn-in and thinning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_scale: f64,
    /// Standard deviation of the random initial state around the identity.
    pub init_spread: f64,
    pub seed: u64,
    /// Enables the gauge pre-screen for unperturbed measures.
    pub kaplan_screen: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 8,
            n_samples: 4000,
            burn_in: 1000,
            thin: 2,
            proposal_scale: 0.8,
            init_spread: 1.0,
            seed: 1,
            kaplan_screen: true,
        }
    }
}

/// Metadata of a sampling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub n_chains: usize,
    pub acceptance_rate: f64,
    pub ess_per_chain: Vec<f64>,
    pub warnings: Vec<String>,
}

/// A weighted empirical measure: points, their distances to the identity,
/// optional importance weights, and sampling diagnostics.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub structure: HTypeStructure,
    pub points: Vec<GroupPoint>,
    pub dists: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Evaluates a field at every sample point (in parallel, in order).
    pub fn eval(&self, f: &ScalarField) -> Vec<f64> {
        self.points.par_iter().map(|g| f.eval(g)).collect()
    }

    /// Weighted expectation of precomputed per-sample values with a
    /// batch-means standard error.
    pub fn expectation_of(&self, values: &[f64]) -> Estimate {
        stats::weighted_mean_se(values, self.weights.as_deref())
    }

    /// Weighted expectation of a field.
    pub fn expectation(&self, f: &ScalarField) -> Estimate {
        self.expectation_of(&self.eval(f))
    }

    /// Minimum effective sample size across chains, scaled to the full set.
    pub fn n_eff(&self) -> f64 {
        let per: f64 = self
            .meta
            .ess_per_chain
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if per.is_finite() {
            per * self.meta.n_chains as f64
        } else {
            self.len() as f64
        }
    }

    /// Multiplies the weights by `exp(-sum_i f_i(g))`, turning a sample of a
    /// base measure into a self-normalized estimator for the perturbed one.
    pub fn reweight(&self, extra_potentials: &[&ScalarField]) -> SampleSet {
        let mut out = self.clone();
        let mut w = self
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.len()]);
        for f in extra_potentials {
            let vals = self.eval(f);
            for (wi, v) in w.iter_mut().zip(vals) {
                *wi *= (-v).exp();
            }
        }
        out.weights = Some(w);
        out
    }

    /// Writes the sample as CSV with columns `x_1..x_m, z_1..z_n, weight`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let m = self.structure.m();
        let n = self.structure.n();
        let mut header = Vec::new();
        for j in 1..=m {
            header.push(format!("x_{j}"));
        }
        for k in 1..=n {
            header.push(format!("z_{k}"));
        }
        header.push("weight".into());
        writeln!(out, "{}", header.join(","))?;
        for (i, g) in self.points.iter().enumerate() {
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            let mut row: Vec<String> = Vec::with_capacity(m + n + 1);
            for v in g.x.iter().chain(g.z.iter()) {
                row.push(format!("{v:.17e}"));
            }
            row.push(format!("{w:.17e}"));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a CSV sample (the format written by [`Self::write_csv`]) and
    /// recomputes the per-point distances.
    pub fn read_csv<R: std::io::BufRead>(structure: &HTypeStructure, input: R) -> Result<SampleSet> {
        let m = structure.m();
        let n = structure.n();
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Domain("empty sample CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() != m + n + 1 || cols.last() != Some(&"weight") {
            return Err(Error::Domain(format!(
                "sample CSV header must be x_1..x_{m}, z_1..z_{n}, weight; got {header:?}"
            )));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .trim()
                .split(',')
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Domain(format!("bad number {t:?} on CSV line {}", lineno + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != m + n + 1 {
                return Err(Error::Domain(format!(
                    "CSV line {} has {} fields, expected {}",
                    lineno + 2,
                    vals.len(),
                    m + n + 1
                )));
            }
            points.push(GroupPoint::new(
                vals[..m].to_vec(),
                vals[m..m + n].to_vec(),
            ));
            weights.push(vals[m + n]);
        }
        let dists = points
            .par_iter()
            .map(|g| cc_distance(structure, g))
            .collect::<Result<Vec<_>>>()?;
        let len = points.len();
        let uniform = weights.iter().all(|w| *w == 1.0);
        Ok(SampleSet {
            structure: structure.clone(),
            points,
            dists,
            weights: if uniform { None } else { Some(weights) },
            meta: SampleMeta {
                seed: 0,
                n_chains: 0,
                acceptance_rate: f64::NAN,
                ess_per_chain: vec![],
                warnings: vec![format!("loaded from CSV ({len} rows); chain diagnostics unavailable")],
            },
        })
    }
}

// ---------------------------------------------------------------------------
// Metropolis sampling
// ---------------------------------------------------------------------------

/// The Metropolis acceptance rule, isolated so tests can drive it directly:
/// accept iff `uniform < exp(-delta_u)`.
#[inline]
pub(crate) fn metropolis_accept(uniform: f64, delta_u: f64) -> bool {
    if delta_u <= 0.0 {
        true
    } else {
        uniform < (-delta_u).exp()
    }
}

struct ChainOutput {
    points: Vec<GroupPoint>,
    dists: Vec<f64>,
    accepted: u64,
    proposed: u64,
    ess: f64,
}

/// Draws a deterministic, seeded sample of the measure.
pub fn sample_measure(spec: &MeasureSpec, cfg: &ChainConfig) -> Result<SampleSet> {
    if cfg.n_samples == 0 || cfg.n_chains == 0 {
        return Err(Error::Domain(
            "need at least one chain and one sample".into(),
        ));
    }
    if cfg.thin == 0 {
        return Err(Error::Domain("thinning factor must be >= 1".into()));
    }
    if !(cfg.proposal_scale > 0.0) {
        return Err(Error::Domain("proposal scale must be positive".into()));
    }
    let chains: Vec<Result<ChainOutput>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(spec, cfg, c as u64))
        .collect();
    let mut points = Vec::with_capacity(cfg.n_chains * cfg.n_samples);
    let mut dists = Vec::with_capacity(cfg.n_chains * cfg.n_samples);
    let mut ess_per_chain = Vec::with_capacity(cfg.n_chains);
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    for ch in chains {
        let ch = ch?;
        points.extend(ch.points);
        dists.extend(ch.dists);
        ess_per_chain.push(ch.ess);
        accepted += ch.accepted;
        proposed += ch.proposed;
    }
    let rate = accepted as f64 / proposed.max(1) as f64;
    if rate < TUNING_BAND.0 || rate > TUNING_BAND.1 {
        let suggested = if rate < TUNING_BAND.0 {
            cfg.proposal_scale / 5.0
        } else {
            cfg.proposal_scale * 5.0
        };
        return Err(Error::Tuning {
            rate,
            lo: TUNING_BAND.0,
            hi: TUNING_BAND.1,
            suggested_scale: suggested,
        });
    }
    let mut warnings = Vec::new();
    if rate < COMFORT_BAND.0 || rate > COMFORT_BAND.1 {
        warnings.push(format!(
            "acceptance rate {rate:.3} outside the comfortable band [{}, {}]",
            COMFORT_BAND.0, COMFORT_BAND.1
        ));
    }
    Ok(SampleSet {
        structure: spec.structure.clone(),
        points,
        dists,
        weights: None,
        meta: SampleMeta {
            seed: cfg.seed,
            n_chains: cfg.n_chains,
            acceptance_rate: rate,
            ess_per_chain,
            warnings,
        },
    })
}

fn run_chain(spec: &MeasureSpec, cfg: &ChainConfig, chain_idx: u64) -> Result<ChainOutput> {
    let s = &spec.structure;
    let dim = s.dim();
    let m = s.m();
    let mut rng = stats::stream_rng(cfg.seed, chain_idx);

    let mut cur = s.identity();
    for j in 0..m {
        cur.x[j] = cfg.init_spread * rng.sample::<f64, _>(StandardNormal);
    }
    for k in 0..s.n() {
        cur.z[k] = cfg.init_spread * rng.sample::<f64, _>(StandardNormal);
    }
    let (mut u_cur, mut d_cur) = spec.potential_parts(&cur)?;

    let screen = cfg.kaplan_screen && !spec.has_perturbation();
    // Slack multiplier on the gauge lower bound d >= N: the bound is exact
    // in the calibrated normalization, the epsilon absorbs roundoff.
    let screen_kappa = 1.0 + 1e-9;

    let total_sweeps = cfg.burn_in + cfg.n_samples * cfg.thin;
    let mut points = Vec::with_capacity(cfg.n_samples);
    let mut dists = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut prop = cur.clone();

    for sweep in 0..total_sweeps {
        for j in 0..dim {
            prop.x.copy_from_slice(&cur.x);
            prop.z.copy_from_slice(&cur.z);
            let noise: f64 = rng.sample(StandardNormal);
            if j < m {
                prop.x[j] += cfg.proposal_scale * noise;
            } else {
                prop.z[j - m] += cfg.proposal_scale * noise;
            }
            proposed += 1;
            // Draw the uniform before any screening so the screen can only
            // reorder evaluation, never change the decision.
            let v: f64 = rng.gen();
            if screen {
                let gauge = s.kaplan_norm(&prop)?;
                let u_lower = spec.alpha * (gauge / screen_kappa).powf(spec.p);
                let bound = (u_cur - u_lower).exp();
                if v >= bound {
                    continue; // exact rule would reject too
                }
            }
            let (u_prop, d_prop) = spec.potential_parts(&prop)?;
            if metropolis_accept(v, u_prop - u_cur) {
                std::mem::swap(&mut cur, &mut prop);
                u_cur = u_prop;
                d_cur = d_prop;
                accepted += 1;
            }
        }
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0 {
            points.push(cur.clone());
            dists.push(d_cur);
        }
    }
    let ess = stats::effective_sample_size(&dists);
    Ok(ChainOutput {
        points,
        dists,
        accepted,
        proposed,
        ess,
    })
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// How a normalization constant was computed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationEstimate {
    pub z: f64,
    /// Statistical error (zero for quadrature).
    pub se: f64,
    pub method: String,
    pub box_radius: f64,
}

/// Computes `Z = int exp(-U) dLambda`.
///
/// Dimensions up to three use nested adaptive quadrature over a centered
/// box, with the box doubled once to verify that the truncated tail is
/// below `1e-8` relative; a failure of that check is a truncation error.
/// Higher dimensions fall back to seeded Gaussian importance sampling with
/// a reported standard error.
pub fn estimate_normalization(
    spec: &MeasureSpec,
    box_radius: f64,
    tol: f64,
    seed: u64,
) -> Result<NormalizationEstimate> {
    if !(box_radius > 0.0) {
        return Err(Error::Domain("box radius must be positive".into()));
    }
    let s = &spec.structure;
    let dim = s.dim();
    if dim <= 3 {
        let compute = |radius: f64| -> Result<f64> {
            let lo = vec![-radius; dim];
            let hi = vec![radius; dim];
            let f = |coords: &[f64]| -> f64 {
                let g = GroupPoint::new(
                    coords[..s.m()].to_vec(),
                    coords[s.m()..].to_vec(),
                );
                match spec.potential(&g) {
                    Ok(u) => (-u).exp(),
                    Err(_) => f64::NAN,
                }
            };
            integrate_box(&f, &lo, &hi, tol)
        };
        let z1 = compute(box_radius)?;
        let z2 = compute(2.0 * box_radius)?;
        if (z2 - z1).abs() > 1e-8 * z2.abs() {
            return Err(Error::Truncation(format!(
                "normalization moved from {z1:.12e} to {z2:.12e} when doubling the box; enlarge box_radius"
            )));
        }
        return Ok(NormalizationEstimate {
            z: z2,
            se: 0.0,
            method: "adaptive-quadrature".into(),
            box_radius: 2.0 * box_radius,
        });
    }
    // Importance sampling with a centered Gaussian whose scale tracks the
    // box radius.
    let n = 200_000usize;
    let sigma = box_radius / 2.5;
    let mut rng = stats::stream_rng(seed, 0);
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let coords: Vec<f64> = (0..dim)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let g = GroupPoint::new(coords[..s.m()].to_vec(), coords[s.m()..].to_vec());
        let u = spec.potential(&g)?;
        let log_q = coords
            .iter()
            .map(|c| -0.5 * (c / sigma).powi(2))
            .sum::<f64>()
            - dim as f64 * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        vals.push((-u - log_q).exp());
    }
    let est = stats::mean_se(&vals);
    Ok(NormalizationEstimate {
        z: est.value,
        se: est.se,
        method: "gaussian-importance-sampling".into(),
        box_radius,
    })
}
