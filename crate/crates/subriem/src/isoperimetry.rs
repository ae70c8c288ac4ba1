//! Set-level isoperimetry: enlargements, boundary measure, the
//! profile comparison `mu^+(A) >= c I(mu A)`, and the coarea check.
//!
//! The boundary measure is the outer Minkowski content
//! `mu^+(A) = liminf (mu(A^eps) - mu(A)) / eps` along a halving ladder of
//! enlargement radii, optionally sharpened by first-order Richardson
//! extrapolation. Enlargements are measured on a fixed sample set, so the
//! same points price `A` and every `A^eps` and the difference is free of
//! independent-sampling noise.
//!
//! Three families of test sets have exact distance functions (metric
//! balls, horizontal half-spaces, and their complements). Sublevel sets of
//! corpus members use a boundary point cloud found by chord bisection; the
//! distance to the cloud upper-bounds the true distance to the set, which
//! biases every enlargement slightly downward — the conservative direction
//! for the lower bounds checked here.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::corpus::FunctionCorpus;
use crate::distance::{cc_distance, cc_distance_between};
use crate::error::{Error, Result};
use crate::htype::{GroupPoint, HTypeStructure, ScalarField};
use crate::measure::SampleSet;
use crate::profile::ProfileTable;
use crate::report::{config_digest, InequalityKind, InequalityReport};
use crate::stats::{stream_rng, Estimate};

/// A set whose measure, enlargement and boundary measure are examined.
#[derive(Clone)]
pub enum TestSet {
    /// `{ d(g) <= radius }`.
    MetricBall { radius: f64 },
    /// `{ x_axis <= level }` for a horizontal coordinate; the coordinate
    /// is 1-Lipschitz for the metric and the bound is attained along
    /// straight horizontal lines, so the set distance is exact.
    HalfSpace { axis: usize, level: f64 },
    /// `{ f <= level }` for a scalar field.
    Sublevel {
        id: String,
        field: ScalarField,
        level: f64,
    },
    /// The complement of another test set.
    Complement(Box<TestSet>),
}

impl TestSet {
    /// Human-readable identifier used in report rows.
    pub fn label(&self) -> String {
        match self {
            TestSet::MetricBall { radius } => format!("ball[r={radius}]"),
            TestSet::HalfSpace { axis, level } => format!("halfspace[x{}<={level}]", axis + 1),
            TestSet::Sublevel { id, level, .. } => format!("sublevel[{id}<={level}]"),
            TestSet::Complement(inner) => format!("complement({})", inner.label()),
        }
    }

    /// Removes doubled complements.
    fn normalized(self) -> TestSet {
        match self {
            TestSet::Complement(inner) => match inner.normalized() {
                TestSet::Complement(base) => *base,
                other => TestSet::Complement(Box::new(other)),
            },
            other => other,
        }
    }

    fn base_sublevel(&self) -> Option<(&ScalarField, f64)> {
        match self {
            TestSet::Sublevel { field, level, .. } => Some((field, *level)),
            TestSet::Complement(inner) => inner.base_sublevel(),
            _ => None,
        }
    }
}

impl std::fmt::Debug for TestSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// A test set prepared for distance queries on a fixed group structure;
/// sublevel sets carry a boundary point cloud.
pub struct SetGeometry {
    structure: HTypeStructure,
    set: TestSet,
    cloud: Vec<GroupPoint>,
    cloud_dists: Vec<f64>,
}

const CLOUD_BISECTIONS: usize = 60;
const CLOUD_MIN_SIDE: usize = 32;

impl SetGeometry {
    /// Prepares a set for queries. For sublevel sets a boundary cloud of
    /// `cloud_size` points is built by bisecting straight coordinate
    /// chords between sampled interior and exterior points; the sampling
    /// scale doubles until both sides of the level are seen.
    pub fn build(
        structure: &HTypeStructure,
        set: TestSet,
        cloud_size: usize,
        seed: u64,
    ) -> Result<SetGeometry> {
        let set = set.normalized();
        let core = match &set {
            TestSet::Complement(inner) => inner.as_ref(),
            other => other,
        };
        match core {
            TestSet::MetricBall { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Domain(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
            }
            TestSet::HalfSpace { axis, .. } => {
                if *axis >= structure.m() {
                    return Err(Error::Domain(format!(
                        "half-space axis {} outside the {} horizontal coordinates",
                        axis,
                        structure.m()
                    )));
                }
            }
            _ => {}
        }
        let mut geom = SetGeometry {
            structure: structure.clone(),
            set,
            cloud: Vec::new(),
            cloud_dists: Vec::new(),
        };
        if let Some((field, level)) = geom.set.base_sublevel() {
            if cloud_size < 16 {
                return Err(Error::Domain("boundary cloud needs at least 16 points".into()));
            }
            let cloud = build_boundary_cloud(structure, field, level, cloud_size, seed)?;
            let dists: Result<Vec<f64>> = cloud
                .par_iter()
                .map(|h| cc_distance(structure, h))
                .collect();
            geom.cloud_dists = dists?;
            geom.cloud = cloud;
        }
        Ok(geom)
    }

    pub fn set(&self) -> &TestSet {
        &self.set
    }

    pub fn label(&self) -> String {
        self.set.label()
    }

    /// Membership test.
    pub fn contains(&self, g: &GroupPoint) -> Result<bool> {
        self.contains_in(&self.set, g)
    }

    fn contains_in(&self, set: &TestSet, g: &GroupPoint) -> Result<bool> {
        match set {
            TestSet::MetricBall { radius } => Ok(cc_distance(&self.structure, g)? <= *radius),
            TestSet::HalfSpace { axis, level } => Ok(g.x[*axis] <= *level),
            TestSet::Sublevel { field, level, .. } => {
                let v = field.eval(g);
                if !v.is_finite() {
                    return Err(Error::NonFinite("sublevel field value".into()));
                }
                Ok(v <= *level)
            }
            TestSet::Complement(inner) => Ok(!self.contains_in(inner, g)?),
        }
    }

    /// Distance from `g` to the set (zero inside). Pass the known
    /// distance-to-identity of `g` when available to spare a solve.
    pub fn dist_to_set(&self, g: &GroupPoint, dg: Option<f64>) -> Result<f64> {
        let dg = match dg {
            Some(d) => d,
            None => {
                let core = match &self.set {
                    TestSet::Complement(inner) => inner.as_ref(),
                    other => other,
                };
                if matches!(core, TestSet::HalfSpace { .. }) {
                    0.0 // not needed for half-spaces
                } else {
                    cc_distance(&self.structure, g)?
                }
            }
        };
        self.dist_with(g, dg, None)
    }

    /// Worker behind [`Self::dist_to_set`] and [`set_distances`]: when
    /// `cap` is given, any return value greater than `cap` may be a lower
    /// bound instead of the exact distance.
    fn dist_with(&self, g: &GroupPoint, dg: f64, cap: Option<f64>) -> Result<f64> {
        match &self.set {
            TestSet::MetricBall { radius } => Ok((dg - radius).max(0.0)),
            TestSet::HalfSpace { axis, level } => Ok((g.x[*axis] - level).max(0.0)),
            TestSet::Sublevel { .. } => {
                if self.contains(g)? {
                    Ok(0.0)
                } else {
                    self.cloud_min(g, dg, cap)
                }
            }
            TestSet::Complement(inner) => match inner.as_ref() {
                TestSet::MetricBall { radius } => Ok((radius - dg).max(0.0)),
                TestSet::HalfSpace { axis, level } => Ok((level - g.x[*axis]).max(0.0)),
                TestSet::Sublevel { .. } => {
                    if !self.contains_in(inner, g)? {
                        Ok(0.0) // g is in the complement set itself
                    } else {
                        self.cloud_min(g, dg, cap)
                    }
                }
                TestSet::Complement(_) => unreachable!("normalized away at build"),
            },
        }
    }

    /// Minimum distance from `g` to the boundary cloud. Candidates are
    /// screened by two lower bounds before an exact solve: the reverse
    /// triangle inequality through the identity (cached cloud distances)
    /// and the gauge of the relative position.
    fn cloud_min(&self, g: &GroupPoint, dg: f64, cap: Option<f64>) -> Result<f64> {
        let mut order: Vec<(f64, u32)> = self
            .cloud_dists
            .iter()
            .enumerate()
            .map(|(i, dh)| ((dh - dg).abs(), i as u32))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(cap) = cap {
            if order[0].0 > cap {
                return Ok(order[0].0); // a valid lower bound beyond every rung
            }
        }
        let inv_g = self.structure.group_inv(g)?;
        let mut best = f64::INFINITY;
        for (lb, i) in order {
            if lb >= best {
                break;
            }
            let h = &self.cloud[i as usize];
            let rel = self.structure.group_mul(&inv_g, h)?;
            let gauge = self.structure.kaplan_norm(&rel)?;
            if gauge >= best {
                continue;
            }
            let d = cc_distance_between(&self.structure, g, h)?;
            if d < best {
                best = d;
            }
        }
        if !best.is_finite() {
            return Err(Error::Infeasible("empty boundary cloud".into()));
        }
        Ok(best)
    }
}

/// Boundary cloud by chord bisection: straight coordinate segments
/// between interior and exterior samples cross the level, and sixty
/// halvings pin the crossing down to working precision.
fn build_boundary_cloud(
    structure: &HTypeStructure,
    field: &ScalarField,
    level: f64,
    cloud_size: usize,
    seed: u64,
) -> Result<Vec<GroupPoint>> {
    let m = structure.m();
    let n = structure.n();
    let mut rng = stream_rng(seed, 101);
    for doubling in 0..5 {
        let scale = (1u64 << doubling) as f64;
        let batch = 6 * cloud_size;
        let mut inside: Vec<GroupPoint> = Vec::new();
        let mut outside: Vec<GroupPoint> = Vec::new();
        for _ in 0..batch {
            let x: Vec<f64> = (0..m)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let z: Vec<f64> = (0..n)
                .map(|_| scale * scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let g = GroupPoint::new(x, z);
            let v = field.eval(&g);
            if !v.is_finite() {
                continue;
            }
            if v <= level {
                inside.push(g);
            } else {
                outside.push(g);
            }
        }
        if inside.len() < CLOUD_MIN_SIDE || outside.len() < CLOUD_MIN_SIDE {
            continue;
        }
        let pairs: Vec<(GroupPoint, GroupPoint)> = (0..cloud_size)
            .map(|_| {
                let a = inside[rng.gen_range(0..inside.len())].clone();
                let b = outside[rng.gen_range(0..outside.len())].clone();
                (a, b)
            })
            .collect();
        let cloud: Vec<GroupPoint> = pairs
            .into_par_iter()
            .map(|(a, b)| {
                let mut lo = a; // inside end
                let mut hi = b; // outside end
                for _ in 0..CLOUD_BISECTIONS {
                    let mid = GroupPoint::new(
                        lo.x.iter().zip(&hi.x).map(|(p, q)| 0.5 * (p + q)).collect(),
                        lo.z.iter().zip(&hi.z).map(|(p, q)| 0.5 * (p + q)).collect(),
                    );
                    if field.eval(&mid) <= level {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            })
            .collect();
        return Ok(cloud);
    }
    Err(Error::Infeasible(format!(
        "could not find points on both sides of level {level} within sampling scale 16"
    )))
}

/// Distances from every sample to the set, in sample order. Values
/// greater than `cap` (when given) may be lower bounds rather than exact
/// distances; the enlargement ladder only thresholds below its largest
/// radius, so pass at least that radius.
pub fn set_distances(
    geom: &SetGeometry,
    samples: &SampleSet,
    cap: Option<f64>,
) -> Result<Vec<f64>> {
    if samples.structure.m() != geom.structure.m() || samples.structure.n() != geom.structure.n() {
        return Err(Error::DimensionMismatch(
            "sample set and set geometry live on different groups".into(),
        ));
    }
    samples
        .points
        .par_iter()
        .zip(samples.dists.par_iter())
        .map(|(g, dg)| geom.dist_with(g, *dg, cap))
        .collect()
}

/// `mu(A^eps)` for the enlargement of radius `eps`, measured on the
/// samples through a precomputed set-distance array.
pub fn enlargement_measure(samples: &SampleSet, dset: &[f64], eps: f64) -> Result<Estimate> {
    if dset.len() != samples.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} set distances for {} samples",
            dset.len(),
            samples.len()
        )));
    }
    if eps < 0.0 {
        return Err(Error::Domain("enlargement radius must be nonnegative".into()));
    }
    let ind: Vec<f64> = dset.iter().map(|d| if *d <= eps { 1.0 } else { 0.0 }).collect();
    Ok(samples.expectation_of(&ind))
}

/// Ladder configuration for the boundary measure.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    /// Largest enlargement radius; the ladder halves from here.
    pub eps0: f64,
    /// Number of rungs, at least 4.
    pub rungs: usize,
    /// First-order Richardson extrapolation of the last two rungs.
    pub use_richardson: bool,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            eps0: 0.4,
            rungs: 5,
            use_richardson: true,
        }
    }
}

/// Boundary-measure estimate with its ladder of difference quotients.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BoundaryEstimate {
    pub value: Estimate,
    /// `(eps, slope, slope_se)` per rung, largest radius first.
    pub ladder: Vec<(f64, f64, f64)>,
    /// Whether the last two rungs agree to 10% or within noise.
    pub converged: bool,
}

/// Outer-Minkowski boundary measure from the enlargement ladder
/// `(mu(A^eps) - mu(A)) / eps` at halving radii.
pub fn boundary_measure(
    samples: &SampleSet,
    dset: &[f64],
    cfg: &LadderConfig,
) -> Result<BoundaryEstimate> {
    if cfg.rungs < 4 {
        return Err(Error::Domain("boundary ladder needs at least 4 rungs".into()));
    }
    if !(cfg.eps0 > 0.0) {
        return Err(Error::Domain("ladder top radius must be positive".into()));
    }
    if dset.len() != samples.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} set distances for {} samples",
            dset.len(),
            samples.len()
        )));
    }
    let mut ladder = Vec::with_capacity(cfg.rungs);
    for k in 0..cfg.rungs {
        let eps = cfg.eps0 / (1u64 << k) as f64;
        // The shell indicator 0 < dset <= eps: the same samples price the
        // set and its enlargement, so the difference carries no
        // independent-sampling noise.
        let shell: Vec<f64> = dset
            .iter()
            .map(|d| if *d > 0.0 && *d <= eps { 1.0 } else { 0.0 })
            .collect();
        let e = samples.expectation_of(&shell);
        ladder.push((eps, e.value / eps, e.se / eps));
    }
    let (_, s_last, se_last) = ladder[cfg.rungs - 1];
    let (_, s_prev, se_prev) = ladder[cfg.rungs - 2];
    let value = if cfg.use_richardson {
        Estimate::new(2.0 * s_last - s_prev, 2.0 * se_last + se_prev)
    } else {
        Estimate::new(s_last, se_last)
    };
    let drift = (s_last - s_prev).abs();
    let converged = drift <= 0.10 * s_last.abs().max(1e-12) + 3.0 * (se_last + se_prev);
    Ok(BoundaryEstimate {
        value: Estimate::new(value.value.max(0.0), value.se),
        ladder,
        converged,
    })
}

/// Configuration of the set-level battery.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoConfig {
    #[serde(default)]
    pub ladder: LadderConfig,
    /// Boundary cloud size for sublevel sets.
    pub cloud_size: usize,
    /// Seed stream for cloud construction.
    pub cloud_seed: u64,
    /// Metric-ball radii to test.
    pub ball_radii: Vec<f64>,
    /// Also test the complement of the first ball.
    pub include_ball_complement: bool,
    /// Horizontal half-spaces `{x_1 <= level}` to test.
    pub halfspace_levels: Vec<f64>,
    /// Sublevel sets `(corpus member id, level)` to test.
    pub sublevels: Vec<(String, f64)>,
    /// Corpus members the coarea check integrates over levels.
    pub coarea_members: Vec<String>,
    /// Number of level slabs for the coarea check.
    pub coarea_levels: usize,
}

impl Default for IsoConfig {
    fn default() -> Self {
        Self {
            ladder: LadderConfig::default(),
            cloud_size: 4096,
            cloud_seed: 7,
            ball_radii: vec![0.75, 1.25, 2.0],
            include_ball_complement: true,
            halfspace_levels: vec![0.0, 0.7],
            sublevels: vec![
                ("radial-bump".into(), 0.5),
                ("logdensity-half".into(), 0.35),
            ],
            coarea_members: vec!["unit-ball".into(), "x1-gauss".into()],
            coarea_levels: 8,
        }
    }
}

/// Compares the boundary measure of each configured set against the
/// profile of its mass: fits the largest `c` with
/// `mu^+(A) >= c I(mu A)` across the family.
pub fn verify_isoperimetry(
    samples: &SampleSet,
    table: &ProfileTable,
    corpus: &FunctionCorpus,
    cfg: &IsoConfig,
) -> Result<InequalityReport> {
    let structure = &samples.structure;
    let digest = config_digest(&("iso", structure.m(), structure.n(), table.q, cfg));
    let mut rep = InequalityReport::new(
        InequalityKind::IsoProfile,
        digest,
        corpus.id.clone(),
    );
    rep.n_eff = samples.n_eff();

    let mut sets: Vec<TestSet> = Vec::new();
    for r in &cfg.ball_radii {
        sets.push(TestSet::MetricBall { radius: *r });
    }
    if cfg.include_ball_complement {
        if let Some(r) = cfg.ball_radii.first() {
            sets.push(TestSet::Complement(Box::new(TestSet::MetricBall { radius: *r })));
        }
    }
    for level in &cfg.halfspace_levels {
        sets.push(TestSet::HalfSpace { axis: 0, level: *level });
    }
    for (id, level) in &cfg.sublevels {
        let entry = corpus
            .entries
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| Error::Domain(format!("no corpus member named {id}")))?;
        sets.push(TestSet::Sublevel {
            id: id.clone(),
            field: entry.field.clone(),
            level: *level,
        });
    }
    if sets.is_empty() {
        return Err(Error::Domain("the set family is empty".into()));
    }

    struct Row {
        label: String,
        lhs: Estimate,
        mu_plus: Estimate,
        usable: bool,
    }
    let cap = cfg.ladder.eps0 * (1.0 + 1e-9);
    let mut rows: Vec<Row> = Vec::new();
    for (k, set) in sets.into_iter().enumerate() {
        let label = set.label();
        let is_ball = matches!(set, TestSet::MetricBall { .. });
        let seed = cfg.cloud_seed.wrapping_add(k as u64);
        let geom = SetGeometry::build(structure, set, cfg.cloud_size, seed)?;
        let dset = set_distances(&geom, samples, Some(cap))?;
        let inside: Vec<f64> = dset.iter().map(|d| if *d == 0.0 { 1.0 } else { 0.0 }).collect();
        let mass = samples.expectation_of(&inside);
        if is_ball {
            // The enlarged ball of radius r is the ball of radius r + eps:
            // the two code paths must price it identically.
            if let TestSet::MetricBall { radius } = *geom.set() {
                let via_dset = enlargement_measure(samples, &dset, cfg.ladder.eps0)?;
                let direct: Vec<f64> = samples
                    .dists
                    .iter()
                    .map(|d| if *d <= radius + cfg.ladder.eps0 { 1.0 } else { 0.0 })
                    .collect();
                let via_direct = samples.expectation_of(&direct);
                let slack = 3.0 * (via_dset.se + via_direct.se) + 1e-9;
                if (via_dset.value - via_direct.value).abs() > slack {
                    rep.notes.push(format!(
                        "{label}: enlargement identity mismatch {:.3e} vs {:.3e}",
                        via_dset.value, via_direct.value
                    ));
                }
            }
        }
        let bnd = boundary_measure(samples, &dset, &cfg.ladder)?;
        let t = mass.value.clamp(0.0, 1.0);
        let lhs = Estimate::new(table.eval(t)?, table.derivative(t)?.abs() * mass.se);
        let mu_resolved = bnd.value.value > 3.0 * bnd.value.se;
        let lhs_resolved = lhs.value > 3.0 * lhs.se;
        let usable = mu_resolved && lhs_resolved && bnd.converged;
        if !usable {
            let why = if !lhs_resolved {
                "profile value indistinguishable from zero (trivial mass)"
            } else if !mu_resolved {
                "boundary measure unresolved"
            } else {
                "ladder not converged"
            };
            rep.notes.push(format!(
                "{label}: excluded from the constant ({why}); mass={:.4}+-{:.1e}, mu_plus={:.4}+-{:.1e}",
                mass.value, mass.se, bnd.value.value, bnd.value.se
            ));
        } else {
            rep.notes.push(format!(
                "{label}: mass={:.4}+-{:.1e}, mu_plus={:.4}+-{:.1e}, profile={:.4}",
                mass.value, mass.se, bnd.value.value, bnd.value.se, lhs.value
            ));
        }
        rows.push(Row {
            label,
            lhs,
            mu_plus: bnd.value,
            usable,
        });
    }

    let mut c_best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if !row.usable {
            continue;
        }
        let c = row.mu_plus.value / row.lhs.value;
        if c_best.map_or(true, |(_, b)| c < b) {
            c_best = Some((i, c));
        }
    }
    let (argmin, c) = c_best.ok_or_else(|| {
        Error::Inconclusive("no test set produced a resolved boundary/profile ratio".into())
    })?;
    let am = &rows[argmin];
    let c_se = c * (am.mu_plus.se / am.mu_plus.value).hypot(am.lhs.se / am.lhs.value);
    rep.fitted_constants.insert("c_iso".into(), c);
    rep.fitted_constants.insert("c_iso_se".into(), c_se);
    rep.fitted_constants.insert("c_iso_inv".into(), 1.0 / c);
    rep.notes.push(format!("constant attained by {}", am.label));
    for row in &rows {
        if row.usable {
            rep.push_check(
                row.label.clone(),
                row.lhs,
                Estimate::new(row.mu_plus.value / c, row.mu_plus.se / c),
            );
        }
    }
    Ok(rep)
}

/// Checks the coarea lower bound for the configured members: the level-set
/// boundary measures, integrated over a trimmed range of levels, stay
/// below the gradient mass.
pub fn verify_coarea(
    samples: &SampleSet,
    corpus: &FunctionCorpus,
    cfg: &IsoConfig,
) -> Result<InequalityReport> {
    let structure = &samples.structure;
    if cfg.coarea_levels < 2 {
        return Err(Error::Domain("coarea needs at least 2 level slabs".into()));
    }
    let digest = config_digest(&("coarea", structure.m(), structure.n(), cfg));
    let mut rep = InequalityReport::new(InequalityKind::Coarea, digest, corpus.id.clone());
    rep.n_eff = samples.n_eff();
    let cap = cfg.ladder.eps0 * (1.0 + 1e-9);
    let mut any = false;
    for id in &cfg.coarea_members {
        let entry = corpus
            .entries
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| Error::Domain(format!("no corpus member named {id}")))?;
        let values = entry.values(samples);
        let grads = entry.grad_values(samples)?;
        let rhs = samples.expectation_of(&grads);
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if sorted.len() != values.len() {
            return Err(Error::NonFinite(format!("values of {id}")));
        }
        sorted.sort_by(f64::total_cmp);
        let lo = sorted[(0.05 * (sorted.len() - 1) as f64).round() as usize];
        let hi = sorted[(0.95 * (sorted.len() - 1) as f64).round() as usize];
        if !(hi > lo) {
            rep.notes.push(format!("{id}: level range degenerate, skipped"));
            continue;
        }
        let ds = (hi - lo) / cfg.coarea_levels as f64;
        let mut lhs_sum = 0.0;
        let mut lhs_se = 0.0;
        let mut rough = 0usize;
        for l in 0..cfg.coarea_levels {
            let s = lo + (l as f64 + 0.5) * ds;
            let set = TestSet::Complement(Box::new(TestSet::Sublevel {
                id: id.clone(),
                field: entry.field.clone(),
                level: s,
            }));
            let seed = cfg
                .cloud_seed
                .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(l as u64 + 1));
            let geom = match SetGeometry::build(structure, set, cfg.cloud_size, seed) {
                Ok(g) => g,
                Err(Error::Infeasible(_)) => {
                    // An empty slab contributes nothing; dropping it only
                    // lowers the left side.
                    rep.notes.push(format!("{id}: level {s:.3} not crossed, slab dropped"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let dset = set_distances(&geom, samples, Some(cap))?;
            let bnd = boundary_measure(samples, &dset, &cfg.ladder)?;
            if !bnd.converged {
                rough += 1;
            }
            lhs_sum += bnd.value.value * ds;
            lhs_se += bnd.value.se * ds;
        }
        if rough > 0 {
            rep.notes.push(format!("{id}: {rough} level ladders not converged"));
        }
        rep.push_check(id.clone(), Estimate::new(lhs_sum, lhs_se), rhs);
        any = true;
    }
    if !any {
        return Err(Error::Inconclusive("no member yielded a usable level range".into()));
    }
    Ok(rep)
}

/// The positive constant `(log3/log2)^beta - 1` in the pointwise
/// estimate connecting entropy to isoperimetry.
pub fn eta_constant(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0, 1], got {beta}")));
    }
    Ok((3.0f64.ln() / 2.0f64.ln()).powf(beta) - 1.0)
}

/// Checks, on a uniform grid over `(0, 1/2]`, the pointwise estimate
/// `eta (log 1/t)^beta <= (log(1 + 1/t))^beta - (log 2)^beta`.
/// Equality holds at `t = 1/2`, so margins are compared with a small
/// roundoff slack. Returns the number of violations and the smallest
/// margin found.
pub fn check_eta_estimate(beta: f64, grid: usize) -> Result<(usize, f64)> {
    let eta = eta_constant(beta)?;
    if grid < 2 {
        return Err(Error::Domain("eta grid needs at least 2 points".into()));
    }
    let log2b = 2.0f64.ln().powf(beta);
    let mut violations = 0usize;
    let mut min_margin = f64::INFINITY;
    for i in 1..=grid {
        let t = 0.5 * i as f64 / grid as f64;
        let lhs = eta * (1.0 / t).ln().powf(beta);
        let rhs = (1.0 + 1.0 / t).ln().powf(beta) - log2b;
        let margin = rhs - lhs;
        if margin < -1e-12 * (1.0 + rhs.abs()) {
            violations += 1;
        }
        if margin < min_margin {
            min_margin = margin;
        }
    }
    Ok((violations, min_margin))
}

/// The isoperimetric constant implied by an entropy constant `c` through
/// the eta estimate and the profile equivalence constant `L_q`:
/// `c_tilde = (c / eta) L_q`, giving `mu^+(A) >= U_q(mu A) / c_tilde`.
pub fn implied_iso_constant(c_entropy: f64, beta: f64, l_q: f64) -> Result<f64> {
    if !(c_entropy > 0.0) || !(l_q > 0.0) {
        return Err(Error::Domain(
            "entropy and equivalence constants must be positive".into(),
        ));
    }
    Ok(c_entropy / eta_constant(beta)? * l_q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusEntry;
    use crate::measure::{sample_measure, ChainConfig, MeasureSpec};
    use crate::profile::profile_uq;
    use approx::assert_abs_diff_eq;

    fn line_samples(n_samples: usize, seed: u64) -> (MeasureSpec, SampleSet) {
        let s = HTypeStructure::preset("euclidean(1)").unwrap();
        let spec = MeasureSpec::new(s, 2.0, 1.0).unwrap();
        let cfg = ChainConfig {
            n_samples,
            seed,
            ..ChainConfig::default()
        };
        let set = sample_measure(&spec, &cfg).unwrap();
        (spec, set)
    }

    #[test]
    fn labels_and_membership_behave() {
        let s = HTypeStructure::preset("heisenberg1").unwrap();
        let ball = SetGeometry::build(&s, TestSet::MetricBall { radius: 1.0 }, 64, 1).unwrap();
        assert_eq!(ball.label(), "ball[r=1]");
        let origin = GroupPoint::new(vec![0.0, 0.0], vec![0.0]);
        assert!(ball.contains(&origin).unwrap());
        let far = GroupPoint::new(vec![3.0, 0.0], vec![0.0]);
        assert!(!ball.contains(&far).unwrap());
        let comp = SetGeometry::build(
            &s,
            TestSet::Complement(Box::new(TestSet::MetricBall { radius: 1.0 })),
            64,
            1,
        )
        .unwrap();
        assert!(!comp.contains(&origin).unwrap());
        assert!(comp.contains(&far).unwrap());
        // Doubled complements collapse.
        let double = TestSet::Complement(Box::new(TestSet::Complement(Box::new(
            TestSet::HalfSpace { axis: 0, level: 0.0 },
        ))))
        .normalized();
        assert_eq!(double.label(), "halfspace[x1<=0]");
    }

    #[test]
    fn ball_and_halfspace_distances_are_exact() {
        let s = HTypeStructure::preset("heisenberg1").unwrap();
        let ball = SetGeometry::build(&s, TestSet::MetricBall { radius: 0.7 }, 64, 1).unwrap();
        // Purely horizontal points have distance |x|.
        let g = GroupPoint::new(vec![1.4, 0.0], vec![0.0]);
        assert_abs_diff_eq!(ball.dist_to_set(&g, None).unwrap(), 0.7, epsilon = 1e-9);
        let inside = GroupPoint::new(vec![0.3, 0.0], vec![0.0]);
        assert_eq!(ball.dist_to_set(&inside, None).unwrap(), 0.0);
        let comp = SetGeometry::build(
            &s,
            TestSet::Complement(Box::new(TestSet::MetricBall { radius: 0.7 })),
            64,
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(comp.dist_to_set(&inside, None).unwrap(), 0.4, epsilon = 1e-9);
        let half = SetGeometry::build(&s, TestSet::HalfSpace { axis: 0, level: 0.5 }, 64, 1).unwrap();
        let p = GroupPoint::new(vec![1.3, -0.4], vec![0.2]);
        assert_abs_diff_eq!(half.dist_to_set(&p, None).unwrap(), 0.8, epsilon = 1e-12);
        let q = GroupPoint::new(vec![-2.0, 5.0], vec![-3.0]);
        assert_eq!(half.dist_to_set(&q, None).unwrap(), 0.0);
        // Half-space axes must be horizontal.
        assert!(SetGeometry::build(&s, TestSet::HalfSpace { axis: 2, level: 0.0 }, 64, 1).is_err());
    }

    #[test]
    fn sublevel_cloud_distance_matches_coordinate_oracle() {
        // On the plane with f = x_1, the sublevel set {x_1 <= 0} is a
        // half-plane and the distance from (a, b) with a > 0 is a.
        let s = HTypeStructure::preset("euclidean(2)").unwrap();
        let f = ScalarField::new(|g: &GroupPoint| g.x[0]);
        let geom = SetGeometry::build(
            &s,
            TestSet::Sublevel {
                id: "coord".into(),
                field: f,
                level: 0.0,
            },
            2048,
            5,
        )
        .unwrap();
        let g = GroupPoint::new(vec![1.3, 0.7], vec![]);
        let d = geom.dist_to_set(&g, None).unwrap();
        assert!(
            (d - 1.3).abs() < 0.02,
            "cloud distance {d} should be close to 1.3"
        );
        let inside = GroupPoint::new(vec![-0.5, 0.2], vec![]);
        assert_eq!(geom.dist_to_set(&inside, None).unwrap(), 0.0);
    }

    #[test]
    fn ball_enlargement_matches_direct_membership() {
        let (_, set) = line_samples(2000, 11);
        let s = set.structure.clone();
        let geom = SetGeometry::build(&s, TestSet::MetricBall { radius: 0.8 }, 64, 1).unwrap();
        let dset = set_distances(&geom, &set, Some(0.5)).unwrap();
        let enl = enlargement_measure(&set, &dset, 0.3).unwrap();
        let direct: Vec<f64> = set
            .dists
            .iter()
            .map(|d| if *d <= 1.1 { 1.0 } else { 0.0 })
            .collect();
        let dm = set.expectation_of(&direct);
        assert_abs_diff_eq!(enl.value, dm.value, epsilon = 1e-9);
        // Enlargement never shrinks the set.
        let mass = enlargement_measure(&set, &dset, 0.0).unwrap();
        assert!(enl.value >= mass.value);
    }

    #[test]
    fn halfspace_boundary_measure_matches_density_value() {
        // For the measure with density exp(-x^2)/sqrt(pi) on the line, the
        // boundary measure of {x <= 0} is the density at zero.
        let (_, set) = line_samples(8000, 3);
        let s = set.structure.clone();
        let geom = SetGeometry::build(&s, TestSet::HalfSpace { axis: 0, level: 0.0 }, 64, 1).unwrap();
        let dset = set_distances(&geom, &set, Some(0.5)).unwrap();
        let bnd = boundary_measure(&set, &dset, &LadderConfig::default()).unwrap();
        let oracle = 1.0 / std::f64::consts::PI.sqrt();
        assert!(
            (bnd.value.value - oracle).abs() <= 4.0 * bnd.value.se + 0.02,
            "mu_plus {} +- {} vs density {}",
            bnd.value.value,
            bnd.value.se,
            oracle
        );
        assert!(bnd.converged);
        assert_eq!(bnd.ladder.len(), 5);
    }

    #[test]
    fn complement_has_matching_boundary_measure() {
        let (_, set) = line_samples(8000, 5);
        let s = set.structure.clone();
        let cfg = LadderConfig::default();
        let a = SetGeometry::build(&s, TestSet::MetricBall { radius: 0.8 }, 64, 1).unwrap();
        let b = SetGeometry::build(
            &s,
            TestSet::Complement(Box::new(TestSet::MetricBall { radius: 0.8 })),
            64,
            1,
        )
        .unwrap();
        let da = set_distances(&a, &set, Some(0.5)).unwrap();
        let db = set_distances(&b, &set, Some(0.5)).unwrap();
        let pa = boundary_measure(&set, &da, &cfg).unwrap();
        let pb = boundary_measure(&set, &db, &cfg).unwrap();
        assert!(
            (pa.value.value - pb.value.value).abs() <= 3.0 * (pa.value.se + pb.value.se) + 0.05,
            "outer boundary {} vs inner boundary {}",
            pa.value.value,
            pb.value.value
        );
    }

    #[test]
    fn line_battery_fits_finite_constant_without_violations() {
        let (_, set) = line_samples(6000, 9);
        let table = profile_uq(2.0, 120, 1e-8).unwrap();
        let corpus = crate::corpus::standard_corpus(&set.structure);
        let cfg = IsoConfig {
            cloud_size: 512,
            ball_radii: vec![0.8],
            halfspace_levels: vec![0.0],
            sublevels: vec![],
            coarea_members: vec![],
            ..IsoConfig::default()
        };
        let rep = verify_isoperimetry(&set, &table, &corpus, &cfg).unwrap();
        assert!(rep.violations.is_empty(), "violations: {:?}", rep.violations);
        let c = rep.constant("c_iso").unwrap();
        assert!(c.is_finite() && c > 0.0, "c_iso = {c}");
        assert!(rep.per_function.len() >= 2);
        assert_abs_diff_eq!(rep.constant("c_iso_inv").unwrap(), 1.0 / c, epsilon = 1e-12);
    }

    #[test]
    fn coarea_is_tight_for_the_coordinate_function() {
        // f = x on the Gaussian-like line: mu|grad f| = 1 and the level
        // integral of boundary measures approaches 1 from below.
        let (_, set) = line_samples(8000, 13);
        let coord = CorpusEntry {
            id: "coord".into(),
            field: ScalarField::new(|g: &GroupPoint| g.x[0]).with_grad_norm(|_| 1.0),
            tags: vec![],
        };
        let corpus = FunctionCorpus {
            id: "test:coord".into(),
            entries: vec![coord],
        };
        let cfg = IsoConfig {
            cloud_size: 256,
            coarea_members: vec!["coord".into()],
            coarea_levels: 8,
            sublevels: vec![],
            ..IsoConfig::default()
        };
        let rep = verify_coarea(&set, &corpus, &cfg).unwrap();
        assert!(rep.violations.is_empty(), "violations: {:?}", rep.violations);
        let row = &rep.per_function[0];
        assert_abs_diff_eq!(row.rhs.value, 1.0, epsilon = 1e-9);
        assert!(
            row.lhs.value > 0.7 && row.lhs.value <= 1.0 + 3.0 * (row.lhs.se + row.rhs.se),
            "level integral {} +- {}",
            row.lhs.value,
            row.lhs.se
        );
    }

    #[test]
    fn eta_estimate_holds_with_equality_at_one_half() {
        for beta in [1.0, 0.5] {
            let (violations, min_margin) = check_eta_estimate(beta, 1000).unwrap();
            assert_eq!(violations, 0, "beta = {beta}");
            assert!(min_margin >= -1e-12, "beta = {beta}: margin {min_margin}");
            // The margin closes exactly at t = 1/2 (the last grid point).
            assert!(
                min_margin.abs() <= 1e-12,
                "beta = {beta}: margin at t=1/2 should vanish, got {min_margin}"
            );
        }
        assert!(check_eta_estimate(1.5, 100).is_err());
        assert!(check_eta_estimate(0.0, 100).is_err());
        // beta = 1: eta = log3/log2 - 1 = log(3/2)/log2.
        let eta = eta_constant(1.0).unwrap();
        assert_abs_diff_eq!(eta, (1.5f64).ln() / (2.0f64).ln(), epsilon = 1e-15);
        let c_tilde = implied_iso_constant(2.0, 1.0, 1.3).unwrap();
        assert_abs_diff_eq!(c_tilde, 2.0 / eta * 1.3, epsilon = 1e-15);
    }

    #[test]
    fn battery_rejects_unknown_member_names() {
        let (_, set) = line_samples(500, 1);
        let table = profile_uq(2.0, 80, 1e-8).unwrap();
        let corpus = crate::corpus::standard_corpus(&set.structure);
        let cfg = IsoConfig {
            sublevels: vec![("no-such-member".into(), 0.5)],
            coarea_members: vec![],
            ..IsoConfig::default()
        };
        assert!(matches!(
            verify_isoperimetry(&set, &table, &corpus, &cfg),
            Err(Error::Domain(_))
        ));
    }
}
