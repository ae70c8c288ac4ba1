//! The standard function corpus.
//!
//! Every inequality in this crate quantifies over "all locally Lipschitz
//! functions"; a finite corpus can only probe that claim, never prove it,
//! so reports carry the corpus id and size. The standard corpus mixes
//! families chosen to stress the fitted constants:
//!
//! * radial composites `h(d)` of the distance, including near-extremizers
//!   shaped like truncated `exp(d^2/8)` growth,
//! * smooth coordinate bumps and polynomial-times-bump members with exact
//!   closed-form partials,
//! * log-density composites such as `exp(-d^2/2)`,
//! * smoothed indicator functions with values in `[0, 1]` (tagged
//!   `"unit"`) for the isoperimetric functional checks,
//! * deliberately awkward members (a constant, mixed products evaluated
//!   with finite-difference gradients).
//!
//! Radial members carry the exact gradient modulus `|h'(d)|` (the
//! distance has unit horizontal gradient almost everywhere); smooth
//! members carry closed-form partial derivatives. Both are validated
//! against finite differences in the tests.

use std::sync::Arc;

use rayon::prelude::*;

use crate::distance::cc_distance;
use crate::error::{Error, Result};
use crate::htype::{GroupPoint, HTypeStructure, ScalarField};
use crate::measure::SampleSet;

/// Minimum corpus size for any fitted-constant claim.
pub const MIN_CORPUS: usize = 20;

/// One corpus member: an identified scalar field with family tags.
#[derive(Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub field: ScalarField,
    pub tags: Vec<&'static str>,
}

impl CorpusEntry {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| *t == tag)
    }

    /// Field values at every sample point.
    pub fn values(&self, set: &SampleSet) -> Vec<f64> {
        set.eval(&self.field)
    }

    /// `|grad f|` at every sample point (exact where the entry carries
    /// closed-form derivatives, finite differences otherwise).
    pub fn grad_values(&self, set: &SampleSet) -> Result<Vec<f64>> {
        set.points
            .par_iter()
            .map(|g| set.structure.gradient_norm(&self.field, g))
            .collect()
    }
}

impl std::fmt::Debug for CorpusEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorpusEntry")
            .field("id", &self.id)
            .field("tags", &self.tags)
            .finish()
    }
}

/// A named, finite family of test functions.
#[derive(Debug, Clone)]
pub struct FunctionCorpus {
    pub id: String,
    pub entries: Vec<CorpusEntry>,
}

impl FunctionCorpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Members with values in `[0, 1]`.
    pub fn unit_entries(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(|e| e.has_tag("unit"))
    }

    /// Errors unless the corpus is large enough to support a
    /// fitted-constant claim.
    pub fn require_minimum(&self) -> Result<()> {
        if self.len() < MIN_CORPUS {
            return Err(Error::CorpusTooSmall {
                need: MIN_CORPUS,
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// Cubic smoothstep: 0 below 0, 1 above 1, `3u^2 - 2u^3` between.
fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * (3.0 - 2.0 * u)
    }
}

fn smoothstep_deriv(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        6.0 * u * (1.0 - u)
    }
}

/// Builds a radial member `f = h(d)` with exact gradient modulus
/// `|h'(d)|`.
fn radial(
    structure: &HTypeStructure,
    id: &str,
    tags: Vec<&'static str>,
    h: impl Fn(f64) -> f64 + Send + Sync + 'static,
    dh: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> CorpusEntry {
    let s1 = structure.clone();
    let s2 = structure.clone();
    let h = Arc::new(h);
    let h_eval = h.clone();
    let field = ScalarField::new(move |g: &GroupPoint| match cc_distance(&s1, g) {
        Ok(d) => h_eval(d),
        Err(_) => f64::NAN,
    })
    .with_grad_norm(move |g: &GroupPoint| match cc_distance(&s2, g) {
        Ok(d) => dh(d).abs(),
        Err(_) => f64::NAN,
    });
    CorpusEntry {
        id: id.into(),
        field,
        tags,
    }
}

/// Builds a smooth member from closed-form partials `(d/dx, d/dz)`.
fn smooth(
    id: &str,
    tags: Vec<&'static str>,
    eval: impl Fn(&GroupPoint) -> f64 + Send + Sync + 'static,
    partials: impl Fn(&GroupPoint) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
) -> CorpusEntry {
    CorpusEntry {
        id: id.into(),
        field: ScalarField::new(eval).with_partials(partials),
        tags,
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// The standard corpus for a structure: at least [`MIN_CORPUS`] members
/// spanning bumps, polynomial-times-bump products, distance composites,
/// log-density composites, and `[0,1]`-valued indicator smoothings.
pub fn standard_corpus(structure: &HTypeStructure) -> FunctionCorpus {
    let mut entries: Vec<CorpusEntry> = Vec::new();
    let s = structure;

    // --- Radial distance composites -----------------------------------
    entries.push(radial(s, "radial-bump", vec!["radial", "bump"], |d| (-d * d).exp(), |d| {
        -2.0 * d * (-d * d).exp()
    }));
    entries.push(radial(s, "radial-cauchy", vec!["radial"], |d| 1.0 / (1.0 + d * d), |d| {
        -2.0 * d / (1.0 + d * d).powi(2)
    }));
    entries.push(radial(s, "radial-tanh", vec!["radial"], |d| (d - 1.0).tanh(), |d| {
        1.0 / (d - 1.0).cosh().powi(2)
    }));
    // Truncated exponential growth, shaped like the extremizers of the
    // exponential-moment bounds.
    entries.push(radial(
        s,
        "radial-trunc-growth",
        vec!["radial", "adversarial"],
        |d| (d.min(3.0).powi(2) / 8.0).exp(),
        |d| {
            if d < 3.0 {
                (d / 4.0) * (d * d / 8.0).exp()
            } else {
                0.0
            }
        },
    ));
    entries.push(radial(s, "radial-dexp", vec!["radial"], |d| d * (-d).exp(), |d| {
        (1.0 - d) * (-d).exp()
    }));
    entries.push(radial(
        s,
        "radial-annulus-bump",
        vec!["radial", "bump"],
        |d| (-(d - 2.0) * (d - 2.0)).exp(),
        |d| -2.0 * (d - 2.0) * (-(d - 2.0) * (d - 2.0)).exp(),
    ));
    entries.push(radial(
        s,
        "radial-log-damp",
        vec!["radial"],
        |d| (1.0 + d).ln() * (-d * d / 2.0).exp(),
        |d| ((-d * d / 2.0).exp() / (1.0 + d)) - d * (1.0 + d).ln() * (-d * d / 2.0).exp(),
    ));
    entries.push(radial(s, "radial-cap", vec!["radial"], |d| d.min(3.0), |d| {
        if d < 3.0 {
            1.0
        } else {
            0.0
        }
    }));
    // Log-density composites for the default tail weight exp(-d^2).
    entries.push(radial(
        s,
        "logdensity-half",
        vec!["radial", "log-density"],
        |d| (-d * d / 2.0).exp(),
        |d| -d * (-d * d / 2.0).exp(),
    ));
    entries.push(radial(
        s,
        "logdensity-ue",
        vec!["radial", "log-density"],
        |d| d * d * (-d * d).exp(),
        |d| (2.0 * d - 2.0 * d * d * d) * (-d * d).exp(),
    ));
    entries.push(radial(s, "radial-decay", vec!["radial"], |d| (1.0 + d).powi(-5), |d| {
        -5.0 * (1.0 + d).powi(-6)
    }));

    // --- Smooth coordinate members with exact partials ----------------
    let m = s.m();
    let n = s.n();
    let gauss = move |g: &GroupPoint| (-(sq_norm(&g.x) + sq_norm(&g.z))).exp();
    let gauss_partials = move |g: &GroupPoint| {
        let v = (-(sq_norm(&g.x) + sq_norm(&g.z))).exp();
        let px: Vec<f64> = g.x.iter().map(|xi| -2.0 * xi * v).collect();
        let pz: Vec<f64> = g.z.iter().map(|zk| -2.0 * zk * v).collect();
        (px, pz)
    };
    // Scales a product rule: (c(g) * gauss)' = c' * gauss + c * gauss'.
    let scaled = move |g: &GroupPoint, c: f64| -> (Vec<f64>, Vec<f64>) {
        let (mut px, mut pz) = gauss_partials(g);
        for q in px.iter_mut().chain(pz.iter_mut()) {
            *q *= c;
        }
        (px, pz)
    };
    entries.push(smooth("gauss-flat", vec!["bump"], gauss, gauss_partials));
    entries.push(smooth(
        "x1-gauss",
        vec!["poly-bump"],
        move |g| g.x[0] * gauss(g),
        move |g| {
            let (mut px, pz) = scaled(g, g.x[0]);
            px[0] += gauss(g);
            (px, pz)
        },
    ));
    entries.push(smooth(
        "sin-gauss",
        vec!["poly-bump"],
        move |g| g.x[0].sin() * gauss(g),
        move |g| {
            let (mut px, pz) = scaled(g, g.x[0].sin());
            px[0] += g.x[0].cos() * gauss(g);
            (px, pz)
        },
    ));
    entries.push(smooth(
        "poly-gauss",
        vec!["poly-bump"],
        move |g| (g.x[0] * g.x[0] - 1.0) * gauss(g),
        move |g| {
            let (mut px, pz) = scaled(g, g.x[0] * g.x[0] - 1.0);
            px[0] += 2.0 * g.x[0] * gauss(g);
            (px, pz)
        },
    ));
    if n >= 1 {
        entries.push(smooth(
            "z1-gauss",
            vec!["poly-bump"],
            move |g| g.z[0] * gauss(g),
            move |g| {
                let (px, mut pz) = scaled(g, g.z[0]);
                pz[0] += gauss(g);
                (px, pz)
            },
        ));
    }
    // Gauge-radial bump exp(-N^2) with N the homogeneous gauge.
    let central = crate::htype::KAPLAN_CENTRAL_COEFF;
    entries.push(smooth(
        "gauge-exp",
        vec!["bump"],
        move |g| {
            let srt = (sq_norm(&g.x).powi(2) + central * sq_norm(&g.z)).sqrt();
            (-srt).exp()
        },
        move |g| {
            let x2 = sq_norm(&g.x);
            let srt = (x2 * x2 + central * sq_norm(&g.z)).sqrt();
            if srt < 1e-120 {
                return (vec![0.0; m], vec![0.0; n]);
            }
            let v = (-srt).exp();
            let px = g.x.iter().map(|xi| -2.0 * xi * x2 / srt * v).collect();
            let pz = g.z.iter().map(|zk| -central * zk / srt * v).collect();
            (px, pz)
        },
    ));

    // --- [0,1]-valued indicator smoothings ----------------------------
    entries.push(radial(
        s,
        "unit-ball",
        vec!["radial", "unit", "indicator-smoothing"],
        |d| smoothstep((1.5 - d) / 0.8),
        |d| -smoothstep_deriv((1.5 - d) / 0.8) / 0.8,
    ));
    entries.push(radial(
        s,
        "unit-annulus",
        vec!["radial", "unit", "indicator-smoothing"],
        |d| smoothstep((d - 1.0) / 0.4) * smoothstep((2.5 - d) / 0.4),
        |d| {
            smoothstep_deriv((d - 1.0) / 0.4) / 0.4 * smoothstep((2.5 - d) / 0.4)
                - smoothstep((d - 1.0) / 0.4) * smoothstep_deriv((2.5 - d) / 0.4) / 0.4
        },
    ));
    entries.push(smooth(
        "unit-half",
        vec!["unit", "indicator-smoothing"],
        move |g| smoothstep((0.3 - g.x[0]) / 0.7),
        move |g| {
            let mut px = vec![0.0; m];
            px[0] = -smoothstep_deriv((0.3 - g.x[0]) / 0.7) / 0.7;
            (px, vec![0.0; n])
        },
    ));
    entries.push(smooth(
        "unit-gauge",
        vec!["unit", "indicator-smoothing"],
        move |g| {
            let gauge = (sq_norm(&g.x).powi(2) + central * sq_norm(&g.z))
                .sqrt()
                .sqrt();
            smoothstep((1.5 - gauge) / 0.8)
        },
        move |g| {
            let x2 = sq_norm(&g.x);
            let s4 = x2 * x2 + central * sq_norm(&g.z);
            let gauge = s4.sqrt().sqrt();
            let du = -smoothstep_deriv((1.5 - gauge) / 0.8) / 0.8;
            if du == 0.0 || gauge < 1e-60 {
                return (vec![0.0; m], vec![0.0; n]);
            }
            let n3 = gauge.powi(3);
            let px = g.x.iter().map(|xi| du * xi * x2 / n3).collect();
            let pz = g.z.iter().map(|zk| du * central * zk / (2.0 * n3)).collect();
            (px, pz)
        },
    ));

    // --- Awkward members ----------------------------------------------
    entries.push(CorpusEntry {
        id: "const".into(),
        field: ScalarField::constant(1.0),
        tags: vec!["const"],
    });
    {
        let s1 = s.clone();
        entries.push(CorpusEntry {
            id: "mixed-radial-sin".into(),
            field: ScalarField::new(move |g: &GroupPoint| {
                let d = cc_distance(&s1, g).unwrap_or(f64::NAN);
                (-d * d / 2.0).exp() * (1.0 + 0.5 * g.x[0].sin())
            }),
            tags: vec!["mixed"],
        });
        let s2 = s.clone();
        entries.push(CorpusEntry {
            id: "mixed-radial-rational".into(),
            field: ScalarField::new(move |g: &GroupPoint| {
                let d = cc_distance(&s2, g).unwrap_or(f64::NAN);
                (-d * d).exp() / (1.0 + g.x[0] * g.x[0])
            }),
            tags: vec!["mixed"],
        });
    }

    FunctionCorpus {
        id: format!("builtin:standard[m={m},n={n}]"),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn random_point(s: &HTypeStructure, rng: &mut ChaCha8Rng) -> GroupPoint {
        let x = (0..s.m()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let z = (0..s.n()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        GroupPoint::new(x, z)
    }

    #[test]
    fn standard_corpus_is_large_enough() {
        for preset in ["heisenberg1", "euclidean(2)", "quaternionic"] {
            let s = HTypeStructure::preset(preset).unwrap();
            let c = standard_corpus(&s);
            assert!(c.len() >= MIN_CORPUS, "{preset}: {} members", c.len());
            c.require_minimum().unwrap();
            assert!(c.unit_entries().count() >= 3);
        }
    }

    #[test]
    fn small_corpus_is_refused() {
        let s = HTypeStructure::preset("euclidean(1)").unwrap();
        let mut c = standard_corpus(&s);
        c.entries.truncate(5);
        assert!(c.require_minimum().is_err());
    }

    #[test]
    fn members_are_finite_and_units_stay_in_range() {
        let s = HTypeStructure::preset("heisenberg1").unwrap();
        let c = standard_corpus(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let g = random_point(&s, &mut rng);
            for e in &c.entries {
                let v = e.field.eval(&g);
                assert!(v.is_finite(), "{} at {g}", e.id);
                if e.has_tag("unit") {
                    assert!((0.0..=1.0).contains(&v), "{} = {v} outside [0,1]", e.id);
                }
            }
        }
    }

    #[test]
    fn declared_gradients_match_finite_differences() {
        // Strip each member's exact-derivative hints and compare the
        // finite-difference gradient against the declared one.
        let s = HTypeStructure::preset("heisenberg1").unwrap();
        let c = standard_corpus(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for e in &c.entries {
            if e.has_tag("mixed") || e.has_tag("const") {
                continue; // no declared derivatives to validate
            }
            let eval = e.field.clone();
            let stripped = ScalarField::new(move |g: &GroupPoint| eval.eval(g));
            for _ in 0..4 {
                let mut g = random_point(&s, &mut rng);
                // Stay away from the non-smooth locus of the capped members.
                g.x[0] += 0.1;
                let exact = s.gradient_norm(&e.field, &g).unwrap();
                let fd = s.gradient_norm(&stripped, &g).unwrap();
                let tol = 5e-4 * (1.0 + exact);
                assert!(
                    (exact - fd).abs() <= tol,
                    "{}: exact {exact} vs fd {fd} at {g}",
                    e.id
                );
            }
        }
    }

    #[test]
    fn constant_member_has_zero_gradient() {
        let s = HTypeStructure::preset("heisenberg1").unwrap();
        let c = standard_corpus(&s);
        let e = c.entries.iter().find(|e| e.id == "const").unwrap();
        let g = GroupPoint::new(vec![0.4, -0.2], vec![0.3]);
        assert_eq!(e.field.eval(&g), 1.0);
        assert_eq!(s.gradient_norm(&e.field, &g).unwrap(), 0.0);
    }
}
