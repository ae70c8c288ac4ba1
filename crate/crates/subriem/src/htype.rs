//! H-type group algebra: points, the group law, dilations, the horizontal
//! frame, and first/second horizontal derivatives of scalar fields.
//!
//! An H-type structure on `R^m x R^n` is given by skew-symmetric matrices
//! `J_1, ..., J_n` on `R^m` satisfying the composition law
//! `J_a J_b + J_b J_a = -2 delta_ab I`, equivalently `(sum_k u_k J_k)^2 =
//! -|u|^2 I` for every `u in R^n`. The group law on points `g = (x, z)` is
//!
//! ```text
//! (x, z) . (x', z') = (x + x', z + z' + 1/2 <J x, x'>),   <J x, x'>_k = <J_k x, x'>.
//! ```
//!
//! The horizontal frame uses the matching `1/2` convention:
//!
//! ```text
//! X_j = d/dx_j + 1/2 sum_k (J_k x)_j d/dz_k,
//! ```
//!
//! so that `t -> g . (t e_j, 0)` is the integral curve of `X_j` through `g`.
//! Dilations `delta_r(x, z) = (r x, r^2 z)` are automorphisms; the
//! homogeneous dimension is `Q = m + 2n`. With `n = 0` everything degenerates
//! to the abelian group `R^m` with its usual calculus.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of `|z|^2` inside the homogeneous gauge
/// `N(x,z) = (|x|^4 + c |z|^2)^{1/4}`, calibrated for the `1/2` group-law
/// convention so that the gauge is comparable to the Carnot-Caratheodory
/// distance with constants close to 1 (equal to `d` on the horizontal axis).
pub const KAPLAN_CENTRAL_COEFF: f64 = 16.0;

/// Base factor of the finite-difference step `h = FD_STEP_BASE * (1 + |coordinate|)`.
pub const FD_STEP_BASE: f64 = 1e-5;

/// Tolerance for the structural checks (skew-symmetry, composition law).
const STRUCTURE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

/// An H-type group structure: horizontal dimension `m`, central dimension
/// `n`, and the defining skew-symmetric matrices `J_1..J_n` (each `m x m`,
/// stored row-major).
///
/// Construction validates skew-symmetry and the composition law
/// `J_a J_b + J_b J_a = -2 delta_ab I`; every instance in circulation is
/// therefore a genuine H-type structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawStructure", into = "RawStructure")]
pub struct HTypeStructure {
    m: usize,
    n: usize,
    /// `j[k]` is the matrix `J_k`, row-major, length `m * m`.
    j: Vec<Vec<f64>>,
}

/// Serialization mirror of [`HTypeStructure`]; deserialization funnels
/// through [`HTypeStructure::new`] so invalid structures are rejected with
/// the same diagnostics as programmatic construction. Unknown keys are
/// rejected to keep configuration files honest.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStructure {
    m: usize,
    n: usize,
    #[serde(rename = "J")]
    j: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawStructure> for HTypeStructure {
    type Error = Error;
    fn try_from(raw: RawStructure) -> Result<Self> {
        let mats: Vec<Vec<f64>> = raw
            .j
            .iter()
            .map(|rows| {
                if rows.len() != raw.m || rows.iter().any(|r| r.len() != raw.m) {
                    Err(Error::DimensionMismatch(format!(
                        "each J matrix must be {m} x {m}",
                        m = raw.m
                    )))
                } else {
                    Ok(rows.iter().flatten().copied().collect())
                }
            })
            .collect::<Result<_>>()?;
        HTypeStructure::new(raw.m, raw.n, mats)
    }
}

impl From<HTypeStructure> for RawStructure {
    fn from(s: HTypeStructure) -> Self {
        let m = s.m;
        RawStructure {
            m,
            n: s.n,
            j: s
                .j
                .iter()
                .map(|flat| flat.chunks(m).map(|row| row.to_vec()).collect())
                .collect(),
        }
    }
}

impl HTypeStructure {
    /// Builds and validates a structure. `j` holds `n` row-major `m x m`
    /// matrices. With `n = 0` the structure is the abelian group `R^m`.
    pub fn new(m: usize, n: usize, j: Vec<Vec<f64>>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("horizontal dimension m must be >= 1".into()));
        }
        if j.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} J matrices, got {}",
                j.len()
            )));
        }
        for (k, mat) in j.iter().enumerate() {
            if mat.len() != m * m {
                return Err(Error::DimensionMismatch(format!(
                    "J_{k} must be {m} x {m}"
                )));
            }
            for a in 0..m {
                for b in 0..m {
                    if (mat[a * m + b] + mat[b * m + a]).abs() > STRUCTURE_TOL {
                        return Err(Error::InvalidStructure(format!(
                            "J_{k} is not skew-symmetric at ({a},{b})"
                        )));
                    }
                }
            }
        }
        // Composition law J_a J_b + J_b J_a = -2 delta_ab I, the polarized
        // form of (sum u_k J_k)^2 = -|u|^2 I.
        for a in 0..n {
            for b in a..n {
                let target = if a == b { -2.0 } else { 0.0 };
                for r in 0..m {
                    for c in 0..m {
                        let mut s = 0.0;
                        for t in 0..m {
                            s += j[a][r * m + t] * j[b][t * m + c]
                                + j[b][r * m + t] * j[a][t * m + c];
                        }
                        let want = if r == c { target } else { 0.0 };
                        if (s - want).abs() > 1e-10 {
                            return Err(Error::InvalidStructure(format!(
                                "J_{a}, J_{b} violate the H-type composition law at ({r},{c})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { m, n, j })
    }

    /// Horizontal dimension.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Central dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Topological dimension `m + n` (the flat chart dimension).
    pub fn dim(&self) -> usize {
        self.m + self.n
    }

    /// Homogeneous dimension `Q = m + 2n`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.m + 2 * self.n
    }

    /// `out = J_k x`.
    #[inline]
    pub fn j_apply(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        let mat = &self.j[k];
        for r in 0..m {
            let mut s = 0.0;
            for c in 0..m {
                s += mat[r * m + c] * x[c];
            }
            out[r] = s;
        }
    }

    /// `<J_k x, y>`.
    #[inline]
    pub fn j_form(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        let m = self.m;
        let mat = &self.j[k];
        let mut s = 0.0;
        for r in 0..m {
            let mut row = 0.0;
            for c in 0..m {
                row += mat[r * m + c] * x[c];
            }
            s += row * y[r];
        }
        s
    }

    // -- group operations ---------------------------------------------------

    /// The identity element `(0, 0)`.
    pub fn identity(&self) -> GroupPoint {
        GroupPoint {
            x: vec![0.0; self.m],
            z: vec![0.0; self.n],
        }
    }

    /// Group product `a . b`.
    pub fn group_mul(&self, a: &GroupPoint, b: &GroupPoint) -> Result<GroupPoint> {
        self.check_point(a)?;
        self.check_point(b)?;
        let mut x = a.x.clone();
        for (xi, bi) in x.iter_mut().zip(&b.x) {
            *xi += bi;
        }
        let mut z = Vec::with_capacity(self.n);
        for k in 0..self.n {
            z.push(a.z[k] + b.z[k] + 0.5 * self.j_form(k, &a.x, &b.x));
        }
        Ok(GroupPoint { x, z })
    }

    /// Group inverse; in a step-2 group this is coordinate negation.
    pub fn group_inv(&self, a: &GroupPoint) -> Result<GroupPoint> {
        self.check_point(a)?;
        Ok(GroupPoint {
            x: a.x.iter().map(|v| -v).collect(),
            z: a.z.iter().map(|v| -v).collect(),
        })
    }

    /// Anisotropic dilation `delta_r(x, z) = (r x, r^2 z)`, `r > 0`.
    pub fn dilate(&self, r: f64, a: &GroupPoint) -> Result<GroupPoint> {
        self.check_point(a)?;
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("dilation factor must be positive, got {r}")));
        }
        Ok(GroupPoint {
            x: a.x.iter().map(|v| r * v).collect(),
            z: a.z.iter().map(|v| r * r * v).collect(),
        })
    }

    /// In-place right multiplication by a purely horizontal increment:
    /// `(x, z) <- (x, z) . (dx, 0)`. This is the hot operation of path
    /// simulation; central coordinates pick up the exact area increment
    /// `1/2 <J_k x, dx>`.
    #[inline]
    pub fn compose_step(&self, x: &mut [f64], z: &mut [f64], dx: &[f64]) {
        for k in 0..self.n {
            z[k] += 0.5 * self.j_form(k, x, dx);
        }
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
    }

    /// Homogeneous gauge `N(x, z) = (|x|^4 + c |z|^2)^{1/4}` with the
    /// calibrated coefficient [`KAPLAN_CENTRAL_COEFF`]. Vanishes only at the
    /// identity and scales exactly linearly under dilations.
    pub fn kaplan_norm(&self, a: &GroupPoint) -> Result<f64> {
        self.check_point(a)?;
        let x2: f64 = a.x.iter().map(|v| v * v).sum();
        let z2: f64 = a.z.iter().map(|v| v * v).sum();
        Ok((x2 * x2 + KAPLAN_CENTRAL_COEFF * z2).sqrt().sqrt())
    }

    /// `(|x|, |z|)` — the radial coordinates that all rotationally invariant
    /// quantities (gauge, distance) depend on.
    pub fn radial_coords(&self, a: &GroupPoint) -> (f64, f64) {
        let x2: f64 = a.x.iter().map(|v| v * v).sum();
        let z2: f64 = a.z.iter().map(|v| v * v).sum();
        (x2.sqrt(), z2.sqrt())
    }

    fn check_point(&self, a: &GroupPoint) -> Result<()> {
        if a.x.len() != self.m || a.z.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "point has ({}, {}) coordinates, structure needs ({}, {})",
                a.x.len(),
                a.z.len(),
                self.m,
                self.n
            )));
        }
        Ok(())
    }

    // -- horizontal calculus -------------------------------------------------

    /// Horizontal gradient `(X_1 f, ..., X_m f)` at `a`.
    ///
    /// With exact partials attached to the field, the frame is applied in
    /// closed form: `X_j f = df/dx_j + 1/2 sum_k (J_k x)_j df/dz_k`.
    /// Otherwise each component is a central difference of `f` along the
    /// integral curve `t -> a . (t e_j, 0)` with step
    /// `h = FD_STEP_BASE * (1 + |x_j|)`.
    pub fn horizontal_gradient(&self, f: &ScalarField, a: &GroupPoint) -> Result<Vec<f64>> {
        self.horizontal_gradient_h(f, a, FD_STEP_BASE)
    }

    /// [`Self::horizontal_gradient`] with an explicit finite-difference step
    /// base (used by step-refinement diagnostics).
    pub fn horizontal_gradient_h(
        &self,
        f: &ScalarField,
        a: &GroupPoint,
        h_base: f64,
    ) -> Result<Vec<f64>> {
        self.check_point(a)?;
        if let Some(partials) = &f.partials {
            let (dx, dz) = partials(a);
            if dx.len() != self.m || dz.len() != self.n {
                return Err(Error::DimensionMismatch(
                    "field partials do not match the structure".into(),
                ));
            }
            let mut jx = vec![0.0; self.m];
            let mut grad = dx;
            for k in 0..self.n {
                self.j_apply(k, &a.x, &mut jx);
                for j in 0..self.m {
                    grad[j] += 0.5 * jx[j] * dz[k];
                }
            }
            return Ok(grad);
        }
        let mut grad = vec![0.0; self.m];
        let mut b = a.clone();
        for j in 0..self.m {
            let h = h_base * (1.0 + a.x[j].abs());
            self.shift_horizontal(a, j, h, &mut b);
            let fp = (f.eval)(&b);
            self.shift_horizontal(a, j, -h, &mut b);
            let fm = (f.eval)(&b);
            grad[j] = (fp - fm) / (2.0 * h);
        }
        Ok(grad)
    }

    /// Length of the horizontal gradient, `|grad f| = (sum_j (X_j f)^2)^{1/2}`.
    /// Fields may carry an exact gradient-length shortcut (radial composites
    /// do); otherwise the frame components are assembled first.
    pub fn gradient_norm(&self, f: &ScalarField, a: &GroupPoint) -> Result<f64> {
        if let Some(gn) = &f.grad_norm {
            self.check_point(a)?;
            return Ok(gn(a));
        }
        let g = self.horizontal_gradient(f, a)?;
        Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Sub-Laplacian `sum_j X_j^2 f` at `a`.
    ///
    /// With exact partials, each term is a central difference of the exact
    /// `X_j f` along the integral curve of `X_j` (second-order accurate).
    /// Without them it is the second central difference of `f` along that
    /// curve, with a larger step to balance truncation against roundoff.
    pub fn sub_laplacian(&self, f: &ScalarField, a: &GroupPoint) -> Result<f64> {
        self.check_point(a)?;
        let mut acc = 0.0;
        let mut b = a.clone();
        if f.partials.is_some() {
            for j in 0..self.m {
                let h = FD_STEP_BASE * (1.0 + a.x[j].abs());
                self.shift_horizontal(a, j, h, &mut b);
                let gp = self.horizontal_gradient(f, &b)?[j];
                self.shift_horizontal(a, j, -h, &mut b);
                let gm = self.horizontal_gradient(f, &b)?[j];
                acc += (gp - gm) / (2.0 * h);
            }
        } else {
            let f0 = (f.eval)(a);
            for j in 0..self.m {
                // Second differences lose ~eps/h^2 to roundoff; h ~ 1e-4
                // balances that against the O(h^2) truncation term.
                let h = 1e-4 * (1.0 + a.x[j].abs());
                self.shift_horizontal(a, j, h, &mut b);
                let fp = (f.eval)(&b);
                self.shift_horizontal(a, j, -h, &mut b);
                let fm = (f.eval)(&b);
                acc += (fp - 2.0 * f0 + fm) / (h * h);
            }
        }
        Ok(acc)
    }

    /// `out = a . (t e_j, 0)` — the point reached from `a` after flowing
    /// along `X_j` for time `t`.
    #[inline]
    fn shift_horizontal(&self, a: &GroupPoint, j: usize, t: f64, out: &mut GroupPoint) {
        out.x.copy_from_slice(&a.x);
        out.z.copy_from_slice(&a.z);
        for k in 0..self.n {
            // <J_k x, t e_j> = t (J_k x)_j; (J_k x)_j = sum_c (J_k)_{j c} x_c.
            let m = self.m;
            let mut v = 0.0;
            for c in 0..m {
                v += self.j[k][j * m + c] * a.x[c];
            }
            out.z[k] += 0.5 * t * v;
        }
        out.x[j] += t;
    }

    // -- presets -------------------------------------------------------------

    /// Looks up a named preset structure. Recognized names:
    /// `"heisenberg1"` (m=2, n=1), `"heisenberg2"` (m=4, n=1),
    /// `"quaternionic"` (m=4, n=3), and `"euclidean(m)"` for a literal
    /// horizontal dimension, e.g. `"euclidean(3)"`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "heisenberg1" => {
                // J rotates the plane by +90 degrees: J(x1, x2) = (-x2, x1).
                Self::new(2, 1, vec![vec![0.0, -1.0, 1.0, 0.0]])
            }
            "heisenberg2" => {
                let mut j = vec![0.0; 16];
                for blk in 0..2 {
                    let o = 2 * blk;
                    j[o * 4 + (o + 1)] = -1.0;
                    j[(o + 1) * 4 + o] = 1.0;
                }
                Self::new(4, 1, vec![j])
            }
            "quaternionic" => {
                // Left multiplication by the imaginary quaternion units on
                // R^4 = {a + b i + c j + d k}.
                let ji = vec![
                    0.0, -1.0, 0.0, 0.0, //
                    1.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, -1.0, //
                    0.0, 0.0, 1.0, 0.0,
                ];
                let jj = vec![
                    0.0, 0.0, -1.0, 0.0, //
                    0.0, 0.0, 0.0, 1.0, //
                    1.0, 0.0, 0.0, 0.0, //
                    0.0, -1.0, 0.0, 0.0,
                ];
                let jk = vec![
                    0.0, 0.0, 0.0, -1.0, //
                    0.0, 0.0, -1.0, 0.0, //
                    0.0, 1.0, 0.0, 0.0, //
                    1.0, 0.0, 0.0, 0.0,
                ];
                Self::new(4, 3, vec![ji, jj, jk])
            }
            other => {
                if let Some(inner) = other
                    .strip_prefix("euclidean(")
                    .and_then(|s| s.strip_suffix(')'))
                {
                    let m: usize = inner.parse().map_err(|_| {
                        Error::Domain(format!("bad euclidean dimension in preset name {other:?}"))
                    })?;
                    return Self::new(m, 0, vec![]);
                }
                Err(Error::Unsupported(format!("unknown structure preset {other:?}")))
            }
        }
    }

    /// Preset names understood by [`Self::preset`], with short descriptions.
    pub fn preset_catalog() -> Vec<(&'static str, &'static str)> {
        vec![
            ("heisenberg1", "first Heisenberg group, m=2 n=1, Q=4"),
            ("heisenberg2", "second Heisenberg group, m=4 n=1, Q=6"),
            ("quaternionic", "quaternionic H-type group, m=4 n=3, Q=10"),
            ("euclidean(m)", "abelian R^m (literal m), e.g. euclidean(1)"),
        ]
    }
}

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

/// A group element in the flat chart: horizontal part `x in R^m`, central
/// part `z in R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl GroupPoint {
    pub fn new(x: Vec<f64>, z: Vec<f64>) -> Self {
        Self { x, z }
    }

    /// Builds a point from the flat coordinate list `x_1..x_m, z_1..z_n`.
    pub fn from_flat(structure: &HTypeStructure, coords: &[f64]) -> Result<Self> {
        if coords.len() != structure.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coordinates, got {}",
                structure.dim(),
                coords.len()
            )));
        }
        Ok(Self {
            x: coords[..structure.m()].to_vec(),
            z: coords[structure.m()..].to_vec(),
        })
    }

    /// Flat coordinate list `x_1..x_m, z_1..z_n`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + self.z.len());
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.z);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.z.iter()).all(|v| v.is_finite())
    }
}

impl fmt::Display for GroupPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(x = {:?}, z = {:?})", self.x, self.z)
    }
}

// ---------------------------------------------------------------------------
// Scalar fields
// ---------------------------------------------------------------------------

/// A scalar function on the group, with optional exact derivative data.
///
/// `partials` returns the flat-chart partial derivatives
/// `(df/dx_1..df/dx_m, df/dz_1..df/dz_n)`; when present, horizontal
/// derivatives are assembled in closed form. `grad_norm` is an optional
/// exact value of `|grad f|` for fields whose gradient length is known
/// without direction information (e.g. `h(d)` with `|grad d| = 1` a.e. gives
/// `|grad h(d)| = |h'(d)|`).
#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<dyn Fn(&GroupPoint) -> f64 + Send + Sync>,
    partials: Option<Arc<dyn Fn(&GroupPoint) -> (Vec<f64>, Vec<f64>) + Send + Sync>>,
    grad_norm: Option<Arc<dyn Fn(&GroupPoint) -> f64 + Send + Sync>>,
}

impl ScalarField {
    pub fn new(eval: impl Fn(&GroupPoint) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            partials: None,
            grad_norm: None,
        }
    }

    /// Attaches exact flat-chart partials `(d/dx, d/dz)`.
    pub fn with_partials(
        mut self,
        partials: impl Fn(&GroupPoint) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Arc::new(partials));
        self
    }

    /// Attaches an exact horizontal-gradient length.
    pub fn with_grad_norm(
        mut self,
        grad_norm: impl Fn(&GroupPoint) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.grad_norm = Some(Arc::new(grad_norm));
        self
    }

    #[inline]
    pub fn eval(&self, a: &GroupPoint) -> f64 {
        (self.eval)(a)
    }

    pub fn has_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn has_grad_norm(&self) -> bool {
        self.grad_norm.is_some()
    }

    /// A constant field.
    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c).with_partials(move |g| (vec![0.0; g.x.len()], vec![0.0; g.z.len()]))
            .with_grad_norm(|_| 0.0)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("partials", &self.partials.is_some())
            .field("grad_norm", &self.grad_norm.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn h1() -> HTypeStructure {
        HTypeStructure::preset("heisenberg1").unwrap()
    }

    fn random_point(s: &HTypeStructure, rng: &mut ChaCha8Rng) -> GroupPoint {
        GroupPoint {
            x: (0..s.m()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            z: (0..s.n()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn presets_validate() {
        for (name, _) in HTypeStructure::preset_catalog() {
            let name = if name.starts_with("euclidean") {
                "euclidean(3)"
            } else {
                name
            };
            let s = HTypeStructure::preset(name).unwrap();
            assert_eq!(s.homogeneous_dimension(), s.m() + 2 * s.n());
        }
        assert!(HTypeStructure::preset("nosuch").is_err());
        assert!(HTypeStructure::preset("euclidean(x)").is_err());
    }

    #[test]
    fn rejects_non_skew_and_non_htype() {
        // Not skew-symmetric.
        assert!(HTypeStructure::new(2, 1, vec![vec![0.0, 1.0, 1.0, 0.0]]).is_err());
        // Skew but J^2 = -4 I, violating the unit composition law.
        assert!(HTypeStructure::new(2, 1, vec![vec![0.0, -2.0, 2.0, 0.0]]).is_err());
    }

    #[test]
    fn h1_product_matches_hand_value() {
        // Central increment = half the symplectic area <J x, x'>:
        // x = e1, x' = e2 gives <J e1, e2> = 1, so z'' = 1/2.
        let s = h1();
        let a = GroupPoint::new(vec![1.0, 0.0], vec![0.0]);
        let b = GroupPoint::new(vec![0.0, 1.0], vec![0.0]);
        let c = s.group_mul(&a, &b).unwrap();
        assert_eq!(c.x, vec![1.0, 1.0]);
        assert_abs_diff_eq!(c.z[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn group_axioms_on_random_triples() {
        for name in ["heisenberg1", "heisenberg2", "quaternionic", "euclidean(3)"] {
            let s = HTypeStructure::preset(name).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..50 {
                let a = random_point(&s, &mut rng);
                let b = random_point(&s, &mut rng);
                let c = random_point(&s, &mut rng);
                let ab_c = s
                    .group_mul(&s.group_mul(&a, &b).unwrap(), &c)
                    .unwrap();
                let a_bc = s
                    .group_mul(&a, &s.group_mul(&b, &c).unwrap())
                    .unwrap();
                for (u, v) in ab_c.to_flat().iter().zip(a_bc.to_flat()) {
                    assert_abs_diff_eq!(u, &v, epsilon = 1e-12);
                }
                let e = s.identity();
                let ae = s.group_mul(&a, &e).unwrap();
                assert_eq!(ae, a);
                let inv = s.group_inv(&a).unwrap();
                let prod = s.group_mul(&a, &inv).unwrap();
                for v in prod.to_flat() {
                    assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn compose_step_matches_group_mul() {
        let s = HTypeStructure::preset("quaternionic").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_point(&s, &mut rng);
        let dx: Vec<f64> = (0..s.m()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = GroupPoint::new(dx.clone(), vec![0.0; s.n()]);
        let want = s.group_mul(&a, &b).unwrap();
        let mut x = a.x.clone();
        let mut z = a.z.clone();
        s.compose_step(&mut x, &mut z, &dx);
        for (u, v) in x.iter().zip(&want.x) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-14);
        }
        for (u, v) in z.iter().zip(&want.z) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-14);
        }
    }

    #[test]
    fn euclidean_reduction_is_plain_vector_arithmetic() {
        let s = HTypeStructure::preset("euclidean(3)").unwrap();
        let a = GroupPoint::new(vec![1.0, -2.0, 0.25], vec![]);
        let b = GroupPoint::new(vec![0.5, 0.5, -1.0], vec![]);
        let c = s.group_mul(&a, &b).unwrap();
        assert_eq!(c.x, vec![1.5, -1.5, -0.75]);
        assert!(c.z.is_empty());
        assert_eq!(
            s.kaplan_norm(&a).unwrap(),
            a.x.iter().map(|v| v * v).sum::<f64>().sqrt()
        );
    }

    proptest! {
        #[test]
        fn dilations_are_automorphisms(
            ax in proptest::collection::vec(-3.0f64..3.0, 2),
            az in -3.0f64..3.0,
            bx in proptest::collection::vec(-3.0f64..3.0, 2),
            bz in -3.0f64..3.0,
            r in 0.1f64..4.0,
        ) {
            let s = h1();
            let a = GroupPoint::new(ax, vec![az]);
            let b = GroupPoint::new(bx, vec![bz]);
            let lhs = s
                .group_mul(&s.dilate(r, &a).unwrap(), &s.dilate(r, &b).unwrap())
                .unwrap();
            let rhs = s.dilate(r, &s.group_mul(&a, &b).unwrap()).unwrap();
            for (u, v) in lhs.to_flat().iter().zip(rhs.to_flat()) {
                prop_assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn gauge_is_homogeneous_and_definite(
            ax in proptest::collection::vec(-3.0f64..3.0, 2),
            az in -3.0f64..3.0,
            r in 0.1f64..4.0,
        ) {
            let s = h1();
            let a = GroupPoint::new(ax, vec![az]);
            let lhs = s.kaplan_norm(&s.dilate(r, &a).unwrap()).unwrap();
            let rhs = r * s.kaplan_norm(&a).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
            let flat = a.to_flat();
            if flat.iter().any(|v| v.abs() > 1e-12) {
                prop_assert!(s.kaplan_norm(&a).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn gauge_values() {
        let s = h1();
        assert_eq!(s.kaplan_norm(&s.identity()).unwrap(), 0.0);
        let a = GroupPoint::new(vec![1.0, 0.0], vec![0.0]);
        assert_abs_diff_eq!(s.kaplan_norm(&a).unwrap(), 1.0, epsilon = 1e-15);
        // Pure central point: N = (c z^2)^{1/4} = 2 sqrt(|z|) with c = 16.
        let b = GroupPoint::new(vec![0.0, 0.0], vec![0.25]);
        assert_abs_diff_eq!(s.kaplan_norm(&b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_of_coordinate_functions() {
        let s = h1();
        let x1 = ScalarField::new(|g| g.x[0])
            .with_partials(|_| (vec![1.0, 0.0], vec![0.0]));
        let t = ScalarField::new(|g| g.z[0]).with_partials(|_| (vec![0.0, 0.0], vec![1.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = random_point(&s, &mut rng);
            let gx = s.horizontal_gradient(&x1, &g).unwrap();
            assert_abs_diff_eq!(gx[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(gx[1], 0.0, epsilon = 1e-12);
            // X t = -x2/2, Y t = x1/2 under the 1/2 frame convention.
            let gt = s.horizontal_gradient(&t, &g).unwrap();
            assert_abs_diff_eq!(gt[0], -0.5 * g.x[1], epsilon = 1e-12);
            assert_abs_diff_eq!(gt[1], 0.5 * g.x[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn finite_difference_gradient_matches_exact() {
        let s = h1();
        let exact = ScalarField::new(|g| (g.x[0] * g.z[0]).sin() + g.x[1] * g.x[1])
            .with_partials(|g| {
                let c = (g.x[0] * g.z[0]).cos();
                (vec![c * g.z[0], 2.0 * g.x[1]], vec![c * g.x[0]])
            });
        let fd = ScalarField::new(|g| (g.x[0] * g.z[0]).sin() + g.x[1] * g.x[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = random_point(&s, &mut rng);
            let ge = s.horizontal_gradient(&exact, &g).unwrap();
            let gf = s.horizontal_gradient(&fd, &g).unwrap();
            for (u, v) in ge.iter().zip(&gf) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn finite_differences_are_second_order() {
        let s = h1();
        let exact = ScalarField::new(|g| (g.x[0] + 2.0 * g.z[0]).exp().sin())
            .with_partials(|g| {
                let e = (g.x[0] + 2.0 * g.z[0]).exp();
                let c = e.cos();
                (vec![e * c, 0.0], vec![2.0 * e * c])
            });
        let fd = ScalarField::new(|g| (g.x[0] + 2.0 * g.z[0]).exp().sin());
        let g = GroupPoint::new(vec![0.3, -0.2], vec![0.1]);
        let reference = s.horizontal_gradient(&exact, &g).unwrap();
        let err = |h: f64| -> f64 {
            let approx = s.horizontal_gradient_h(&fd, &g, h).unwrap();
            approx
                .iter()
                .zip(&reference)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(1e-2);
        let e2 = err(5e-3);
        let order = (e1 / e2).log2();
        assert!(order > 1.9, "observed order {order}, errors {e1:.3e} {e2:.3e}");
    }

    #[test]
    fn sub_laplacian_closed_forms() {
        for name in ["heisenberg1", "quaternionic", "euclidean(3)"] {
            let s = HTypeStructure::preset(name).unwrap();
            let m = s.m();
            let sq = ScalarField::new(move |g| g.x.iter().map(|v| v * v).sum::<f64>())
                .with_partials(move |g| {
                    (g.x.iter().map(|v| 2.0 * v).collect(), vec![0.0; g.z.len()])
                });
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..10 {
                let g = random_point(&s, &mut rng);
                assert_abs_diff_eq!(
                    s.sub_laplacian(&sq, &g).unwrap(),
                    2.0 * m as f64,
                    epsilon = 1e-10
                );
            }
            // Affine functions of the flat chart are harmonic: the frame has
            // divergence-free coefficients and kills constants.
            let affine = ScalarField::new(|g| {
                1.5 + g.x.iter().sum::<f64>() - 2.0 * g.z.iter().sum::<f64>()
            })
            .with_partials(|g| (vec![1.0; g.x.len()], vec![-2.0; g.z.len()]));
            let g = random_point(&s, &mut rng);
            assert_abs_diff_eq!(s.sub_laplacian(&affine, &g).unwrap(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn central_coordinate_is_harmonic_on_h1() {
        let s = h1();
        let t = ScalarField::new(|g| g.z[0]).with_partials(|_| (vec![0.0, 0.0], vec![1.0]));
        let g = GroupPoint::new(vec![0.7, -1.3], vec![0.4]);
        assert_abs_diff_eq!(s.sub_laplacian(&t, &g).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn frame_commutators_span_the_center() {
        // [X_i, X_j] applied to z_k equals (J_k)_{j i}; on heisenberg1 this is
        // the classical [X, Y] = d/dt with (J)_{21} = 1.
        for name in ["heisenberg1", "quaternionic"] {
            let s = HTypeStructure::preset(name).unwrap();
            let g = GroupPoint::new(
                (0..s.m()).map(|i| 0.3 * (i as f64 + 1.0)).collect(),
                (0..s.n()).map(|k| -0.2 * (k as f64 + 1.0)).collect(),
            );
            for k in 0..s.n() {
                let m = s.m();
                let zk = ScalarField::new(move |p: &GroupPoint| p.z[k]).with_partials(
                    move |p: &GroupPoint| {
                        let mut dz = vec![0.0; p.z.len()];
                        dz[k] = 1.0;
                        (vec![0.0; m], dz)
                    },
                );
                for i in 0..s.m() {
                    for j in 0..s.m() {
                        // X_i (X_j z_k): build X_j z_k as a field with exact
                        // partials (it is linear in x).
                        let s2 = s.clone();
                        let s3 = s.clone();
                        let xj_zk = ScalarField::new(move |p: &GroupPoint| {
                            let mut jx = vec![0.0; s2.m()];
                            s2.j_apply(k, &p.x, &mut jx);
                            0.5 * jx[j]
                        })
                        .with_partials(move |p: &GroupPoint| {
                            let m = s3.m();
                            let mut dx = vec![0.0; m];
                            for (c, slot) in dx.iter_mut().enumerate() {
                                *slot = 0.5 * s3.j[k][j * m + c];
                            }
                            (dx, vec![0.0; p.z.len()])
                        });
                        let xi_of = s.horizontal_gradient(&xj_zk, &g).unwrap()[i];
                        // Symmetric construction with i and j swapped.
                        let s4 = s.clone();
                        let s5 = s.clone();
                        let xi_zk = ScalarField::new(move |p: &GroupPoint| {
                            let mut jx = vec![0.0; s4.m()];
                            s4.j_apply(k, &p.x, &mut jx);
                            0.5 * jx[i]
                        })
                        .with_partials(move |p: &GroupPoint| {
                            let m = s5.m();
                            let mut dx = vec![0.0; m];
                            for (c, slot) in dx.iter_mut().enumerate() {
                                *slot = 0.5 * s5.j[k][i * m + c];
                            }
                            (dx, vec![0.0; p.z.len()])
                        });
                        let xj_of = s.horizontal_gradient(&xi_zk, &g).unwrap()[j];
                        let bracket = xi_of - xj_of;
                        let want = s.j[k][j * s.m() + i];
                        assert_abs_diff_eq!(bracket, want, epsilon = 1e-9);
                        let _ = &zk;
                    }
                }
            }
        }
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let s = h1();
        let text = serde_json::to_string(&s).unwrap();
        let back: HTypeStructure = serde_json::from_str(&text).unwrap();
        assert_eq!(back.m(), 2);
        assert_eq!(back.n(), 1);
        // Unknown keys are rejected.
        let bad = r#"{"m":2,"n":1,"J":[[[0,-1],[1,0]]],"extra":1}"#;
        assert!(serde_json::from_str::<HTypeStructure>(bad).is_err());
        // Invalid structures are rejected at parse time.
        let nonskew = r#"{"m":2,"n":1,"J":[[[0,1],[1,0]]]}"#;
        assert!(serde_json::from_str::<HTypeStructure>(nonskew).is_err());
    }
}
