//! Machine-readable verification reports.
//!
//! Every verifier produces an [`InequalityReport`]: which inequality was
//! checked, against which configuration (as a digest), on which function
//! corpus, the per-function left/right sides with standard errors, the
//! fitted constants, and any detected violations. The command-line layer
//! wraps one or more of these into a [`Report`] envelope.
//!
//! Serialization order is struct declaration order and all maps are ordered,
//! so a fixed seed yields byte-identical JSON payloads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::stats::Estimate;

/// The family of inequality checks a report can describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InequalityKind {
    /// Gradient-weighted moment bound
    /// `mu(|f| (|U|^beta + |grad U|)) <= A mu|grad f| + B mu|f|`.
    #[serde(rename = "UBOUND")]
    Ubound,
    /// `mu|f - mu f| <= c0 mu|grad f|`.
    #[serde(rename = "CHEEGER")]
    Cheeger,
    /// Phi-entropy bound `Ent^Phi(|f|) <= c mu|grad f|` with
    /// `Phi(x) = x log(1+x)^beta`.
    #[serde(rename = "L1PHI")]
    L1Phi,
    /// Defective q-log-Sobolev bound.
    #[serde(rename = "LSQ")]
    Lsq,
    /// Profile-based inequality
    /// `I(mu f) <= mu sqrt(I(f)^2 + C |grad f|^2)`.
    #[serde(rename = "IFI2")]
    Ifi2,
    /// Tight entropy bound `mu(f (log_+ f)^beta) <= K mu|grad f| + K'` at
    /// `mu f = 1`.
    #[serde(rename = "TIGHT_LEDOUX")]
    TightLedoux,
    /// Exponential integrability of the truncated squared distance.
    #[serde(rename = "EXP_INT")]
    ExpInt,
    /// Classical Sobolev inequality against Lebesgue measure.
    #[serde(rename = "SOBOLEV_BASELINE")]
    SobolevBaseline,
    /// L1 Poincare inequality on metric balls.
    #[serde(rename = "POINCARE_BALL")]
    PoincareBall,
    /// Differential properties of the distance: gradient length one and
    /// sub-Laplacian growth control. Not in the measure-level battery, but
    /// reported through the same channel.
    #[serde(rename = "EIKONAL")]
    Eikonal,
    /// Set-level isoperimetry: boundary measure against the profile of the
    /// measure of the set, `mu^+(A) >= c I(mu A)`.
    #[serde(rename = "ISO_PROFILE")]
    IsoProfile,
    /// Coarea lower bound: the level-set boundary measures integrate to at
    /// most the gradient mass.
    #[serde(rename = "COAREA")]
    Coarea,
    /// First-order semigroup gradient bound
    /// `|grad P_t f| <= C_1(t) P_t |grad f|`.
    #[serde(rename = "SEMIGROUP_GRADIENT")]
    SemigroupGradient,
}

/// One corpus function's evaluation inside an inequality check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionCheck {
    pub id: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
}

/// Outcome of one inequality verification over a function corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityReport {
    pub kind: InequalityKind,
    /// Digest of the full run configuration that produced the estimates.
    pub spec_digest: String,
    /// Identifier of the function corpus used.
    pub corpus_id: String,
    /// Effective sample size behind the estimates (minimum across chains for
    /// sampled measures; the nominal point count for quadrature checks).
    pub n_eff: f64,
    /// Named fitted constants, e.g. `{"A": .., "B": ..}`.
    pub fitted_constants: BTreeMap<String, f64>,
    pub per_function: Vec<FunctionCheck>,
    /// Function ids (or grid-point labels) whose left side exceeded the
    /// fitted right side by more than three combined standard errors.
    pub violations: Vec<String>,
    pub notes: Vec<String>,
}

impl InequalityReport {
    pub fn new(kind: InequalityKind, spec_digest: impl Into<String>, corpus_id: impl Into<String>) -> Self {
        Self {
            kind,
            spec_digest: spec_digest.into(),
            corpus_id: corpus_id.into(),
            n_eff: 0.0,
            fitted_constants: BTreeMap::new(),
            per_function: Vec::new(),
            violations: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Records a function check and flags it when the left side exceeds the
    /// right side by more than `3 * (se_lhs + se_rhs)` plus a tiny absolute
    /// floor for exactly-zero standard errors.
    pub fn push_check(&mut self, id: impl Into<String>, lhs: Estimate, rhs: Estimate) {
        let id = id.into();
        let slack = 3.0 * (lhs.se + rhs.se) + 1e-12 * (1.0 + lhs.value.abs() + rhs.value.abs());
        if lhs.value > rhs.value + slack {
            self.violations.push(id.clone());
        }
        self.per_function.push(FunctionCheck { id, lhs, rhs });
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.fitted_constants.get(name).copied()
    }
}

/// SHA-256 digest (hex) of a configuration's canonical JSON serialization.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).unwrap_or_default();
    let mut hasher = Sha256::new();
    hasher.update(&json);
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in out {
        use std::fmt::Write;
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Top-level envelope written by the command-line front end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub seed: Option<u64>,
    pub config_digest: String,
    /// Deterministic result payload: identical bytes for identical seeds.
    pub results: serde_json::Value,
    pub warnings: Vec<String>,
    /// Wall-clock duration; excluded from determinism comparisons.
    pub wall_time_ms: u64,
}

pub const SCHEMA_VERSION: u32 = 1;
