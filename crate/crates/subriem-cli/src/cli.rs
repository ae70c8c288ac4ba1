//! Command-line surface: flags, subcommands, and small parse helpers.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "subriem",
    version,
    about = "Numerical laboratory for sub-Riemannian functional inequalities",
    disable_help_subcommand = true
)]
pub struct Cli {
    /// Print the catalog of group presets and exit.
    #[arg(long, global = false)]
    pub list_presets: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Carnot-Caratheodory distance from the identity to a point.
    Dist {
        /// Group preset name (see --list-presets).
        #[arg(long)]
        group: String,
        /// Flat coordinates of the point, comma-separated (x then z).
        #[arg(long)]
        point: String,
        /// Also run the control-path upper-bound solver.
        #[arg(long)]
        oracle: bool,
        /// Control segments for the upper-bound solver.
        #[arg(long, default_value_t = 64)]
        segments: usize,
        /// Write the report JSON here (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples of a gauge-power measure and write them as CSV.
    Sample {
        /// Measure description JSON: {"group", "p", "alpha"}.
        #[arg(long)]
        spec: PathBuf,
        /// Total number of kept samples.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// RNG seed (mandatory: sampling is stochastic).
        #[arg(long)]
        seed: u64,
        /// CSV output path (columns x_1..x_m, z_1..z_n, weight).
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify an inequality family on a sampled measure over the corpus.
    Verify {
        /// Which inequality to check.
        #[arg(long, value_enum)]
        kind: VerifyKind,
        /// Measure description JSON: {"group", "p", "alpha"}.
        #[arg(long)]
        spec: PathBuf,
        /// Function corpus identifier (builtin:standard, or the
        /// deliberately degenerate builtin:constant-only).
        #[arg(long, default_value = "builtin:standard")]
        corpus: String,
        /// Sample CSV to reuse; omit to sample afresh (then --seed is
        /// mandatory).
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Sample count when sampling afresh.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// RNG seed when sampling afresh.
        #[arg(long)]
        seed: Option<u64>,
        /// Entropy-weight exponent for the entropy-type checks.
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Write the report JSON here (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-function table as a CSV next to --out.
        #[arg(long)]
        csv: bool,
    },
    /// Isoperimetric checks: boundary measure against the profile, coarea,
    /// and the entropy-to-isoperimetry cross links.
    Iso {
        /// Test set, repeatable: ball:R, ball-complement:R,
        /// halfspace:LEVEL, or sublevel:MEMBER:LEVEL. Defaults to a
        /// standard family when omitted.
        #[arg(long = "set")]
        sets: Vec<String>,
        /// Measure description JSON: {"group", "p", "alpha"}.
        #[arg(long)]
        spec: PathBuf,
        /// Sample CSV to reuse; omit to sample afresh (then --seed is
        /// mandatory).
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Sample count when sampling afresh.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// RNG seed when sampling afresh.
        #[arg(long)]
        seed: Option<u64>,
        /// Profile selector, e.g. q=2.
        #[arg(long, default_value = "q=2")]
        profile: String,
        /// Entropy-weight exponent for the cross links.
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Write the report JSON here (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Horizontal Brownian motion: endpoint invariants and the semigroup
    /// gradient bound.
    Heat {
        /// Group preset name.
        #[arg(long)]
        group: String,
        /// Time horizon.
        #[arg(long)]
        t: f64,
        /// Number of simulated paths.
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Euler steps per path.
        #[arg(long, default_value_t = 256)]
        steps: usize,
        /// RNG seed (mandatory: simulation is stochastic).
        #[arg(long)]
        seed: u64,
        /// Corpus reference JSON ({"corpus_id": "builtin:standard"});
        /// when given, also verify the semigroup gradient bound over it.
        #[arg(long = "verify-gradient")]
        verify_gradient: Option<PathBuf>,
        /// Write the report JSON here (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lattice spin systems: sweep diagnostics and long-run inequality
    /// constants.
    Gibbs {
        /// Lattice description JSON (see the lattice configuration schema).
        #[arg(long)]
        config: PathBuf,
        /// Total sweep budget for the long-run schedule.
        #[arg(long, default_value_t = 2000)]
        sweeps: usize,
        /// RNG seed (mandatory: sweeping is stochastic).
        #[arg(long)]
        seed: u64,
        /// What to verify; omit for merging diagnostics only.
        #[arg(long, value_enum)]
        verify: Option<GibbsVerify>,
        /// Entropy-weight exponent for the entropy constants.
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Single-site difference constant for the analytic coupling
        /// threshold printed by the contraction check.
        #[arg(long)]
        c0: Option<f64>,
        /// Write the report JSON here (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full battery at desk scale on one measure.
    All {
        /// Measure description JSON; defaults to the first Heisenberg
        /// group with p = 2, alpha = 1.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Sample count for the measure-side checks.
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        /// RNG seed (mandatory: most stages are stochastic).
        #[arg(long)]
        seed: u64,
        /// Write the report JSON here (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyKind {
    Ubound,
    Cheeger,
    L1phi,
    Lsq,
    Ifi2,
    TightLedoux,
    ExpInt,
    /// Every check above in sequence.
    Battery,
}

impl VerifyKind {
    pub fn label(&self) -> &'static str {
        match self {
            VerifyKind::Ubound => "ubound",
            VerifyKind::Cheeger => "cheeger",
            VerifyKind::L1phi => "l1phi",
            VerifyKind::Lsq => "lsq",
            VerifyKind::Ifi2 => "ifi2",
            VerifyKind::TightLedoux => "tight-ledoux",
            VerifyKind::ExpInt => "exp-int",
            VerifyKind::Battery => "battery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GibbsVerify {
    /// Long-run entropy and profile constants over the cylinder corpus.
    L1phi,
    /// Gradient contraction of the class conditionals.
    Contraction,
    /// Boundary-condition merging diagnostics only.
    Merge,
}

impl GibbsVerify {
    pub fn label(&self) -> &'static str {
        match self {
            GibbsVerify::L1phi => "l1phi",
            GibbsVerify::Contraction => "contraction",
            GibbsVerify::Merge => "merge",
        }
    }
}

/// Parses a comma-separated coordinate list.
pub fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    let coords: Result<Vec<f64>, _> = s
        .split(',')
        .map(|tok| tok.trim().parse::<f64>())
        .collect();
    coords.map_err(|e| format!("bad coordinate list {s:?}: {e}"))
}

/// Parses a profile selector of the form `q=VALUE`.
pub fn parse_profile(s: &str) -> Result<f64, String> {
    let rest = s
        .trim()
        .strip_prefix("q=")
        .ok_or_else(|| format!("profile selector must look like q=2, got {s:?}"))?;
    rest.parse::<f64>()
        .map_err(|e| format!("bad profile exponent in {s:?}: {e}"))
}
