//! Normalized run configuration, command dispatch, and report emission.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use subriem::corpus::{standard_corpus, CorpusEntry, FunctionCorpus};
use subriem::distance::{
    cc_geodesic, check_distance_conditions, cc_distance_oracle, DistanceConditionsConfig,
    TranscriptionConfig,
};
use subriem::functionals::{
    verify_cheeger, verify_exp_integrability, verify_ifi2, verify_l1phi_entropy, verify_lsq,
    verify_tight_ledoux, verify_ubound, PhiSpec,
};
use subriem::gibbs::{
    cylinder_corpus, iterate_sweep, verify_gibbs_l1phi, verify_gradient_contraction,
    CylinderFunction, Lattice, LatticeConfig, RateFit, SweepSchedule,
};
use subriem::heat::{
    exp_moment_bracket, kernel_density_sandwich, simulate_horizontal_bm,
    verify_semigroup_gradient_bound, KernelComparisonConfig, PathConfig,
};
use subriem::htype::{GroupPoint, HTypeStructure, ScalarField};
use subriem::isoperimetry::{
    eta_constant, implied_iso_constant, verify_coarea, verify_isoperimetry, IsoConfig,
};
use subriem::measure::{sample_measure, ChainConfig, MeasureSpec, SampleSet};
use subriem::profile::{check_q_equivalence, dominance_constant, profile_uq};
use subriem::report::{config_digest, InequalityReport, Report, SCHEMA_VERSION};
use subriem::sobolev::{verify_sobolev_baseline, SobolevConfig};
use subriem::stats;
use subriem::{Error, Result};

/// Exit status classes of a completed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok,
    Violations,
    Inconclusive,
}

impl ExitStatus {
    pub fn code(&self) -> i32 {
        match self {
            ExitStatus::Ok => 0,
            ExitStatus::Violations => 2,
            ExitStatus::Inconclusive => 3,
        }
    }

    fn worsen(&mut self, other: ExitStatus) {
        let rank = |s: &ExitStatus| match s {
            ExitStatus::Ok => 0,
            ExitStatus::Inconclusive => 1,
            ExitStatus::Violations => 2,
        };
        if rank(&other) > rank(self) {
            *self = other;
        }
    }
}

/// Maps an error to the exit code contract: statistical refusals and
/// unresolved outcomes exit 3; configuration and hard failures exit 1.
pub fn error_exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<Error>() {
        match e {
            Error::Inconclusive(_)
            | Error::Refused(_)
            | Error::CorpusTooSmall { .. }
            | Error::Tuning { .. }
            | Error::Truncation(_) => 3,
            _ => 1,
        }
    } else {
        1
    }
}

/// Normalized run description: every command reduces to this before
/// dispatch, and the report digest is derived from it (minus the output
/// path, so where a report lands never changes its content).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    #[serde(default)]
    pub spec_path: Option<String>,
    #[serde(default = "default_corpus")]
    pub corpus_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_path: Option<String>,
    /// Named numeric overrides; unknown names are rejected at use time.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Command-specific parameters, already normalized.
    #[serde(default)]
    pub params: Value,
}

fn default_corpus() -> String {
    "builtin:standard".into()
}

const KNOWN_TOLERANCES: &[&str] = &["exp_cutoff", "profile_grid"];

impl RunConfig {
    fn tol(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }

    fn validate(&self) -> Result<()> {
        for key in self.tolerances.keys() {
            if !KNOWN_TOLERANCES.contains(&key.as_str()) {
                return Err(Error::Domain(format!(
                    "unknown tolerance override {key:?}; known: {KNOWN_TOLERANCES:?}"
                )));
            }
        }
        let stochastic = matches!(self.command.as_str(), "sample" | "heat" | "gibbs" | "all");
        if stochastic && self.seed.is_none() {
            return Err(Error::Domain(format!(
                "seed is mandatory for the stochastic command {:?}",
                self.command
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Per-command parameter schemas
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistParams {
    pub group: String,
    pub point: Vec<f64>,
    pub oracle: bool,
    pub segments: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleParams {
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    pub kind: String,
    #[serde(default)]
    pub samples_path: Option<String>,
    pub n: usize,
    pub beta: f64,
    #[serde(default)]
    pub csv: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoParams {
    pub sets: Vec<String>,
    #[serde(default)]
    pub samples_path: Option<String>,
    pub n: usize,
    pub q: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatParams {
    pub group: String,
    pub t: f64,
    pub paths: usize,
    pub steps: usize,
    #[serde(default)]
    pub gradient_corpus: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsParams {
    pub lattice: LatticeConfig,
    pub sweeps: usize,
    pub verify: String,
    pub beta: f64,
    #[serde(default)]
    pub c0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllParams {
    pub n: usize,
}

/// Measure description file: a gauge-power weight on a preset group.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpecFile {
    pub group: String,
    pub p: f64,
    pub alpha: f64,
}

impl MeasureSpecFile {
    pub fn build(&self) -> Result<MeasureSpec> {
        MeasureSpec::new(HTypeStructure::preset(&self.group)?, self.p, self.alpha)
    }
}

/// Corpus reference file for flags that take one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRef {
    pub corpus_id: String,
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let value = serde_json::from_str(&text)?;
    Ok(value)
}

fn resolve_corpus(corpus_id: &str, structure: &HTypeStructure) -> Result<FunctionCorpus> {
    match corpus_id {
        "builtin:standard" => Ok(standard_corpus(structure)),
        // A deliberately degenerate corpus: every fitted-constant check
        // refuses it, which exercises the inconclusive exit path.
        "builtin:constant-only" => Ok(FunctionCorpus {
            id: corpus_id.into(),
            entries: vec![CorpusEntry {
                id: "const-one".into(),
                field: ScalarField::constant(1.0),
                tags: vec!["constant"],
            }],
        }),
        other => Err(Error::Unsupported(format!(
            "unknown corpus {other:?}; available: builtin:standard, builtin:constant-only"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

struct CommandOutput {
    results: Value,
    warnings: Vec<String>,
    exit: ExitStatus,
    /// Extra material mixed into the config digest (loaded file contents,
    /// so the digest tracks inputs, not paths).
    digest_extra: Value,
}

/// Runs a normalized command and wraps its results in the report envelope.
pub fn run_command(cfg: &RunConfig) -> anyhow::Result<(Report, ExitStatus)> {
    cfg.validate()?;
    let started = Instant::now();
    let out = match cfg.command.as_str() {
        "dist" => run_dist(cfg)?,
        "sample" => run_sample(cfg)?,
        "verify" => run_verify(cfg)?,
        "iso" => run_iso(cfg)?,
        "heat" => run_heat(cfg)?,
        "gibbs" => run_gibbs(cfg)?,
        "all" => run_all(cfg)?,
        other => {
            return Err(Error::Domain(format!("unknown command {other:?}")).into());
        }
    };
    let digest = config_digest(&json!({
        "command": cfg.command,
        "corpus_id": cfg.corpus_id,
        "seed": cfg.seed,
        "tolerances": cfg.tolerances,
        "params": cfg.params,
        "inputs": out.digest_extra,
    }));
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: cfg.command.clone(),
        seed: cfg.seed,
        config_digest: digest,
        results: out.results,
        warnings: out.warnings,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    Ok((report, out.exit))
}

/// Pretty-prints the report; writes it to `path` when given. The printed
/// and written bytes are identical.
pub fn emit_report(report: &Report, path: Option<&Path>) -> anyhow::Result<String> {
    let text = format!("{}\n", serde_json::to_string_pretty(report)?);
    if let Some(p) = path {
        std::fs::write(p, &text)?;
    }
    Ok(text)
}

/// Writes the per-function rows of the reports as a CSV table.
pub fn emit_function_csv(reports: &[&InequalityReport], path: &Path) -> anyhow::Result<()> {
    let mut text = String::from("kind,id,lhs,lhs_se,rhs,rhs_se,violated\n");
    for rep in reports {
        let kind = serde_json::to_value(&rep.kind)?
            .as_str()
            .unwrap_or("?")
            .to_string();
        for row in &rep.per_function {
            let violated = rep.violations.contains(&row.id);
            text.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                kind, row.id, row.lhs.value, row.lhs.se, row.rhs.value, row.rhs.se, violated
            ));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn violations_exit(reports: &[&InequalityReport]) -> ExitStatus {
    if reports.iter().any(|r| !r.violations.is_empty()) {
        ExitStatus::Violations
    } else {
        ExitStatus::Ok
    }
}

// ---------------------------------------------------------------------------
// dist
// ---------------------------------------------------------------------------

fn run_dist(cfg: &RunConfig) -> Result<CommandOutput> {
    let p: DistParams = serde_json::from_value(cfg.params.clone())?;
    let structure = HTypeStructure::preset(&p.group)?;
    let g = GroupPoint::from_flat(&structure, &p.point)?;
    let sol = cc_geodesic(&structure, &g)?;
    let mut results = json!({
        "group": p.group,
        "point": p.point,
        "distance": sol.distance,
        "arc_parameter": sol.arc_parameter,
        "residual": sol.residual,
        "newton_iterations": sol.newton_iterations,
    });
    if p.oracle {
        let oracle = cc_distance_oracle(
            &structure,
            &g,
            &TranscriptionConfig {
                segments: p.segments,
                ..TranscriptionConfig::default()
            },
        )?;
        results["oracle"] = json!({
            "length": oracle.length,
            "endpoint_error": oracle.endpoint_error,
            "segments": oracle.segments,
            "excess_over_distance": oracle.length - sol.distance,
        });
    }
    Ok(CommandOutput {
        results,
        warnings: Vec::new(),
        exit: ExitStatus::Ok,
        digest_extra: Value::Null,
    })
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn load_spec(cfg: &RunConfig) -> Result<(MeasureSpecFile, Value)> {
    let path = cfg
        .spec_path
        .as_ref()
        .ok_or_else(|| Error::Domain("this command needs --spec".into()))?;
    let file: MeasureSpecFile = load_json(Path::new(path))?;
    let echo = serde_json::to_value(&file)?;
    Ok((file, echo))
}

fn chain_config(seed: u64, n: usize) -> ChainConfig {
    let n_chains = 8;
    ChainConfig {
        n_chains,
        n_samples: n.div_ceil(n_chains).max(1),
        seed,
        ..ChainConfig::default()
    }
}

fn run_sample(cfg: &RunConfig) -> Result<CommandOutput> {
    let p: SampleParams = serde_json::from_value(cfg.params.clone())?;
    let (file, spec_echo) = load_spec(cfg)?;
    let spec = file.build()?;
    let seed = cfg.seed.expect("validated: sample is stochastic");
    let set = sample_measure(&spec, &chain_config(seed, p.n))?;
    let out_path = cfg
        .output_path
        .as_ref()
        .ok_or_else(|| Error::Domain("sample needs --out for the CSV".into()))?;
    let mut csv = Vec::new();
    set.write_csv(&mut csv)?;
    std::fs::write(out_path, &csv)?;
    let csv_text = String::from_utf8_lossy(&csv).into_owned();
    let results = json!({
        "n": set.len(),
        "acceptance_rate": set.meta.acceptance_rate,
        "ess_per_chain": set.meta.ess_per_chain,
        "csv_digest": config_digest(&csv_text),
        "sampler_warnings": set.meta.warnings,
    });
    Ok(CommandOutput {
        results,
        warnings: Vec::new(),
        exit: ExitStatus::Ok,
        digest_extra: spec_echo,
    })
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn resolve_samples(
    cfg: &RunConfig,
    spec: &MeasureSpec,
    samples_path: Option<&str>,
    n: usize,
) -> Result<(SampleSet, Value)> {
    match samples_path {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            let set = SampleSet::read_csv(spec.structure(), BufReader::new(file))?;
            Ok((
                set,
                json!({"samples_digest": config_digest(&std::fs::read_to_string(path)?)}),
            ))
        }
        None => {
            let seed = cfg.seed.ok_or_else(|| {
                Error::Domain(
                    "seed is mandatory when sampling afresh (pass --samples to reuse a CSV)"
                        .into(),
                )
            })?;
            let set = sample_measure(spec, &chain_config(seed, n))?;
            Ok((set, json!({"sampled": {"seed": seed, "n": n}})))
        }
    }
}

fn run_verify(cfg: &RunConfig) -> Result<CommandOutput> {
    let p: VerifyParams = serde_json::from_value(cfg.params.clone())?;
    let (file, spec_echo) = load_spec(cfg)?;
    let spec = file.build()?;
    let corpus = resolve_corpus(&cfg.corpus_id, spec.structure())?;
    let (set, samples_echo) = resolve_samples(cfg, &spec, p.samples_path.as_deref(), p.n)?;
    let ps = PhiSpec::new(p.beta)?;
    let cutoff = cfg.tol("exp_cutoff", 4.0);

    let kinds: Vec<&str> = if p.kind == "battery" {
        vec![
            "ubound",
            "cheeger",
            "l1phi",
            "lsq",
            "ifi2",
            "tight-ledoux",
            "exp-int",
        ]
    } else {
        vec![p.kind.as_str()]
    };
    let mut reports = BTreeMap::new();
    for kind in kinds {
        let rep = match kind {
            "ubound" => verify_ubound(&ps, &spec, &set, &corpus)?,
            "cheeger" => verify_cheeger(&set, &corpus)?,
            "l1phi" => verify_l1phi_entropy(&ps, &set, &corpus)?,
            "lsq" => verify_lsq(&ps, &set, &corpus)?,
            "ifi2" => {
                let grid = cfg.tol("profile_grid", 400.0) as usize;
                let table = profile_uq(2.0, grid, 1e-8)?;
                verify_ifi2(&set, &corpus, &table)?
            }
            "tight-ledoux" => verify_tight_ledoux(&ps, &set, &corpus)?,
            "exp-int" => verify_exp_integrability(&spec, &set, &[0.1, 0.5], cutoff)?,
            other => {
                return Err(Error::Domain(format!("unknown verification kind {other:?}")));
            }
        };
        reports.insert(kind.to_string(), rep);
    }
    let refs: Vec<&InequalityReport> = reports.values().collect();
    let exit = violations_exit(&refs);
    if p.csv {
        let out = cfg.output_path.as_ref().ok_or_else(|| {
            Error::Domain("--csv needs --out to name the table file".into())
        })?;
        let csv_path = Path::new(out).with_extension("csv");
        emit_function_csv(&refs, &csv_path)
            .map_err(|e| Error::Domain(format!("writing the function table: {e}")))?;
    }
    let results = if p.kind == "battery" {
        json!({ "reports": reports })
    } else {
        serde_json::to_value(reports.values().next().expect("one report"))?
    };
    Ok(CommandOutput {
        results,
        warnings: Vec::new(),
        exit,
        digest_extra: json!({"spec": spec_echo, "samples": samples_echo}),
    })
}

// ---------------------------------------------------------------------------
// iso
// ---------------------------------------------------------------------------

fn parse_set_flags(sets: &[String], base: IsoConfig) -> Result<IsoConfig> {
    if sets.is_empty() {
        return Ok(base);
    }
    let mut cfg = IsoConfig {
        ball_radii: Vec::new(),
        include_ball_complement: false,
        halfspace_levels: Vec::new(),
        sublevels: Vec::new(),
        ..base
    };
    for s in sets {
        let mut parts = s.splitn(3, ':');
        let head = parts.next().unwrap_or("");
        match head {
            "ball" => {
                let r: f64 = parts
                    .next()
                    .ok_or_else(|| Error::Domain(format!("missing radius in {s:?}")))?
                    .parse()
                    .map_err(|e| Error::Domain(format!("bad radius in {s:?}: {e}")))?;
                cfg.ball_radii.push(r);
            }
            "ball-complement" => {
                let r: f64 = parts
                    .next()
                    .ok_or_else(|| Error::Domain(format!("missing radius in {s:?}")))?
                    .parse()
                    .map_err(|e| Error::Domain(format!("bad radius in {s:?}: {e}")))?;
                // The family tests the complement of its first ball.
                cfg.ball_radii.insert(0, r);
                cfg.include_ball_complement = true;
            }
            "halfspace" => {
                let level: f64 = parts
                    .next()
                    .ok_or_else(|| Error::Domain(format!("missing level in {s:?}")))?
                    .parse()
                    .map_err(|e| Error::Domain(format!("bad level in {s:?}: {e}")))?;
                cfg.halfspace_levels.push(level);
            }
            "sublevel" => {
                let member = parts
                    .next()
                    .ok_or_else(|| Error::Domain(format!("missing member in {s:?}")))?;
                let level: f64 = parts
                    .next()
                    .ok_or_else(|| Error::Domain(format!("missing level in {s:?}")))?
                    .parse()
                    .map_err(|e| Error::Domain(format!("bad level in {s:?}: {e}")))?;
                cfg.sublevels.push((member.to_string(), level));
            }
            other => {
                return Err(Error::Domain(format!(
                    "unknown set kind {other:?} in {s:?}; known: ball, ball-complement, \
                     halfspace, sublevel"
                )));
            }
        }
    }
    Ok(cfg)
}

fn run_iso(cfg: &RunConfig) -> Result<CommandOutput> {
    let p: IsoParams = serde_json::from_value(cfg.params.clone())?;
    let (file, spec_echo) = load_spec(cfg)?;
    let spec = file.build()?;
    let corpus = resolve_corpus(&cfg.corpus_id, spec.structure())?;
    let (set, samples_echo) = resolve_samples(cfg, &spec, p.samples_path.as_deref(), p.n)?;
    let iso_cfg = parse_set_flags(&p.sets, IsoConfig::default())?;
    let grid = cfg.tol("profile_grid", 400.0) as usize;
    let mut table = profile_uq(p.q, grid, 1e-8)?;
    let l_q = check_q_equivalence(&mut table)?;

    let iso = verify_isoperimetry(&set, &table, &corpus, &iso_cfg)?;
    let coarea = verify_coarea(&set, &corpus, &iso_cfg)?;

    // Cross links: the entropy constant of the same measure, the level
    // comparison factor for the entropy weight, and the isoperimetric
    // constant they imply together.
    let ps = PhiSpec::new(p.beta)?;
    let entropy = verify_l1phi_entropy(&ps, &set, &corpus)?;
    let c_entropy = entropy
        .constant("c")
        .ok_or_else(|| Error::Inconclusive("entropy constant not fitted".into()))?;
    let eta = eta_constant(p.beta)?;
    let implied = implied_iso_constant(c_entropy, p.beta, l_q)?;
    let q43 = profile_uq(4.0 / 3.0, grid, 1e-8)?;
    let q2 = if (p.q - 2.0).abs() < 1e-12 {
        table.clone()
    } else {
        profile_uq(2.0, grid, 1e-8)?
    };
    let dominance = dominance_constant(&q43, &q2, 200)?;

    let refs = [&iso, &coarea, &entropy];
    let exit = violations_exit(&refs);
    let results = json!({
        "iso": iso,
        "coarea": coarea,
        "cross_links": {
            "entropy_constant": c_entropy,
            "eta_constant": eta,
            "profile_l_q": l_q,
            "implied_iso_constant": implied,
            "dominance_q43_over_q2": dominance,
        },
    });
    Ok(CommandOutput {
        results,
        warnings: Vec::new(),
        exit,
        digest_extra: json!({"spec": spec_echo, "samples": samples_echo}),
    })
}

// ---------------------------------------------------------------------------
// heat
// ---------------------------------------------------------------------------

fn heisenberg_probes() -> Vec<GroupPoint> {
    let mut out = Vec::new();
    for r in [1.0, 1.6, 2.2] {
        out.push(GroupPoint::new(vec![r, 0.0], vec![0.0]));
    }
    for r in [0.8, 1.2] {
        out.push(GroupPoint::new(vec![r, r], vec![0.4 * r * r]));
    }
    for z in [0.8, 1.5] {
        out.push(GroupPoint::new(vec![0.0, 0.0], vec![z]));
    }
    out
}

fn run_heat(cfg: &RunConfig) -> Result<CommandOutput> {
    let p: HeatParams = serde_json::from_value(cfg.params.clone())?;
    let structure = HTypeStructure::preset(&p.group)?;
    let seed = cfg.seed.expect("validated: heat is stochastic");
    let path_cfg = PathConfig {
        t: p.t,
        n_steps: p.steps,
        n_paths: p.paths,
        seed,
    };
    let sample = simulate_horizontal_bm(&structure, &structure.identity(), &path_cfg)?;

    let mut warnings = Vec::new();
    let mut exit = ExitStatus::Ok;

    // Mass is carried by construction: every path of the simulation
    // reaches the horizon, so P_t 1 = 1 with no escaping mass.
    let conservative = sample.len() == p.paths;

    // Mean squared horizontal length against its closed form 2 m t.
    let sq: Vec<f64> = sample
        .points
        .iter()
        .map(|g| g.x.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let moment = stats::mean_se(&sq);
    let expected = 2.0 * structure.m() as f64 * p.t;
    let moment_ok = (moment.value - expected).abs() <= 3.0 * moment.se;
    if !moment_ok {
        exit.worsen(ExitStatus::Violations);
    }

    let mut results = json!({
        "group": p.group,
        "t": p.t,
        "paths": p.paths,
        "steps": p.steps,
        "conservative": conservative,
        "second_moment": {
            "value": moment.value,
            "se": moment.se,
            "expected": expected,
            "within_3se": moment_ok,
        },
    });

    // Exponential moments of the squared distance, at rates scaled to
    // stay integrable for any horizon.
    let lambdas = [0.05 / p.t, 0.1 / p.t];
    let brackets = exp_moment_bracket(&structure, &sample, &lambdas)?;
    results["exp_moments"] = Value::Array(
        brackets
            .iter()
            .map(|(lam, est, max_share)| {
                json!({"lambda": lam, "value": est.value, "se": est.se, "max_share": max_share})
            })
            .collect(),
    );

    // Kernel-shape comparison is calibrated for the first Heisenberg
    // group at unit time.
    if p.group == "heisenberg1" && (p.t - 1.0).abs() < 1e-12 {
        let sandwich = kernel_density_sandwich(
            &structure,
            &sample,
            &heisenberg_probes(),
            &KernelComparisonConfig::heisenberg1(),
        )?;
        results["kernel_sandwich"] = serde_json::to_value(&sandwich)?;
    } else {
        warnings.push(
            "kernel-shape comparison skipped: calibrated for heisenberg1 at t = 1".into(),
        );
    }

    let mut digest_extra = Value::Null;
    if let Some(path) = &p.gradient_corpus {
        let corpus_ref: CorpusRef = load_json(Path::new(path))?;
        let corpus = resolve_corpus(&corpus_ref.corpus_id, &structure)?;
        let rep = verify_semigroup_gradient_bound(&structure, &corpus, p.t, &path_cfg)?;
        if !rep.violations.is_empty() {
            exit.worsen(ExitStatus::Violations);
        }
        digest_extra = json!({"gradient_corpus": corpus_ref.corpus_id});
        results["gradient_bound"] = serde_json::to_value(&rep)?;
    }

    Ok(CommandOutput {
        results,
        warnings,
        exit,
        digest_extra,
    })
}

// ---------------------------------------------------------------------------
// gibbs
// ---------------------------------------------------------------------------

fn gibbs_schedule(sweeps: usize, seed: u64) -> SweepSchedule {
    let burn = (sweeps / 5).max(8);
    let n_fields = ((sweeps.saturating_sub(burn)) / 2).clamp(16, 512);
    SweepSchedule {
        burn_sweeps: burn,
        n_fields,
        thin_sweeps: 2,
        seed,
    }
}

fn center_observable(lattice: &Lattice) -> Result<CylinderFunction> {
    let center = lattice.sites()[lattice.site_count() / 2].clone();
    CylinderFunction::new(lattice, "ctr:sigmoid-x", vec![center], true, |s| {
        1.0 / (1.0 + (-s[0].x[0]).exp())
    })
}

fn run_gibbs(cfg: &RunConfig) -> Result<CommandOutput> {
    let p: GibbsParams = serde_json::from_value(cfg.params.clone())?;
    let lattice = Lattice::build(p.lattice.clone())?;
    let seed = cfg.seed.expect("validated: gibbs is stochastic");
    let mcmc = ChainConfig {
        n_chains: 4,
        n_samples: 400,
        burn_in: 240,
        thin: 2,
        proposal_scale: 1.0,
        seed,
        ..ChainConfig::default()
    };
    let sched = gibbs_schedule(p.sweeps, seed);
    let mut exit = ExitStatus::Ok;
    let results = match p.verify.as_str() {
        "merge" => {
            let f = center_observable(&lattice)?;
            let rep = iterate_sweep(&lattice, &f, 20, &mcmc, 64, seed)?;
            if matches!(rep.fitted_rate, RateFit::NoContraction) {
                exit.worsen(ExitStatus::Inconclusive);
            }
            serde_json::to_value(&rep)?
        }
        "l1phi" => {
            let corpus = cylinder_corpus(&lattice)?;
            let ps = PhiSpec::new(p.beta)?;
            let (rep, diag) = verify_gibbs_l1phi(&lattice, &corpus, &mcmc, &ps, &sched)?;
            if !rep.violations.is_empty() {
                exit.worsen(ExitStatus::Violations);
            }
            json!({"report": rep, "sweep_diagnostics": diag})
        }
        "contraction" => {
            let corpus = cylinder_corpus(&lattice)?;
            let rep = verify_gradient_contraction(&lattice, &corpus, &mcmc, &sched, p.c0)?;
            serde_json::to_value(&rep)?
        }
        other => {
            return Err(Error::Domain(format!(
                "unknown gibbs verification {other:?}; known: merge, l1phi, contraction"
            )));
        }
    };
    Ok(CommandOutput {
        results,
        warnings: Vec::new(),
        exit,
        digest_extra: serde_json::to_value(&p.lattice)?,
    })
}

// ---------------------------------------------------------------------------
// all
// ---------------------------------------------------------------------------

/// Stage progress for long orchestrated runs; stderr only, so the report
/// on stdout stays byte-stable.
struct StageClock {
    last: Instant,
}

impl StageClock {
    fn start() -> Self {
        Self { last: Instant::now() }
    }

    fn lap(&mut self, name: &str) {
        let dt = self.last.elapsed().as_secs_f64();
        eprintln!("[all] {name} done in {dt:.1}s");
        self.last = Instant::now();
    }
}

fn run_all(cfg: &RunConfig) -> Result<CommandOutput> {
    let p: AllParams = serde_json::from_value(cfg.params.clone())?;
    let seed = cfg.seed.expect("validated: all is stochastic");
    let (file, spec_echo) = match &cfg.spec_path {
        Some(_) => load_spec(cfg)?,
        None => {
            let file = MeasureSpecFile {
                group: "heisenberg1".into(),
                p: 2.0,
                alpha: 1.0,
            };
            let echo = serde_json::to_value(&file)?;
            (file, echo)
        }
    };
    let spec = file.build()?;
    let structure = spec.structure().clone();
    let corpus = resolve_corpus(&cfg.corpus_id, &structure)?;
    let mut stages = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut exit = ExitStatus::Ok;
    let mut clock = StageClock::start();
    let note_report = |stages: &mut BTreeMap<String, Value>,
                           exit: &mut ExitStatus,
                           name: &str,
                           rep: &InequalityReport|
     -> Result<()> {
        if !rep.violations.is_empty() {
            exit.worsen(ExitStatus::Violations);
        }
        stages.insert(name.to_string(), serde_json::to_value(rep)?);
        Ok(())
    };

    // Differential distance conditions on a deterministic grid.
    let dist_rep = check_distance_conditions(
        &structure,
        &DistanceConditionsConfig {
            p: spec.p(),
            alpha: spec.alpha(),
            ..DistanceConditionsConfig::default()
        },
    )?;
    note_report(&mut stages, &mut exit, "distance_conditions", &dist_rep)?;
    clock.lap("distance_conditions");

    // Profile table health for the standard exponents.
    let grid = cfg.tol("profile_grid", 400.0) as usize;
    let mut l_q = BTreeMap::new();
    let mut sym = BTreeMap::new();
    for q in [4.0 / 3.0, 2.0, 4.0] {
        let mut table = profile_uq(q, grid, 1e-8)?;
        l_q.insert(format!("{q:.6}"), check_q_equivalence(&mut table)?);
        sym.insert(format!("{q:.6}"), table.symmetry_residual());
    }
    stages.insert(
        "profile".into(),
        json!({"l_q": l_q, "symmetry_residual": sym}),
    );
    clock.lap("profile");

    // Flat-measure baselines, always on the plane: there every corpus
    // member is closed-form and the quadrature is sharp, whereas on a
    // stratified group each radial integrand evaluation costs a geodesic
    // solve without testing anything the distance stages don't.
    {
        let flat = HTypeStructure::preset("euclidean(2)")?;
        let flat_corpus = standard_corpus(&flat);
        let (sob, poin) =
            verify_sobolev_baseline(&flat, &flat_corpus, &SobolevConfig::default())?;
        note_report(&mut stages, &mut exit, "sobolev_baseline", &sob)?;
        note_report(&mut stages, &mut exit, "poincare_ball", &poin)?;
        clock.lap("flat_baselines");
    }

    // Measure-side battery on one shared sample.
    let set = sample_measure(&spec, &chain_config(seed, p.n))?;
    clock.lap("sampling");
    let ps = PhiSpec::new(0.5)?;
    let table2 = profile_uq(2.0, grid, 1e-8)?;
    note_report(&mut stages, &mut exit, "ubound", &verify_ubound(&ps, &spec, &set, &corpus)?)?;
    note_report(&mut stages, &mut exit, "cheeger", &verify_cheeger(&set, &corpus)?)?;
    note_report(
        &mut stages,
        &mut exit,
        "l1phi",
        &verify_l1phi_entropy(&ps, &set, &corpus)?,
    )?;
    note_report(&mut stages, &mut exit, "lsq", &verify_lsq(&ps, &set, &corpus)?)?;
    note_report(&mut stages, &mut exit, "ifi2", &verify_ifi2(&set, &corpus, &table2)?)?;
    note_report(
        &mut stages,
        &mut exit,
        "tight_ledoux",
        &verify_tight_ledoux(&ps, &set, &corpus)?,
    )?;
    note_report(
        &mut stages,
        &mut exit,
        "exp_int",
        &verify_exp_integrability(&spec, &set, &[0.1, 0.5], cfg.tol("exp_cutoff", 4.0))?,
    )?;
    clock.lap("measure_battery");

    // Set-level isoperimetry and coarea on the same sample.
    let iso_cfg = IsoConfig::default();
    note_report(
        &mut stages,
        &mut exit,
        "iso",
        &verify_isoperimetry(&set, &table2, &corpus, &iso_cfg)?,
    )?;
    note_report(&mut stages, &mut exit, "coarea", &verify_coarea(&set, &corpus, &iso_cfg)?)?;
    clock.lap("isoperimetry");

    // Heat: endpoint moment and the semigroup gradient bound.
    let path_cfg = PathConfig {
        t: 1.0,
        n_steps: 128,
        n_paths: (p.n / 4).max(5000),
        seed: seed ^ 0x48_45_41,
    };
    let sample = simulate_horizontal_bm(&structure, &structure.identity(), &path_cfg)?;
    let sq: Vec<f64> = sample
        .points
        .iter()
        .map(|g| g.x.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let moment = stats::mean_se(&sq);
    let expected = 2.0 * structure.m() as f64 * path_cfg.t;
    if (moment.value - expected).abs() > 3.0 * moment.se {
        exit.worsen(ExitStatus::Violations);
    }
    stages.insert(
        "heat_moment".into(),
        json!({"value": moment.value, "se": moment.se, "expected": expected}),
    );
    let grad_rep = verify_semigroup_gradient_bound(&structure, &corpus, 1.0, &path_cfg)?;
    note_report(&mut stages, &mut exit, "heat_gradient", &grad_rep)?;
    clock.lap("heat");

    // A small lattice system with the same single-site law shape.
    let lattice = Lattice::build(LatticeConfig {
        d: 2,
        side: 3,
        spin_preset: "euclidean(1)".into(),
        single_site: subriem::gibbs::SingleSitePotential::Power { p: 2.0, alpha: 0.5 },
        interaction: subriem::gibbs::InteractionKind::TanhDot { scale: 0.5 },
        quadratic_g: None,
        j: 0.1,
        boundary: subriem::gibbs::BoundaryCondition::Identity,
    })?;
    let mcmc = ChainConfig {
        n_chains: 4,
        n_samples: 400,
        burn_in: 240,
        thin: 2,
        proposal_scale: 1.0,
        seed: seed ^ 0x47_49_42,
        ..ChainConfig::default()
    };
    let sched = SweepSchedule {
        burn_sweeps: 10,
        n_fields: 48,
        thin_sweeps: 2,
        seed: seed ^ 0x47_49_42,
    };
    match verify_gibbs_l1phi(
        &lattice,
        &cylinder_corpus(&lattice)?,
        &mcmc,
        &PhiSpec::new(0.5)?,
        &sched,
    ) {
        Ok((rep, diag)) => {
            note_report(&mut stages, &mut exit, "gibbs_l1phi", &rep)?;
            stages.insert("gibbs_sweep".into(), serde_json::to_value(&diag)?);
        }
        Err(Error::Refused(msg)) => {
            warnings.push(format!("lattice stage refused: {msg}"));
            exit.worsen(ExitStatus::Inconclusive);
        }
        Err(e) => return Err(e),
    }
    clock.lap("lattice");

    Ok(CommandOutput {
        results: json!({"stages": stages}),
        warnings,
        exit,
        digest_extra: json!({"spec": spec_echo}),
    })
}
