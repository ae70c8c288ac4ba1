//! Binary entry point: argument parsing, worker-pool setup, dispatch,
//! and exit-code mapping.

mod cli;
mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::Value;

use cli::{Cli, Command};
use run::{
    error_exit_code, load_json, run_command, AllParams, DistParams, GibbsParams, HeatParams,
    IsoParams, RunConfig, SampleParams, VerifyParams,
};
use subriem::gibbs::LatticeConfig;
use subriem::htype::HTypeStructure;

fn init_worker_pool() {
    if let Ok(raw) = std::env::var("SUBRIEM_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(threads) if threads >= 1 => {
                // A second initialization (as in tests) is harmless; the
                // first pool stays in place.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
            _ => {
                eprintln!("warning: ignoring SUBRIEM_THREADS={raw:?} (want a positive integer)");
            }
        }
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Lowers the parsed command line into the normalized run description and
/// remembers where the report should land.
fn lower(command: Command) -> Result<(RunConfig, Option<PathBuf>), anyhow::Error> {
    let mut cfg = RunConfig {
        command: String::new(),
        spec_path: None,
        corpus_id: "builtin:standard".into(),
        seed: None,
        output_path: None,
        tolerances: BTreeMap::new(),
        params: Value::Null,
    };
    let out = match command {
        Command::Dist {
            group,
            point,
            oracle,
            segments,
            out,
        } => {
            let point = cli::parse_point(&point).map_err(anyhow::Error::msg)?;
            cfg.command = "dist".into();
            cfg.params = serde_json::to_value(DistParams {
                group,
                point,
                oracle,
                segments,
            })?;
            out
        }
        Command::Sample { spec, n, seed, out } => {
            cfg.command = "sample".into();
            cfg.spec_path = Some(path_str(&spec));
            cfg.seed = Some(seed);
            cfg.params = serde_json::to_value(SampleParams { n })?;
            Some(out)
        }
        Command::Verify {
            kind,
            spec,
            corpus,
            samples,
            n,
            seed,
            beta,
            out,
            csv,
        } => {
            cfg.command = "verify".into();
            cfg.spec_path = Some(path_str(&spec));
            cfg.corpus_id = corpus;
            cfg.seed = seed;
            cfg.params = serde_json::to_value(VerifyParams {
                kind: kind.label().into(),
                samples_path: samples.as_deref().map(path_str),
                n,
                beta,
                csv,
            })?;
            out
        }
        Command::Iso {
            sets,
            spec,
            samples,
            n,
            seed,
            profile,
            beta,
            out,
        } => {
            let q = cli::parse_profile(&profile).map_err(anyhow::Error::msg)?;
            cfg.command = "iso".into();
            cfg.spec_path = Some(path_str(&spec));
            cfg.seed = seed;
            cfg.params = serde_json::to_value(IsoParams {
                sets,
                samples_path: samples.as_deref().map(path_str),
                n,
                q,
                beta,
            })?;
            out
        }
        Command::Heat {
            group,
            t,
            paths,
            steps,
            seed,
            verify_gradient,
            out,
        } => {
            cfg.command = "heat".into();
            cfg.seed = Some(seed);
            cfg.params = serde_json::to_value(HeatParams {
                group,
                t,
                paths,
                steps,
                gradient_corpus: verify_gradient.as_deref().map(path_str),
            })?;
            out
        }
        Command::Gibbs {
            config,
            sweeps,
            seed,
            verify,
            beta,
            c0,
            out,
        } => {
            // The lattice description is inlined so the report digest
            // tracks its content rather than its file name.
            let lattice: LatticeConfig = load_json(&config)?;
            cfg.command = "gibbs".into();
            cfg.seed = Some(seed);
            cfg.params = serde_json::to_value(GibbsParams {
                lattice,
                sweeps,
                verify: verify.map(|v| v.label()).unwrap_or("merge").into(),
                beta,
                c0,
            })?;
            out
        }
        Command::All { spec, n, seed, out } => {
            cfg.command = "all".into();
            cfg.spec_path = spec.as_deref().map(path_str);
            cfg.seed = Some(seed);
            cfg.params = serde_json::to_value(AllParams { n })?;
            out
        }
    };
    cfg.output_path = out.as_deref().map(path_str);
    Ok((cfg, out))
}

fn main() -> ExitCode {
    init_worker_pool();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; everything else is
            // a usage error, kept distinct from the verification exit
            // codes 2 and 3.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    if cli.list_presets {
        for (name, blurb) in HTypeStructure::preset_catalog() {
            println!("{name:16} {blurb}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: missing subcommand; run with --help for usage");
        return ExitCode::from(1);
    };
    let (cfg, out_path) = match lower(command) {
        Ok(v) => v,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::from(error_exit_code(&err) as u8);
        }
    };
    match run_command(&cfg) {
        Ok((report, exit)) => {
            // The sample command's --out is its CSV target; its report
            // goes to stdout only.
            let report_path = if cfg.command == "sample" {
                None
            } else {
                out_path.as_deref()
            };
            match run::emit_report(&report, report_path) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::from(exit.code() as u8)
                }
                Err(err) => {
                    eprintln!("error: {err:#}");
                    ExitCode::from(1)
                }
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(error_exit_code(&err) as u8)
        }
    }
}
