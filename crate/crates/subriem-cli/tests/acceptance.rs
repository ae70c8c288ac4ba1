//! Acceptance gate for the whole laboratory: twelve numbered criteria,
//! each printing one PASS/FAIL line (visible with `--nocapture`). Each
//! criterion states what it checks and enforces its runtime budget where
//! one is part of the contract.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng as _, SeedableRng};

use subriem::corpus::standard_corpus;
use subriem::distance::{
    cc_distance, cc_distance_oracle, check_distance_conditions, DistanceConditionsConfig,
    TranscriptionConfig,
};
use subriem::functionals::{
    entropy_phi_from_values, verify_cheeger, verify_ifi2, verify_l1phi_entropy, verify_lsq,
    verify_tight_ledoux, verify_ubound, PhiSpec,
};
use subriem::gibbs::{
    center_base_fields, cylinder_corpus, iterate_sweep, verify_gibbs_l1phi,
    verify_gradient_contraction, BoundaryCondition, CylinderFunction, InteractionKind, Lattice,
    LatticeConfig, RateFit, SingleSitePotential, SweepSchedule,
};
use subriem::heat::{
    heat_semigroup_apply, simulate_horizontal_bm, verify_semigroup_gradient_bound, PathConfig,
};
use subriem::htype::{GroupPoint, HTypeStructure, ScalarField};
use subriem::isoperimetry::{
    boundary_measure, check_eta_estimate, set_distances, verify_coarea, verify_isoperimetry,
    IsoConfig, LadderConfig, SetGeometry, TestSet,
};
use subriem::measure::{estimate_normalization, sample_measure, ChainConfig, MeasureSpec};
use subriem::profile::{check_q_equivalence, profile_uq};
use subriem::report::InequalityReport;
use subriem::stats::{ks_two_sample, mean_se, Estimate};

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

fn criterion<F: FnOnce()>(n: u32, what: &str, body: F) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(body));
    let dt = start.elapsed().as_secs_f64();
    match &result {
        Ok(()) => println!("[acceptance] PASS criterion {n:02} ({dt:.1}s): {what}"),
        Err(_) => println!("[acceptance] FAIL criterion {n:02} ({dt:.1}s): {what}"),
    }
    if let Err(p) = result {
        std::panic::resume_unwind(p);
    }
}

fn flat_gap(a: &GroupPoint, b: &GroupPoint) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat().iter())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn big_chain(seed: u64, n: usize) -> ChainConfig {
    let n_chains = 8;
    ChainConfig {
        n_chains,
        n_samples: n.div_ceil(n_chains),
        seed,
        ..ChainConfig::default()
    }
}

fn ratio_se(num: &Estimate, den: &Estimate) -> f64 {
    let r = num.value / den.value;
    ((num.se / den.value).powi(2) + (r * den.se / den.value).powi(2)).sqrt()
}

fn assert_all_finite(rep: &InequalityReport, label: &str) {
    for (name, value) in &rep.fitted_constants {
        assert!(
            value.is_finite(),
            "{label}: fitted constant {name} is not finite"
        );
    }
    assert!(
        rep.violations.is_empty(),
        "{label}: violations {:?}",
        rep.violations
    );
}

// ---------------------------------------------------------------------------
// 1. Group algebra
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_group_algebra() {
    criterion(
        1,
        "group law associativity/identity/inverse to 1e-12 and the anticommutation square to 1e-10, under a second",
        || {
            let start = Instant::now();
            for preset in ["heisenberg1", "quaternionic"] {
                let s = HTypeStructure::preset(preset).unwrap();
                let mut rng = StdRng::seed_from_u64(101);
                let mut draw = |rng: &mut StdRng| {
                    GroupPoint::new(
                        (0..s.m()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                        (0..s.n()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    )
                };
                let e = s.identity();
                let mut worst: f64 = 0.0;
                for _ in 0..1000 {
                    let a = draw(&mut rng);
                    let b = draw(&mut rng);
                    let c = draw(&mut rng);
                    let ab_c = s.group_mul(&s.group_mul(&a, &b).unwrap(), &c).unwrap();
                    let a_bc = s.group_mul(&a, &s.group_mul(&b, &c).unwrap()).unwrap();
                    worst = worst.max(flat_gap(&ab_c, &a_bc));
                    worst = worst.max(flat_gap(&s.group_mul(&a, &e).unwrap(), &a));
                    worst = worst.max(flat_gap(&s.group_mul(&e, &a).unwrap(), &a));
                    let back = s.group_mul(&a, &s.group_inv(&a).unwrap()).unwrap();
                    worst = worst.max(flat_gap(&back, &e));
                }
                assert!(worst <= 1e-12, "{preset}: group identity error {worst:.3e}");

                // (sum_k u_k J_k)^2 applied to basis vectors must be
                // -|u|^2 times the identity.
                let mut jworst: f64 = 0.0;
                let mut tmp = vec![0.0; s.m()];
                for _ in 0..100 {
                    let u: Vec<f64> = (0..s.n()).map(|_| rng.gen_range(-1.5..1.5)).collect();
                    let norm2: f64 = u.iter().map(|v| v * v).sum();
                    for i in 0..s.m() {
                        let mut x = vec![0.0; s.m()];
                        x[i] = 1.0;
                        let mut y = vec![0.0; s.m()];
                        for (k, uk) in u.iter().enumerate() {
                            s.j_apply(k, &x, &mut tmp);
                            for (yj, tj) in y.iter_mut().zip(&tmp) {
                                *yj += uk * tj;
                            }
                        }
                        let mut w = vec![0.0; s.m()];
                        for (k, uk) in u.iter().enumerate() {
                            s.j_apply(k, &y, &mut tmp);
                            for (wj, tj) in w.iter_mut().zip(&tmp) {
                                *wj += uk * tj;
                            }
                        }
                        for (j, wj) in w.iter().enumerate() {
                            jworst = jworst.max((wj + norm2 * x[j]).abs());
                        }
                    }
                }
                assert!(jworst <= 1e-10, "{preset}: anticommutation error {jworst:.3e}");
            }
            let dt = start.elapsed().as_secs_f64();
            assert!(dt < 1.0, "group algebra checks took {dt:.2}s, budget 1s");
        },
    );
}

// ---------------------------------------------------------------------------
// 2. Geodesic distance
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_geodesic_distance() {
    criterion(
        2,
        "distance homogeneity/symmetry to 1e-9, control-path agreement to 1e-3 including near-axis targets, straight-line and axis closed forms, under 30s",
        || {
            let start = Instant::now();
            let s = HTypeStructure::preset("heisenberg1").unwrap();
            let mut rng = StdRng::seed_from_u64(202);

            for _ in 0..100 {
                let g = GroupPoint::new(
                    vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)],
                    vec![rng.gen_range(-1.0..1.0)],
                );
                if g.to_flat().iter().all(|v| v.abs() < 1e-2) {
                    continue;
                }
                let d = cc_distance(&s, &g).unwrap();
                for lambda in [0.5, 2.0] {
                    let gd = s.dilate(lambda, &g).unwrap();
                    let dd = cc_distance(&s, &gd).unwrap();
                    assert!(
                        (dd - lambda * d).abs() <= 1e-9 * (1.0 + lambda * d),
                        "homogeneity: d(delta_{lambda} g) = {dd}, want {}",
                        lambda * d
                    );
                }
                let di = cc_distance(&s, &s.group_inv(&g).unwrap()).unwrap();
                assert!(
                    (di - d).abs() <= 1e-9 * (1.0 + d),
                    "symmetry: d(g^-1) = {di}, d(g) = {d}"
                );
            }

            // Control-path transcription: 15 generic targets and 5 close
            // to the center axis, where the optimal path winds fully.
            let cfg = TranscriptionConfig {
                segments: 150,
                ..TranscriptionConfig::default()
            };
            let mut targets = Vec::new();
            for i in 0..15 {
                let ang = 0.41 * i as f64;
                let r = 0.45 + 0.08 * i as f64;
                targets.push(GroupPoint::new(
                    vec![r * ang.cos(), r * ang.sin()],
                    vec![0.8 * (0.77 * i as f64).sin()],
                ));
            }
            for (i, z) in [0.5, -0.7, 0.9, -1.1, 1.3].into_iter().enumerate() {
                let ang = 1.1 * i as f64;
                targets.push(GroupPoint::new(
                    vec![0.05 * ang.cos(), 0.05 * ang.sin()],
                    vec![z],
                ));
            }
            for g in &targets {
                let d = cc_distance(&s, g).unwrap();
                let oracle = cc_distance_oracle(&s, g, &cfg).unwrap();
                assert!(
                    oracle.length >= d - 1e-6,
                    "control path undercut the distance: {} < {d}",
                    oracle.length
                );
                let tol = 1e-3 * d.max(1.0);
                assert!(
                    (oracle.length - d).abs() <= tol,
                    "oracle {} vs distance {d} (tol {tol:.1e}) at {:?}",
                    oracle.length,
                    g.to_flat()
                );
            }

            // Purely horizontal targets travel on straight lines.
            for _ in 0..10 {
                let x = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let d = cc_distance(&s, &GroupPoint::new(x, vec![0.0])).unwrap();
                assert!((d - norm).abs() <= 1e-6, "horizontal d = {d}, |x| = {norm}");
            }

            // Unit center-axis target: full circle, length sqrt(4 pi).
            let axis = cc_distance(&s, &GroupPoint::new(vec![0.0, 0.0], vec![1.0])).unwrap();
            let want = (4.0 * std::f64::consts::PI).sqrt();
            assert!(
                (axis - want).abs() <= 1e-3,
                "axis distance {axis} vs {want}"
            );

            let dt = start.elapsed().as_secs_f64();
            assert!(dt < 30.0, "distance checks took {dt:.1}s, budget 30s");
        },
    );
}

// ---------------------------------------------------------------------------
// 3. Unit gradient and the sub-Laplacian comparison
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_distance_gradient_conditions() {
    criterion(
        3,
        "|grad d| within 1e-3 of one on a thousand off-axis points and a feasible sub-Laplacian comparison with eps < 1",
        || {
            let s = HTypeStructure::preset("heisenberg1").unwrap();
            let rep = check_distance_conditions(
                &s,
                &DistanceConditionsConfig {
                    grid_size: 1000,
                    p: 2.0,
                    alpha: 1.0,
                    ..DistanceConditionsConfig::default()
                },
            )
            .unwrap();
            assert!(rep.violations.is_empty(), "violations: {:?}", rep.violations);
            let min_grad = rep.constant("min_grad").unwrap();
            let max_grad = rep.constant("max_grad").unwrap();
            assert!(
                min_grad >= 1.0 - 1e-3 && max_grad <= 1.0 + 1e-3,
                "|grad d| range [{min_grad}, {max_grad}] outside the unit band"
            );
            let eps = rep.constant("eps").unwrap();
            let k = rep.constant("K").unwrap();
            assert!(eps < 1.0, "comparison exponent weight eps = {eps}");
            assert!(k.is_finite() && k >= 0.0, "comparison offset K = {k}");
        },
    );
}

// ---------------------------------------------------------------------------
// 4. Profile table
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_profile_table() {
    criterion(
        4,
        "profile value at one half, symmetry residual, and 1% grid stability of the level-comparison constant",
        || {
            let mut table = profile_uq(2.0, 400, 1e-8).unwrap();
            let mid = table.eval(0.5).unwrap();
            let want = 1.0 / std::f64::consts::PI.sqrt();
            assert!(
                (mid - want).abs() <= 1e-6,
                "profile(1/2) = {mid}, want {want}"
            );
            assert!(
                table.symmetry_residual() < 1e-8,
                "symmetry residual {}",
                table.symmetry_residual()
            );
            let _ = check_q_equivalence(&mut table).unwrap();

            for q in [4.0 / 3.0, 2.0, 4.0] {
                let mut coarse = profile_uq(q, 200, 1e-8).unwrap();
                let mut fine = profile_uq(q, 400, 1e-8).unwrap();
                let l_coarse = check_q_equivalence(&mut coarse).unwrap();
                let l_fine = check_q_equivalence(&mut fine).unwrap();
                assert!(
                    l_coarse.is_finite() && l_fine.is_finite() && l_fine > 0.0,
                    "q = {q}: non-finite level constant"
                );
                let rel = (l_coarse - l_fine).abs() / l_fine;
                assert!(
                    rel < 0.01,
                    "q = {q}: level constant moved {rel:.3%} between grids ({l_coarse} vs {l_fine})"
                );
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 5. Logarithm comparison inequality
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_log_comparison_inequality() {
    criterion(
        5,
        "closed-form eta satisfies the pointwise logarithm comparison on a thousand grid points for both exponents",
        || {
            for beta in [1.0, 0.5] {
                let (violations, min_margin) = check_eta_estimate(beta, 1000).unwrap();
                assert_eq!(
                    violations, 0,
                    "beta = {beta}: {violations} grid violations (worst margin {min_margin:.3e})"
                );
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 6. One-dimensional closed-form suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_flat_line_closed_forms() {
    criterion(
        6,
        "Gaussian-weight line: mean |x|, normalization, half-space boundary density, and exponential moments match closed forms, under 2 min",
        || {
            let start = Instant::now();
            let s = HTypeStructure::preset("euclidean(1)").unwrap();
            let spec = MeasureSpec::new(s.clone(), 2.0, 1.0).unwrap();
            let set = sample_measure(
                &spec,
                &ChainConfig {
                    thin: 4,
                    ..big_chain(606, 100_000)
                },
            )
            .unwrap();
            let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();

            // Mean absolute coordinate: 1/sqrt(pi) = 0.5642.
            let absx: Vec<f64> = set.points.iter().map(|g| g.x[0].abs()).collect();
            let m = mean_se(&absx);
            assert!(
                (m.value - inv_sqrt_pi).abs() <= 3.0 * m.se,
                "mean |x| = {} +- {}, want {inv_sqrt_pi}",
                m.value,
                m.se
            );

            // Normalization by quadrature: sqrt(pi) to 1e-6.
            let z = estimate_normalization(&spec, 6.0, 1e-12, 0).unwrap();
            let sqrt_pi = std::f64::consts::PI.sqrt();
            assert!(
                (z.z - sqrt_pi).abs() <= 1e-6,
                "normalization {} vs {sqrt_pi}",
                z.z
            );

            // Half-space boundary measure: the density at zero.
            let geom = SetGeometry::build(
                &s,
                TestSet::HalfSpace { axis: 0, level: 0.0 },
                512,
                1,
            )
            .unwrap();
            let dset = set_distances(&geom, &set, None).unwrap();
            let boundary = boundary_measure(&set, &dset, &LadderConfig::default()).unwrap();
            assert!(
                (boundary.value.value - inv_sqrt_pi).abs() <= 3.0 * boundary.value.se,
                "half-space boundary {} +- {}, want {inv_sqrt_pi}",
                boundary.value.value,
                boundary.value.se
            );

            // Exponential square moments: (1 - lambda)^{-1/2}.
            for lambda in [0.1, 0.5] {
                let vals: Vec<f64> = set
                    .points
                    .iter()
                    .map(|g| (lambda * g.x[0] * g.x[0]).exp())
                    .collect();
                let est = mean_se(&vals);
                let want = (1.0 - lambda).powf(-0.5);
                assert!(
                    (est.value - want).abs() <= 3.0 * est.se,
                    "exp moment at {lambda}: {} +- {}, want {want}",
                    est.value,
                    est.se
                );
            }

            let dt = start.elapsed().as_secs_f64();
            assert!(dt < 120.0, "line suite took {dt:.1}s, budget 2 min");
        },
    );
}

// ---------------------------------------------------------------------------
// 7. Inequality battery with seed reproduction
// ---------------------------------------------------------------------------

fn run_battery(seed: u64) -> BTreeMap<&'static str, InequalityReport> {
    let s = HTypeStructure::preset("heisenberg1").unwrap();
    let spec = MeasureSpec::new(s.clone(), 2.0, 1.0).unwrap();
    let corpus = standard_corpus(&s);
    let set = sample_measure(&spec, &big_chain(seed, 100_000)).unwrap();
    let ps = PhiSpec::new(0.5).unwrap();
    let table = profile_uq(2.0, 400, 1e-8).unwrap();
    let mut out = BTreeMap::new();
    out.insert("ubound", verify_ubound(&ps, &spec, &set, &corpus).unwrap());
    out.insert("cheeger", verify_cheeger(&set, &corpus).unwrap());
    out.insert("l1phi", verify_l1phi_entropy(&ps, &set, &corpus).unwrap());
    out.insert("lsq", verify_lsq(&ps, &set, &corpus).unwrap());
    out.insert("ifi2", verify_ifi2(&set, &corpus, &table).unwrap());
    out.insert("tight_ledoux", verify_tight_ledoux(&ps, &set, &corpus).unwrap());
    out
}

#[test]
fn criterion_07_inequality_battery_reproduces() {
    criterion(
        7,
        "six-check battery on the standard corpus: finite constants, zero violations, and two-seed agreement within three combined errors, under 10 min",
        || {
            let start = Instant::now();
            let first = run_battery(21);
            let second = run_battery(22);
            for (name, rep) in &first {
                assert!(
                    rep.per_function.len() >= 20 || rep.n_eff > 0,
                    "{name}: corpus coverage"
                );
                assert_all_finite(rep, name);
            }
            for (name, rep) in &second {
                assert_all_finite(rep, name);
            }
            for (name, a) in &first {
                let b = &second[name];
                for (key, va) in &a.fitted_constants {
                    if key.ends_with("_se") {
                        continue;
                    }
                    let se_key = format!("{key}_se");
                    let (Some(sa), Some(sb)) =
                        (a.fitted_constants.get(&se_key), b.fitted_constants.get(&se_key))
                    else {
                        continue;
                    };
                    let vb = b.fitted_constants[key];
                    assert!(
                        (va - vb).abs() <= 3.0 * (sa + sb) + 1e-9,
                        "{name}.{key}: {va} +- {sa} vs {vb} +- {sb} across seeds"
                    );
                }
            }
            let dt = start.elapsed().as_secs_f64();
            assert!(dt < 600.0, "battery took {dt:.1}s, budget 10 min");
        },
    );
}

// ---------------------------------------------------------------------------
// 8. Product measures keep the marginal entropy constant
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_product_entropy_constant() {
    criterion(
        8,
        "entropy constant of a product of two Gaussian-weight lines stays below the worst marginal, up to three combined errors",
        || {
            let ps = PhiSpec::new(0.5).unwrap();
            let marginal = |seed: u64| {
                let s = HTypeStructure::preset("euclidean(1)").unwrap();
                let spec = MeasureSpec::new(s.clone(), 2.0, 1.0).unwrap();
                let set = sample_measure(&spec, &big_chain(seed, 40_000)).unwrap();
                let rep = verify_l1phi_entropy(&ps, &set, &standard_corpus(&s)).unwrap();
                (rep.constant("c").unwrap(), rep.constant("c_se").unwrap())
            };
            let (c1, se1) = marginal(81);
            let (c2, se2) = marginal(82);
            let (worst, worst_se) = if c1 >= c2 { (c1, se1) } else { (c2, se2) };

            let s2 = HTypeStructure::preset("euclidean(2)").unwrap();
            let spec2 = MeasureSpec::new(s2.clone(), 2.0, 1.0).unwrap();
            let set2 = sample_measure(&spec2, &big_chain(83, 40_000)).unwrap();
            let rep2 = verify_l1phi_entropy(&ps, &set2, &standard_corpus(&s2)).unwrap();
            let cp = rep2.constant("c").unwrap();
            let cp_se = rep2.constant("c_se").unwrap();

            assert!(
                cp <= worst + 3.0 * (cp_se + worst_se),
                "product constant {cp} +- {cp_se} exceeds worst marginal {worst} +- {worst_se}"
            );
        },
    );
}

// ---------------------------------------------------------------------------
// 9. Metric balls against the profile, and the coarea lower bound
// ---------------------------------------------------------------------------

fn ball_family_constant(seed: u64) -> (InequalityReport, InequalityReport) {
    let s = HTypeStructure::preset("heisenberg1").unwrap();
    let spec = MeasureSpec::new(s.clone(), 2.0, 1.0).unwrap();
    let corpus = standard_corpus(&s);
    let set = sample_measure(&spec, &big_chain(seed, 30_000)).unwrap();
    let table = profile_uq(2.0, 400, 1e-8).unwrap();
    let cfg = IsoConfig {
        ball_radii: vec![0.75, 1.25, 2.0],
        include_ball_complement: true,
        halfspace_levels: Vec::new(),
        sublevels: Vec::new(),
        coarea_members: corpus.entries.iter().map(|e| e.id.clone()).collect(),
        coarea_levels: 5,
        cloud_size: 1024,
        ..IsoConfig::default()
    };
    let iso = verify_isoperimetry(&set, &table, &corpus, &cfg).unwrap();
    let coarea = verify_coarea(&set, &corpus, &cfg).unwrap();
    (iso, coarea)
}

#[test]
fn criterion_09_ball_profile_and_coarea() {
    criterion(
        9,
        "metric-ball boundary measures dominate the profile with a seed-stable constant, and every corpus member obeys the coarea lower bound",
        || {
            let (iso_a, coarea_a) = ball_family_constant(31);
            let (iso_b, _) = ball_family_constant(32);
            for (tag, iso) in [("first", &iso_a), ("second", &iso_b)] {
                assert!(iso.violations.is_empty(), "{tag}: {:?}", iso.violations);
                assert!(
                    iso.per_function.len() >= 2,
                    "{tag}: only {} resolved ball rows",
                    iso.per_function.len()
                );
                let c = iso.constant("c_iso").unwrap();
                assert!(c.is_finite() && c > 0.0, "{tag}: ball constant {c}");
            }
            let ca = iso_a.constant("c_iso").unwrap();
            let cb = iso_b.constant("c_iso").unwrap();
            let sa = iso_a.constant("c_iso_se").unwrap();
            let sb = iso_b.constant("c_iso_se").unwrap();
            assert!(
                (ca - cb).abs() <= 3.0 * (sa + sb),
                "ball constant moved across seeds: {ca} +- {sa} vs {cb} +- {sb}"
            );

            assert!(
                coarea_a.violations.is_empty(),
                "coarea violations: {:?}",
                coarea_a.violations
            );
            assert!(
                coarea_a.per_function.len() >= 20,
                "coarea covered only {} members",
                coarea_a.per_function.len()
            );
        },
    );
}

// ---------------------------------------------------------------------------
// 10. Endpoint law of the horizontal diffusion
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_diffusion_endpoint_law() {
    criterion(
        10,
        "mass conservation, the squared-coordinate moment, parabolic scaling by a distribution test, and a stable semigroup gradient ratio, under 5 min",
        || {
            let start = Instant::now();
            let s = HTypeStructure::preset("heisenberg1").unwrap();
            let e = s.identity();
            let cfg = |t: f64, seed: u64| PathConfig {
                t,
                n_steps: 256,
                n_paths: 100_000,
                seed,
            };

            // Conservation: applying the semigroup to one is exactly one.
            let ones = heat_semigroup_apply(&s, &ScalarField::constant(1.0), &e, &cfg(1.0, 71)).unwrap();
            assert_eq!(ones.value, 1.0, "mass leaked: P_t 1 = {}", ones.value);
            assert_eq!(ones.se, 0.0);

            // Squared horizontal coordinates grow linearly: 2 m t.
            let sample = simulate_horizontal_bm(&s, &e, &cfg(1.0, 72)).unwrap();
            assert_eq!(sample.len(), 100_000);
            let sq: Vec<f64> = sample
                .points
                .iter()
                .map(|g| g.x.iter().map(|v| v * v).sum())
                .collect();
            let moment = mean_se(&sq);
            let want = 2.0 * s.m() as f64;
            assert!(
                (moment.value - want).abs() <= 3.0 * moment.se,
                "second moment {} +- {} vs {want}",
                moment.value,
                moment.se
            );

            // Parabolic scaling: the 2-dilation of the unit-time law is
            // the time-four law; the discretized walks match exactly in
            // distribution, so a two-sample test must accept.
            let late = simulate_horizontal_bm(&s, &e, &cfg(4.0, 73)).unwrap();
            let scaled: Vec<f64> = sample
                .points
                .iter()
                .map(|g| s.kaplan_norm(&s.dilate(2.0, g).unwrap()).unwrap())
                .collect();
            let direct: Vec<f64> = late
                .points
                .iter()
                .map(|g| s.kaplan_norm(g).unwrap())
                .collect();
            let (_, p) = ks_two_sample(&scaled, &direct).unwrap();
            assert!(p >= 0.01, "scaling distribution test rejected: p = {p:.4}");

            // Gradient ratio: finite at each horizon with overlapping
            // uncertainty intervals.
            let corpus = standard_corpus(&s);
            let mut intervals = Vec::new();
            for (t, seed) in [(0.25, 74), (1.0, 75), (4.0, 76)] {
                let rep = verify_semigroup_gradient_bound(&s, &corpus, t, &cfg(t, seed)).unwrap();
                assert!(rep.violations.is_empty(), "t = {t}: {:?}", rep.violations);
                let c = rep.constant("c1").unwrap();
                let se = rep.constant("c1_se").unwrap();
                assert!(c.is_finite() && c > 0.0, "t = {t}: ratio {c}");
                intervals.push((t, c - 3.0 * se, c + 3.0 * se));
            }
            for i in 0..intervals.len() {
                for j in i + 1..intervals.len() {
                    let (ti, lo_i, hi_i) = intervals[i];
                    let (tj, lo_j, hi_j) = intervals[j];
                    assert!(
                        lo_i <= hi_j && lo_j <= hi_i,
                        "gradient ratio intervals at t = {ti} and t = {tj} do not overlap: \
                         [{lo_i:.3}, {hi_i:.3}] vs [{lo_j:.3}, {hi_j:.3}]"
                    );
                }
            }

            let dt = start.elapsed().as_secs_f64();
            assert!(dt < 300.0, "diffusion checks took {dt:.1}s, budget 5 min");
        },
    );
}

// ---------------------------------------------------------------------------
// 11. Lattice system at three-by-three
// ---------------------------------------------------------------------------

fn lattice_config(j: f64, boundary: BoundaryCondition) -> LatticeConfig {
    LatticeConfig {
        d: 2,
        side: 3,
        spin_preset: "euclidean(1)".into(),
        single_site: SingleSitePotential::Power { p: 2.0, alpha: 0.5 },
        interaction: InteractionKind::TanhDot { scale: 1.0 },
        quadratic_g: None,
        j,
        boundary,
    }
}

fn site_mcmc(seed: u64) -> ChainConfig {
    ChainConfig {
        n_chains: 2,
        n_samples: 1200,
        burn_in: 200,
        thin: 2,
        proposal_scale: 1.0,
        init_spread: 1.0,
        seed,
        kaplan_screen: false,
    }
}

#[test]
fn criterion_11_lattice_constants_and_contraction() {
    criterion(
        11,
        "uncoupled lattice entropy constant matches the single-site one, contrasting boundaries merge by twenty sweeps, and the conditional-gradient factor stays below one and scales linearly, under 20 min",
        || {
            let start = Instant::now();

            // Zero coupling: the nine-site constant is the single-site one.
            let lat = Lattice::build(lattice_config(0.0, BoundaryCondition::Identity)).unwrap();
            let corpus = cylinder_corpus(&lat).unwrap();
            let ps = PhiSpec::new(0.5).unwrap();
            let sched = SweepSchedule {
                burn_sweeps: 6,
                n_fields: 600,
                thin_sweeps: 1,
                seed: 43,
            };
            let (rep, diag) = verify_gibbs_l1phi(&lat, &corpus, &site_mcmc(41), &ps, &sched).unwrap();
            assert!(rep.violations.is_empty(), "lattice violations: {:?}", rep.violations);
            assert!(matches!(diag.fitted_rate, RateFit::BelowNoise | RateFit::Rate { .. }));
            let c1 = rep.constant("c1").unwrap();
            let c1_se = rep.constant("c1_se").unwrap();

            let single_set = sample_measure(
                &lat.single_site_spec().unwrap(),
                &ChainConfig {
                    n_chains: 4,
                    n_samples: 4000,
                    burn_in: 500,
                    thin: 2,
                    proposal_scale: 1.0,
                    init_spread: 1.0,
                    seed: 47,
                    kaplan_screen: false,
                },
            )
            .unwrap();
            let mut best: Option<(f64, f64)> = None;
            for (_, field, _) in center_base_fields(lat.structure()) {
                let ent = entropy_phi_from_values(&ps, &single_set.eval(&field), None).unwrap();
                let grads: Vec<f64> = single_set
                    .points
                    .iter()
                    .map(|g| lat.structure().gradient_norm(&field, g).unwrap())
                    .collect();
                let mg = mean_se(&grads);
                if mg.value <= 3.0 * mg.se {
                    continue;
                }
                let r = ent.value / mg.value;
                let se = ratio_se(&ent, &mg);
                if best.as_ref().map_or(true, |(b, _)| r > *b) {
                    best = Some((r, se));
                }
            }
            let (single, single_se) = best.expect("a resolvable single-site ratio");
            assert!(
                (c1 - single).abs() <= 3.0 * (c1_se + single_se) + 0.05,
                "lattice constant {c1} +- {c1_se} vs single-site {single} +- {single_se}"
            );

            // Contrasting boundary conditions merge within noise by
            // twenty sweeps at moderate coupling.
            let merged_lat = Lattice::build(lattice_config(
                0.15,
                BoundaryCondition::Uniform { flat: vec![2.0] },
            ))
            .unwrap();
            let center = merged_lat.sites()[merged_lat.site_count() / 2].clone();
            let f = CylinderFunction::new(&merged_lat, "ctr:sigmoid-x", vec![center], true, |s| {
                1.0 / (1.0 + (-s[0].x[0]).exp())
            })
            .unwrap();
            let sweep = iterate_sweep(&merged_lat, &f, 20, &site_mcmc(51), 64, 53).unwrap();
            let last = sweep.gaps.last().expect("gap sequence");
            assert!(
                last.value.abs() <= 3.0 * last.se,
                "boundary gap after twenty sweeps: {} +- {}",
                last.value,
                last.se
            );

            // Conditional-gradient factor: zero at no coupling, below one
            // and roughly proportional at small couplings.
            let grad_sched = SweepSchedule {
                burn_sweeps: 24,
                n_fields: 96,
                thin_sweeps: 2,
                seed: 61,
            };
            let eps_at = |j: f64, seed: u64| {
                let lat = Lattice::build(lattice_config(j, BoundaryCondition::Identity)).unwrap();
                let corpus = cylinder_corpus(&lat).unwrap();
                verify_gradient_contraction(&lat, &corpus, &site_mcmc(seed), &grad_sched, None)
                    .unwrap()
                    .eps
            };
            let null = eps_at(0.0, 55);
            assert!(
                null.value.abs() <= (3.0 * null.se).max(0.02),
                "uncoupled contraction factor {} +- {}",
                null.value,
                null.se
            );
            let lo = eps_at(0.05, 55);
            let hi = eps_at(0.10, 55);
            for (j, e) in [(0.05, &lo), (0.10, &hi)] {
                assert!(
                    e.value > 3.0 * e.se,
                    "factor unresolved at coupling {j}: {} +- {}",
                    e.value,
                    e.se
                );
                assert!(e.value < 1.0, "factor at coupling {j} reached {}", e.value);
            }
            let ratio = hi.value / lo.value;
            let ratio_sigma =
                ratio * ((lo.se / lo.value).powi(2) + (hi.se / hi.value).powi(2)).sqrt();
            assert!(
                (ratio - 2.0).abs() <= 3.0 * ratio_sigma + 0.4,
                "doubling the coupling scaled the factor by {ratio:.3} +- {ratio_sigma:.3}, expected about 2"
            );

            let dt = start.elapsed().as_secs_f64();
            assert!(dt < 1200.0, "lattice checks took {dt:.1}s, budget 20 min");
        },
    );
}

// ---------------------------------------------------------------------------
// 12. Determinism of seeded commands
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_seeded_commands_repeat() {
    criterion(
        12,
        "seeded commands repeat byte-for-byte at the binary level",
        || {
            let dir = std::env::temp_dir().join(format!("subriem-acc-{}", std::process::id()));
            std::fs::create_dir_all(&dir).expect("temp dir");
            let spec = dir.join("euclid.json");
            std::fs::write(&spec, r#"{"group": "euclidean(1)", "p": 2.0, "alpha": 1.0}"#)
                .expect("spec");
            let lattice = dir.join("lattice.json");
            std::fs::write(
                &lattice,
                r#"{
  "d": 2,
  "side": 3,
  "spin_preset": "euclidean(1)",
  "single_site": {"kind": "power", "p": 2.0, "alpha": 0.5},
  "interaction": {"kind": "tanh_dot", "scale": 1.0},
  "j": 0.1,
  "boundary": {"kind": "identity"}
}"#,
            )
            .expect("lattice");

            let results_of = |args: &[&str]| {
                let out = std::process::Command::new(env!("CARGO_BIN_EXE_subriem"))
                    .args(args)
                    .output()
                    .expect("run binary");
                assert!(
                    out.status.success(),
                    "command {args:?} failed: {}",
                    String::from_utf8_lossy(&out.stderr)
                );
                let report: serde_json::Value =
                    serde_json::from_slice(&out.stdout).expect("report JSON");
                serde_json::to_string(&report["results"]).expect("results payload")
            };

            let spec_s = spec.to_str().unwrap().to_string();
            let lattice_s = lattice.to_str().unwrap().to_string();
            let commands: Vec<Vec<&str>> = vec![
                vec![
                    "verify", "--kind", "lsq", "--spec", &spec_s, "--n", "1500", "--seed", "7",
                ],
                vec!["gibbs", "--config", &lattice_s, "--sweeps", "60", "--seed", "11"],
                vec![
                    "heat", "--group", "heisenberg1", "--t", "0.5", "--paths", "3000", "--steps",
                    "64", "--seed", "2",
                ],
            ];
            for args in &commands {
                let a = results_of(args);
                let b = results_of(args);
                assert_eq!(a, b, "results payload changed on re-run of {args:?}");
            }
        },
    );
}
