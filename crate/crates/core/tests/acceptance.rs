//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line (run with `--nocapture` to see the lines for passing
//! criteria).

use std::sync::OnceLock;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use disloclab::assembly::{
    approximate_measure, build_implant, burgers_convergence_check, deviation_report,
    AssembledBody, MeasureTarget,
};
use disloclab::cell::{
    extrapolate_izero, fit_izero_form, singular_strain, solve_cell, CellResolution,
};
use disloclab::density::EnergyDensity;
use disloclab::experiments::{recovery_sequence, single_scaling_sweep, NepsRule, RegimeParams};
use disloclab::geometry::{BurgersVector, ModelManifold};
use disloclab::lattice::{certify_cutoff, sigma, verify_sigma_properties, DislocationLattice, QuadForm2};
use disloclab::mesh::{annulus_mesh, rectangle};
use disloclab::solve::{
    best_rotation, cartesian_frame, linearization_gap, minimize, Configuration, ImplantedBody,
    Region, Tolerances,
};

const TAU: f64 = std::f64::consts::TAU;

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {n:02} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {n:02} {name} failed: {detail}");
}

fn isotropic() -> EnergyDensity {
    EnergyDensity::isotropic(1.0, 1.0).unwrap()
}

/// Quadratic self-energy form fitted from cell ladders; shared by the
/// lattice and assembly criteria.
fn iquad() -> &'static QuadForm2 {
    static IQ: OnceLock<QuadForm2> = OnceLock::new();
    IQ.get_or_init(|| {
        let quad = isotropic().hessian_at_identity();
        let dirs = [
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
        ];
        let res = CellResolution { radial_per_decade: 8, angular: 32 };
        let samples: Vec<(Vector2<f64>, f64)> = dirs
            .iter()
            .map(|&v| {
                let ladder: Vec<_> = [1e-2, 3e-3, 1e-3]
                    .iter()
                    .map(|&d| solve_cell(v, d, &quad, res).unwrap().0)
                    .collect();
                (v, extrapolate_izero(&ladder).unwrap().izero)
            })
            .collect();
        fit_izero_form(&samples).unwrap()
    })
}

#[test]
fn criterion_01_frame_metric_and_circulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_metric = 0.0f64;
    let mut worst_circ = 0.0f64;
    for mag in [1e-3, 1e-2, 1e-1] {
        let angle: f64 = rng.gen_range(0.0..TAU);
        let v = mag * Vector2::new(angle.cos(), angle.sin());
        let m = ModelManifold::new(BurgersVector(v), 1.0).unwrap();
        for _ in 0..10_000 {
            let r = rng.gen_range(m.r_inner()..1.0);
            let phi = rng.gen_range(0.0..TAU);
            let q = m.frame_at(r, phi).unwrap().q;
            let g = m.metric_at(r, phi).unwrap();
            worst_metric = worst_metric.max((q.transpose() * q - g).norm());
        }
        // 50 random loops with winding in {-2,...,2}: sum of exact line
        // integrals along unwrapped (r, phi) polygons
        for _ in 0..50 {
            let winding = rng.gen_range(-2i32..=2);
            let n = rng.gen_range(3usize..12);
            let phi0 = rng.gen_range(0.0..TAU);
            let mut pts: Vec<(f64, f64)> = (0..=n)
                .map(|j| {
                    let r = rng.gen_range(m.r_inner()..1.0);
                    let phi = phi0 + winding as f64 * TAU * j as f64 / n as f64;
                    (r, phi)
                })
                .collect();
            pts[n].0 = pts[0].0; // close the loop
            let mut total = Vector2::zeros();
            for w in pts.windows(2) {
                total += m.line_integral(w[0], w[1]);
            }
            let expect = winding as f64 * v;
            worst_circ = worst_circ.max((total - expect).norm() / mag);
        }
    }
    verdict(
        1,
        "frame/metric and circulation",
        worst_metric <= 1e-12 && worst_circ <= 1e-8,
        &format!("max |Q'Q - g| = {worst_metric:.2e}, max circulation error/|v| = {worst_circ:.2e}"),
    );
}

#[test]
fn criterion_02_deviation_law() {
    let mut worst = 0.0f64;
    for mag in [1e-3, 1e-2, 1e-1] {
        let v = mag * Vector2::new(0.6, -0.8);
        let m = ModelManifold::new(BurgersVector(v), 1.0).unwrap();
        let r0 = m.r_inner();
        for i in 0..60 {
            // log-spaced radii from the inner boundary to the rim
            let r = r0 * (1.0 / r0).powf(i as f64 / 59.0);
            for j in 0..64 {
                let phi = TAU * j as f64 / 64.0;
                let dev = m.chart_frame_deviation(r, phi).unwrap();
                worst = worst.max(r * dev / mag);
            }
        }
    }
    verdict(
        2,
        "deviation law r|dZ - Q|/|v|",
        worst <= 0.25,
        &format!("sup over grid and |v| sweep = {worst:.4}"),
    );
}

#[test]
fn criterion_03_cell_vs_oracle() {
    let density = isotropic();
    let quad = density.hessian_at_identity();
    let v = Vector2::new(1.0, 0.0);
    let oracle = singular_strain(v, &quad).energy_per_log(&quad);

    let run = |rpd: usize| -> f64 {
        let ladder: Vec<_> = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
            .iter()
            .map(|&d| solve_cell(v, d, &quad, CellResolution { radial_per_decade: rpd, angular: 4 * rpd }).unwrap().0)
            .collect();
        extrapolate_izero(&ladder).unwrap().izero
    };
    let izero = run(16);
    let rel = (izero - oracle).abs() / oracle;

    // discretization component: ladder value at fixed delta under mesh
    // halving, measured against the finest level
    let at = |rpd: usize| solve_cell(v, 1e-3, &quad, CellResolution { radial_per_decade: rpd, angular: 4 * rpd }).unwrap().0.value_delta;
    let (v8, v16, v32) = (at(8), at(16), at(32));
    let (d_coarse, d_fine) = ((v8 - v32).abs(), (v16 - v32).abs());
    let halved = d_fine <= 0.6 * d_coarse;

    verdict(
        3,
        "cell extrapolation vs closed-form oracle",
        rel <= 0.03 && halved,
        &format!(
            "izero {izero:.6} vs oracle {oracle:.6} (rel {rel:.4}); refinement error {d_coarse:.2e} -> {d_fine:.2e}"
        ),
    );
}

#[test]
fn criterion_04_self_energy_program() {
    let iq = iquad();
    let lattice = DislocationLattice::square(4.0);
    let e1 = Vector2::new(1.0, 0.0);
    let s = sigma(&lattice, iq, e1).unwrap();
    let single = s.decomposition.len() == 1
        && (s.decomposition[0].0 - e1).norm() <= 1e-12
        && (s.decomposition[0].1 - 1.0).abs() <= 1e-12;
    let exact = (s.value - iq.eval(e1)).abs() <= 1e-12 * iq.eval(e1);
    let suite = verify_sigma_properties(&lattice, iq, 1000, 7).unwrap();
    let cutoff = certify_cutoff(&lattice, iq, &[e1, Vector2::new(1.0, 1.0), Vector2::new(-2.0, 1.0)]).unwrap();
    verdict(
        4,
        "lattice self-energy program",
        single && exact && suite.pass() && cutoff <= 1e-12,
        &format!(
            "sigma(e1) = {} vs iquad {} ; suite violations (hom {:.1e}, conv {:.1e}, ub {:.1e}); cutoff doubling change {:.1e}",
            s.value,
            iq.eval(e1),
            suite.max_homogeneity_violation,
            suite.max_convexity_violation,
            suite.max_upper_bound_violation,
            cutoff
        ),
    );
}

#[test]
fn criterion_05_energy_sandwich_fit() {
    let density = isotropic();
    let report =
        single_scaling_sweep(Vector2::new(1.0, 0.0), &[1e-3, 3e-3, 1e-2], 1.0, &density, 10, 32)
            .unwrap();
    let rel = (report.kappa - report.oracle_kappa).abs() / report.oracle_kappa;
    verdict(
        5,
        "single-dislocation energy sandwich",
        report.residual <= 0.10 && rel <= 0.15,
        &format!(
            "kappa {:.5} vs oracle {:.5} (rel {rel:.3}), fit residual {:.2e}",
            report.kappa, report.oracle_kappa, report.residual
        ),
    );
}

/// Annulus body delta*R..R wearing the model-manifold frame.
fn rigidity_body(v: Vector2<f64>, delta: f64, n_r: usize, n_phi: usize) -> ImplantedBody {
    let m = ModelManifold::new(BurgersVector(v), 1.0).unwrap();
    let mesh = annulus_mesh(Vector2::zeros(), delta, 1.0, n_r, n_phi).unwrap();
    let q_elems: Vec<Matrix2<f64>> = (0..mesh.n_triangles())
        .map(|t| {
            let c = mesh.centroid(t);
            cartesian_frame(&m, c.norm(), c[1].atan2(c[0]))
        })
        .collect();
    let regions = vec![Region::Far; q_elems.len()];
    ImplantedBody { mesh, q_elems, regions }
}

fn rigidity_max_ratio(v: Vector2<f64>, n_r: usize, n_phi: usize, seed: u64) -> f64 {
    let body = rigidity_body(v, 1e-2, n_r, n_phi);
    let m = ModelManifold::new(BurgersVector(v), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let theta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let u0 = Matrix2::new(c, -s, s, c);
        let modes: Vec<(f64, f64, Vector2<f64>)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(1.0..3.0_f64).round(),
                    rng.gen_range(1.0..3.0_f64).round(),
                    Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 0.04,
                )
            })
            .collect();
        let positions: Vec<Vector2<f64>> = body
            .mesh
            .vertices
            .iter()
            .map(|x| {
                let mut d = Vector2::zeros();
                for (mx, my, amp) in &modes {
                    d += amp
                        * (std::f64::consts::PI * mx * x[0]).sin()
                        * (std::f64::consts::PI * my * x[1]).sin();
                }
                u0 * x + d
            })
            .collect();
        let f = Configuration::from_positions(&body.mesh, positions);
        let rep = best_rotation(&body, &f);
        if !rep.degenerate {
            worst = worst.max(rep.ratio);
        }
    }
    // and the minimizer itself
    let init = Configuration::volterra(&body, &m);
    let out = minimize(&body, &isotropic(), init, Tolerances::default()).unwrap();
    let rep = best_rotation(&body, &out.configuration);
    if !rep.degenerate {
        worst = worst.max(rep.ratio);
    }
    worst
}

#[test]
fn criterion_06_rigidity_probe() {
    let mut ratios = Vec::new();
    for (i, mag) in [1e-3, 3e-3, 1e-2].into_iter().enumerate() {
        let v = mag * Vector2::new(1.0, 0.0);
        ratios.push(rigidity_max_ratio(v, 20, 32, 100 + i as u64));
    }
    // one mesh refinement at the middle magnitude
    ratios.push(rigidity_max_ratio(3e-3 * Vector2::new(1.0, 0.0), 30, 48, 200));
    let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    verdict(
        6,
        "rigidity constant stability",
        hi <= 2.0 * lo,
        &format!("max FJM ratios across sweep/refinement: {ratios:?}"),
    );
}

/// The ex:conv2 ladder: uniform measure, n_eps in {25, 100, 400}, eps 1e-3.
fn conv2_bodies() -> &'static Vec<AssembledBody> {
    static BODIES: OnceLock<Vec<AssembledBody>> = OnceLock::new();
    BODIES.get_or_init(|| {
        let omega = rectangle(Vector2::zeros(), Vector2::new(1.0, 1.0));
        let target = MeasureTarget::Uniform(Vector2::new(1.0, 0.0));
        let lattice = DislocationLattice::square(4.0);
        [25.0, 100.0, 400.0]
            .iter()
            .map(|&n| {
                let m = approximate_measure(&target, &omega, n, 1e-3, &lattice, iquad()).unwrap();
                let h = (m.smear_radius / 2.0).min(1.0 / 16.0);
                build_implant(&m, h).unwrap()
            })
            .collect()
    })
}

#[test]
fn criterion_07_multi_dislocation_assembly() {
    let mut worst_circ = 0.0f64;
    let mut min_det = f64::MAX;
    let mut distortions = Vec::new();
    for body in conv2_bodies() {
        let m = &body.measure;
        for (i, (_, b)) in m.atoms.iter().enumerate() {
            let c = body.core_circulation(i, body.core_radii[i], 128);
            worst_circ = worst_circ.max((c - b).norm() / b.norm());
        }
        min_det = min_det.min(body.min_det);
        let dev = deviation_report(body).unwrap();
        let eps = m.eps;
        let n = m.n_eps;
        let h_sq = (n * n * eps * eps).max(n * eps * eps * (1.0 / eps).ln());
        distortions.push(dev.integral / h_sq);
    }
    let lo = distortions.iter().cloned().fold(f64::MAX, f64::min);
    let hi = distortions.iter().cloned().fold(f64::MIN, f64::max);
    verdict(
        7,
        "multi-dislocation assembly (ex:conv2)",
        worst_circ <= 1e-7 && min_det > 0.0 && hi <= 2.0 * lo,
        &format!(
            "max relative circulation error {worst_circ:.2e}, min det Q {min_det:.4}, distortion/h^2 = {distortions:?}"
        ),
    );
}

#[test]
fn criterion_08_burgers_convergence() {
    let target = MeasureTarget::Uniform(Vector2::new(1.0, 0.0));
    let pi = std::f64::consts::PI;
    let fields: Vec<Box<dyn Fn(Vector2<f64>) -> Vector2<f64>>> = vec![
        Box::new(move |x: Vector2<f64>| {
            Vector2::new((pi * x[0]).sin() * (pi * x[1]).sin(), 0.0)
        }),
        Box::new(move |x: Vector2<f64>| {
            let bump = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]) * 16.0;
            Vector2::new(bump, 0.5 * bump)
        }),
        Box::new(move |x: Vector2<f64>| {
            let b = (pi * x[0]).sin() * (pi * x[1]).sin();
            Vector2::new(b * x[1], -b * x[0])
        }),
    ];
    let rows = burgers_convergence_check(conv2_bodies(), &target, &fields);
    let mut monotone = true;
    let mut final_ok = true;
    for k in 0..fields.len() {
        for w in rows.windows(2) {
            if w[1].gaps[k] > w[0].gaps[k] * (1.0 + 1e-12) {
                monotone = false;
            }
        }
        if rows.last().unwrap().gaps[k] > 0.05 {
            final_ok = false;
        }
    }
    let gaps: Vec<Vec<f64>> = rows.iter().map(|r| r.gaps.clone()).collect();
    verdict(
        8,
        "Burgers functional convergence",
        monotone && final_ok,
        &format!("gaps along the n ladder per test field: {gaps:?}"),
    );
}

#[test]
fn criterion_09_gamma_limit_sandwich() {
    let density = isotropic();
    let lattice = DislocationLattice::square(4.0);
    let omega = rectangle(Vector2::zeros(), Vector2::new(1.0, 1.0));
    let target = MeasureTarget::Uniform(Vector2::new(1.0, 0.0));
    let regime = RegimeParams { eps: vec![1e-2, 3e-3, 1e-3], rule: NepsRule::Log };
    let (report, _) =
        recovery_sequence(&omega, &target, &regime, &lattice, iquad(), &density, false).unwrap();

    let mut sandwich = true;
    for r in &report.rows {
        if r.lower > r.e_total * (1.0 + 1e-12) || r.e_total > r.upper * (1.0 + 1e-12) {
            sandwich = false;
        }
    }
    let gaps: Vec<f64> = report.rows.iter().map(|r| r.gap_to_limit).collect();
    let decreasing = gaps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let final_gap = *gaps.last().unwrap();
    // the 20% target is flagged, not failed: the limit has no proven rate
    let flag = if final_gap > 0.2 { " [flagged: exceeds 20% target]" } else { "" };
    verdict(
        9,
        "Gamma-limit desk-scale sandwich",
        sandwich && decreasing,
        &format!("gaps to limit along the ladder: {gaps:?}; final {final_gap:.3}{flag}"),
    );
}

#[test]
fn criterion_10_linearization_consistency() {
    let density = isotropic();
    let v = Vector2::new(1.0, 0.0);
    let mut gaps = Vec::new();
    for eps in [1e-2_f64, 1e-3, 1e-4] {
        let decades = (1.0 / eps).log10();
        let n_r = ((12.0 * decades).ceil() as usize).max(8);
        gaps.push(linearization_gap(v, eps, 1.0, &density, n_r, 32).unwrap());
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    verdict(
        10,
        "linearization gap monotonicity",
        monotone,
        &format!("relative gaps at eps ladder: {gaps:?}"),
    );
}

#[test]
fn criterion_11_determinism() {
    let bin = env!("CARGO_BIN_EXE_disloclab");
    let root = std::env::temp_dir().join("disloclab-acceptance-determinism");
    std::fs::create_dir_all(&root).unwrap();
    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "density": {"kind": "isotropic", "lame_mu": 1.0, "lame_lambda": 1.0},
  "lattice": {"basis": [[1.0, 0.0], [0.0, 1.0]], "cutoff_k": 4.0},
  "domain": {"polygon": [[0,0],[1,0],[1,1],[0,1]]},
  "measure": {"kind": "uniform", "density": [1.0, 0.0]},
  "regime": {"eps": [1e-2, 3e-3], "rule": {"kind": "log"}}
}"#,
    )
    .unwrap();

    let run = |out: &std::path::Path| {
        for args in [
            vec!["cell", "--deltas", "1e-2,3e-3,1e-3"],
            vec!["sigma"],
            vec!["build", "--step", "0"],
            vec!["sweep-scaling", "--magnitudes", "1e-3,3e-3,1e-2", "--cell-delta", "1e-2"],
            vec!["gamma-limit"],
        ] {
            let status = std::process::Command::new(bin)
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(out)
                .args(["--seed", "5", "--workers", "2"])
                .args(&args)
                .status()
                .unwrap();
            assert!(status.success(), "subcommand {args:?} failed");
        }
    };
    let out1 = root.join("run1");
    let out2 = root.join("run2");
    for d in [&out1, &out2] {
        if d.exists() {
            std::fs::remove_dir_all(d).unwrap();
        }
    }
    run(&out1);
    run(&out2);

    let mut mismatched = Vec::new();
    let mut compared = 0;
    for entry in std::fs::read_dir(&out1).unwrap() {
        let name = entry.unwrap().file_name();
        if std::path::Path::new(&name).extension().map(|e| e == "json").unwrap_or(false) {
            compared += 1;
            let a = std::fs::read(out1.join(&name)).unwrap();
            let b = std::fs::read(out2.join(&name)).unwrap();
            if a != b {
                mismatched.push(name.to_string_lossy().into_owned());
            }
        }
    }
    verdict(
        11,
        "byte-identical reruns",
        compared >= 5 && mismatched.is_empty(),
        &format!("{compared} JSON reports compared, mismatches: {mismatched:?}"),
    );
}
