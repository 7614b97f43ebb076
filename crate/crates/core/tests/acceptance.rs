//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gravdec::angular::{self, BasisConvention, TtConvention};
use gravdec::cli;
use gravdec::csl::{self, CslLattice, CslParams, SdeOptions, TimeGrid};
use gravdec::decoherence::{
    exponential_rate_constant, gamma_closed_form_exponential, gamma_rate, presets, PhysicalParams, RateOptions,
    SpatialKernel,
};
use gravdec::dynamics::{self, AmplifiedSystem, QubitState};
use gravdec::numerics::SphericalGrid;
use gravdec::spectrum::GravitonSpectrum;
use gravdec::units::Constants;
use num_complex::Complex64;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration, detail: String) -> Outcome {
    let dt = start.elapsed();
    ensure(dt <= limit, || format!("{detail}; took {dt:.2?} > {limit:?}"))?;
    Ok(format!("{detail}; {dt:.2?}"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

const SIGMA0: f64 = 1e-9;

fn electron(dx: f64) -> PhysicalParams {
    PhysicalParams::new(Constants::CODATA_2018.electron_mass(), SIGMA0, dx, 1e-27).unwrap()
}

fn short_distance() -> Outcome {
    let t = Instant::now();
    let opts = RateOptions::default();
    let kernel = SpatialKernel::normalized(SIGMA0);
    let (i0, p_c) = (1e80, 1.0 / SIGMA0);
    let spec = GravitonSpectrum::exponential(i0, p_c).unwrap();
    let closed0 = gamma_closed_form_exponential(&electron(0.0), i0, p_c, &kernel, &opts.constants).unwrap().gamma_hz;
    let quad0 = gamma_rate(&electron(0.0), &spec, &kernel, &opts).unwrap().gamma_hz;
    ensure(closed0 == 0.0 && quad0 == 0.0, || format!("Gamma(0) = {closed0:e} / {quad0:e}"))?;
    let c = exponential_rate_constant(&electron(0.0), i0, p_c, &opts.constants);
    let small = gamma_closed_form_exponential(&electron(1e-6 * SIGMA0), i0, p_c, &kernel, &opts.constants).unwrap().gamma_hz;
    let small_q = gamma_rate(&electron(1e-6 * SIGMA0), &spec, &kernel, &opts).unwrap().gamma_hz;
    let worst = small.abs().max(small_q.abs()) / c;
    ensure(worst < 1e-10, || format!("|Gamma(1e-6 sigma0)| / C = {worst:e}"))?;
    within_time(t, Duration::from_secs(1), format!("Gamma(0) = 0, |Gamma(1e-6 sigma0)|/C = {worst:.2e}"))
}

fn closed_form_oracle() -> Outcome {
    let t = Instant::now();
    let opts = RateOptions::default();
    let kernel = SpatialKernel::normalized(SIGMA0);
    let mut worst: f64 = 0.0;
    for dx in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
        for pcs in [0.5, 1.0, 2.0] {
            let p = electron(dx * SIGMA0);
            let p_c = pcs / SIGMA0;
            let spec = GravitonSpectrum::exponential(1e80, p_c).unwrap();
            let c = gamma_closed_form_exponential(&p, 1e80, p_c, &kernel, &opts.constants).unwrap().gamma_hz;
            let q = gamma_rate(&p, &spec, &kernel, &opts).map_err(|e| format!("dx {dx}, pc {pcs}: {e}"))?.gamma_hz;
            let r = rel(q, c);
            ensure(r <= 1e-6, || format!("dx/sigma0 {dx}, p_c sigma0 {pcs}: rel {r:e}"))?;
            worst = worst.max(r);
        }
    }
    within_time(t, Duration::from_secs(10), format!("18 points, worst rel {worst:.2e}"))
}

fn scaling_laws() -> Outcome {
    let opts = RateOptions::default();
    let kernel = SpatialKernel::normalized(SIGMA0);
    let spec = GravitonSpectrum::exponential(1e80, 1.0 / SIGMA0).unwrap();
    let base_p = electron(SIGMA0);
    let rate = |p: &PhysicalParams, s: &GravitonSpectrum, o: &RateOptions| gamma_rate(p, s, &kernel, o).unwrap().gamma_hz;
    let base = rate(&base_p, &spec, &opts);

    let g2 = opts.with_constants(Constants::CODATA_2018.override_g_for_testing(2.0 * Constants::CODATA_2018.g()));
    let mut v2 = base_p;
    v2.volume *= 2.0;
    let i2 = GravitonSpectrum::exponential(2e80, 1.0 / SIGMA0).unwrap();
    let mut m2 = base_p;
    m2.m_f *= 2.0;
    let sys = AmplifiedSystem::from_constituents(base_p.m_f, 7.0).unwrap();
    let checks = [
        ("kappa^2", rate(&base_p, &spec, &g2) / base, 2.0),
        ("V", rate(&v2, &spec, &opts) / base, 2.0),
        ("I0", rate(&base_p, &i2, &opts) / base, 2.0),
        ("1/m_f^2", rate(&m2, &spec, &opts) / base, 0.25),
        ("N^2", dynamics::amplified_rate(&sys, base) / base, 49.0),
    ];
    let mut worst: f64 = 0.0;
    for (name, got, want) in checks {
        let r = rel(got, want);
        ensure(r <= 1e-12, || format!("{name}: ratio {got} vs {want}"))?;
        worst = worst.max(r);
    }
    Ok(format!("kappa^2, V, I0, 1/m_f^2, N^2 ratios; worst rel {worst:.1e}"))
}

fn magnitude_chain() -> Outcome {
    let t = Instant::now();
    let pre = presets::paper_electron();
    let opts = RateOptions::default();
    let GravitonSpectrum::Exponential { i0, p_c } = pre.spectrum else {
        return Err("preset spectrum is not exponential".into());
    };
    let gamma_e = gamma_closed_form_exponential(&pre.params, i0, p_c, &pre.kernel, &opts.constants).unwrap().gamma_hz;
    ensure(rel(gamma_e, 1e-2) < 1e-12, || format!("Gamma_e = {gamma_e:e}"))?;
    let m_n = opts.constants.nucleon_mass();
    let mut nucleon = pre.params;
    nucleon.m_f = m_n;
    let gamma_1 = gamma_closed_form_exponential(&nucleon, i0, p_c, &pre.kernel, &opts.constants).unwrap().gamma_hz;
    let at = |n: f64| dynamics::amplified_rate(&AmplifiedSystem::from_constituents(m_n, n).unwrap(), gamma_1);
    let (mol, virus) = (at(1e2), at(1e6));
    ensure((1e-5..=1e-4).contains(&mol), || format!("Gamma_mol = {mol:e}"))?;
    ensure((3e2..=3e4).contains(&virus), || format!("Gamma_virus = {virus:e}"))?;
    within_time(t, Duration::from_secs(1), format!("Gamma_e = {gamma_e:.3e}, Gamma_mol = {mol:.3e}, Gamma_virus = {virus:.3e} Hz"))
}

fn min_eig(s: &QubitState) -> f64 {
    let mean = 0.5 * (s.rho11 + s.rho22);
    let half = 0.5 * (s.rho11 - s.rho22);
    mean - (half * half + s.rho12.norm_sqr()).sqrt()
}

fn master_equation() -> Outcome {
    let gamma = 2.5;
    let s0 = QubitState::new(0.8, 0.2, Complex64::new(0.3, 0.25)).unwrap();
    let mut analytic_err: f64 = 0.0;
    let mut gap_err: f64 = 0.0;
    let mut invariants: f64 = 0.0;
    for k in 0..=200 {
        let t = 0.02 * k as f64;
        let z = dynamics::evolve_coherence(s0.rho12, gamma, t);
        analytic_err = analytic_err.max((z - s0.rho12 * (-gamma * t).exp()).norm());
        let s = dynamics::evolve_populations(&s0, gamma, t).unwrap();
        gap_err = gap_err.max((s.gap() - s0.gap() * (-2.0 * gamma * t).exp()).abs());
        invariants = invariants.max((s.trace() - 1.0).abs()).max((-min_eig(&s)).max(0.0));
    }
    ensure(analytic_err <= 1e-10, || format!("analytic coherence err {analytic_err:e}"))?;
    ensure(gap_err <= 1e-12, || format!("gap err {gap_err:e}"))?;

    let sol = dynamics::integrate_rk4(&s0, gamma, 4.0, 1e-3, 1e-9).map_err(|e| e.to_string())?;
    let mut rk4_err: f64 = 0.0;
    for (t, s) in sol.times.iter().zip(&sol.states) {
        let exact = dynamics::evolve_populations(&s0, gamma, *t).unwrap();
        rk4_err = rk4_err.max(s.max_abs_diff(&exact));
        invariants = invariants.max((s.trace() - 1.0).abs()).max((-min_eig(s)).max(0.0));
    }
    ensure(rk4_err <= 1e-9, || format!("rk4 err {rk4_err:e}"))?;
    ensure(invariants <= 1e-12, || format!("trace/positivity defect {invariants:e}"))?;

    let late = dynamics::evolve_populations(&s0, gamma, 40.0 / gamma).unwrap();
    let mixed = QubitState::new(0.5, 0.5, Complex64::new(0.0, 0.0)).unwrap();
    let d = late.max_abs_diff(&mixed);
    ensure(d <= 1e-8, || format!("|rho(40/Gamma) - I/2| = {d:e}"))?;
    Ok(format!(
        "analytic {analytic_err:.1e}, rk4 {rk4_err:.1e}, gap {gap_err:.1e}, I/2 {d:.1e}, invariants {invariants:.1e}"
    ))
}

fn angular_audit() -> Outcome {
    let t = Instant::now();
    let grid = SphericalGrid::new(64, 64).map_err(|e| e.to_string())?;
    let mut pw: f64 = 0.0;
    for pdx in [0.1, 0.5, 1.0, 2.0, PI, 5.0, 10.0] {
        let q = angular::plane_wave_average(pdx, &grid).value;
        let exact = 4.0 * PI * pdx.sin() / pdx;
        pw = pw.max((q - exact).norm());
    }
    ensure(pw <= 1e-10, || format!("plane wave err {pw:e}"))?;

    let tt = angular::tt_projector_average(TtConvention::Unnormalized, &grid).max_abs_diff(&angular::claimed_tt_average());
    ensure(tt <= 1e-8, || format!("TT average err {tt:e}"))?;

    let f = angular::f_kernel_average(&grid);
    let f_err = (f.quadrature - 10.0 * PI / 3.0).abs();
    ensure(f_err <= 1e-10, || format!("F average {} vs 10pi/3", f.quadrature))?;
    let flagged = (f.quadrature - f.claimed).abs() / f.claimed > angular::F_AVERAGE_TOL;
    ensure(flagged, || "F average not flagged against 4pi".into())?;
    let report = angular::verify_identities(&grid, 1000, 1);
    let f_record = report.iter().find(|r| r.name == "f-kernel-average").ok_or("missing f-kernel-average record")?;
    ensure(f_record.status == angular::IdentityStatus::Flagged, || "report does not flag F average".into())?;

    let defects = angular::tensor_defects(BasisConvention::PlusCross, &angular::random_directions(1000, 1));
    ensure(defects.max() <= 1e-14, || format!("plus/cross defects {defects:?}"))?;
    within_time(
        t,
        Duration::from_secs(5),
        format!(
            "plane wave {pw:.1e}, TT {tt:.1e}, F = {:.12} (flagged vs 4pi), basis {:.1e}",
            f.quadrature,
            defects.max()
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(std::iter::once("gravdec").chain(args.iter().copied()), &|_| None, &mut out, &mut err);
    ensure(code == 0, || format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)))?;
    Ok(out)
}

fn csl_suite() -> Outcome {
    let t = Instant::now();
    let unit = CslParams::new(1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let m_n = Constants::CODATA_2018.nucleon_mass();
    let grw = csl::preset("grw").map_err(|e| e.to_string())?;

    // Two-site rate: Lindblad integration against the analytic expression.
    let mut worst_rate: f64 = 0.0;
    for (p, mass, d) in [(unit, 1.0, 2.0), (unit, 2.0, 0.5), (grw, m_n, 1e-7), (grw, m_n, 3e-7)] {
        let lat = CslLattice::two_site(mass, d).map_err(|e| e.to_string())?;
        let analytic = p.lambda * (mass / p.m0).powi(2) * -(-d * d / (4.0 * p.r_c * p.r_c)).exp_m1();
        let grid = TimeGrid::new(1.0 / analytic, 1e-3 / analytic, 100).map_err(|e| e.to_string())?;
        let rho0 = csl::projector(&csl::two_branch_state(2));
        let series = csl::evolve_lindblad(&lat, &p, &rho0, &grid).map_err(|e| e.to_string())?;
        let fitted = csl::fitted_coherence_rate(&series, 0, 1);
        worst_rate = worst_rate.max(rel(fitted, analytic));
    }
    ensure(worst_rate <= 1e-2, || format!("two-site rate rel {worst_rate:e}"))?;

    // Stochastic ensemble against the Lindblad solution.
    let (mass, d, n_traj) = (1.0, 2.0, 10_000);
    let lat = CslLattice::two_site(mass, d).map_err(|e| e.to_string())?;
    let rate = csl::two_site_rate(&unit, mass, d);
    let (t_end, dt) = (0.5 / rate, 1e-5 / rate);
    let steps = (t_end / dt).round() as usize;
    let grid = TimeGrid::new(t_end, dt, steps / 20).map_err(|e| e.to_string())?;
    let psi0 = csl::two_branch_state(2);
    let ens = csl::sde_ensemble(&lat, &unit, &psi0, &SdeOptions::new(grid), n_traj, 2024).map_err(|e| e.to_string())?;
    let lind = csl::evolve_lindblad(&lat, &unit, &csl::projector(&psi0), &grid).map_err(|e| e.to_string())?;
    let td = ens.mean.iter().zip(&lind).map(|(m, (_, l))| csl::trace_distance(m, l)).fold(0.0, f64::max);
    ensure(td < 0.02, || format!("ensemble trace distance {td:e}"))?;
    let bound = csl::ensemble_bound(n_traj, dt, ens.rate_scale, t_end);
    ensure(td <= bound, || format!("trace distance {td:e} above bound {bound:e}"))?;

    // Rigid-cluster amplification.
    let cluster_rate = |n: usize| -> Result<f64, String> {
        let lat = CslLattice::rigid_cluster(n, 1.0, 50.0, 0.01).map_err(|e| e.to_string())?;
        let g = (n * n) as f64;
        let grid = TimeGrid::new(1.0 / g, 1e-3 / g, 100).map_err(|e| e.to_string())?;
        let series = csl::evolve_lindblad(&lat, &unit, &csl::projector(&csl::two_branch_state(2)), &grid)
            .map_err(|e| e.to_string())?;
        Ok(csl::fitted_coherence_rate(&series, 0, 1))
    };
    let g1 = cluster_rate(1)?;
    let mut worst_amp: f64 = 0.0;
    for n in [1usize, 2, 4, 8] {
        let ratio = cluster_rate(n)? / g1;
        worst_amp = worst_amp.max(rel(ratio, (n * n) as f64));
    }
    ensure(worst_amp <= 1e-2, || format!("amplification rel {worst_amp:e}"))?;

    // Preset values and their echo in the run summary.
    let expect = [("grw", 1e-16, 1e-7), ("adler_a", 4e-8, 1e-7), ("adler_b", 1e-6, 1e-6)];
    for (name, lambda, r_c) in expect {
        let p = csl::preset(name).map_err(|e| e.to_string())?;
        ensure(p.lambda == lambda && p.r_c == r_c && p.m0 == m_n, || format!("{name}: {p:?}"))?;
        let out = run_cli(&["csl", "--preset", name, "--n-traj", "4", "--records", "2", "--format", "json"])?;
        let v: serde_json::Value = serde_json::from_slice(&out).map_err(|e| e.to_string())?;
        let echoed = (v["lambda"].as_f64(), v["r_c"].as_f64());
        ensure(echoed == (Some(lambda), Some(r_c)), || format!("{name} echo {echoed:?}"))?;
    }
    within_time(
        t,
        Duration::from_secs(120),
        format!("rate rel {worst_rate:.1e}, ensemble trace distance {td:.4} (bound {bound:.4}), N^2 rel {worst_amp:.1e}, presets exact"),
    )
}

fn determinism() -> Outcome {
    let sweep = ["sweep", "--preset", "paper-electron"];
    let csl_args = ["csl", "--preset", "grw", "--n-traj", "200", "--records", "10", "--seed", "5"];
    for args in [&sweep[..], &csl_args[..]] {
        let a = run_cli(args)?;
        let b = run_cli(args)?;
        ensure(a == b, || format!("{} output differs between runs", args[0]))?;
    }
    Ok("sweep and csl byte-identical across runs".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("short-distance limit", short_distance),
        ("closed-form oracle", closed_form_oracle),
        ("scaling-law exactness", scaling_laws),
        ("magnitude chain", magnitude_chain),
        ("master-equation suite", master_equation),
        ("angular audit", angular_audit),
        ("CSL suite", csl_suite),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
