//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdmor::cp::{cp_decompose, cp_reconstruct, fiber_rank, relative_error, CpFactors, CpOptions};
use tdmor::dynamics::{Dynamics, FnDynamics};
use tdmor::power::system::{NetCondition, DELTA, STATES_PER_MACHINE};
use tdmor::power::{ring_system, wscc9, SystemModel};
use tdmor::sim::{integrate, run_adaptive, Mode, Scenario, SwitchPolicy};
use tdmor::study::{
    cct_search, flop_counts, level_grid, load_sweep, rms_error, system_rank_search, timing_compare, Timing,
};
use tdmor::taylor::{build_model, build_model_set, compress, reduced_rhs, ModelSet, Ranks, TaylorModel};
use tdmor::tensor::{khatri_rao, kron, kron_vec, matricize_mode1, mode_k_product, tensorize, Tensor};

/// Worst study-area RMS error of the 9-level sweep, degrees, measured on
/// the bundled fixture with the searched ranks when the bound was set.
const SWEEP_RMS_BOUND_DEG: f64 = 2.71;

/// Allowed regression over [`SWEEP_RMS_BOUND_DEG`].
const SWEEP_RMS_SLACK: f64 = 1.10;

/// Fault used by the fixture studies.
const FIXTURE_BUS: u32 = 3;

const TIMING: Timing = Timing {
    t_on: 0.0,
    horizon: 16.0,
    dt: 0.01,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let len = dims.iter().product();
    Tensor::from_vec(dims, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=5);
        let dims = [rng.gen_range(2..=5), rng.gen_range(2..=5), rng.gen_range(2..=5)];

        // mode-k product against the explicit contraction
        let t = random_tensor(&mut rng, &dims);
        let k = rng.gen_range(0..3);
        let x = random_matrix(&mut rng, 3, dims[k]);
        let p = mode_k_product(&t, &x, k).unwrap();
        let mut out_dims = dims;
        out_dims[k] = 3;
        let mut brute = vec![0.0; p.len()];
        for i in 0..out_dims[0] {
            for j in 0..out_dims[1] {
                for l in 0..out_dims[2] {
                    let mut s = 0.0;
                    for m in 0..dims[k] {
                        let mut idx = [i, j, l];
                        idx[k] = m;
                        s += t.get(&idx) * x[([i, j, l][k], m)];
                    }
                    brute[i + out_dims[0] * (j + out_dims[1] * l)] = s;
                }
            }
        }
        worst = worst.max(rel(p.data(), &brute));

        // Khatri-Rao against columnwise Kronecker products
        let a = random_matrix(&mut rng, dims[0], 4);
        let b = random_matrix(&mut rng, dims[1], 4);
        let kr = khatri_rao(&a, &b).unwrap();
        for j in 0..4 {
            let col = kron(&a.columns(j, 1).into_owned(), &b.columns(j, 1).into_owned());
            worst = worst.max(rel(kr.column(j).as_slice(), col.as_slice()));
        }

        // matricize/tensorize round trip
        let m = random_matrix(&mut rng, dims[0], dims[1] * dims[2]);
        let back = matricize_mode1(&tensorize(&m, &dims).unwrap());
        worst = worst.max(rel(back.as_slice(), m.as_slice()));

        // Kronecker form, mode products and CP factors at full rank
        let t2 = random_tensor(&mut rng, &[n, n, n]);
        let t3 = random_tensor(&mut rng, &[n, n, n, n]);
        let a1 = random_matrix(&mut rng, n, n);
        let dx: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dxv = DVector::from_column_slice(&dx);
        let kron2 = DVector::from_vec(kron_vec(&dx, &dx));
        let kron3 = DVector::from_vec(kron_vec(&dx, &kron2.as_slice()));
        let path2 = &a1 * &dxv + matricize_mode1(&t2) * &kron2 + matricize_mode1(&t3) * &kron3;

        let row = DMatrix::from_row_slice(1, n, &dx);
        let mut m2 = t2.clone();
        for mode in 1..3 {
            m2 = mode_k_product(&m2, &row, mode).unwrap();
        }
        let mut m3 = t3.clone();
        for mode in 1..4 {
            m3 = mode_k_product(&m3, &row, mode).unwrap();
        }
        let path4: Vec<f64> = (0..n).map(|i| (&a1 * &dxv)[i] + m2.data()[i] + m3.data()[i]).collect();

        let opts = CpOptions::default();
        let c2 = compress(&t2, fiber_rank(&t2), &opts).unwrap();
        let c3 = compress(&t3, fiber_rank(&t3), &opts).unwrap();
        let model = TaylorModel {
            load_level: 1.0,
            x0: vec![0.0; n],
            a1,
            ranks: [c2.factors.rank(), c3.factors.rank()],
            fit: [c2.fit, c3.fit],
            a2: c2.factors,
            a3: c3.factors,
            raw: None,
        };
        let path7 = reduced_rhs(&model, &dx);
        worst = worst.max(rel(&path4, path2.as_slice()));
        worst = worst.max(rel(&path7, path2.as_slice()));
        worst = worst.max(rel(&path7, &path4));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 30.0,
        format!("50 instances, max relative error {worst:.2e} (limit 1e-8), {secs:.2} s (limit 30 s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let mut cases = 0;
    for r in 1..=3usize {
        for n in [5usize, 12, 20] {
            let mut rng = ChaCha8Rng::seed_from_u64(100 * r as u64 + n as u64);
            let factors: Vec<DMatrix<f64>> = (0..3).map(|_| random_matrix(&mut rng, n, r)).collect();
            let weights = DVector::from_fn(r, |i, _| 1.0 + i as f64);
            let planted = CpFactors::new(factors, weights).unwrap();
            let t = cp_reconstruct(&planted);
            let d = cp_decompose(&t, r, &CpOptions::default()).unwrap();
            worst = worst.max(relative_error(&t, &d.factors));
            monotone &= d.history.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            cases += 1;
        }
    }
    outcome(
        worst <= 1e-5 && monotone,
        format!("{cases} planted tensors up to 20^3, max relative error {worst:.2e} (limit 1e-5), fit monotone per sweep: {monotone}"),
    )
}

fn fixture() -> &'static SystemModel {
    static SYS: OnceLock<SystemModel> = OnceLock::new();
    SYS.get_or_init(|| SystemModel::build(wscc9(), 1.0).expect("fixture builds"))
}

fn full_rank_model() -> &'static TaylorModel {
    static MODEL: OnceLock<TaylorModel> = OnceLock::new();
    MODEL.get_or_init(|| build_model(fixture(), Ranks::Full, &CpOptions::default()).expect("model builds"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let sys = fixture();
    let model = full_rank_model();
    let f = sys.dynamics(sys.prefault_network());
    let n = sys.n_states();
    let mut f0 = vec![0.0; n];
    f.eval(sys.x0(), &mut f0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut slopes = Vec::new();
    for _ in 0..10 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let pts: Vec<(f64, f64)> = (0..=8)
            .map(|k| {
                let eps = 10f64.powf(-3.0 + 2.0 * k as f64 / 8.0);
                let x: Vec<f64> = sys.x0().iter().zip(&v).map(|(a, b)| a + b / norm * eps).collect();
                // the deviation the state actually carries after rounding
                let dx: Vec<f64> = x.iter().zip(sys.x0()).map(|(a, b)| a - b).collect();
                let mut fx = vec![0.0; n];
                f.eval(&x, &mut fx);
                let r = reduced_rhs(model, &dx);
                let res = (0..n).map(|i| (fx[i] - f0[i] - r[i]).powi(2)).sum::<f64>().sqrt();
                (eps.ln(), res.ln())
            })
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        slopes.push(slope);
    }
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let within = slopes.iter().filter(|s| (3.6..=4.4).contains(*s)).count();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        within == slopes.len() && secs < 120.0,
        format!(
            "10 directions, log-log slopes in [{lo:.3}, {hi:.3}], {within} of 10 within 4 +/- 0.4, {secs:.1} s with tensor build"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut worst_residual: f64 = 0.0;
    for level in level_grid(0.8, 1.2, 0.05) {
        let sys = SystemModel::build(wscc9(), level).expect("level solves");
        worst_residual = worst_residual.max(sys.equilibrium_residual());
    }
    let sys = fixture();
    let net = sys.network(NetCondition::Prefault).unwrap();
    let mut x = sys.x0().to_vec();
    let before = sys.machine_outputs(&x, &net);
    for k in 0..sys.n_machines() {
        x[k * STATES_PER_MACHINE + DELTA] += 0.7;
    }
    let after = sys.machine_outputs(&x, &net);
    let shift = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a.pe - b.pe).abs())
        .fold(0.0, f64::max);
    outcome(
        worst_residual < 1e-8 && shift < 1e-10,
        format!("max |f(x0)| over 9 levels {worst_residual:.2e} (limit 1e-8), Pe change under uniform shift {shift:.2e} (limit 1e-10)"),
    )
}

fn criterion_5() -> Outcome {
    let f = FnDynamics::new(1, |x: &[f64], out: &mut [f64]| out[0] = -x[0]);
    let err = |dt: f64| {
        let tr = integrate(&f, &[1.0], 0.0, 1.0, dt).unwrap();
        (tr.last()[0] - (-1f64).exp()).abs()
    };
    let ratio = err(0.1) / err(0.05);
    outcome((14.0..=18.0).contains(&ratio), format!("error ratio on halving dt {ratio:.3} (required 14 to 18)"))
}

fn max_study_rms(sys: &SystemModel, models: &ModelSet, scenario: &Scenario, policy: &SwitchPolicy) -> (f64, bool) {
    let mut full_policy = policy.clone();
    full_policy.mode = Mode::ForceFull;
    let full = run_adaptive(sys, models, scenario, &full_policy).unwrap();
    let run = run_adaptive(sys, models, scenario, policy).unwrap();
    if run.diverged || run.len() != full.len() {
        return (f64::INFINITY, true);
    }
    let e = rms_error(&run, &full, sys.study(), policy.reference).unwrap();
    (e.into_iter().fold(0.0, f64::max), false)
}

fn criterion_6() -> Outcome {
    let sys = fixture();
    let models = ModelSet::new("wscc9", "", vec![full_rank_model().clone()]);
    let policy = SwitchPolicy::new(sys, Mode::ForceFull, 1.0, &[1.0]);
    let cct = cct_search(sys, &models, &policy, FIXTURE_BUS, &TIMING, 2.0).unwrap();
    let Some(cct) = cct.cct else {
        return outcome(false, "no full-model CCT found for the fixture fault".into());
    };
    let steps = (0.95 * cct / TIMING.dt).round() as usize;
    let scenario = TIMING.scenario(FIXTURE_BUS, steps);
    let err = |mode| {
        let mut p = policy.clone();
        p.mode = mode;
        max_study_rms(sys, &models, &scenario, &p).0
    };
    let (hybrid, taylor, linear, adaptive) = (
        err(Mode::ForceHybrid),
        err(Mode::ForceTaylor),
        err(Mode::ForceLinear),
        err(Mode::Adaptive),
    );
    let pass = hybrid <= taylor && taylor <= 1.05 * linear && adaptive < linear;
    outcome(
        pass,
        format!(
            "fault at bus {FIXTURE_BUS} for {:.2} s (0.95 CCT), max RMS: hybrid {hybrid:.3}, taylor {taylor:.3}, linear {linear:.3}, adaptive {adaptive:.3} deg",
            steps as f64 * TIMING.dt
        ),
    )
}

/// Representative models at 0.8, 1.0 and 1.2 with ranks from the rank
/// search on the fixture fault.
fn searched_models() -> &'static (ModelSet, [usize; 2]) {
    static SET: OnceLock<(ModelSet, [usize; 2])> = OnceLock::new();
    SET.get_or_init(|| {
        let sys = fixture();
        let opts = CpOptions::default();
        let probe = ModelSet::new("wscc9", "", vec![build_model(sys, Ranks::Fixed(1, 1), &opts).unwrap()]);
        let full_policy = SwitchPolicy::new(sys, Mode::ForceFull, 1.0, &[1.0]);
        let cct = cct_search(sys, &probe, &full_policy, FIXTURE_BUS, &TIMING, 2.0)
            .unwrap()
            .cct
            .expect("fixture fault has a CCT");
        let scenario = TIMING.scenario(FIXTURE_BUS, (0.95 * cct / TIMING.dt).round() as usize);
        let policy = SwitchPolicy::new(sys, Mode::Adaptive, 1.0, &[1.0]);
        let search = system_rank_search(sys, &probe.models[0], &scenario, &policy, 1, 0.1, 40, &opts).unwrap();
        let ranks = Ranks::Fixed(search.r2, search.r3);
        let models = build_model_set(sys.data(), &[0.8, 1.0, 1.2], ranks, &opts).unwrap();
        (ModelSet::new("wscc9", "", models), [search.r2, search.r3])
    })
}

fn criterion_7() -> Outcome {
    let sys = fixture();
    let (models, ranks) = searched_models();
    let levels = models.levels();
    let mut lines = Vec::new();
    let mut equal = true;
    for bus in [1u32, 2, 3] {
        let full = cct_search(sys, models, &SwitchPolicy::new(sys, Mode::ForceFull, 1.0, &levels), bus, &TIMING, 2.0)
            .unwrap()
            .cct;
        let adaptive = cct_search(sys, models, &SwitchPolicy::new(sys, Mode::Adaptive, 1.0, &levels), bus, &TIMING, 2.0)
            .unwrap()
            .cct;
        equal &= full.is_some() && full == adaptive;
        lines.push(format!("bus {bus} full {full:?} adaptive {adaptive:?}"));
    }
    let sweep = sweep_result();
    let ccts: Vec<Option<f64>> = sweep.rows.iter().map(|r| r.cct).collect();
    let monotone = sweep.rows.len() == 9
        && ccts.iter().all(Option::is_some)
        && ccts.windows(2).all(|w| w[1].unwrap() <= w[0].unwrap() + 1e-12);
    outcome(
        equal && monotone,
        format!(
            "ranks {ranks:?}; {}; full CCT over 9 levels {:?} non-increasing: {monotone}",
            lines.join(", "),
            ccts.iter().map(|c| c.unwrap_or(f64::NAN)).collect::<Vec<_>>()
        ),
    )
}

fn sweep_result() -> &'static tdmor::study::Sweep {
    static SWEEP: OnceLock<tdmor::study::Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let sys = fixture();
        let (models, _) = searched_models();
        let policy = SwitchPolicy::new(sys, Mode::Adaptive, 1.0, &models.levels());
        load_sweep(sys.data(), models, &policy, &level_grid(0.8, 1.2, 0.05), FIXTURE_BUS, &TIMING, 2.0).unwrap()
    })
}

fn criterion_8() -> Outcome {
    let sweep = sweep_result();
    let worst = sweep.rows.iter().map(|r| r.max_rms).fold(0.0, f64::max);
    let limit = SWEEP_RMS_BOUND_DEG * SWEEP_RMS_SLACK;
    outcome(
        sweep.rows.len() == 9 && worst <= limit,
        format!(
            "max study RMS over 9 levels {worst:.3} deg (bound {SWEEP_RMS_BOUND_DEG} deg + 10% = {limit:.3}); below 5 deg: {}; per level {:?}",
            worst < 5.0,
            sweep.rows.iter().map(|r| (r.load_level, (r.max_rms * 1000.0).round() / 1000.0)).collect::<Vec<_>>()
        ),
    )
}

fn criterion_9() -> Outcome {
    let data = ring_system(34, 3);
    let n_external = data.areas.external.len();
    let sys = SystemModel::build(data, 1.0).unwrap();
    // the decomposition quality does not enter the timing; a short ALS keeps
    // the offline build quick on 306 states
    let opts = CpOptions {
        max_iters: 50,
        restarts: 1,
        ..CpOptions::default()
    };
    let model = build_model(&sys, Ranks::Fixed(5, 5), &opts).unwrap();
    let models = ModelSet::new("ring34", "", vec![model]);
    let policy = SwitchPolicy::new(&sys, Mode::Adaptive, 1.0, &[1.0]);
    let scenario = Scenario::fault(sys.data().machines[1].bus, 0.0, 0.05, 5.0, 0.01);
    let flops = flop_counts(&sys, &models, &policy).unwrap();
    let rows = timing_compare(&sys, &models, &scenario, &policy, &[Mode::ForceFull, Mode::ForceTaylor], 5).unwrap();
    let (full_t, taylor_t) = (rows[0].median_s, rows[1].median_s);
    let ratio = flops.taylor as f64 / flops.full as f64;
    outcome(
        taylor_t < full_t && ratio < 0.5,
        format!(
            "{n_external} external machines, ranks (5, 5): median wall time taylor {taylor_t:.4} s vs full {full_t:.4} s; RHS operations taylor {} vs full {} (ratio {ratio:.2}, required < 0.5)",
            flops.taylor, flops.full
        ),
    )
}

fn criterion_10() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let commands: [&[&str]; 3] = [
        &["simulate", "--fault-bus", "7", "--t-clear", "0.1", "--ranks", "3,4", "--t-end", "4"],
        &["build", "--ranks", "auto", "--levels", "0.9,1.0", "--t-end", "4"],
        &["compare", "--fault-bus", "3", "--t-clear", "0.15", "--ranks", "2,3", "--t-end", "3"],
    ];
    for dir in &dirs {
        for cmd in commands {
            let mut args = vec!["tdmor"];
            args.extend_from_slice(cmd);
            let out = dir.path().to_str().unwrap();
            args.extend_from_slice(&["--system", "builtin:wscc9", "--seed", "7", "--out", out]);
            let code = tdmor::cli::run(args);
            if code != 0 {
                return outcome(false, format!("{} exited with {code}", cmd[0]));
            }
        }
    }
    let list = |d: &tempfile::TempDir| {
        let mut v: Vec<_> = std::fs::read_dir(d.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| !n.starts_with("table1-"))
            .collect();
        v.sort();
        v
    };
    let (a, b) = (list(&dirs[0]), list(&dirs[1]));
    if a != b {
        return outcome(false, format!("file sets differ: {a:?} vs {b:?}"));
    }
    let differing: Vec<&String> = a
        .iter()
        .filter(|name| {
            std::fs::read(dirs[0].path().join(name)).unwrap() != std::fs::read(dirs[1].path().join(name)).unwrap()
        })
        .collect();
    outcome(
        differing.is_empty(),
        format!("{} payload files compared byte for byte (timing tables excluded), differing: {differing:?}", a.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("tensor oracle suite", criterion_1),
        ("CP recovery", criterion_2),
        ("Taylor order", criterion_3),
        ("equilibrium and symmetry", criterion_4),
        ("RK4 order", criterion_5),
        ("accuracy ordering", criterion_6),
        ("CCT fidelity", criterion_7),
        ("load-sweep robustness", criterion_8),
        ("speed direction", criterion_9),
        ("determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("{label}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
