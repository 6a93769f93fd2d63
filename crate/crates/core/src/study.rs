//! Study procedures: RMS errors, critical clearing time, rank and threshold
//! searches, timing and load-level sweeps.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cp::{CpDecomposition, CpOptions};
use crate::error::{Error, Result};
use crate::power::data::SystemData;
use crate::power::system::{SystemModel, DELTA, STATES_PER_MACHINE};
use crate::sim::{is_stable, run_adaptive, Mode, Model, Scenario, SwitchPolicy, Trajectory};
use crate::taylor::{compress, select_boundary_generators, HybridModel, ModelSet, TaylorModel};

/// Per-generator RMS difference, in degrees, of rotor angles taken relative
/// to `reference` in both trajectories.
pub fn rms_error(a: &Trajectory, b: &Trajectory, generators: &[usize], reference: usize) -> Result<Vec<f64>> {
    if a.times != b.times {
        return Err(Error::dim(format!(
            "trajectories sampled on different grids ({} vs {} samples)",
            a.len(),
            b.len()
        )));
    }
    let angle = |x: &[f64], g: usize| x[g * STATES_PER_MACHINE + DELTA] - x[reference * STATES_PER_MACHINE + DELTA];
    Ok(generators
        .iter()
        .map(|&g| {
            let sum: f64 = (0..a.len())
                .map(|k| (angle(a.state(k), g) - angle(b.state(k), g)).powi(2))
                .sum();
            (sum / a.len() as f64).sqrt().to_degrees()
        })
        .collect())
}

/// Largest per-sample absolute angle difference, in degrees, per generator.
pub fn max_abs_error(a: &Trajectory, b: &Trajectory, generators: &[usize], reference: usize) -> Result<Vec<f64>> {
    if a.times != b.times {
        return Err(Error::dim("trajectories sampled on different grids"));
    }
    let angle = |x: &[f64], g: usize| x[g * STATES_PER_MACHINE + DELTA] - x[reference * STATES_PER_MACHINE + DELTA];
    Ok(generators
        .iter()
        .map(|&g| {
            (0..a.len())
                .map(|k| (angle(a.state(k), g) - angle(b.state(k), g)).abs())
                .fold(0.0, f64::max)
                .to_degrees()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    Rms,
    InstantMax,
}

/// Worst study-area error of `run` against `baseline`. A diverged or
/// truncated run scores `+∞`.
pub fn study_error(
    sys: &SystemModel,
    run: &Trajectory,
    baseline: &Trajectory,
    reference: usize,
    metric: ErrorMetric,
) -> Result<f64> {
    if run.diverged || run.len() != baseline.len() {
        return Ok(f64::INFINITY);
    }
    let errs = match metric {
        ErrorMetric::Rms => rms_error(run, baseline, sys.study(), reference)?,
        ErrorMetric::InstantMax => max_abs_error(run, baseline, sys.study(), reference)?,
    };
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Fault scenario timing shared by the searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_on: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl Timing {
    pub fn scenario(&self, bus: u32, duration_steps: usize) -> Scenario {
        let t_clear = self.t_on + duration_steps as f64 * self.dt;
        Scenario::fault(bus, self.t_on, t_clear, self.t_on + self.horizon, self.dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CctResult {
    pub bus: u32,
    pub mode: Mode,
    /// Longest stable fault duration in seconds; `None` when no instability
    /// was found up to the search limit.
    pub cct: Option<f64>,
    /// Post-hoc confirmation: stable at `cct` and unstable one step above.
    pub confirmed: bool,
}

/// Critical clearing time by bisection over whole integration steps, up to
/// `max_duration` seconds of fault.
pub fn cct_search(
    sys: &SystemModel,
    models: &ModelSet,
    policy: &SwitchPolicy,
    bus: u32,
    timing: &Timing,
    max_duration: f64,
) -> Result<CctResult> {
    let stable = |steps: usize| -> Result<bool> {
        let tr = run_adaptive(sys, models, &timing.scenario(bus, steps), policy)?;
        Ok(is_stable(&tr, policy.reference, sys.study()))
    };
    if !stable(0)? {
        return Err(Error::Numerical(format!("system unstable for a zero-duration fault at bus {bus}")));
    }
    let limit = (max_duration / timing.dt).round() as usize;
    let mut lo = 0;
    let mut hi = (0.1 / timing.dt).round().max(1.0) as usize;
    loop {
        if hi >= limit {
            if stable(limit)? {
                return Ok(CctResult {
                    bus,
                    mode: policy.mode,
                    cct: None,
                    confirmed: false,
                });
            }
            hi = limit;
            break;
        }
        if stable(hi)? {
            lo = hi;
            hi *= 2;
        } else {
            break;
        }
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let confirmed = stable(lo)? && !stable(lo + 1)?;
    Ok(CctResult {
        bus,
        mode: policy.mode,
        cct: Some(lo as f64 * timing.dt),
        confirmed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPoint {
    pub r2: usize,
    pub r3: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSearch {
    pub r2: usize,
    pub r3: usize,
    /// Best point per `r2`, in sweep order.
    pub curve: Vec<RankPoint>,
    /// Every evaluated `(r2, r3)` pair.
    pub evaluated: Vec<RankPoint>,
    /// False when `max_rank` was reached before the stop rule fired.
    pub stabilized: bool,
    /// `r2` values whose best metric rose more than 5% over the previous one.
    pub violations: Vec<usize>,
}

/// Offsets of `r3` over `r2` tried at every step of the rank sweep.
pub const R3_OFFSETS: [usize; 3] = [0, 1, 2];

/// Sweeps `r2 = start, start+1, ...` with `r3 = r2 + {0, 1, 2}`, scoring each
/// `r2` by its best offset. Stops at the first `r2` whose successor improves
/// the score by less than `tol`, and returns that `r2` with its best `r3`.
pub fn rank_search(
    start: usize,
    tol: f64,
    max_rank: usize,
    mut eval: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<RankSearch> {
    if start == 0 {
        return Err(Error::invalid("rank search must start at rank 1 or above"));
    }
    let mut curve: Vec<RankPoint> = Vec::new();
    let mut evaluated = Vec::new();
    let mut violations = Vec::new();
    for r2 in start..=max_rank.max(start) {
        let mut best: Option<RankPoint> = None;
        for off in R3_OFFSETS {
            let r3 = r2 + off;
            let metric = eval(r2, r3)?;
            let p = RankPoint { r2, r3, metric };
            evaluated.push(p.clone());
            if best.as_ref().map_or(true, |b| metric < b.metric) {
                best = Some(p);
            }
        }
        let best = best.expect("offsets are non-empty");
        if let Some(prev) = curve.last() {
            if best.metric > prev.metric * 1.05 {
                violations.push(r2);
            }
            if !(prev.metric - best.metric >= tol) {
                let chosen = prev.clone();
                curve.push(best);
                return Ok(RankSearch {
                    r2: chosen.r2,
                    r3: chosen.r3,
                    curve,
                    evaluated,
                    stabilized: true,
                    violations,
                });
            }
        }
        curve.push(best);
    }
    let last = curve.last().expect("at least one rank evaluated").clone();
    Ok(RankSearch {
        r2: last.r2,
        r3: last.r3,
        curve,
        evaluated,
        stabilized: false,
        violations,
    })
}

/// Rank search on a system: each candidate recompresses the raw tensors of
/// `model` and scores the worst study-area RMS error of a `policy` run of
/// `scenario` against the full model. Compressions are cached per rank.
pub fn system_rank_search(
    sys: &SystemModel,
    model: &TaylorModel,
    scenario: &Scenario,
    policy: &SwitchPolicy,
    start: usize,
    tol: f64,
    max_rank: usize,
    opts: &CpOptions,
) -> Result<RankSearch> {
    let Some((t2, t3)) = &model.raw else {
        return Err(Error::invalid("rank search needs a model with raw tensors"));
    };
    let mut full_policy = policy.clone();
    full_policy.mode = Mode::ForceFull;
    let single = ModelSet::new("", "", vec![model.clone()]);
    let baseline = run_adaptive(sys, &single, scenario, &full_policy)?;
    let mut policy = policy.clone();
    policy.representative_levels = vec![model.load_level];
    policy.base_level = model.load_level;

    let mut c2: HashMap<usize, CpDecomposition> = HashMap::new();
    let mut c3: HashMap<usize, CpDecomposition> = HashMap::new();
    rank_search(start, tol, max_rank, |r2, r3| {
        if !c2.contains_key(&r2) {
            c2.insert(r2, compress(t2, r2, opts)?);
        }
        if !c3.contains_key(&r3) {
            c3.insert(r3, compress(t3, r3, opts)?);
        }
        let (a2, a3) = (&c2[&r2], &c3[&r3]);
        let candidate = TaylorModel {
            ranks: [a2.factors.rank(), a3.factors.rank()],
            fit: [a2.fit, a3.fit],
            a2: a2.factors.clone(),
            a3: a3.factors.clone(),
            raw: None,
            ..model.clone()
        };
        let set = ModelSet::new("", "", vec![candidate]);
        let run = run_adaptive(sys, &set, scenario, &policy)?;
        study_error(sys, &run, &baseline, policy.reference, ErrorMetric::Rms)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    /// Largest accepted threshold in degrees; 0 when none was accepted.
    pub threshold: f64,
    pub curve: Vec<(f64, f64)>,
    pub diagnostic: Option<String>,
}

/// Raises the angle threshold from `start` in `step` increments while the
/// error stays below `max_error`, stopping at the first failure or at
/// `upper`.
pub fn threshold_search(
    start: f64,
    step: f64,
    upper: f64,
    max_error: f64,
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<ThresholdSearch> {
    if !(step > 0.0) || !(start > 0.0) {
        return Err(Error::invalid("threshold search needs positive start and step"));
    }
    let mut curve = Vec::new();
    let mut accepted = 0.0;
    let mut k = 0;
    loop {
        let thr = start + k as f64 * step;
        if thr > upper + 1e-9 {
            break;
        }
        let err = eval(thr)?;
        curve.push((thr, err));
        if err < max_error {
            accepted = thr;
        } else {
            break;
        }
        k += 1;
    }
    let diagnostic = (accepted == 0.0).then(|| {
        format!("no threshold from {start} deg keeps the error below {max_error} deg")
    });
    Ok(ThresholdSearch {
        threshold: accepted,
        curve,
        diagnostic,
    })
}

/// Median of `reps` timed calls after one untimed warm-up call.
pub fn median_time(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    if reps == 0 {
        return Err(Error::invalid("at least one repetition required"));
    }
    f()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = reps / 2;
    Ok(if reps % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

/// Operation count of one right-hand-side evaluation for each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopCounts {
    pub full: usize,
    pub hybrid: usize,
    pub taylor: usize,
    pub linear: usize,
}

impl FlopCounts {
    pub fn get(&self, m: Model) -> usize {
        match m {
            Model::Full => self.full,
            Model::Hybrid => self.hybrid,
            Model::Taylor => self.taylor,
            Model::Linear => self.linear,
        }
    }
}

pub fn flop_counts(sys: &SystemModel, models: &ModelSet, policy: &SwitchPolicy) -> Result<FlopCounts> {
    let (level, _) = policy.resolve_level(sys.load_level())?;
    let model = models.at_level(level).ok_or(Error::MissingModel(level))?;
    let net = sys.prefault_network();
    let boundary = select_boundary_generators(sys, policy.norm_threshold);
    Ok(FlopCounts {
        full: sys.rhs_flops(sys.n_machines()),
        hybrid: HybridModel::new(sys, net, model, &boundary, sys.x0(), true).flops(),
        taylor: HybridModel::new(sys, net, model, sys.study(), sys.x0(), true).flops(),
        linear: HybridModel::new(sys, net, model, sys.study(), sys.x0(), false).flops(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub mode: Mode,
    pub median_s: f64,
    pub repetitions: usize,
}

/// Median wall time of the whole simulation per mode. Models are built
/// beforehand and not timed.
pub fn timing_compare(
    sys: &SystemModel,
    models: &ModelSet,
    scenario: &Scenario,
    policy: &SwitchPolicy,
    modes: &[Mode],
    repetitions: usize,
) -> Result<Vec<TimingRow>> {
    modes
        .iter()
        .map(|&mode| {
            let mut p = policy.clone();
            p.mode = mode;
            let median_s = median_time(repetitions, || run_adaptive(sys, models, scenario, &p).map(|_| ()))?;
            Ok(TimingRow {
                mode,
                median_s,
                repetitions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub load_level: f64,
    pub cct: Option<f64>,
    /// Representative level whose model was active.
    pub model_level: f64,
    pub swapped: bool,
    /// Per study-area generator, degrees.
    pub rms: Vec<f64>,
    pub max_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<(f64, String)>,
}

/// For each load level: solve the operating point, find the full-model CCT
/// for a fault at `bus`, then simulate that fault with duration equal to
/// the CCT under `policy` and compare with the full model.
pub fn load_sweep(
    data: &SystemData,
    models: &ModelSet,
    policy: &SwitchPolicy,
    levels: &[f64],
    bus: u32,
    timing: &Timing,
    max_duration: f64,
) -> Result<Sweep> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &level in levels {
        let sys = match SystemModel::build(data.clone(), level) {
            Ok(s) => s,
            Err(e) => {
                skipped.push((level, e.to_string()));
                continue;
            }
        };
        let mut full_policy = policy.clone();
        full_policy.mode = Mode::ForceFull;
        let cct = cct_search(&sys, models, &full_policy, bus, timing, max_duration)?;
        let steps = cct.cct.map_or(0, |c| (c / timing.dt).round() as usize);
        let scenario = timing.scenario(bus, steps);
        let full = run_adaptive(&sys, models, &scenario, &full_policy)?;
        let run = run_adaptive(&sys, models, &scenario, policy)?;
        let rms = if run.diverged || run.len() != full.len() {
            vec![f64::INFINITY; sys.study().len()]
        } else {
            rms_error(&run, &full, sys.study(), policy.reference)?
        };
        let (model_level, path) = policy.resolve_level(level)?;
        rows.push(SweepRow {
            load_level: level,
            cct: cct.cct,
            model_level,
            swapped: !path.is_empty(),
            max_rms: rms.iter().copied().fold(0.0, f64::max),
            rms,
        });
    }
    Ok(Sweep { rows, skipped })
}

/// Load levels from `lo` to `hi` inclusive in steps of `step`.
pub fn level_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect()
}

/// Where a report came from: enough to regenerate every number in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub system: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64, system: impl Into<String>) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
            seed,
            system: system.into(),
        }
    }

    /// One-line form used as the comment header of CSV files.
    pub fn header(&self) -> String {
        format!(
            "{} {} config {} seed {} system {}",
            self.tool, self.version, self.config_hash, self.seed, self.system
        )
    }
}

/// Error of one mode against the full model over the same grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeError {
    pub mode: Mode,
    pub diverged: bool,
    /// Per study-area generator, degrees.
    pub rms: Vec<f64>,
    pub max_rms: f64,
}

/// Results of one study command. Sections that the command did not
/// produce are left empty. Wall times are kept out of this report so that
/// it is reproducible byte for byte; they go to the timing table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub provenance: Provenance,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<SwitchPolicy>,
    /// Study-area generator ids, in the order of every per-generator list.
    pub study_generators: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<(f64, [Option<f64>; 2])>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_search: Option<RankSearch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_search: Option<ThresholdSearch>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cct: Vec<CctResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ModeError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops: Option<FlopCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

impl StudyReport {
    pub fn new(provenance: Provenance, command: impl Into<String>, sys: &SystemModel) -> Self {
        StudyReport {
            provenance,
            command: command.into(),
            scenario: None,
            policy: None,
            study_generators: sys.study().iter().map(|&k| sys.data().machines[k].id).collect(),
            ranks: None,
            fits: Vec::new(),
            rank_search: None,
            threshold_search: None,
            cct: Vec::new(),
            errors: Vec::new(),
            flops: None,
            sweep: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Table with per-level CCT and RMS errors, one column per study-area
/// generator.
pub fn sweep_table(sweep: &Sweep, generators: &[u32], header: &str) -> String {
    let mut s = format!("# {header}\nload_level,cct_s,model_level,max_error_deg");
    for g in generators {
        s.push_str(&format!(",error_gen{g}_deg"));
    }
    s.push('\n');
    for r in &sweep.rows {
        let cct = r.cct.map_or(String::from("none"), |c| format!("{c}"));
        s.push_str(&format!("{},{},{},{}", r.load_level, cct, r.model_level, r.max_rms));
        for e in &r.rms {
            s.push_str(&format!(",{e}"));
        }
        s.push('\n');
    }
    s
}

/// Table with median wall time and per-evaluation operation count per
/// mode.
pub fn timing_table(rows: &[TimingRow], flops: &FlopCounts, header: &str) -> String {
    let mut s = format!("# {header}\nmode,median_s,repetitions,rhs_flops\n");
    for r in rows {
        let f = match r.mode {
            Mode::ForceFull => Some(flops.full),
            Mode::ForceHybrid => Some(flops.hybrid),
            Mode::ForceTaylor => Some(flops.taylor),
            Mode::ForceLinear => Some(flops.linear),
            Mode::Adaptive => None,
        };
        let f = f.map_or(String::from("mixed"), |v| v.to_string());
        s.push_str(&format!("{},{},{},{}\n", r.mode.name(), r.median_s, r.repetitions, f));
    }
    s
}
