//! Fixed-step RK4 integration and the adaptive model-switching run.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::power::system::{SystemModel, DELTA, STATES_PER_MACHINE};
use crate::taylor::{select_boundary_generators, HybridModel, ModelSet};

/// Models that can be active during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Full,
    Hybrid,
    Taylor,
    Linear,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Full => "full",
            Model::Hybrid => "hybrid",
            Model::Taylor => "taylor",
            Model::Linear => "linear",
        }
    }
}

/// Simulation mode: the adaptive policy, or one model for the whole
/// post-fault (and pre-fault) period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Adaptive,
    ForceFull,
    ForceHybrid,
    ForceTaylor,
    ForceLinear,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Adaptive,
        Mode::ForceFull,
        Mode::ForceHybrid,
        Mode::ForceTaylor,
        Mode::ForceLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Adaptive => "adaptive",
            Mode::ForceFull => "force_full",
            Mode::ForceHybrid => "force_hybrid",
            Mode::ForceTaylor => "force_taylor",
            Mode::ForceLinear => "force_linear",
        }
    }

    fn forced(self) -> Option<Model> {
        match self {
            Mode::Adaptive => None,
            Mode::ForceFull => Some(Model::Full),
            Mode::ForceHybrid => Some(Model::Hybrid),
            Mode::ForceTaylor => Some(Model::Taylor),
            Mode::ForceLinear => Some(Model::Linear),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == key || m.name().strip_prefix("force_") == Some(key.as_str()))
            .ok_or_else(|| Error::invalid(format!("unknown mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub from: Model,
    pub to: Model,
    pub reason: String,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    /// Model active over step `k` (from `times[k]` to `times[k + 1]`).
    pub models: Vec<Model>,
    pub switch_log: Vec<SwitchEvent>,
    /// Set when the state became non-finite; the trajectory ends at the
    /// last finite sample.
    pub diverged: bool,
}

impl Trajectory {
    /// Trajectory from sampled states (row-major, `n` per sample), with no
    /// model labels or switch events.
    pub fn from_samples(times: Vec<f64>, states: Vec<f64>, n: usize) -> Result<Self> {
        if states.len() != times.len() * n {
            return Err(Error::dim(format!(
                "{} state values for {} samples of dimension {n}",
                states.len(),
                times.len()
            )));
        }
        Ok(Trajectory {
            n,
            times,
            states,
            models: Vec::new(),
            switch_log: Vec::new(),
            diverged: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// CSV with header `time,<names>`, preceded by a `#` provenance line
    /// when `meta` is non-empty.
    pub fn to_csv(&self, names: &[String], meta: &str) -> String {
        let mut s = String::new();
        if !meta.is_empty() {
            let _ = writeln!(s, "# {meta}");
        }
        s.push_str("time");
        for name in names {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for k in 0..self.len() {
            let _ = write!(s, "{}", self.times[k]);
            for v in self.state(k) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// One JSON object per switch event, preceded by a provenance object
    /// when `meta` is given.
    pub fn switch_log_jsonl(&self, meta: Option<&serde_json::Value>) -> String {
        let mut s = String::new();
        if let Some(m) = meta {
            s.push_str(&m.to_string());
            s.push('\n');
        }
        for e in &self.switch_log {
            s.push_str(&serde_json::to_string(e).expect("event serializes"));
            s.push('\n');
        }
        s
    }
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, f: &dyn Dynamics, x: &mut [f64], dt: f64) {
        let n = x.len();
        f.eval(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        f.eval(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        f.eval(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        f.eval(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn step_count(t_start: f64, t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step {dt} must be positive")));
    }
    if !(t_end >= t_start) {
        return Err(Error::invalid(format!("end time {t_end} precedes start {t_start}")));
    }
    Ok(((t_end - t_start) / dt).round() as usize)
}

/// Classical RK4 with samples at every step.
pub fn integrate(f: &dyn Dynamics, x_init: &[f64], t_start: f64, t_end: f64, dt: f64) -> Result<Trajectory> {
    let steps = step_count(t_start, t_end, dt)?;
    let mut run = Runner::new(x_init, t_start, dt, steps);
    for _ in 0..steps {
        if !run.advance(f, Model::Full) {
            break;
        }
    }
    Ok(run.finish())
}

struct Runner {
    traj: Trajectory,
    x: Vec<f64>,
    rk: Rk4,
    t_start: f64,
    dt: f64,
}

impl Runner {
    fn new(x_init: &[f64], t_start: f64, dt: f64, steps: usize) -> Self {
        let n = x_init.len();
        let mut states = Vec::with_capacity((steps + 1) * n);
        states.extend_from_slice(x_init);
        let mut times = Vec::with_capacity(steps + 1);
        times.push(t_start);
        Runner {
            traj: Trajectory {
                n,
                times,
                states,
                models: Vec::with_capacity(steps),
                switch_log: Vec::new(),
                diverged: false,
            },
            x: x_init.to_vec(),
            rk: Rk4::new(n),
            t_start,
            dt,
        }
    }

    fn step_index(&self) -> usize {
        self.traj.times.len() - 1
    }

    fn time(&self) -> f64 {
        *self.traj.times.last().expect("non-empty")
    }

    /// Returns false once the state is non-finite.
    fn advance(&mut self, f: &dyn Dynamics, model: Model) -> bool {
        self.rk.step(f, &mut self.x, self.dt);
        if self.x.iter().any(|v| !v.is_finite()) {
            self.traj.diverged = true;
            return false;
        }
        let k = self.step_index() + 1;
        self.traj.times.push(self.t_start + k as f64 * self.dt);
        self.traj.states.extend_from_slice(&self.x);
        self.traj.models.push(model);
        true
    }

    fn finish(self) -> Trajectory {
        self.traj
    }
}

/// Largest deviation, in degrees, of a study-area rotor angle relative to
/// the reference machine from its pre-fault value.
pub fn max_rotor_deviation(x: &[f64], x0: &[f64], reference: usize, study: &[usize]) -> f64 {
    let d = |v: &[f64], k: usize| v[k * STATES_PER_MACHINE + DELTA];
    let r = d(x, reference);
    let r0 = d(x0, reference);
    study
        .iter()
        .map(|&i| ((d(x, i) - r) - (d(x0, i) - r0)).abs())
        .fold(0.0, f64::max)
        .to_degrees()
}

/// Reference machine: the largest-inertia external machine among those not
/// electrically close to the boundary, lowest index on ties. When every
/// external machine is close (or there are none) the global largest-inertia
/// machine is returned and the flag is set.
pub fn select_reference_generator(sys: &SystemModel, norm_threshold: f64) -> (usize, bool) {
    let h = |k: usize| sys.data().machines[k].h;
    let pick = |cands: &mut dyn Iterator<Item = usize>| {
        cands.fold(None, |best: Option<usize>, k| match best {
            Some(b) if h(b) >= h(k) => Some(b),
            _ => Some(k),
        })
    };
    let far = pick(
        &mut sys
            .admittance_column_norms()
            .into_iter()
            .filter(|(_, n)| *n <= norm_threshold)
            .map(|(k, _)| k),
    );
    match far {
        Some(k) => (k, false),
        None => (pick(&mut (0..sys.n_machines())).expect("at least one machine"), true),
    }
}

/// A single self-clearing bus fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub fault_bus: Option<u32>,
    pub t_on: f64,
    pub t_clear: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl Scenario {
    pub fn fault(bus: u32, t_on: f64, t_clear: f64, t_end: f64, dt: f64) -> Self {
        Scenario {
            fault_bus: Some(bus),
            t_on,
            t_clear,
            t_end,
            dt,
        }
    }

    pub fn quiet(t_end: f64, dt: f64) -> Self {
        Scenario {
            fault_bus: None,
            t_on: 0.0,
            t_clear: 0.0,
            t_end,
            dt,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_on && self.t_on <= self.t_clear && self.t_clear <= self.t_end) {
            return Err(Error::invalid(format!(
                "scenario times must satisfy 0 <= t_on <= t_clear <= t_end, got {} {} {}",
                self.t_on, self.t_clear, self.t_end
            )));
        }
        step_count(0.0, self.t_end, self.dt).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchPolicy {
    pub mode: Mode,
    pub angle_threshold_deg: f64,
    pub load_change_fraction: f64,
    pub norm_threshold: f64,
    /// Machine index of the angle reference.
    pub reference: usize,
    /// Load level the run starts from before any swap.
    pub base_level: f64,
    pub representative_levels: Vec<f64>,
}

impl SwitchPolicy {
    pub fn new(sys: &SystemModel, mode: Mode, norm_threshold: f64, representative_levels: &[f64]) -> Self {
        SwitchPolicy {
            mode,
            angle_threshold_deg: 26.0,
            load_change_fraction: 0.10,
            norm_threshold,
            reference: select_reference_generator(sys, norm_threshold).0,
            base_level: 1.0,
            representative_levels: representative_levels.to_vec(),
        }
    }

    pub fn validate(&self, sys: &SystemModel) -> Result<()> {
        if !(self.angle_threshold_deg > 0.0) {
            return Err(Error::invalid("angle threshold must be positive"));
        }
        if !(self.load_change_fraction > 0.0 && self.load_change_fraction < 1.0) {
            return Err(Error::invalid("load change fraction must lie in (0, 1)"));
        }
        if self.reference >= sys.n_machines() {
            return Err(Error::invalid(format!("reference machine {} does not exist", self.reference)));
        }
        Ok(())
    }

    /// Representative level used at `level`, with the intermediate levels
    /// passed through. Starting from the level closest to `base_level`, the
    /// active level moves one representative at a time toward `level` while
    /// the gap exceeds `load_change_fraction`. It never turns back, so
    /// widely spaced representatives cannot make it oscillate.
    pub fn resolve_level(&self, level: f64) -> Result<(f64, Vec<f64>)> {
        let mut levels = self.representative_levels.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let Some(&first) = levels
            .iter()
            .min_by(|a, b| (*a - self.base_level).abs().total_cmp(&(*b - self.base_level).abs()))
        else {
            return Err(Error::MissingModel(self.base_level));
        };
        let up = level > first;
        let mut active = first;
        let mut path = Vec::new();
        while (level - active).abs() > self.load_change_fraction + 1e-9 && (level > active) == up {
            let next = if up {
                levels.iter().copied().find(|&l| l > active)
            } else {
                levels.iter().rev().copied().find(|&l| l < active)
            };
            match next {
                Some(l) => {
                    active = l;
                    path.push(l);
                }
                None => break,
            }
        }
        Ok((active, path))
    }
}

/// Simulates `scenario` on `sys` under `policy`.
///
/// Fault-on steps always use the full model on the faulted network. In
/// adaptive mode the post-fault period starts on the hybrid model when the
/// rotor-angle deviation exceeds the threshold at clearing and moves, once,
/// to the Taylor model at the first step boundary where it does not; a
/// small disturbance starts on the Taylor model directly. Before the fault
/// the adaptive run is on the Taylor model. Taylor rows are evaluated on
/// `x − x0` of `sys`, with coefficient matrices from the representative
/// level chosen by [`SwitchPolicy::resolve_level`].
pub fn run_adaptive(
    sys: &SystemModel,
    models: &ModelSet,
    scenario: &Scenario,
    policy: &SwitchPolicy,
) -> Result<Trajectory> {
    scenario.validate()?;
    policy.validate(sys)?;
    let dt = scenario.dt;
    let steps = step_count(0.0, scenario.t_end, dt)?;
    let on = (scenario.t_on / dt).round() as usize;
    let clear = (scenario.t_clear / dt).round() as usize;
    let has_fault = scenario.fault_bus.is_some() && clear > on;

    let pre = sys.prefault_network();
    let faulted = match scenario.fault_bus {
        Some(bus) => Some(sys.faulted_network(bus)?),
        None => None,
    };
    let full_pre = sys.dynamics(pre);
    let full_fault = faulted.as_ref().map(|net| sys.dynamics(net));

    let needs_models = policy.mode != Mode::ForceFull;
    let (level, swaps) = if needs_models {
        policy.resolve_level(sys.load_level())?
    } else {
        (sys.load_level(), Vec::new())
    };
    let reduced = if needs_models {
        let model = models.at_level(level).ok_or(Error::MissingModel(level))?;
        if model.n() != sys.n_states() {
            return Err(Error::dim(format!(
                "model at level {level} has {} states, system has {}",
                model.n(),
                sys.n_states()
            )));
        }
        let boundary = select_boundary_generators(sys, policy.norm_threshold);
        let study = sys.study();
        Some((
            HybridModel::new(sys, pre, model, &boundary, sys.x0(), true),
            HybridModel::new(sys, pre, model, study, sys.x0(), true),
            HybridModel::new(sys, pre, model, study, sys.x0(), false),
        ))
    } else {
        None
    };
    let rhs = |m: Model, fault: bool| -> &dyn Dynamics {
        if fault {
            return full_fault.as_ref().expect("fault network");
        }
        match (m, &reduced) {
            (Model::Full, _) => &full_pre,
            (Model::Hybrid, Some(r)) => &r.0,
            (Model::Taylor, Some(r)) => &r.1,
            (Model::Linear, Some(r)) => &r.2,
            _ => unreachable!("reduced models exist for non-full modes"),
        }
    };

    let mut run = Runner::new(sys.x0(), 0.0, dt, steps);
    let base_model = policy.mode.forced().unwrap_or(Model::Taylor);
    let mut current = base_model;
    let mut prev_level = if needs_models {
        policy
            .resolve_level(policy.base_level)
            .map(|(l, _)| l)
            .unwrap_or(level)
    } else {
        level
    };
    for l in swaps {
        run.traj.switch_log.push(SwitchEvent {
            t: 0.0,
            from: current,
            to: current,
            reason: format!("load-swap {prev_level} -> {l}"),
            level: l,
        });
        prev_level = l;
    }
    let log = |run: &mut Runner, from: Model, to: Model, reason: &str| {
        let t = run.time();
        run.traj.switch_log.push(SwitchEvent {
            t,
            from,
            to,
            reason: reason.to_string(),
            level,
        });
    };

    for k in 0..steps {
        let in_fault = has_fault && k >= on && k < clear;
        let next = if in_fault {
            Model::Full
        } else if let Some(m) = policy.mode.forced() {
            m
        } else if has_fault && k >= clear {
            let dev = max_rotor_deviation(&run.x, sys.x0(), policy.reference, sys.study());
            match current {
                Model::Full => {
                    if dev > policy.angle_threshold_deg {
                        Model::Hybrid
                    } else {
                        Model::Taylor
                    }
                }
                Model::Hybrid if dev <= policy.angle_threshold_deg => Model::Taylor,
                m => m,
            }
        } else {
            current
        };
        if next != current {
            let reason = if in_fault {
                "fault-on"
            } else if current == Model::Full && has_fault && k == clear {
                "fault-cleared"
            } else {
                "deviation-below-threshold"
            };
            log(&mut run, current, next, reason);
            current = next;
        }
        if !run.advance(rhs(current, in_fault), current) {
            break;
        }
    }
    Ok(run.finish())
}

/// Whether every study-area rotor angle stays within 180° of the reference
/// machine and the run did not diverge.
pub fn is_stable(traj: &Trajectory, reference: usize, study: &[usize]) -> bool {
    if traj.diverged {
        return false;
    }
    (0..traj.len()).all(|k| {
        let x = traj.state(k);
        let r = x[reference * STATES_PER_MACHINE + DELTA];
        study
            .iter()
            .all(|&i| (x[i * STATES_PER_MACHINE + DELTA] - r).abs() <= std::f64::consts::PI)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnDynamics;

    #[test]
    fn constant_field() {
        let f = FnDynamics::new(2, |_: &[f64], out: &mut [f64]| out.fill(0.0));
        let t = integrate(&f, &[1.0, -2.0], 0.0, 1.0, 0.1).unwrap();
        assert_eq!(t.len(), 11);
        assert!(t.states.chunks(2).all(|s| s == [1.0, -2.0]));
    }

    #[test]
    fn exponential_decay() {
        let f = FnDynamics::new(1, |x: &[f64], out: &mut [f64]| out[0] = -x[0]);
        let t = integrate(&f, &[1.0], 0.0, 1.0, 0.01).unwrap();
        assert!((t.last()[0] - (-1f64).exp()).abs() < 1e-9);
        assert!((t.times[100] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blow_up_truncates() {
        let f = FnDynamics::new(1, |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        let t = integrate(&f, &[1.0], 0.0, 5.0, 0.1).unwrap();
        assert!(t.diverged);
        assert!(t.len() < 51);
        assert!(t.last()[0].is_finite());
    }

    #[test]
    fn bad_step_rejected() {
        let f = FnDynamics::new(1, |_: &[f64], out: &mut [f64]| out[0] = 0.0);
        assert!(integrate(&f, &[0.0], 0.0, 1.0, 0.0).is_err());
        assert!(integrate(&f, &[0.0], 1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn deviation_degrees() {
        let x0 = vec![0.0; 27];
        let mut x = x0.clone();
        assert_eq!(max_rotor_deviation(&x, &x0, 1, &[0, 2]), 0.0);
        x[18] += 0.1;
        assert!((max_rotor_deviation(&x, &x0, 1, &[0, 2]) - 5.729577951308232).abs() < 1e-12);
        let mut y = x0.clone();
        for k in 0..3 {
            y[k * 9] += 0.4;
        }
        assert!(max_rotor_deviation(&y, &x0, 1, &[0, 2]).abs() < 1e-12);
    }

    #[test]
    fn mode_names_parse() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("taylor".parse::<Mode>().unwrap(), Mode::ForceTaylor);
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn level_resolution() {
        let sys = SystemModel::build(crate::power::data::wscc9(), 1.0).unwrap();
        let p = SwitchPolicy::new(&sys, Mode::Adaptive, 1.0, &[0.8, 1.0, 1.2]);
        assert_eq!(p.resolve_level(1.0).unwrap(), (1.0, vec![]));
        assert_eq!(p.resolve_level(1.1).unwrap(), (1.0, vec![]));
        assert_eq!(p.resolve_level(0.9).unwrap(), (1.0, vec![]));
        assert_eq!(p.resolve_level(1.15).unwrap(), (1.2, vec![1.2]));
        assert_eq!(p.resolve_level(0.85).unwrap(), (0.8, vec![0.8]));
        let wide = SwitchPolicy {
            representative_levels: vec![0.5, 1.0],
            ..p.clone()
        };
        assert_eq!(wide.resolve_level(0.7).unwrap(), (0.5, vec![0.5]));
    }
}
