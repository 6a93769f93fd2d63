//! Command-line front end.
//!
//! Every command reads a system, resolves its configuration from an
//! optional JSON config file overlaid with flags, and writes its artifacts
//! to the output directory under names that carry the configuration hash.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cp::CpOptions;
use crate::error::{Error, Result};
use crate::power::data::{load_system, wscc9, SystemData};
use crate::power::synthetic::ring_system;
use crate::power::system::SystemModel;
use crate::sim::{run_adaptive, Mode, Scenario, SwitchPolicy};
use crate::study::{
    cct_search, flop_counts, level_grid, load_sweep, study_error, sweep_table, system_rank_search, threshold_search,
    timing_compare, timing_table, ErrorMetric, ModeError, Provenance, RankSearch, StudyReport, Timing,
};
use crate::taylor::{build_model_set, ModelSet, Ranks};

/// How the CP ranks of the higher-order terms are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankSpec {
    /// Rank search on the base-level model.
    Auto,
    Full,
    Fixed(usize, usize),
}

impl FromStr for RankSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(RankSpec::Auto),
            "full" => Ok(RankSpec::Full),
            _ => {
                let parts: Vec<&str> = s.split(',').collect();
                let parse = |p: &str| p.trim().parse::<usize>().ok().filter(|&r| r > 0);
                match parts.as_slice() {
                    [a, b] => match (parse(a), parse(b)) {
                        (Some(r2), Some(r3)) => Ok(RankSpec::Fixed(r2, r3)),
                        _ => Err(format!("bad ranks '{s}'")),
                    },
                    _ => Err(format!("ranks must be auto, full or r2,r3; got '{s}'")),
                }
            }
        }
    }
}

impl fmt::Display for RankSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankSpec::Auto => f.write_str("auto"),
            RankSpec::Full => f.write_str("full"),
            RankSpec::Fixed(a, b) => write!(f, "{a},{b}"),
        }
    }
}

impl Serialize for RankSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RankSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Parser)]
#[command(name = "tdmor", version, about = "Adaptive tensor-reduced transient stability simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build Taylor models at the representative levels and save them.
    Build(Options),
    /// Simulate one scenario and write the trajectory and switch log.
    Simulate(Options),
    /// Critical clearing time for faults at one or more buses.
    Cct(Options),
    /// Search the CP ranks against the full model.
    RankSearch(Options),
    /// Search the largest admissible angle threshold.
    ThresholdSearch(Options),
    /// CCT and adaptive-model error across a sweep of load levels.
    Sweep(Options),
    /// Wall time, operation count and error of every mode.
    Compare(Options),
}

impl Command {
    fn parts(self) -> (&'static str, Options) {
        match self {
            Command::Build(o) => ("build", o),
            Command::Simulate(o) => ("simulate", o),
            Command::Cct(o) => ("cct", o),
            Command::RankSearch(o) => ("rank-search", o),
            Command::ThresholdSearch(o) => ("threshold-search", o),
            Command::Sweep(o) => ("sweep", o),
            Command::Compare(o) => ("compare", o),
        }
    }
}

/// Flags shared by all commands. Each may also be given in the `--config`
/// file under the same name with underscores; flags take precedence.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
struct Options {
    /// JSON file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// System file, or builtin:wscc9, or builtin:ring<N> for a synthetic ring of N machines.
    #[arg(long)]
    system: Option<String>,
    /// Model set written by `build`; models are built in-process when absent.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Representative load levels [default: 0.8,1.0,1.2].
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// CP ranks: auto, full, or r2,r3 [default: auto].
    #[arg(long)]
    ranks: Option<RankSpec>,
    /// Load level of the simulated operating point [default: 1.0].
    #[arg(long)]
    load_level: Option<f64>,
    /// Faulted bus id(s); the first is used where one is needed [default: first study generator bus].
    #[arg(long, value_delimiter = ',')]
    fault_bus: Option<Vec<u32>>,
    /// Fault inception time, s [default: 0].
    #[arg(long)]
    t_on: Option<f64>,
    /// Fault clearing time, s [default: t_on + 0.1].
    #[arg(long)]
    t_clear: Option<f64>,
    /// End of simulation, s [default: t_on + horizon].
    #[arg(long)]
    t_end: Option<f64>,
    /// Integration step, s [default: 0.01].
    #[arg(long)]
    dt: Option<f64>,
    /// Post-inception horizon, s [default: 16].
    #[arg(long)]
    horizon: Option<f64>,
    /// adaptive, full, hybrid, taylor or linear [default: adaptive].
    #[arg(long)]
    mode: Option<String>,
    /// Rotor-angle deviation that keeps boundary machines nonlinear, degrees [default: 26].
    #[arg(long)]
    angle_threshold: Option<f64>,
    /// Load change that triggers a model swap, fraction [default: 0.10].
    #[arg(long)]
    load_swap: Option<f64>,
    /// Admittance column-norm threshold for boundary machines [default: 1.0].
    #[arg(long)]
    norm_threshold: Option<f64>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for CP initialization [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Timed repetitions per mode in `compare` [default: 5].
    #[arg(long)]
    repetitions: Option<usize>,
    /// Error bound of the threshold search, degrees [default: 5].
    #[arg(long)]
    max_error: Option<f64>,
    /// Use the instantaneous maximum error instead of RMS in the threshold search.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    instant_max: Option<bool>,
    /// Rank-search stop tolerance, degrees [default: 0.1].
    #[arg(long)]
    rank_tol: Option<f64>,
    /// Largest rank tried by the rank search [default: 40].
    #[arg(long)]
    max_rank: Option<usize>,
    /// Load levels of the sweep [default: 0.80 to 1.20 in 0.05 steps].
    #[arg(long, value_delimiter = ',')]
    sweep_levels: Option<Vec<f64>>,
    /// Longest fault tried by the CCT search, s [default: 2].
    #[arg(long)]
    max_fault: Option<f64>,
}

macro_rules! overlay {
    ($a:expr, $b:expr, $($f:ident),*) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.clone(); } )*
    };
}

impl Options {
    fn overlay(&mut self, file: &Options) {
        overlay!(
            self, file, system, models, levels, ranks, load_level, fault_bus, t_on, t_clear, t_end, dt, horizon, mode,
            angle_threshold, load_swap, norm_threshold, out, seed, repetitions, max_error, instant_max, rank_tol,
            max_rank, sweep_levels, max_fault
        );
    }
}

/// Fully resolved configuration. Its canonical JSON, together with the
/// system and model-set contents, is what the configuration hash covers.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub system: String,
    pub models: Option<PathBuf>,
    pub levels: Vec<f64>,
    pub ranks: RankSpec,
    pub load_level: f64,
    pub fault_bus: Vec<u32>,
    pub t_on: f64,
    pub t_clear: f64,
    pub t_end: f64,
    pub dt: f64,
    pub horizon: f64,
    pub mode: Mode,
    pub angle_threshold: f64,
    pub load_swap: f64,
    pub norm_threshold: f64,
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    pub repetitions: usize,
    pub max_error: f64,
    pub instant_max: bool,
    pub rank_tol: f64,
    pub max_rank: usize,
    pub sweep_levels: Vec<f64>,
    pub max_fault: f64,
}

impl RunConfig {
    fn resolve(command: &str, mut o: Options) -> Result<Self> {
        if let Some(path) = &o.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: Options = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                column: e.column(),
                message: format!("{}: {e}", path.display()),
            })?;
            o.overlay(&file);
        }
        let system = o
            .system
            .ok_or_else(|| Error::invalid("--system is required (a file path or builtin:wscc9)"))?;
        let t_on = o.t_on.unwrap_or(0.0);
        let horizon = o.horizon.unwrap_or(16.0);
        let mode = match o.mode.as_deref() {
            Some(m) => m.parse()?,
            None => Mode::Adaptive,
        };
        let cfg = RunConfig {
            command: command.to_string(),
            system,
            models: o.models,
            levels: o.levels.unwrap_or_else(|| vec![0.8, 1.0, 1.2]),
            ranks: o.ranks.unwrap_or(RankSpec::Auto),
            load_level: o.load_level.unwrap_or(1.0),
            fault_bus: o.fault_bus.unwrap_or_default(),
            t_on,
            t_clear: o.t_clear.unwrap_or(t_on + 0.1),
            t_end: o.t_end.unwrap_or(t_on + horizon),
            dt: o.dt.unwrap_or(0.01),
            horizon,
            mode,
            angle_threshold: o.angle_threshold.unwrap_or(26.0),
            load_swap: o.load_swap.unwrap_or(0.10),
            norm_threshold: o.norm_threshold.unwrap_or(1.0),
            out: o.out.unwrap_or_else(|| PathBuf::from("out")),
            seed: o.seed.unwrap_or(0),
            repetitions: o.repetitions.unwrap_or(5),
            max_error: o.max_error.unwrap_or(5.0),
            instant_max: o.instant_max.unwrap_or(false),
            rank_tol: o.rank_tol.unwrap_or(0.1),
            max_rank: o.max_rank.unwrap_or(40),
            sweep_levels: o.sweep_levels.unwrap_or_else(|| level_grid(0.8, 1.2, 0.05)),
            max_fault: o.max_fault.unwrap_or(2.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("load-level", self.load_level),
            ("angle-threshold", self.angle_threshold),
            ("load-swap", self.load_swap),
            ("max-fault", self.max_fault),
            ("rank-tol", self.rank_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || (!v.is_finite() && name != "rank-tol") {
                return Err(Error::invalid(format!("--{name} must be positive, got {v}")));
            }
        }
        if !(self.norm_threshold >= 0.0) {
            return Err(Error::invalid("--norm-threshold must be non-negative"));
        }
        if !(self.max_error >= 0.0) {
            return Err(Error::invalid("--max-error must be non-negative"));
        }
        if self.levels.is_empty() || self.levels.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::invalid("--levels must be a non-empty list of positive load levels"));
        }
        if self.sweep_levels.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::invalid("--sweep-levels must be positive"));
        }
        if !(0.0 <= self.t_on && self.t_on <= self.t_clear && self.t_clear <= self.t_end) {
            return Err(Error::invalid("times must satisfy 0 <= t-on <= t-clear <= t-end"));
        }
        if self.command == "compare" && self.repetitions < 5 {
            return Err(Error::invalid("--repetitions must be at least 5"));
        }
        Ok(())
    }

    fn cp_options(&self) -> CpOptions {
        CpOptions {
            seed: self.seed,
            ..CpOptions::default()
        }
    }

    fn timing(&self) -> Timing {
        Timing {
            t_on: self.t_on,
            horizon: self.t_end - self.t_on,
            dt: self.dt,
        }
    }
}

fn read_system(spec: &str) -> Result<SystemData> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        if name == "wscc9" {
            return Ok(wscc9());
        }
        if let Some(n) = name.strip_prefix("ring").and_then(|n| n.parse::<usize>().ok()) {
            if n < 4 {
                return Err(Error::invalid("builtin ring needs at least 4 machines"));
            }
            return Ok(ring_system(n, 3.min(n - 1)));
        }
        return Err(Error::invalid(format!("unknown builtin system '{name}'")));
    }
    load_system(spec)
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

struct Context {
    cfg: RunConfig,
    data: SystemData,
    hash: String,
    provenance: Provenance,
    loaded_models: Option<ModelSet>,
}

impl Context {
    fn new(cfg: RunConfig) -> Result<Self> {
        let data = read_system(&cfg.system)?;
        let loaded_models = match &cfg.models {
            Some(p) => Some(ModelSet::load(p)?),
            None => None,
        };
        let cfg_json = serde_json::to_string(&cfg).expect("config serializes");
        let models_json = loaded_models.as_ref().map(|m| m.to_json()).unwrap_or_default();
        let full_hash = sha256_hex(&[
            cfg_json.as_bytes(),
            data.to_json().as_bytes(),
            models_json.as_bytes(),
            env!("CARGO_PKG_VERSION").as_bytes(),
        ]);
        let hash = full_hash[..16].to_string();
        let name = if data.name.is_empty() { cfg.system.clone() } else { data.name.clone() };
        let provenance = Provenance::new(hash.clone(), cfg.seed, name);
        Ok(Context {
            cfg,
            data,
            hash,
            provenance,
            loaded_models,
        })
    }

    fn system(&self, level: f64) -> Result<SystemModel> {
        SystemModel::build(self.data.clone(), level)
    }

    fn policy(&self, sys: &SystemModel, mode: Mode, levels: &[f64]) -> SwitchPolicy {
        let mut p = SwitchPolicy::new(sys, mode, self.cfg.norm_threshold, levels);
        p.angle_threshold_deg = self.cfg.angle_threshold;
        p.load_change_fraction = self.cfg.load_swap;
        p
    }

    fn fault_bus(&self) -> Result<u32> {
        if let Some(&b) = self.cfg.fault_bus.first() {
            return Ok(b);
        }
        let id = self
            .data
            .areas
            .study
            .first()
            .ok_or_else(|| Error::invalid("study area is empty"))?;
        let k = self.data.machine_index(*id).expect("validated study id");
        Ok(self.data.machines[k].bus)
    }

    fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario::fault(
            self.fault_bus()?,
            self.cfg.t_on,
            self.cfg.t_clear,
            self.cfg.t_end,
            self.cfg.dt,
        ))
    }

    /// Models from `--models`, or built at `--levels` with `--ranks`.
    fn models(&self) -> Result<(ModelSet, Option<RankSearch>)> {
        if let Some(m) = &self.loaded_models {
            return Ok((m.clone(), None));
        }
        let opts = self.cfg.cp_options();
        let levels = &self.cfg.levels;
        let (ranks, search) = match self.cfg.ranks {
            RankSpec::Full => (Ranks::Full, None),
            RankSpec::Fixed(a, b) => (Ranks::Fixed(a, b), None),
            RankSpec::Auto => {
                let search = self.rank_search()?;
                (Ranks::Fixed(search.r2, search.r3), Some(search))
            }
        };
        let models = build_model_set(&self.data, levels, ranks, &opts)?;
        Ok((ModelSet::new(self.provenance.system.clone(), self.hash.clone(), models), search))
    }

    /// Rank search on the model at the representative level nearest 1.0.
    fn rank_search(&self) -> Result<RankSearch> {
        let base = self
            .cfg
            .levels
            .iter()
            .copied()
            .min_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()))
            .expect("levels validated non-empty");
        let sys = self.system(base)?;
        let opts = self.cfg.cp_options();
        let model = crate::taylor::build_model(&sys, Ranks::Fixed(1, 1), &opts)?;
        let policy = self.policy(&sys, Mode::Adaptive, &[base]);
        system_rank_search(
            &sys,
            &model,
            &self.scenario()?,
            &policy,
            1,
            self.cfg.rank_tol,
            self.cfg.max_rank,
            &opts,
        )
    }

    fn path(&self, stem: &str, ext: &str) -> PathBuf {
        self.cfg.out.join(format!("{stem}-{}.{ext}", self.hash))
    }

    fn write(&self, stem: &str, ext: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.cfg.out).map_err(|e| Error::io(&self.cfg.out, e))?;
        let path = self.path(stem, ext);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn report(&self, sys: &SystemModel) -> StudyReport {
        StudyReport::new(self.provenance.clone(), self.cfg.command.clone(), sys)
    }
}

/// Runs the command line `args` (including the program name) and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            let msg = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{msg}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    let (name, opts) = cli.command.parts();
    let ctx = Context::new(RunConfig::resolve(name, opts)?)?;
    match name {
        "build" => build(&ctx),
        "simulate" => simulate(&ctx),
        "cct" => cct(&ctx),
        "rank-search" => rank_search(&ctx),
        "threshold-search" => threshold(&ctx),
        "sweep" => sweep(&ctx),
        "compare" => compare(&ctx),
        _ => unreachable!("every subcommand is dispatched"),
    }
}

fn build(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (models, search) = ctx.models()?;
    let sys = ctx.system(1.0)?;
    let mut report = ctx.report(&sys);
    report.fits = models.models.iter().map(|m| (m.load_level, m.fit)).collect();
    report.ranks = models.models.first().map(|m| m.ranks);
    report.rank_search = search;
    Ok(vec![
        ctx.write("models", "json", &models.to_json())?,
        ctx.write("build", "json", &report.to_json())?,
    ])
}

fn simulate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (models, _) = ctx.models()?;
    let sys = ctx.system(ctx.cfg.load_level)?;
    let scenario = if ctx.cfg.fault_bus.is_empty() {
        Scenario::quiet(ctx.cfg.t_end, ctx.cfg.dt)
    } else {
        ctx.scenario()?
    };
    let policy = ctx.policy(&sys, ctx.cfg.mode, &models.levels());
    let traj = run_adaptive(&sys, &models, &scenario, &policy)?;
    let mut full_policy = policy.clone();
    full_policy.mode = Mode::ForceFull;
    let full = run_adaptive(&sys, &models, &scenario, &full_policy)?;

    let meta = serde_json::to_value(&ctx.provenance).expect("provenance serializes");
    let mut report = ctx.report(&sys);
    report.errors = vec![mode_error(&sys, &traj, &full, &policy, ErrorMetric::Rms)?];
    report.scenario = Some(scenario);
    report.policy = Some(policy);
    report.ranks = models.models.first().map(|m| m.ranks);
    Ok(vec![
        ctx.write("trajectory", "csv", &traj.to_csv(&sys.state_names(), &ctx.provenance.header()))?,
        ctx.write("switches", "jsonl", &traj.switch_log_jsonl(Some(&meta)))?,
        ctx.write("simulate", "json", &report.to_json())?,
    ])
}

fn mode_error(
    sys: &SystemModel,
    run: &crate::sim::Trajectory,
    full: &crate::sim::Trajectory,
    policy: &SwitchPolicy,
    metric: ErrorMetric,
) -> Result<ModeError> {
    let ok = !run.diverged && run.len() == full.len();
    let rms = if ok {
        crate::study::rms_error(run, full, sys.study(), policy.reference)?
    } else {
        vec![f64::INFINITY; sys.study().len()]
    };
    Ok(ModeError {
        mode: policy.mode,
        diverged: run.diverged,
        max_rms: study_error(sys, run, full, policy.reference, metric)?,
        rms,
    })
}

fn generator_buses(data: &SystemData) -> Vec<u32> {
    let mut b: Vec<u32> = data.machines.iter().map(|m| m.bus).collect();
    b.sort_unstable();
    b.dedup();
    b
}

fn cct(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (models, _) = ctx.models()?;
    let sys = ctx.system(ctx.cfg.load_level)?;
    let buses = if ctx.cfg.fault_bus.is_empty() {
        generator_buses(&ctx.data)
    } else {
        ctx.cfg.fault_bus.clone()
    };
    let mut modes = vec![Mode::ForceFull];
    if ctx.cfg.mode != Mode::ForceFull {
        modes.push(ctx.cfg.mode);
    }
    let mut report = ctx.report(&sys);
    let mut csv = format!("# {}\nbus,mode,cct_s,confirmed\n", ctx.provenance.header());
    for &bus in &buses {
        for &mode in &modes {
            let policy = ctx.policy(&sys, mode, &models.levels());
            let r = cct_search(&sys, &models, &policy, bus, &ctx.cfg.timing(), ctx.cfg.max_fault)?;
            let c = r.cct.map_or(String::from("none"), |c| format!("{c}"));
            csv.push_str(&format!("{bus},{},{c},{}\n", mode.name(), r.confirmed));
            report.cct.push(r);
        }
    }
    report.ranks = models.models.first().map(|m| m.ranks);
    Ok(vec![ctx.write("cct", "csv", &csv)?, ctx.write("cct", "json", &report.to_json())?])
}

fn rank_search(ctx: &Context) -> Result<Vec<PathBuf>> {
    let search = ctx.rank_search()?;
    let sys = ctx.system(1.0)?;
    let mut csv = format!("# {}\nr2,r3,max_rms_deg\n", ctx.provenance.header());
    for p in &search.evaluated {
        csv.push_str(&format!("{},{},{}\n", p.r2, p.r3, p.metric));
    }
    let mut report = ctx.report(&sys);
    report.scenario = Some(ctx.scenario()?);
    report.ranks = Some([search.r2, search.r3]);
    report.rank_search = Some(search);
    Ok(vec![
        ctx.write("rank-search", "csv", &csv)?,
        ctx.write("rank-search", "json", &report.to_json())?,
    ])
}

fn threshold(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (models, _) = ctx.models()?;
    let sys = ctx.system(ctx.cfg.load_level)?;
    let scenario = ctx.scenario()?;
    let base = ctx.policy(&sys, Mode::Adaptive, &models.levels());
    let mut full_policy = base.clone();
    full_policy.mode = Mode::ForceFull;
    let full = run_adaptive(&sys, &models, &scenario, &full_policy)?;
    let metric = if ctx.cfg.instant_max {
        ErrorMetric::InstantMax
    } else {
        ErrorMetric::Rms
    };
    let search = threshold_search(1.0, 1.0, 180.0, ctx.cfg.max_error, |thr| {
        let mut p = base.clone();
        p.angle_threshold_deg = thr;
        let run = run_adaptive(&sys, &models, &scenario, &p)?;
        study_error(&sys, &run, &full, p.reference, metric)
    })?;
    let mut csv = format!("# {}\nthreshold_deg,error_deg\n", ctx.provenance.header());
    for (t, e) in &search.curve {
        csv.push_str(&format!("{t},{e}\n"));
    }
    if let Some(d) = &search.diagnostic {
        eprintln!("{d}");
    }
    let mut report = ctx.report(&sys);
    report.scenario = Some(scenario);
    report.policy = Some(base);
    report.ranks = models.models.first().map(|m| m.ranks);
    report.threshold_search = Some(search);
    Ok(vec![
        ctx.write("threshold-search", "csv", &csv)?,
        ctx.write("threshold-search", "json", &report.to_json())?,
    ])
}

fn sweep(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (models, _) = ctx.models()?;
    let sys = ctx.system(1.0)?;
    let policy = ctx.policy(&sys, ctx.cfg.mode, &models.levels());
    let bus = ctx.fault_bus()?;
    let result = load_sweep(
        &ctx.data,
        &models,
        &policy,
        &ctx.cfg.sweep_levels,
        bus,
        &ctx.cfg.timing(),
        ctx.cfg.max_fault,
    )?;
    for (level, why) in &result.skipped {
        eprintln!("load level {level} skipped: {why}");
    }
    let mut report = ctx.report(&sys);
    let table = sweep_table(&result, &report.study_generators, &ctx.provenance.header());
    report.policy = Some(policy);
    report.ranks = models.models.first().map(|m| m.ranks);
    report.sweep = Some(result);
    Ok(vec![
        ctx.write("table2", "csv", &table)?,
        ctx.write("sweep", "json", &report.to_json())?,
    ])
}

fn compare(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (models, _) = ctx.models()?;
    let sys = ctx.system(ctx.cfg.load_level)?;
    let scenario = ctx.scenario()?;
    let policy = ctx.policy(&sys, Mode::Adaptive, &models.levels());
    let mut full_policy = policy.clone();
    full_policy.mode = Mode::ForceFull;
    let full = run_adaptive(&sys, &models, &scenario, &full_policy)?;
    let mut report = ctx.report(&sys);
    for mode in Mode::ALL {
        let mut p = policy.clone();
        p.mode = mode;
        let run = run_adaptive(&sys, &models, &scenario, &p)?;
        report.errors.push(mode_error(&sys, &run, &full, &p, ErrorMetric::Rms)?);
    }
    let flops = flop_counts(&sys, &models, &policy)?;
    let rows = timing_compare(&sys, &models, &scenario, &policy, &Mode::ALL, ctx.cfg.repetitions)?;
    let table = timing_table(&rows, &flops, &ctx.provenance.header());
    report.flops = Some(flops);
    report.scenario = Some(scenario);
    report.policy = Some(policy);
    report.ranks = models.models.first().map(|m| m.ranks);
    Ok(vec![
        ctx.write("compare", "json", &report.to_json())?,
        ctx.write("table1", "csv", &table)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_spec_parsing() {
        assert_eq!("auto".parse::<RankSpec>().unwrap(), RankSpec::Auto);
        assert_eq!("full".parse::<RankSpec>().unwrap(), RankSpec::Full);
        assert_eq!("5,7".parse::<RankSpec>().unwrap(), RankSpec::Fixed(5, 7));
        assert!("0,3".parse::<RankSpec>().is_err());
        assert!("5".parse::<RankSpec>().is_err());
        assert_eq!(RankSpec::Fixed(2, 3).to_string(), "2,3");
    }

    #[test]
    fn flags_override_config_file() {
        let mut flags = Options {
            dt: Some(0.005),
            ..Options::default()
        };
        let file: Options = serde_json::from_str(r#"{"system": "builtin:wscc9", "dt": 0.02, "seed": 9}"#).unwrap();
        flags.overlay(&file);
        let cfg = RunConfig::resolve("simulate", flags).unwrap();
        assert_eq!(cfg.dt, 0.005);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.t_end, 16.0);
    }

    #[test]
    fn missing_system_is_a_config_error() {
        let e = RunConfig::resolve("simulate", Options::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
