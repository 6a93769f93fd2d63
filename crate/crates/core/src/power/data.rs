//! System file schema and validation.
//!
//! The system file is JSON:
//!
//! ```text
//! {
//!   "name": "wscc9",                      (optional)
//!   "base_mva": 100.0,
//!   "frequency_hz": 60.0,                 (optional, default 60)
//!   "buses":    [{"id", "type": "slack"|"pv"|"pq", "v_set", "p_gen",
//!                 "p_load", "q_load", "g_shunt", "b_shunt"}],
//!   "branches": [{"from", "to", "r", "x", "b", "tap"}],
//!   "machines": [{"id", "bus", "h", "d", "xd", "xq", "xd_prime", "xq_prime",
//!                 "td0_prime", "tq0_prime", "ka", "ta", "ke", "te", "kf",
//!                 "tf", "a_ex", "b_ex", "r", "tg", "tch"}],
//!   "areas": {"study": [machine ids], "external": [machine ids]}
//! }
//! ```
//!
//! Powers, voltages and impedances are per unit on `base_mva`; `h` and all
//! time constants are in seconds. `b` is the total line charging, `tap` the
//! off-nominal ratio on the `from` side. A slack bus without a machine is an
//! infinite bus.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

fn one() -> f64 {
    1.0
}

fn sixty() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusData {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: BusKind,
    #[serde(default = "one")]
    pub v_set: f64,
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchData {
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "one")]
    pub tap: f64,
}

/// Two-axis machine with IEEE type-1 exciter, first-order governor and
/// non-reheat turbine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineParams {
    pub id: u32,
    pub bus: u32,
    pub h: f64,
    #[serde(default)]
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_prime: f64,
    pub xq_prime: f64,
    pub td0_prime: f64,
    pub tq0_prime: f64,
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub a_ex: f64,
    pub b_ex: f64,
    pub r: f64,
    pub tg: f64,
    pub tch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Areas {
    pub study: Vec<u32>,
    pub external: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemData {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    #[serde(default = "sixty")]
    pub frequency_hz: f64,
    pub buses: Vec<BusData>,
    pub branches: Vec<BranchData>,
    pub machines: Vec<MachineParams>,
    pub areas: Areas,
}

impl SystemData {
    pub fn from_json(text: &str) -> Result<Self> {
        let data: SystemData = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        data.validate()?;
        Ok(data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system data serializes")
    }

    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Position of a machine id in `machines`.
    pub fn machine_index(&self, id: u32) -> Option<usize> {
        self.machines.iter().position(|m| m.id == id)
    }

    pub fn study_indices(&self) -> Vec<usize> {
        self.areas
            .study
            .iter()
            .filter_map(|&id| self.machine_index(id))
            .collect()
    }

    pub fn external_indices(&self) -> Vec<usize> {
        self.areas
            .external
            .iter()
            .filter_map(|&id| self.machine_index(id))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::schema("base_mva", "must be positive"));
        }
        if !(self.frequency_hz > 0.0) {
            return Err(Error::schema("frequency_hz", "must be positive"));
        }
        if self.buses.is_empty() {
            return Err(Error::schema("buses", "at least one bus required"));
        }
        let mut ids = HashSet::new();
        for (i, b) in self.buses.iter().enumerate() {
            if !ids.insert(b.id) {
                return Err(Error::schema(
                    format!("buses[{i}].id"),
                    format!("duplicate bus id {}", b.id),
                ));
            }
            if !(b.v_set > 0.0) {
                return Err(Error::schema(format!("buses[{i}].v_set"), "must be positive"));
            }
        }
        let slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack != 1 {
            return Err(Error::schema("buses", format!("exactly one slack bus required, found {slack}")));
        }
        for (i, br) in self.branches.iter().enumerate() {
            for (field, id) in [("from", br.from), ("to", br.to)] {
                if !ids.contains(&id) {
                    return Err(Error::schema(
                        format!("branches[{i}].{field}"),
                        format!("unknown bus {id}"),
                    ));
                }
            }
            if br.from == br.to {
                return Err(Error::schema(format!("branches[{i}]"), "self loop"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::schema(format!("branches[{i}]"), "zero impedance"));
            }
            if !(br.tap > 0.0) {
                return Err(Error::schema(format!("branches[{i}].tap"), "must be positive"));
            }
        }
        if self.machines.is_empty() {
            return Err(Error::schema("machines", "at least one machine required"));
        }
        let mut machine_ids = HashSet::new();
        let mut machine_buses: HashMap<u32, u32> = HashMap::new();
        for (i, m) in self.machines.iter().enumerate() {
            let at = |f: &str| format!("machines[{i}].{f}");
            if !machine_ids.insert(m.id) {
                return Err(Error::schema(at("id"), format!("duplicate machine id {}", m.id)));
            }
            let Some(bi) = self.bus_index(m.bus) else {
                return Err(Error::schema(at("bus"), format!("unknown bus {}", m.bus)));
            };
            if self.buses[bi].kind == BusKind::Pq {
                return Err(Error::schema(at("bus"), format!("bus {} is a PQ bus", m.bus)));
            }
            if let Some(other) = machine_buses.insert(m.bus, m.id) {
                return Err(Error::schema(
                    at("bus"),
                    format!("bus {} already hosts machine {other}", m.bus),
                ));
            }
            for (name, v) in [
                ("h", m.h),
                ("td0_prime", m.td0_prime),
                ("tq0_prime", m.tq0_prime),
                ("ta", m.ta),
                ("te", m.te),
                ("tf", m.tf),
                ("tg", m.tg),
                ("tch", m.tch),
                ("r", m.r),
                ("xd_prime", m.xd_prime),
                ("xq_prime", m.xq_prime),
            ] {
                if !(v > 0.0) {
                    return Err(Error::schema(at(name), "must be positive"));
                }
            }
            if m.xd_prime > m.xd {
                return Err(Error::schema(at("xd_prime"), "must not exceed xd"));
            }
            if m.xq_prime > m.xq {
                return Err(Error::schema(at("xq_prime"), "must not exceed xq"));
            }
        }
        for (i, b) in self.buses.iter().enumerate() {
            if b.kind == BusKind::Pv && !machine_buses.contains_key(&b.id) {
                return Err(Error::schema(format!("buses[{i}]"), "PV bus without a machine"));
            }
        }
        let mut seen = HashSet::new();
        for (field, list) in [("areas.study", &self.areas.study), ("areas.external", &self.areas.external)] {
            for id in list {
                if !machine_ids.contains(id) {
                    return Err(Error::schema(field, format!("unknown machine {id}")));
                }
                if !seen.insert(*id) {
                    return Err(Error::schema(field, format!("machine {id} listed twice")));
                }
            }
        }
        if seen.len() != machine_ids.len() {
            return Err(Error::schema("areas", "study and external areas must cover every machine"));
        }
        if self.areas.study.is_empty() {
            return Err(Error::schema("areas.study", "study area is empty"));
        }
        Ok(())
    }
}

/// Reads and validates a system file. No power flow is solved here.
pub fn load_system(path: impl AsRef<Path>) -> Result<SystemData> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SystemData::from_json(&text)
}

/// The bundled WSCC-style 9-bus, 3-machine test case.
pub fn wscc9() -> SystemData {
    SystemData::from_json(WSCC9_JSON).expect("bundled fixture is valid")
}

pub const WSCC9_JSON: &str = include_str!("../../data/wscc9.json");
