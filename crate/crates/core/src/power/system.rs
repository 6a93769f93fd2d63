//! The full nonlinear multi-machine model.
//!
//! Each machine contributes nine states, in this order:
//! `δ` (rad), `ω` (pu), `E'q`, `E'd`, `Efd`, `VR`, `RF`, `Pm`, `Pgv` (pu).
//!
//! ```text
//! δ̇      = ωs (ω − 1)
//! 2H ω̇   = Pm − Pe − D (ω − 1)
//! T'd0 Ė'q = −E'q − (Xd − X'd) Id + Efd
//! T'q0 Ė'd = −E'd + (Xq − X'q) Iq
//! TE Ėfd  = −(KE + SE(Efd)) Efd + VR,      SE(Efd) = A_ex exp(B_ex Efd)
//! TA V̇R   = −VR + KA RF − (KA KF / TF) Efd + KA (Vref − Vt)
//! TF ṘF   = −RF + (KF / TF) Efd
//! TCH Ṗm  = −Pm + Pgv
//! TG Ṗgv  = −Pgv + Pref − (ω − 1) / R
//! ```
//!
//! The machines see the network through the Kron-reduced admittance matrix
//! over their internal nodes. The internal node voltage is
//! `E = (E'd + j E'q) e^{j(δ − π/2)}` behind `j X'd` in both axes.

use std::borrow::Cow;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::data::{BusKind, SystemData};
use super::network::{build_ybus, eliminate, kron_reduce, solve_power_flow, PowerFlowSolution};
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};

pub const STATES_PER_MACHINE: usize = 9;

pub const DELTA: usize = 0;
pub const OMEGA: usize = 1;
pub const EQ: usize = 2;
pub const ED: usize = 3;
pub const EFD: usize = 4;
pub const VR: usize = 5;
pub const RF: usize = 6;
pub const PM: usize = 7;
pub const PGV: usize = 8;

pub const STATE_NAMES: [&str; STATES_PER_MACHINE] =
    ["delta", "omega", "eq_prime", "ed_prime", "efd", "vr", "rf", "pm", "pgv"];

/// Per-machine states that enter the right-hand side nonlinearly.
pub const NONLINEAR_SLOTS: [usize; 4] = [DELTA, EQ, ED, EFD];

/// Per-machine equations that are nonlinear in the state.
pub const NONLINEAR_ROWS: [usize; 5] = [OMEGA, EQ, ED, EFD, VR];

/// Shunt admittance used for a bolted three-phase bus fault.
pub const FAULT_ADMITTANCE: f64 = 1e6;

/// Per-machine work outside the network sum: axis rotation, electrical
/// power, terminal voltage and the nine state equations.
const RHS_LOCAL_FLOPS: usize = 64;

/// Tolerance on `‖f(x0)‖∞` after initialization.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub vref: f64,
    pub pref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetCondition {
    Prefault,
    Fault(u32),
    Postfault,
}

/// Reduced admittance over machine internal nodes plus the constant current
/// injected by any infinite buses.
#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    n: usize,
    g: Vec<f64>,
    b: Vec<f64>,
    source: Vec<Complex64>,
    matrix: DMatrix<Complex64>,
}

impl ReducedNetwork {
    fn new(matrix: DMatrix<Complex64>, source: Vec<Complex64>) -> Self {
        let n = matrix.nrows();
        let mut g = Vec::with_capacity(n * n);
        let mut b = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                g.push(matrix[(i, k)].re);
                b.push(matrix[(i, k)].im);
            }
        }
        ReducedNetwork {
            n,
            g,
            b,
            source,
            matrix,
        }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn source_currents(&self) -> &[Complex64] {
        &self.source
    }
}

/// Network quantities seen by one machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineOutputs {
    pub id: f64,
    pub iq: f64,
    pub pe: f64,
    pub vt: f64,
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    data: SystemData,
    load_level: f64,
    power_flow: PowerFlowSolution,
    setpoints: Vec<Setpoint>,
    x0: Vec<f64>,
    augmented: DMatrix<Complex64>,
    keep: Vec<usize>,
    infinite_voltages: Vec<Complex64>,
    prefault: ReducedNetwork,
    omega_s: f64,
    study: Vec<usize>,
    external: Vec<usize>,
}

impl SystemModel {
    /// Solves the power flow at `load_level` and initializes the equilibrium.
    pub fn build(data: SystemData, load_level: f64) -> Result<Self> {
        let pf = solve_power_flow(&data, load_level)?;
        Self::init_equilibrium(data, pf)
    }

    /// Back-solves machine states from a converged power flow.
    ///
    /// Rotor angle and transient EMFs come from the terminal conditions; the
    /// exciter, governor and turbine states and the `Vref`/`Pref` setpoints
    /// are then set from the currents the reduced network actually delivers,
    /// so the resulting state is an equilibrium of [`SystemModel::f_full`].
    pub fn init_equilibrium(data: SystemData, pf: PowerFlowSolution) -> Result<Self> {
        data.validate()?;
        let nb = data.buses.len();
        let ng = data.machines.len();
        let mut augmented = build_ybus(&data);
        augmented = augmented.resize(nb + ng, nb + ng, Complex64::new(0.0, 0.0));
        for (i, load) in pf.loads.iter().enumerate() {
            let vm2 = pf.voltages[i].norm_sqr();
            augmented[(i, i)] += load.conj() / vm2;
        }
        for (k, m) in data.machines.iter().enumerate() {
            let bus = data.bus_index(m.bus).expect("validated");
            let y = Complex64::new(1.0, 0.0) / Complex64::new(0.0, m.xd_prime);
            let node = nb + k;
            augmented[(node, node)] += y;
            augmented[(bus, bus)] += y;
            augmented[(node, bus)] -= y;
            augmented[(bus, node)] -= y;
        }
        let mut keep: Vec<usize> = (nb..nb + ng).collect();
        let mut infinite_voltages = Vec::new();
        for (i, b) in data.buses.iter().enumerate() {
            if b.kind == BusKind::Slack && !data.machines.iter().any(|m| m.bus == b.id) {
                keep.push(i);
                infinite_voltages.push(pf.voltages[i]);
            }
        }
        let prefault = reduce(&augmented, &keep, ng, &infinite_voltages)?;

        let mut x0 = vec![0.0; ng * STATES_PER_MACHINE];
        for (k, m) in data.machines.iter().enumerate() {
            let bus = data.bus_index(m.bus).expect("validated");
            let v = pf.voltages[bus];
            let i = (pf.generation[bus] / v).conj();
            let xeff = m.xq - m.xq_prime + m.xd_prime;
            let delta = (v + Complex64::new(0.0, xeff) * i).arg();
            let rot = Complex64::new(delta.sin(), delta.cos());
            let idq = i * rot;
            let vdq = v * rot;
            let base = k * STATES_PER_MACHINE;
            x0[base + DELTA] = delta;
            x0[base + OMEGA] = 1.0;
            x0[base + ED] = vdq.re - m.xd_prime * idq.im;
            x0[base + EQ] = vdq.im + m.xd_prime * idq.re;
        }

        let omega_s = 2.0 * std::f64::consts::PI * data.frequency_hz;
        let study = data.study_indices();
        let external = data.external_indices();
        let mut model = SystemModel {
            load_level: pf.load_level,
            data,
            power_flow: pf,
            setpoints: vec![Setpoint { vref: 0.0, pref: 0.0 }; ng],
            x0,
            augmented,
            keep,
            infinite_voltages,
            prefault,
            omega_s,
            study,
            external,
        };

        let outputs = model.machine_outputs(&model.x0, &model.prefault);
        for (k, m) in model.data.machines.iter().enumerate() {
            let base = k * STATES_PER_MACHINE;
            let out = outputs[k];
            let efd = model.x0[base + EQ] + (m.xd - m.xd_prime) * out.id;
            let vr = (m.ke + m.a_ex * (m.b_ex * efd).exp()) * efd;
            model.x0[base + EFD] = efd;
            model.x0[base + VR] = vr;
            model.x0[base + RF] = m.kf / m.tf * efd;
            model.x0[base + PM] = out.pe;
            model.x0[base + PGV] = out.pe;
            model.setpoints[k] = Setpoint {
                vref: out.vt + vr / m.ka,
                pref: out.pe,
            };
        }
        model.check_equilibrium(EQUILIBRIUM_TOLERANCE)?;
        Ok(model)
    }

    pub fn data(&self) -> &SystemData {
        &self.data
    }

    pub fn load_level(&self) -> f64 {
        self.load_level
    }

    pub fn power_flow(&self) -> &PowerFlowSolution {
        &self.power_flow
    }

    pub fn setpoints(&self) -> &[Setpoint] {
        &self.setpoints
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn n_machines(&self) -> usize {
        self.data.machines.len()
    }

    pub fn n_states(&self) -> usize {
        self.x0.len()
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    /// Machine indices (positions in `data().machines`) of the study area.
    pub fn study(&self) -> &[usize] {
        &self.study
    }

    pub fn external(&self) -> &[usize] {
        &self.external
    }

    pub fn prefault_network(&self) -> &ReducedNetwork {
        &self.prefault
    }

    /// Reduced network for a network condition. The fault is self-clearing,
    /// so the post-fault network is the pre-fault one.
    pub fn network(&self, cond: NetCondition) -> Result<Cow<'_, ReducedNetwork>> {
        match cond {
            NetCondition::Prefault | NetCondition::Postfault => Ok(Cow::Borrowed(&self.prefault)),
            NetCondition::Fault(bus) => Ok(Cow::Owned(self.faulted_network(bus)?)),
        }
    }

    /// Reduced network with a bolted three-phase fault at `bus`.
    pub fn faulted_network(&self, bus: u32) -> Result<ReducedNetwork> {
        let idx = self
            .data
            .bus_index(bus)
            .ok_or_else(|| Error::invalid(format!("unknown fault bus {bus}")))?;
        if self.keep.contains(&idx) {
            return Err(Error::invalid(format!("bus {bus} is an infinite bus")));
        }
        let mut y = self.augmented.clone();
        y[(idx, idx)] += Complex64::new(FAULT_ADMITTANCE, 0.0);
        reduce(&y, &self.keep, self.n_machines(), &self.infinite_voltages)
    }

    /// Internal node voltages `E_k` for state `x`.
    pub fn internal_voltages(&self, x: &[f64]) -> Vec<Complex64> {
        (0..self.n_machines())
            .map(|k| {
                let base = k * STATES_PER_MACHINE;
                let (s, c) = x[base + DELTA].sin_cos();
                let ed = x[base + ED];
                let eq = x[base + EQ];
                Complex64::new(ed * s + eq * c, eq * s - ed * c)
            })
            .collect()
    }

    /// Network bus voltages reconstructed from the internal voltages.
    pub fn bus_voltages(&self, x: &[f64], cond: NetCondition) -> Result<Vec<Complex64>> {
        let mut y = self.augmented.clone();
        if let NetCondition::Fault(bus) = cond {
            let idx = self
                .data
                .bus_index(bus)
                .ok_or_else(|| Error::invalid(format!("unknown fault bus {bus}")))?;
            y[(idx, idx)] += Complex64::new(FAULT_ADMITTANCE, 0.0);
        }
        let n = y.nrows();
        let elim: Vec<usize> = (0..n).filter(|i| !self.keep.contains(i)).collect();
        let mut kept_v = self.internal_voltages(x);
        kept_v.extend(self.infinite_voltages.iter().copied());
        let yee = DMatrix::from_fn(elim.len(), elim.len(), |i, j| y[(elim[i], elim[j])]);
        let yek = DMatrix::from_fn(elim.len(), self.keep.len(), |i, j| y[(elim[i], self.keep[j])]);
        let vk = DMatrix::from_column_slice(kept_v.len(), 1, &kept_v);
        let ve = -eliminate(&yee, &(yek * vk))?;
        let mut v = vec![Complex64::new(0.0, 0.0); self.data.buses.len()];
        for (j, &node) in elim.iter().enumerate() {
            if node < v.len() {
                v[node] = ve[(j, 0)];
            }
        }
        for (j, &node) in self.keep.iter().enumerate() {
            if node < v.len() {
                v[node] = kept_v[j];
            }
        }
        Ok(v)
    }

    /// Stator currents in machine axes, electrical power and terminal voltage.
    pub fn machine_outputs(&self, x: &[f64], net: &ReducedNetwork) -> Vec<MachineOutputs> {
        let all: Vec<usize> = (0..self.n_machines()).collect();
        let mut out = Vec::with_capacity(all.len());
        let e = self.internal_voltages(x);
        for &i in &all {
            out.push(self.outputs_for(i, x, &e, net));
        }
        out
    }

    fn outputs_for(&self, i: usize, x: &[f64], e: &[Complex64], net: &ReducedNetwork) -> MachineOutputs {
        let n = net.n;
        let row_g = &net.g[i * n..(i + 1) * n];
        let row_b = &net.b[i * n..(i + 1) * n];
        let mut ir = net.source[i].re;
        let mut ii = net.source[i].im;
        for k in 0..n {
            let (er, ei) = (e[k].re, e[k].im);
            ir += row_g[k] * er - row_b[k] * ei;
            ii += row_g[k] * ei + row_b[k] * er;
        }
        let base = i * STATES_PER_MACHINE;
        let (s, c) = x[base + DELTA].sin_cos();
        let id = ir * s - ii * c;
        let iq = ir * c + ii * s;
        let pe = x[base + ED] * id + x[base + EQ] * iq;
        let xdp = self.data.machines[i].xd_prime;
        let vr = e[i].re + xdp * ii;
        let vi = e[i].im - xdp * ir;
        MachineOutputs {
            id,
            iq,
            pe,
            vt: vr.hypot(vi),
        }
    }

    /// Full right-hand side `f(x)` on the given network.
    pub fn f_full(&self, x: &[f64], net: &ReducedNetwork, out: &mut [f64]) {
        let e = self.internal_voltages(x);
        for i in 0..self.n_machines() {
            self.machine_rhs(i, x, &e, net, out);
        }
    }

    /// Right-hand side rows of the listed machines only; other rows of `out`
    /// are left untouched. Row values are bit-identical to [`Self::f_full`].
    pub fn f_rows(&self, x: &[f64], net: &ReducedNetwork, machines: &[usize], out: &mut [f64]) {
        let e = self.internal_voltages(x);
        for &i in machines {
            self.machine_rhs(i, x, &e, net, out);
        }
    }

    fn machine_rhs(&self, i: usize, x: &[f64], e: &[Complex64], net: &ReducedNetwork, out: &mut [f64]) {
        let m = &self.data.machines[i];
        let sp = self.setpoints[i];
        let o = self.outputs_for(i, x, e, net);
        let base = i * STATES_PER_MACHINE;
        let s = &x[base..base + STATES_PER_MACHINE];
        let dw = s[OMEGA] - 1.0;
        let efd = s[EFD];
        let se = m.a_ex * (m.b_ex * efd).exp();
        let d = &mut out[base..base + STATES_PER_MACHINE];
        d[DELTA] = self.omega_s * dw;
        d[OMEGA] = (s[PM] - o.pe - m.d * dw) / (2.0 * m.h);
        d[EQ] = (-s[EQ] - (m.xd - m.xd_prime) * o.id + efd) / m.td0_prime;
        d[ED] = (-s[ED] + (m.xq - m.xq_prime) * o.iq) / m.tq0_prime;
        d[EFD] = (-(m.ke + se) * efd + s[VR]) / m.te;
        d[VR] = (-s[VR] + m.ka * s[RF] - m.ka * m.kf / m.tf * efd + m.ka * (sp.vref - o.vt)) / m.ta;
        d[RF] = (-s[RF] + m.kf / m.tf * efd) / m.tf;
        d[PM] = (-s[PM] + s[PGV]) / m.tch;
        d[PGV] = (-s[PGV] + sp.pref - dw / m.r) / m.tg;
    }

    /// `‖f(x0)‖∞` on the pre-fault network.
    pub fn equilibrium_residual(&self) -> f64 {
        let mut f = vec![0.0; self.n_states()];
        self.f_full(&self.x0, &self.prefault, &mut f);
        f.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn check_equilibrium(&self, tolerance: f64) -> Result<()> {
        let residual = self.equilibrium_residual();
        if residual < tolerance {
            Ok(())
        } else {
            Err(Error::Equilibrium {
                residual,
                tolerance,
            })
        }
    }

    /// For each external machine, the Euclidean norm of its reduced
    /// admittance column restricted to study-area rows. Returned as
    /// `(machine index, norm)` in external-area order.
    pub fn admittance_column_norms(&self) -> Vec<(usize, f64)> {
        column_norms(&self.prefault.matrix, &self.study, &self.external)
    }

    /// Operation count of one right-hand-side evaluation covering the rows
    /// of `machines` machines. Transcendental functions count as one.
    pub fn rhs_flops(&self, machines: usize) -> usize {
        let ng = self.n_machines();
        let sources = if self.infinite_voltages.is_empty() { 0 } else { 2 };
        8 * ng + machines * (8 * ng + sources + RHS_LOCAL_FLOPS)
    }

    /// State indices of every nonlinear slot of every machine.
    pub fn nonlinear_coords(&self) -> Vec<usize> {
        (0..self.n_machines())
            .flat_map(|k| NONLINEAR_SLOTS.iter().map(move |s| k * STATES_PER_MACHINE + s))
            .collect()
    }

    /// State indices of every nonlinear equation of every machine.
    pub fn nonlinear_rows(&self) -> Vec<usize> {
        (0..self.n_machines())
            .flat_map(|k| NONLINEAR_ROWS.iter().map(move |s| k * STATES_PER_MACHINE + s))
            .collect()
    }

    /// Column names in state order: `<name>_<machine id>`.
    pub fn state_names(&self) -> Vec<String> {
        self.data
            .machines
            .iter()
            .flat_map(|m| STATE_NAMES.iter().map(move |s| format!("{s}_{}", m.id)))
            .collect()
    }

    /// Rotor angle of machine `k` in state `x`.
    pub fn delta(x: &[f64], k: usize) -> f64 {
        x[k * STATES_PER_MACHINE + DELTA]
    }

    /// Dynamics view on a fixed network condition.
    pub fn dynamics<'a>(&'a self, net: &'a ReducedNetwork) -> FullDynamics<'a> {
        FullDynamics { sys: self, net }
    }

    #[cfg(test)]
    pub(crate) fn setpoints_mut(&mut self) -> &mut [Setpoint] {
        &mut self.setpoints
    }
}

/// Norm of each `external` column of `y` over the `study` rows.
pub fn column_norms(y: &DMatrix<Complex64>, study: &[usize], external: &[usize]) -> Vec<(usize, f64)> {
    external
        .iter()
        .map(|&j| {
            let norm = study.iter().map(|&i| y[(i, j)].norm_sqr()).sum::<f64>().sqrt();
            (j, norm)
        })
        .collect()
}

fn reduce(
    augmented: &DMatrix<Complex64>,
    keep: &[usize],
    ng: usize,
    infinite_voltages: &[Complex64],
) -> Result<ReducedNetwork> {
    let full = kron_reduce(augmented, keep)?;
    let ygg = full.view((0, 0), (ng, ng)).into_owned();
    let source = (0..ng)
        .map(|i| {
            infinite_voltages
                .iter()
                .enumerate()
                .map(|(s, v)| full[(i, ng + s)] * v)
                .sum()
        })
        .collect();
    Ok(ReducedNetwork::new(ygg, source))
}

pub struct FullDynamics<'a> {
    sys: &'a SystemModel,
    net: &'a ReducedNetwork,
}

impl Dynamics for FullDynamics<'_> {
    fn dim(&self) -> usize {
        self.sys.n_states()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.sys.f_full(x, self.net, out)
    }

    fn nonlinear_coords(&self) -> Option<Vec<usize>> {
        Some(self.sys.nonlinear_coords())
    }

    fn nonlinear_rows(&self) -> Option<Vec<usize>> {
        Some(self.sys.nonlinear_rows())
    }
}
