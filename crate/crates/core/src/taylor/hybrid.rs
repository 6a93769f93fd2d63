//! Hybrid evaluation: nonlinear rows for a machine subset, Taylor rows for
//! the rest, both driven by one full state vector.

use super::model::{Ranks, TaylorModel, TaylorRows};
use crate::cp::CpOptions;
use crate::dynamics::Dynamics;
use crate::error::Result;
use crate::power::data::SystemData;
use crate::power::system::{ReducedNetwork, SystemModel, STATES_PER_MACHINE};

/// `ẋ` rows of `nonlinear` machines from the full model; all other rows from
/// a Taylor model evaluated on `Δx = x − anchor`.
pub struct HybridModel<'a> {
    sys: &'a SystemModel,
    net: &'a ReducedNetwork,
    nonlinear: Vec<usize>,
    taylor: TaylorRows,
    anchor: Vec<f64>,
}

impl<'a> HybridModel<'a> {
    /// `higher = false` gives the linearized variant (A1 rows only).
    pub fn new(
        sys: &'a SystemModel,
        net: &'a ReducedNetwork,
        model: &TaylorModel,
        nonlinear: &[usize],
        anchor: &[f64],
        higher: bool,
    ) -> Self {
        let mut nonlinear = nonlinear.to_vec();
        nonlinear.sort_unstable();
        nonlinear.dedup();
        let rows: Vec<usize> = (0..sys.n_machines())
            .filter(|k| !nonlinear.contains(k))
            .flat_map(|k| k * STATES_PER_MACHINE..(k + 1) * STATES_PER_MACHINE)
            .collect();
        HybridModel {
            sys,
            net,
            taylor: TaylorRows::new(model, &rows, higher),
            nonlinear,
            anchor: anchor.to_vec(),
        }
    }

    pub fn nonlinear_machines(&self) -> &[usize] {
        &self.nonlinear
    }

    pub fn taylor_rows(&self) -> &TaylorRows {
        &self.taylor
    }

    /// Operation count of one evaluation.
    pub fn flops(&self) -> usize {
        self.sys.rhs_flops(self.nonlinear.len()) + self.anchor.len() + self.taylor.flops()
    }
}

impl Dynamics for HybridModel<'_> {
    fn dim(&self) -> usize {
        self.sys.n_states()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.sys.f_rows(x, self.net, &self.nonlinear, out);
        let dx: Vec<f64> = x.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        self.taylor.eval(&dx, out);
    }
}

/// Study-area machines plus every external machine whose column norm
/// exceeds `threshold`, sorted.
pub fn boundary_set(study: &[usize], norms: &[(usize, f64)], threshold: f64) -> Vec<usize> {
    let mut set: Vec<usize> = study.to_vec();
    set.extend(norms.iter().filter(|(_, n)| *n > threshold).map(|(k, _)| *k));
    set.sort_unstable();
    set.dedup();
    set
}

/// Machines kept nonlinear in the hybrid model (indices into `machines`).
pub fn select_boundary_generators(sys: &SystemModel, threshold: f64) -> Vec<usize> {
    boundary_set(sys.study(), &sys.admittance_column_norms(), threshold)
}

/// One Taylor model per load level, each expanded around its own
/// equilibrium on the pre-fault network.
pub fn build_model_set(data: &SystemData, levels: &[f64], ranks: Ranks, opts: &CpOptions) -> Result<Vec<TaylorModel>> {
    levels
        .iter()
        .map(|&level| {
            let sys = SystemModel::build(data.clone(), level)?;
            build_model(&sys, ranks, opts)
        })
        .collect()
}

pub fn build_model(sys: &SystemModel, ranks: Ranks, opts: &CpOptions) -> Result<TaylorModel> {
    let f = sys.dynamics(sys.prefault_network());
    TaylorModel::build(&f, sys.x0(), sys.load_level(), ranks, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::data::wscc9;

    #[test]
    fn boundary_thresholds() {
        let norms = [(0, 0.5), (2, 2.0)];
        assert_eq!(boundary_set(&[1], &norms, 1.0), vec![1, 2]);
        assert_eq!(boundary_set(&[1], &norms, 0.0), vec![0, 1, 2]);
        assert_eq!(boundary_set(&[1], &norms, f64::INFINITY), vec![1]);
    }

    #[test]
    fn degenerate_masks() {
        let sys = SystemModel::build(wscc9(), 1.0).unwrap();
        let model = build_model(&sys, Ranks::Fixed(4, 4), &CpOptions::default()).unwrap();
        let net = sys.prefault_network();
        let mut x = sys.x0().to_vec();
        x[0] += 0.1;
        x[10] += 0.002;
        x[20] -= 0.05;

        let all = HybridModel::new(&sys, net, &model, &[0, 1, 2], sys.x0(), true);
        let mut a = vec![0.0; 27];
        let mut b = vec![0.0; 27];
        all.eval(&x, &mut a);
        sys.f_full(&x, net, &mut b);
        assert_eq!(a, b);

        let none = HybridModel::new(&sys, net, &model, &[], sys.x0(), true);
        none.eval(&x, &mut a);
        let dx: Vec<f64> = x.iter().zip(sys.x0()).map(|(p, q)| p - q).collect();
        let r = super::super::model::reduced_rhs(&model, &dx);
        for i in 0..27 {
            assert!((a[i] - r[i]).abs() < 1e-14);
        }

        let part = HybridModel::new(&sys, net, &model, &[2], sys.x0(), true);
        part.eval(sys.x0(), &mut a);
        assert!(a.iter().all(|v| v.abs() < 1e-8));
        part.eval(&x, &mut a);
        sys.f_full(&x, net, &mut b);
        for r in 18..27 {
            assert_eq!(a[r].to_bits(), b[r].to_bits());
        }
    }
}
