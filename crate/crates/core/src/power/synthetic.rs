//! Synthetic test systems of adjustable size.

use super::data::{Areas, BranchData, BusData, BusKind, MachineParams, SystemData};

/// Ring system with `n_machines` generators, each behind a step-up
/// transformer onto a loaded ring bus, plus cross ties every quarter of the
/// ring. Machine 1 sits on the slack bus. The first `n_study` machines after
/// it form the study area; all others, including machine 1, are external.
pub fn ring_system(n_machines: usize, n_study: usize) -> SystemData {
    assert!(n_machines >= 4, "ring needs at least four machines");
    assert!(n_study >= 1 && n_study < n_machines, "study area must be a proper subset");
    let n = n_machines as u32;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut machines = Vec::new();
    for k in 1..=n {
        buses.push(BusData {
            id: k,
            kind: if k == 1 { BusKind::Slack } else { BusKind::Pv },
            v_set: 1.03,
            p_gen: if k == 1 { 0.0 } else { 0.95 },
            p_load: 0.0,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
        });
    }
    for k in 1..=n {
        buses.push(BusData {
            id: n + k,
            kind: BusKind::Pq,
            v_set: 1.0,
            p_gen: 0.0,
            p_load: 0.95,
            q_load: 0.25,
            g_shunt: 0.0,
            b_shunt: 0.0,
        });
    }
    let line = |from: u32, to: u32, len: f64| BranchData {
        from,
        to,
        r: 0.008 * len,
        x: 0.07 * len,
        b: 0.12 * len,
        tap: 1.0,
    };
    for k in 1..=n {
        branches.push(BranchData {
            from: k,
            to: n + k,
            r: 0.0,
            x: 0.06,
            b: 0.0,
            tap: 1.0,
        });
        branches.push(line(n + k, n + k % n + 1, 1.0));
    }
    let quarter = (n / 4).max(2);
    let mut k = 1;
    while k + quarter < n {
        branches.push(line(n + k, n + (k - 1 + quarter) % n + 1, 2.0));
        k += quarter;
    }
    for k in 1..=n {
        // a spread of inertias so no two machines are identical
        let h = if k == 1 { 20.0 } else { 3.0 + 0.25 * ((k * 7) % 13) as f64 };
        machines.push(MachineParams {
            id: k,
            bus: k,
            h,
            d: 2.0,
            xd: 0.8958,
            xq: 0.8645,
            xd_prime: 0.1198,
            xq_prime: 0.1969,
            td0_prime: 6.0,
            tq0_prime: 0.535,
            ka: 20.0,
            ta: 0.2,
            ke: 1.0,
            te: 0.314,
            kf: 0.063,
            tf: 0.35,
            a_ex: 0.0039,
            b_ex: 1.555,
            r: 0.05,
            tg: 0.2,
            tch: 0.3,
        });
    }
    let study: Vec<u32> = (2..2 + n_study as u32).collect();
    let external = (1..=n).filter(|k| !study.contains(k)).collect();
    SystemData {
        name: format!("ring{n_machines}"),
        base_mva: 100.0,
        frequency_hz: 60.0,
        buses,
        branches,
        machines,
        areas: Areas { study, external },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::system::SystemModel;

    #[test]
    fn ring_is_valid_and_in_equilibrium() {
        let data = ring_system(8, 2);
        data.validate().unwrap();
        assert_eq!(data.areas.external.len(), 6);
        let sys = SystemModel::build(data, 1.0).unwrap();
        sys.check_equilibrium(1e-8).unwrap();
    }
}
