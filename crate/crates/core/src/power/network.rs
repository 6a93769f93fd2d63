//! Bus admittance matrix, Newton-Raphson power flow and Kron reduction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::data::{BusKind, SystemData};
use crate::error::{Error, Result};

const MAX_PF_ITERS: usize = 50;
const PF_TOLERANCE: f64 = 1e-8;

/// Complex bus admittance matrix of the branch network plus bus shunts.
pub fn build_ybus(data: &SystemData) -> DMatrix<Complex64> {
    let n = data.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &data.branches {
        let f = data.bus_index(br.from).expect("validated");
        let t = data.bus_index(br.to).expect("validated");
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ych = Complex64::new(0.0, br.b / 2.0);
        let tap = br.tap;
        y[(f, f)] += (ys + ych) / (tap * tap);
        y[(t, t)] += ys + ych;
        y[(f, t)] -= ys / tap;
        y[(t, f)] -= ys / tap;
    }
    for (i, b) in data.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(b.g_shunt, b.b_shunt);
    }
    y
}

/// Solved operating point.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub load_level: f64,
    /// Complex bus voltages, in bus order.
    pub voltages: Vec<Complex64>,
    /// Scaled complex load at each bus.
    pub loads: Vec<Complex64>,
    /// Generated complex power at each bus (zero where nothing is connected).
    pub generation: Vec<Complex64>,
    pub iterations: usize,
    /// Largest absolute power mismatch at the solution (pu).
    pub mismatch: f64,
}

impl PowerFlowSolution {
    /// Total generation minus total load (real part = active losses).
    pub fn balance(&self) -> Complex64 {
        self.generation.iter().sum::<Complex64>() - self.loads.iter().sum::<Complex64>()
    }
}

/// Newton-Raphson power flow in polar coordinates.
///
/// Loads and PV generation are scaled by `load_level`; the slack bus picks
/// up the difference.
pub fn solve_power_flow(data: &SystemData, load_level: f64) -> Result<PowerFlowSolution> {
    if !(load_level > 0.0) || !load_level.is_finite() {
        return Err(Error::invalid(format!("load level {load_level} must be positive")));
    }
    let n = data.buses.len();
    let ybus = build_ybus(data);
    let loads: Vec<Complex64> = data
        .buses
        .iter()
        .map(|b| Complex64::new(b.p_load, b.q_load) * load_level)
        .collect();
    let p_spec: Vec<f64> = data
        .buses
        .iter()
        .zip(&loads)
        .map(|(b, l)| b.p_gen * load_level - l.re)
        .collect();
    let q_spec: Vec<f64> = loads.iter().map(|l| -l.im).collect();

    let pvpq: Vec<usize> = (0..n).filter(|&i| data.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| data.buses[i].kind == BusKind::Pq).collect();

    let mut vm: Vec<f64> = data
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_set })
        .collect();
    let mut va = vec![0.0; n];

    let voltages = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    };
    let injections = |v: &[Complex64]| -> Vec<Complex64> {
        let vv = DVector::from_column_slice(v);
        let i = &ybus * &vv;
        v.iter().zip(i.iter()).map(|(vk, ik)| vk * ik.conj()).collect()
    };
    let mismatch = |s: &[Complex64]| -> Vec<f64> {
        let mut f = Vec::with_capacity(pvpq.len() + pq.len());
        f.extend(pvpq.iter().map(|&i| s[i].re - p_spec[i]));
        f.extend(pq.iter().map(|&i| s[i].im - q_spec[i]));
        f
    };

    let mut v = voltages(&vm, &va);
    let mut f = mismatch(&injections(&v));
    let mut norm = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut iterations = 0;
    while iterations < MAX_PF_ITERS {
        if norm < 1e-12 {
            break;
        }
        iterations += 1;
        let jac = power_flow_jacobian(&ybus, &v, &pvpq, &pq);
        let rhs = DVector::from_vec(f.iter().map(|x| -x).collect());
        let dx = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("power flow Jacobian".into()))?;
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] += dx[pvpq.len() + k];
        }
        v = voltages(&vm, &va);
        let next = mismatch(&injections(&v));
        let next_norm = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        f = next;
        if !next_norm.is_finite() {
            norm = next_norm;
            break;
        }
        // Stalled at round-off.
        if next_norm < PF_TOLERANCE && next_norm >= norm {
            norm = next_norm;
            break;
        }
        norm = next_norm;
    }
    if !(norm < PF_TOLERANCE) {
        return Err(Error::PowerFlow {
            iterations,
            mismatch: norm,
        });
    }
    let s = injections(&v);
    let generation = s.iter().zip(&loads).map(|(si, li)| si + li).collect();
    Ok(PowerFlowSolution {
        load_level,
        voltages: v,
        loads,
        generation,
        iterations,
        mismatch: norm,
    })
}

fn power_flow_jacobian(
    ybus: &DMatrix<Complex64>,
    v: &[Complex64],
    pvpq: &[usize],
    pq: &[usize],
) -> DMatrix<f64> {
    let n = v.len();
    let ibus: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|k| ybus[(i, k)] * v[k]).sum())
        .collect();
    let j = Complex64::new(0.0, 1.0);
    // dS/dVa and dS/dVm, dense.
    let ds_dva = DMatrix::from_fn(n, n, |i, k| {
        let mut val = -j * v[i] * (ybus[(i, k)] * v[k]).conj();
        if i == k {
            val += j * v[i] * ibus[i].conj();
        }
        val
    });
    let ds_dvm = DMatrix::from_fn(n, n, |i, k| {
        let vn = v[k] / v[k].norm();
        let mut val = v[i] * (ybus[(i, k)] * vn).conj();
        if i == k {
            val += ibus[i].conj() * vn;
        }
        val
    });
    let na = pvpq.len();
    let nm = pq.len();
    let mut jac = DMatrix::zeros(na + nm, na + nm);
    for (r, &i) in pvpq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(r, c)] = ds_dva[(i, k)].re;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(r, na + c)] = ds_dvm[(i, k)].re;
        }
    }
    for (r, &i) in pq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(na + r, c)] = ds_dva[(i, k)].im;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(na + r, na + c)] = ds_dvm[(i, k)].im;
        }
    }
    jac
}

/// Schur complement onto `keep`: `Y_KK − Y_KE · Y_EE⁻¹ · Y_EK`.
pub fn kron_reduce(y: &DMatrix<Complex64>, keep: &[usize]) -> Result<DMatrix<Complex64>> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::dim("admittance matrix must be square"));
    }
    let mut is_kept = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(Error::invalid(format!("node {k} out of range")));
        }
        is_kept[k] = true;
    }
    let elim: Vec<usize> = (0..n).filter(|&i| !is_kept[i]).collect();
    let ykk = DMatrix::from_fn(keep.len(), keep.len(), |i, j| y[(keep[i], keep[j])]);
    if elim.is_empty() {
        return Ok(ykk);
    }
    let yke = DMatrix::from_fn(keep.len(), elim.len(), |i, j| y[(keep[i], elim[j])]);
    let yek = DMatrix::from_fn(elim.len(), keep.len(), |i, j| y[(elim[i], keep[j])]);
    let yee = DMatrix::from_fn(elim.len(), elim.len(), |i, j| y[(elim[i], elim[j])]);
    let x = eliminate(&yee, &yek)?;
    Ok(ykk - yke * x)
}

/// Solves `Y_EE · X = Y_EK`, reporting a singular elimination block.
pub(crate) fn eliminate(
    yee: &DMatrix<Complex64>,
    rhs: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let lu = yee.clone().lu();
    let x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Singular("Kron elimination block".into()))?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Singular("Kron elimination block".into()));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::data::{wscc9, Areas, BranchData, BusData, MachineParams};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn machine(id: u32, bus: u32) -> MachineParams {
        MachineParams {
            id,
            bus,
            h: 5.0,
            d: 0.0,
            xd: 1.0,
            xq: 0.9,
            xd_prime: 0.2,
            xq_prime: 0.3,
            td0_prime: 6.0,
            tq0_prime: 0.5,
            ka: 20.0,
            ta: 0.2,
            ke: 1.0,
            te: 0.3,
            kf: 0.06,
            tf: 0.35,
            a_ex: 0.0039,
            b_ex: 1.555,
            r: 0.05,
            tg: 0.2,
            tch: 0.3,
        }
    }

    pub(crate) fn two_bus(p_load: f64, r: f64, x: f64) -> SystemData {
        SystemData {
            name: "two-bus".into(),
            base_mva: 100.0,
            frequency_hz: 60.0,
            buses: vec![
                BusData {
                    id: 1,
                    kind: BusKind::Slack,
                    v_set: 1.0,
                    p_gen: 0.0,
                    p_load: 0.0,
                    q_load: 0.0,
                    g_shunt: 0.0,
                    b_shunt: 0.0,
                },
                BusData {
                    id: 2,
                    kind: BusKind::Pq,
                    v_set: 1.0,
                    p_gen: 0.0,
                    p_load,
                    q_load: 0.0,
                    g_shunt: 0.0,
                    b_shunt: 0.0,
                },
            ],
            branches: vec![BranchData {
                from: 1,
                to: 2,
                r,
                x,
                b: 0.0,
                tap: 1.0,
            }],
            machines: vec![machine(1, 1)],
            areas: Areas {
                study: vec![1],
                external: vec![],
            },
        }
    }

    #[test]
    fn two_bus_zero_load_is_flat() {
        let pf = solve_power_flow(&two_bus(0.0, 0.0, 0.1), 1.0).unwrap();
        for v in &pf.voltages {
            assert!((v - c(1.0, 0.0)).norm() < 1e-12);
        }
        assert!(pf.generation[0].norm() < 1e-12);
    }

    #[test]
    fn two_bus_closed_form_angle() {
        // With P = 1 and x = 0.1 the receiving voltage is not held at 1 pu,
        // so solve the closed form for the actual magnitude: P = V1 V2 sin(θ)/x
        // and Q2 = 0 ⇒ V2² = V1 V2 cos θ.
        let pf = solve_power_flow(&two_bus(1.0, 0.0, 0.1), 1.0).unwrap();
        let v2 = pf.voltages[1];
        let theta = -v2.arg();
        let vm = v2.norm();
        assert!((vm - theta.cos()).abs() < 1e-10);
        assert!((vm * theta.sin() / 0.1 - 1.0).abs() < 1e-10);
        assert!(pf.mismatch < 1e-8);
    }

    #[test]
    fn two_bus_unit_voltages_with_compensation() {
        // A shunt capacitor holding V2 at 1 pu gives the textbook
        // asin(P x) angle difference at unit voltages.
        let mut data = two_bus(1.0, 0.0, 0.1);
        let theta = (0.1f64).asin();
        data.buses[1].b_shunt = (1.0 - theta.cos()) / 0.1;
        let pf = solve_power_flow(&data, 1.0).unwrap();
        assert!((pf.voltages[1].norm() - 1.0).abs() < 1e-10);
        assert!((pf.voltages[1].arg() + theta).abs() < 1e-10);
    }

    #[test]
    fn wscc9_solves() {
        let data = wscc9();
        let pf = solve_power_flow(&data, 1.0).unwrap();
        assert!(pf.mismatch < 1e-8);
        for v in &pf.voltages {
            assert!(v.norm() > 0.9 && v.norm() < 1.1);
        }
        // Slack output of the classic case is about 0.716 pu.
        assert!((pf.generation[0].re - 0.716).abs() < 0.01);
        let ybus = build_ybus(&data);
        let losses: f64 = {
            let vv = DVector::from_column_slice(&pf.voltages);
            let i = &ybus * &vv;
            pf.voltages.iter().zip(i.iter()).map(|(v, i)| (v * i.conj()).re).sum()
        };
        assert!((pf.balance().re - losses).abs() < 1e-6);
    }

    #[test]
    fn infeasible_level_fails() {
        let err = solve_power_flow(&wscc9(), 10.0).unwrap_err();
        assert!(matches!(err, Error::PowerFlow { .. } | Error::Singular(_)));
    }

    #[test]
    fn star_reduces_to_delta() {
        // Three leaves tied to a centre through admittances y1, y2, y3.
        let ys = [c(0.0, -2.0), c(0.0, -4.0), c(1.0, -5.0)];
        let mut y = DMatrix::from_element(4, 4, c(0.0, 0.0));
        for (i, yi) in ys.iter().enumerate() {
            y[(i, i)] += yi;
            y[(3, 3)] += yi;
            y[(i, 3)] -= yi;
            y[(3, i)] -= yi;
        }
        let red = kron_reduce(&y, &[0, 1, 2]).unwrap();
        let total: Complex64 = ys.iter().sum();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j {
                    ys[i] - ys[i] * ys[i] / total
                } else {
                    -ys[i] * ys[j] / total
                };
                assert!((red[(i, j)] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn keep_all_is_identity() {
        let y = DMatrix::from_fn(3, 3, |i, j| c((i + j) as f64, i as f64 - j as f64));
        assert_eq!(kron_reduce(&y, &[0, 1, 2]).unwrap(), y);
    }

    #[test]
    fn schur_matches_dense_solve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let a = DMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let y = &a * a.adjoint() + DMatrix::identity(n, n) * c(n as f64, 0.0);
        let keep = [0, 2, 5];
        let red = kron_reduce(&y, &keep).unwrap();
        // Oracle: inject currents at kept nodes, zero elsewhere, and solve
        // the full system; the kept voltages must satisfy red · v = i.
        let inj = DVector::from_fn(n, |i, _| {
            if keep.contains(&i) {
                c(i as f64 + 1.0, 0.5)
            } else {
                c(0.0, 0.0)
            }
        });
        let v = y.clone().lu().solve(&inj).unwrap();
        let vk = DVector::from_iterator(3, keep.iter().map(|&i| v[i]));
        let ik = DVector::from_iterator(3, keep.iter().map(|&i| inj[i]));
        let residual = (&red * vk - ik).norm();
        assert!(residual < 1e-12);
    }

    #[test]
    fn singular_block_reported() {
        let mut y = DMatrix::from_element(3, 3, c(0.0, 0.0));
        y[(0, 0)] = c(1.0, 0.0);
        assert!(matches!(kron_reduce(&y, &[0]), Err(Error::Singular(_))));
    }
}
