//! Finite-difference derivatives of a [`Dynamics`] around an expansion point.
//!
//! Steps are rounded to powers of two so that `x ± h` is exact and the
//! divided differences of a polynomial with dyadic coefficients carry no
//! representation error.

use nalgebra::DMatrix;

use crate::cp::MultilinearSource;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative step of the Jacobian.
pub const STEP_1: f64 = 1e-6;
/// Relative step of the second-order tensor.
pub const STEP_2: f64 = 1e-4;
/// Relative step of the third-order tensor.
pub const STEP_3: f64 = 1e-3;

/// Largest state dimension for which dense Taylor tensors are formed.
pub const RAW_TENSOR_LIMIT: usize = 60;

/// `rel · max(1, |x|)` rounded to the nearest power of two.
pub fn step(x: f64, rel: f64) -> f64 {
    let h = rel * x.abs().max(1.0);
    2f64.powi(h.log2().round() as i32)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite entries in {what}")))
    }
}

/// Jacobian at `x0`.
///
/// Columns of coordinates that enter `f` linearly are differenced with a
/// unit step, which is exact up to round-off. Nonlinear columns use the
/// fourth-order central formula `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`
/// with `h` = [`STEP_3`]; the plain second-order formula with
/// [`STEP_1`] is [`jacobian_with_step`].
pub fn jacobian<D: Dynamics + ?Sized>(f: &D, x0: &[f64]) -> Result<DMatrix<f64>> {
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::dim(format!("x0 has length {}, system has {n} states", x0.len())));
    }
    let (coords, _) = structure(f);
    let mut nonlinear = vec![false; n];
    for &j in &coords {
        nonlinear[j] = true;
    }
    let mut a = DMatrix::zeros(n, n);
    let mut x = x0.to_vec();
    let eval_at = |x: &mut Vec<f64>, j: usize, h: f64, out: &mut Vec<f64>| {
        x[j] = x0[j] + h;
        f.eval(x, out);
        x[j] = x0[j];
    };
    let mut p1 = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    let mut p2 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for j in 0..n {
        if nonlinear[j] {
            let h = step(x0[j], STEP_3);
            eval_at(&mut x, j, h, &mut p1);
            eval_at(&mut x, j, -h, &mut m1);
            eval_at(&mut x, j, 2.0 * h, &mut p2);
            eval_at(&mut x, j, -2.0 * h, &mut m2);
            for i in 0..n {
                a[(i, j)] = (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h);
            }
        } else {
            eval_at(&mut x, j, 1.0, &mut p1);
            eval_at(&mut x, j, -1.0, &mut m1);
            for i in 0..n {
                a[(i, j)] = (p1[i] - m1[i]) / 2.0;
            }
        }
    }
    check_finite(a.as_slice(), "A1")?;
    Ok(a)
}

/// Central-difference Jacobian with relative step `rel`.
pub fn jacobian_with_step<D: Dynamics + ?Sized>(f: &D, x0: &[f64], rel: f64) -> Result<DMatrix<f64>> {
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::dim(format!("x0 has length {}, system has {n} states", x0.len())));
    }
    let mut a = DMatrix::zeros(n, n);
    let mut x = x0.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = step(x0[j], rel);
        x[j] = x0[j] + h;
        let xp = x[j];
        f.eval(&x, &mut fp);
        x[j] = x0[j] - h;
        let xm = x[j];
        f.eval(&x, &mut fm);
        x[j] = x0[j];
        let d = xp - xm;
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / d;
        }
    }
    check_finite(a.as_slice(), "A1")?;
    Ok(a)
}

fn factorial(p: usize) -> f64 {
    (1..=p).map(|k| k as f64).product()
}

/// Sign-weighted sum `Σ_s (Π s) f(x0 + Σ_m s_m h_m u_m)` over all `2^p`
/// sign patterns, accumulated into `acc` (rows in `rows` only). The
/// displacement of each pattern is supplied by `shift`.
fn signed_sum<D: Dynamics + ?Sized>(
    f: &D,
    x0: &[f64],
    p: usize,
    mut shift: impl FnMut(&[f64], &mut [f64]),
    rows: &[usize],
    acc: &mut [f64],
    scratch: &mut (Vec<f64>, Vec<f64>),
) {
    let (x, fx) = scratch;
    let mut signs = vec![0.0; p];
    for pattern in 0..1usize << p {
        let mut sign = 1.0;
        for (m, s) in signs.iter_mut().enumerate() {
            *s = if pattern >> m & 1 == 1 { -1.0 } else { 1.0 };
            sign *= *s;
        }
        x.copy_from_slice(x0);
        shift(&signs, x);
        f.eval(x, fx);
        for &i in rows {
            acc[i] += sign * fx[i];
        }
    }
}

fn structure<D: Dynamics + ?Sized>(f: &D) -> (Vec<usize>, Vec<usize>) {
    let n = f.dim();
    let coords = f.nonlinear_coords().unwrap_or_else(|| (0..n).collect());
    let rows = f.nonlinear_rows().unwrap_or_else(|| (0..n).collect());
    (coords, rows)
}

/// Dense Taylor coefficient tensor of order `p` (2 or 3):
/// `T[i, j, k, ...] = (1/p!) ∂^p f_i / ∂x_j ∂x_k ...` at `x0`.
///
/// Only index tuples drawn from the nonlinear coordinates and rows are
/// differenced; every other entry is zero by structure. Each unordered tuple
/// is differenced once and written to all its permutations, so the result
/// is exactly symmetric in the trailing modes.
///
/// The second-order tensor is Richardson-extrapolated from the central
/// differences at steps `h` and `2h`, `h` = [`STEP_3`]; the third-order one
/// is the plain central difference at [`STEP_3`]. [`taylor_tensor_plain`]
/// gives the unextrapolated formula at any step.
pub fn taylor_tensor<D: Dynamics + ?Sized>(f: &D, x0: &[f64], order: usize) -> Result<Tensor> {
    if order == 2 {
        let mut fine = tensor_impl(f, x0, 2, STEP_3)?;
        let coarse = tensor_impl(f, x0, 2, 2.0 * STEP_3)?;
        for (a, b) in fine.data_mut().iter_mut().zip(coarse.data()) {
            *a = (4.0 * *a - b) / 3.0;
        }
        Ok(fine)
    } else {
        tensor_impl(f, x0, order, STEP_3)
    }
}

/// Plain central-difference Taylor tensor with relative step `rel`.
pub fn taylor_tensor_plain<D: Dynamics + ?Sized>(f: &D, x0: &[f64], order: usize, rel: f64) -> Result<Tensor> {
    tensor_impl(f, x0, order, rel)
}

fn tensor_impl<D: Dynamics + ?Sized>(f: &D, x0: &[f64], order: usize, rel: f64) -> Result<Tensor> {
    let n = f.dim();
    if !(2..=3).contains(&order) {
        return Err(Error::invalid(format!("Taylor tensor order {order} not supported")));
    }
    if n > RAW_TENSOR_LIMIT {
        return Err(Error::invalid(format!(
            "refusing a dense order-{order} tensor for {n} states (limit {RAW_TENSOR_LIMIT})"
        )));
    }
    if x0.len() != n {
        return Err(Error::dim(format!("x0 has length {}, system has {n} states", x0.len())));
    }
    let (coords, rows) = structure(f);
    let mut t = Tensor::zeros(&vec![n; order + 1])?;
    let mut scratch = (vec![0.0; n], vec![0.0; n]);
    let mut acc = vec![0.0; n];
    let mut tuple = vec![0usize; order];
    let m = coords.len();
    let mut pos = vec![0usize; order];
    loop {
        for (slot, &p) in tuple.iter_mut().zip(&pos) {
            *slot = coords[p];
        }
        let h: Vec<f64> = tuple.iter().map(|&j| step(x0[j], rel)).collect();
        acc.fill(0.0);
        signed_sum(
            f,
            x0,
            order,
            |s, x| {
                for (q, &j) in tuple.iter().enumerate() {
                    x[j] += s[q] * h[q];
                }
            },
            &rows,
            &mut acc,
            &mut scratch,
        );
        let denom = 2f64.powi(order as i32) * h.iter().product::<f64>() * factorial(order);
        for perm in permutations(&tuple) {
            let mut base = 0;
            let mut stride = n;
            for &j in &perm {
                base += j * stride;
                stride *= n;
            }
            for &i in &rows {
                t.data_mut()[base + i] = acc[i] / denom;
            }
        }
        // next non-decreasing position tuple
        let mut k = order;
        loop {
            if k == 0 {
                check_finite(t.data(), "Taylor tensor")?;
                return Ok(t);
            }
            k -= 1;
            if pos[k] + 1 < m {
                pos[k] += 1;
                for q in k + 1..order {
                    pos[q] = pos[k];
                }
                break;
            }
        }
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let first = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, first);
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// The order-`p` Taylor tensor seen only through directional derivatives.
///
/// Used when the dense tensor is too large to form: every MTTKRP column is
/// a `p`-th mixed directional derivative of `f`, obtained by polarization
/// from `2^p` evaluations. The Frobenius norm is unavailable, so ALS on this
/// source reports no fit.
pub struct DerivativeSource<'a, D: ?Sized> {
    f: &'a D,
    x0: &'a [f64],
    order: usize,
    dims: Vec<usize>,
    coords: Vec<usize>,
    rows: Vec<usize>,
    h: f64,
}

impl<'a, D: Dynamics + ?Sized> DerivativeSource<'a, D> {
    pub fn new(f: &'a D, x0: &'a [f64], order: usize) -> Result<Self> {
        if !(2..=3).contains(&order) {
            return Err(Error::invalid(format!("Taylor tensor order {order} not supported")));
        }
        let n = f.dim();
        if x0.len() != n {
            return Err(Error::dim(format!("x0 has length {}, system has {n} states", x0.len())));
        }
        let (coords, rows) = structure(f);
        let rel = if order == 2 { STEP_2 } else { STEP_3 };
        Ok(DerivativeSource {
            f,
            x0,
            order,
            dims: vec![n; order + 1],
            coords,
            rows,
            h: step(1.0, rel),
        })
    }

    /// `(1/p!) D^p f(x0)[u_1, ..., u_p]` for directions restricted to the
    /// nonlinear coordinates.
    pub fn directional(&self, dirs: &[&[f64]], out: &mut [f64], scratch: &mut (Vec<f64>, Vec<f64>)) {
        out.fill(0.0);
        let h = self.h;
        let coords = &self.coords;
        signed_sum(
            self.f,
            self.x0,
            self.order,
            |s, x| {
                for (q, u) in dirs.iter().enumerate() {
                    for &j in coords {
                        x[j] += s[q] * h * u[j];
                    }
                }
            },
            &self.rows,
            out,
            scratch,
        );
        let denom = 2f64.powi(self.order as i32) * h.powi(self.order as i32) * factorial(self.order);
        for &i in &self.rows {
            out[i] /= denom;
        }
    }
}

impl<D: Dynamics + ?Sized> MultilinearSource for DerivativeSource<'_, D> {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn mttkrp(&self, factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
        let n = self.dims[0];
        let r = factors[0].ncols();
        let mut out = DMatrix::zeros(n, r);
        let mut scratch = (vec![0.0; n], vec![0.0; n]);
        let mut d = vec![0.0; n];
        let cols: Vec<Vec<Vec<f64>>> = factors
            .iter()
            .map(|f| (0..r).map(|c| f.column(c).iter().copied().collect()).collect())
            .collect();
        for c in 0..r {
            if mode == 0 {
                let dirs: Vec<&[f64]> = (1..=self.order).map(|k| cols[k][c].as_slice()).collect();
                self.directional(&dirs, &mut d, &mut scratch);
                for &i in &self.rows {
                    out[(i, c)] = d[i];
                }
            } else {
                let mut e = vec![0.0; n];
                for &j in &self.coords {
                    e[j] = 1.0;
                    let mut dirs: Vec<&[f64]> = vec![e.as_slice()];
                    for k in 1..=self.order {
                        if k != mode {
                            dirs.push(cols[k][c].as_slice());
                        }
                    }
                    self.directional(&dirs, &mut d, &mut scratch);
                    out[(j, c)] = self.rows.iter().map(|&i| cols[0][c][i] * d[i]).sum();
                    e[j] = 0.0;
                }
            }
        }
        out
    }

    fn norm_sq(&self) -> Option<f64> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnDynamics;

    #[test]
    fn steps_are_powers_of_two() {
        assert_eq!(step(0.3, 1e-6), 2f64.powi(-20));
        assert_eq!(step(1.0, 1e-4), 2f64.powi(-13));
        assert_eq!(step(-5.0, 1e-3), 2f64.powi(-8));
    }

    #[test]
    fn scalar_square() {
        let f = FnDynamics::new(1, |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        let a1 = jacobian(&f, &[1.0]).unwrap();
        assert!((a1[(0, 0)] - 2.0).abs() < 1e-12);
        let a2 = taylor_tensor(&f, &[1.0], 2).unwrap();
        assert!((a2.data()[0] - 1.0).abs() < 1e-12);
        let a3 = taylor_tensor(&f, &[1.0], 3).unwrap();
        assert!(a3.data()[0].abs() < 1e-12);
    }

    #[test]
    fn mixed_partials_of_a_cubic() {
        // f0 = x0 x1 x2, f1 = x0^2 x1
        let f = FnDynamics::new(3, |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] * x[1] * x[2];
            out[1] = x[0] * x[0] * x[1];
            out[2] = 0.0;
        });
        let x0 = [1.0, 2.0, -1.0];
        let a2 = taylor_tensor(&f, &x0, 2).unwrap();
        // (1/2) ∂²f0/∂x0∂x1 = x2 / 2
        assert!((a2.get(&[0, 0, 1]) + 0.5).abs() < 1e-9);
        assert_eq!(a2.get(&[0, 0, 1]), a2.get(&[0, 1, 0]));
        // (1/2) ∂²f1/∂x0² = x1
        assert!((a2.get(&[1, 0, 0]) - 2.0).abs() < 1e-9);
        let a3 = taylor_tensor(&f, &x0, 3).unwrap();
        // (1/6) ∂³f0/∂x0∂x1∂x2 = 1/6 at every permutation
        for p in permutations(&[0, 1, 2]) {
            assert!((a3.get(&[0, p[0], p[1], p[2]]) - 1.0 / 6.0).abs() < 1e-9);
        }
        assert!((a3.get(&[1, 0, 0, 1]) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn oversized_tensor_refused() {
        let f = FnDynamics::new(61, |_: &[f64], out: &mut [f64]| out.fill(0.0));
        assert!(taylor_tensor(&f, &vec![0.0; 61], 2).is_err());
    }

    #[test]
    fn derivative_source_matches_dense_mttkrp() {
        let f = FnDynamics::new(3, |x: &[f64], out: &mut [f64]| {
            out[0] = x[0].sin() * x[1];
            out[1] = x[1] * x[1] * x[2] + x[0].exp();
            out[2] = x[0] * x[2];
        });
        let x0 = [0.3, 0.5, -0.2];
        let mut rng = 7u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for order in [2, 3] {
            let dense = taylor_tensor(&f, &x0, order).unwrap();
            let src = DerivativeSource::new(&f, &x0, order).unwrap();
            let factors: Vec<DMatrix<f64>> = (0..=order).map(|_| DMatrix::from_fn(3, 2, |_, _| next())).collect();
            for mode in 0..=order {
                let a = src.mttkrp(&factors, mode);
                let b = crate::cp::dense_mttkrp(&dense, &factors, mode);
                assert!((a - &b).norm() < 1e-5 * b.norm().max(1.0), "order {order} mode {mode}");
            }
        }
    }
}
