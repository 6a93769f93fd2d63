//! CP (CANDECOMP/PARAFAC) factorizations.
//!
//! Factors are stored with unit-norm columns and a separate weight vector.
//! Decomposition is alternating least squares over a [`MultilinearSource`],
//! which only has to supply MTTKRP products, so the same solver runs on a
//! dense tensor and on tensors that are never materialized.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{khatri_rao_chain, matricize_mode1, Tensor};

/// Weighted CP factors: `Σ_c w_c · a_c(1) ∘ ... ∘ a_c(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpFactors {
    factors: Vec<DMatrix<f64>>,
    weights: DVector<f64>,
}

impl CpFactors {
    pub fn new(factors: Vec<DMatrix<f64>>, weights: DVector<f64>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::dim("CP factors need at least one mode"));
        }
        let r = weights.len();
        if r == 0 {
            return Err(Error::invalid("CP rank must be at least 1"));
        }
        for (k, f) in factors.iter().enumerate() {
            if f.ncols() != r {
                return Err(Error::dim(format!(
                    "factor {k} has {} columns, rank is {r}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::dim(format!("factor {k} has no rows")));
            }
        }
        Ok(CpFactors { factors, weights })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Moves column scales into the weights so every column has unit norm.
    /// All-zero columns become a constant unit column with zero weight.
    pub fn normalize(&mut self) {
        for f in &mut self.factors {
            for c in 0..f.ncols() {
                let norm = f.column(c).norm();
                if norm > 0.0 {
                    f.column_mut(c).scale_mut(1.0 / norm);
                    self.weights[c] *= norm;
                } else {
                    let n = f.nrows();
                    f.column_mut(c).fill(1.0 / (n as f64).sqrt());
                    self.weights[c] = 0.0;
                }
            }
        }
        for c in 0..self.weights.len() {
            if self.weights[c] < 0.0 {
                self.weights[c] = -self.weights[c];
                self.factors[0].column_mut(c).neg_mut();
            }
        }
    }
}

/// Rebuilds the dense tensor by summing weighted outer products.
pub fn cp_reconstruct(f: &CpFactors) -> Tensor {
    let dims = f.dims();
    let mut t = Tensor::zeros(&dims).expect("factor dims are non-empty");
    let d = dims.len();
    let mut index = vec![0usize; d];
    for slot in t.data_mut().iter_mut() {
        let mut acc = 0.0;
        for c in 0..f.rank() {
            let mut p = f.weights[c];
            for k in 0..d {
                p *= f.factors[k][(index[k], c)];
            }
            acc += p;
        }
        *slot = acc;
        for k in 0..d {
            index[k] += 1;
            if index[k] < dims[k] {
                break;
            }
            index[k] = 0;
        }
    }
    t
}

/// Mode-1 unfolding straight from the factors:
/// `A(1) · diag(w) · (A(d) ⊙ ... ⊙ A(2))ᵀ`.
pub fn cp_mode1_matrix(f: &CpFactors) -> DMatrix<f64> {
    let trailing: Vec<&DMatrix<f64>> = f.factors[1..].iter().rev().collect();
    let kr = khatri_rao_chain(&trailing, f.rank()).expect("factor ranks agree");
    let mut lead = f.factors[0].clone();
    for c in 0..f.rank() {
        lead.column_mut(c).scale_mut(f.weights[c]);
    }
    lead * kr.transpose()
}

/// Exact decomposition with one component per non-zero mode-1 fiber.
///
/// Component `c` pairs the normalized fiber `T[:, j_2, ..., j_d]` with unit
/// vectors `e_{j_2}, ..., e_{j_d}`. The rank equals the number of non-zero
/// fibers (at least one; a zero tensor yields one zero-weight component).
pub fn cp_from_fibers(t: &Tensor) -> CpFactors {
    let dims = t.dims();
    let n1 = dims[0];
    let fibers: Vec<usize> = (0..t.len() / n1)
        .filter(|&j| t.data()[j * n1..(j + 1) * n1].iter().any(|&v| v != 0.0))
        .collect();
    let r = fibers.len().max(1);
    let mut factors: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::zeros(n, r)).collect();
    let mut weights = DVector::zeros(r);
    for (c, &j) in fibers.iter().enumerate() {
        factors[0]
            .column_mut(c)
            .copy_from_slice(&t.data()[j * n1..(j + 1) * n1]);
        let mut rest = j;
        for k in 1..dims.len() {
            factors[k][(rest % dims[k], c)] = 1.0;
            rest /= dims[k];
        }
        weights[c] = 1.0;
    }
    let mut f = CpFactors { factors, weights };
    f.normalize();
    f
}

/// Number of non-zero mode-1 fibers: the rank [`cp_from_fibers`] returns.
pub fn fiber_rank(t: &Tensor) -> usize {
    let n1 = t.dims()[0];
    (0..t.len() / n1)
        .filter(|&j| t.data()[j * n1..(j + 1) * n1].iter().any(|&v| v != 0.0))
        .count()
        .max(1)
}

/// Anything ALS can factor: it only needs MTTKRP products against the
/// current factors and, when available, the squared Frobenius norm.
pub trait MultilinearSource {
    fn dims(&self) -> &[usize];

    /// `T_(k) · (⊙_{j≠k} A(j))`, shape `n_k x r`.
    fn mttkrp(&self, factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64>;

    /// `‖T‖²`, if it can be computed.
    fn norm_sq(&self) -> Option<f64>;

    /// `‖T − T̂‖²` computed directly, if the source holds the data.
    fn residual_sq(&self, _approx: &CpFactors) -> Option<f64> {
        None
    }
}

/// Dense tensor source. Slices that are identically zero in some mode are
/// dropped before factoring; their factor rows are exactly zero in any ALS
/// iterate, so they are re-inserted as zero rows afterwards.
pub struct DenseSource {
    compact: Tensor,
    support: Vec<Vec<usize>>,
    full_dims: Vec<usize>,
    norm_sq: f64,
}

impl DenseSource {
    pub fn new(t: &Tensor) -> Self {
        let dims = t.dims().to_vec();
        let d = dims.len();
        let mut used: Vec<Vec<bool>> = dims.iter().map(|&n| vec![false; n]).collect();
        let mut index = vec![0usize; d];
        for &v in t.data() {
            if v != 0.0 {
                for k in 0..d {
                    used[k][index[k]] = true;
                }
            }
            for k in 0..d {
                index[k] += 1;
                if index[k] < dims[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        let mut support: Vec<Vec<usize>> = used
            .iter()
            .map(|u| u.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
            .collect();
        for s in &mut support {
            if s.is_empty() {
                s.push(0);
            }
        }
        let cdims: Vec<usize> = support.iter().map(|s| s.len()).collect();
        let mut compact = Tensor::zeros(&cdims).expect("support is non-empty");
        let mut cindex = vec![0usize; d];
        let mut full = vec![0usize; d];
        for slot in compact.data_mut().iter_mut() {
            for k in 0..d {
                full[k] = support[k][cindex[k]];
            }
            *slot = t.get(&full);
            for k in 0..d {
                cindex[k] += 1;
                if cindex[k] < cdims[k] {
                    break;
                }
                cindex[k] = 0;
            }
        }
        let norm_sq = t.data().iter().map(|v| v * v).sum();
        DenseSource {
            compact,
            support,
            full_dims: dims,
            norm_sq,
        }
    }

    /// Scatters compact factors back to the full tensor dimensions.
    fn embed(&self, f: CpFactors) -> CpFactors {
        let r = f.rank();
        let factors = f
            .factors
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let mut full = DMatrix::zeros(self.full_dims[k], r);
                for (ci, &fi) in self.support[k].iter().enumerate() {
                    full.row_mut(fi).copy_from(&m.row(ci));
                }
                full
            })
            .collect();
        CpFactors {
            factors,
            weights: f.weights,
        }
    }
}

impl MultilinearSource for DenseSource {
    fn dims(&self) -> &[usize] {
        self.compact.dims()
    }

    fn mttkrp(&self, factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
        dense_mttkrp(&self.compact, factors, mode)
    }

    fn norm_sq(&self) -> Option<f64> {
        Some(self.norm_sq)
    }

    fn residual_sq(&self, approx: &CpFactors) -> Option<f64> {
        let unfolded = matricize_mode1(&self.compact);
        let model = cp_mode1_matrix(approx);
        Some((unfolded - model).norm_squared())
    }
}

/// MTTKRP of a dense tensor in mode-1-fastest storage.
pub fn dense_mttkrp(t: &Tensor, factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
    let dims = t.dims();
    let d = dims.len();
    let r = factors[0].ncols();
    let left_mats: Vec<&DMatrix<f64>> = (0..mode).rev().map(|j| &factors[j]).collect();
    let right_mats: Vec<&DMatrix<f64>> = (mode + 1..d).rev().map(|j| &factors[j]).collect();
    let kl = khatri_rao_chain(&left_mats, r).expect("ranks agree");
    let kr = khatri_rao_chain(&right_mats, r).expect("ranks agree");
    let left = kl.nrows();
    let right = kr.nrows();
    let nk = dims[mode];
    let data = t.data();
    let mut out = DMatrix::zeros(nk, r);
    for c in 0..r {
        let klc = &kl.as_slice()[c * left..(c + 1) * left];
        for rr in 0..right {
            let wr = kr[(rr, c)];
            if wr == 0.0 {
                continue;
            }
            for i in 0..nk {
                let base = left * (i + nk * rr);
                let s: f64 = data[base..base + left]
                    .iter()
                    .zip(klc)
                    .map(|(a, b)| a * b)
                    .sum();
                out[(i, c)] += wr * s;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpOptions {
    pub max_iters: usize,
    pub fit_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CpOptions {
    fn default() -> Self {
        CpOptions {
            max_iters: 500,
            fit_tolerance: 1e-8,
            restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CpDecomposition {
    pub factors: CpFactors,
    /// `1 − ‖T − T̂‖/‖T‖`; `None` when the source cannot report `‖T‖`.
    pub fit: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Per-sweep fit of the kept restart (or the ALS objective
    /// `‖T̂‖² − 2⟨T, T̂⟩` when the fit is unavailable).
    pub history: Vec<f64>,
}

/// CP decomposition of a dense tensor by ALS.
pub fn cp_decompose(t: &Tensor, rank: usize, opts: &CpOptions) -> Result<CpDecomposition> {
    if rank == 0 {
        return Err(Error::invalid("CP rank must be at least 1"));
    }
    if t.is_zero() {
        let factors: Vec<DMatrix<f64>> = t
            .dims()
            .iter()
            .map(|&n| DMatrix::from_element(n, rank, 1.0 / (n as f64).sqrt()))
            .collect();
        return Ok(CpDecomposition {
            factors: CpFactors::new(factors, DVector::zeros(rank))?,
            fit: Some(1.0),
            iterations: 0,
            converged: true,
            history: Vec::new(),
        });
    }
    let source = DenseSource::new(t);
    let mut out = cp_als(&source, rank, opts)?;
    out.factors = source.embed(out.factors);
    Ok(out)
}

/// ALS over any [`MultilinearSource`].
pub fn cp_als<S: MultilinearSource>(
    source: &S,
    rank: usize,
    opts: &CpOptions,
) -> Result<CpDecomposition> {
    if rank == 0 {
        return Err(Error::invalid("CP rank must be at least 1"));
    }
    let norm_sq = source.norm_sq();
    if norm_sq == Some(0.0) {
        return Err(Error::invalid("cp_als called on a zero tensor"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<CpDecomposition> = None;
    for _ in 0..opts.restarts.max(1) {
        let run = als_run(source, rank, opts, norm_sq, &mut rng)?;
        let better = match &best {
            None => true,
            Some(b) => score(&run) > score(b),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn score(run: &CpDecomposition) -> f64 {
    match run.fit {
        Some(f) => f,
        None => -run.history.last().copied().unwrap_or(f64::INFINITY),
    }
}

fn als_run<S: MultilinearSource>(
    source: &S,
    rank: usize,
    opts: &CpOptions,
    norm_sq: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<CpDecomposition> {
    let dims = source.dims().to_vec();
    let d = dims.len();
    let mut factors: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.gen::<f64>()))
        .collect();
    for f in &mut factors {
        for c in 0..rank {
            let n = f.column(c).norm();
            f.column_mut(c).scale_mut(1.0 / n);
        }
    }
    let mut grams: Vec<DMatrix<f64>> = factors.iter().map(|f| f.transpose() * f).collect();
    let mut weights = DVector::from_element(rank, 1.0);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        iterations += 1;
        let mut last_mttkrp = DMatrix::zeros(0, 0);
        for k in 0..d {
            let m = source.mttkrp(&factors, k);
            let mut v = DMatrix::from_element(rank, rank, 1.0);
            for (j, g) in grams.iter().enumerate() {
                if j != k {
                    v.component_mul_assign(g);
                }
            }
            let mut updated = solve_normal(&v, &m)?;
            for c in 0..rank {
                let n = updated.column(c).norm();
                if n > 0.0 {
                    updated.column_mut(c).scale_mut(1.0 / n);
                    weights[c] = n;
                } else {
                    let len = updated.nrows() as f64;
                    updated.column_mut(c).fill(1.0 / len.sqrt());
                    weights[c] = 0.0;
                }
            }
            grams[k] = updated.transpose() * &updated;
            factors[k] = updated;
            if k == d - 1 {
                last_mttkrp = m;
            }
        }

        let current = CpFactors {
            factors: factors.clone(),
            weights: weights.clone(),
        };
        let metric = match norm_sq {
            Some(nsq) => {
                let res = source
                    .residual_sq(&current)
                    .unwrap_or_else(|| objective(&grams, &weights, &factors[d - 1], &last_mttkrp) + nsq);
                1.0 - res.max(0.0).sqrt() / nsq.sqrt()
            }
            None => objective(&grams, &weights, &factors[d - 1], &last_mttkrp),
        };
        if !metric.is_finite() {
            return Err(Error::Numerical("ALS produced a non-finite iterate".into()));
        }
        let done = history.last().map_or(false, |&prev: &f64| {
            let scale = if norm_sq.is_some() { 1.0 } else { metric.abs().max(1e-300) };
            (metric - prev).abs() < opts.fit_tolerance * scale
        });
        history.push(metric);
        if done {
            converged = true;
            break;
        }
    }

    let mut factors = CpFactors { factors, weights };
    factors.normalize();
    Ok(CpDecomposition {
        fit: norm_sq.map(|_| *history.last().expect("ran at least one sweep")),
        factors,
        iterations,
        converged,
        history,
    })
}

/// `‖T̂‖² − 2⟨T, T̂⟩`, using the MTTKRP of the last mode.
fn objective(
    grams: &[DMatrix<f64>],
    weights: &DVector<f64>,
    last_factor: &DMatrix<f64>,
    last_mttkrp: &DMatrix<f64>,
) -> f64 {
    let r = weights.len();
    let mut h = DMatrix::from_element(r, r, 1.0);
    for g in grams {
        h.component_mul_assign(g);
    }
    let model_sq = (weights.transpose() * &h * weights)[(0, 0)];
    let mut inner = 0.0;
    for c in 0..r {
        inner += weights[c] * last_mttkrp.column(c).dot(&last_factor.column(c));
    }
    model_sq - 2.0 * inner
}

/// Solves `X · V = M` for symmetric positive semi-definite `V`, falling back
/// to the pseudo-inverse when `V` is singular or badly conditioned.
fn solve_normal(v: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = v.clone().cholesky() {
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 && (min / max).powi(2) > 1e-12 {
            return Ok(chol.solve(&m.transpose()).transpose());
        }
    }
    let pinv = v
        .clone()
        .pseudo_inverse(1e-12 * v.norm().max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
    Ok(m * pinv)
}

/// Relative Frobenius reconstruction error `‖T − T̂‖/‖T‖` (0 for a zero `T`
/// reconstructed exactly).
pub fn relative_error(t: &Tensor, f: &CpFactors) -> f64 {
    let rec = cp_reconstruct(f);
    let diff: f64 = t
        .data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let n = t.norm();
    if n == 0.0 {
        diff
    } else {
        diff / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kron;

    fn random_factors(seed: u64, dims: &[usize], r: usize) -> CpFactors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = dims
            .iter()
            .map(|&n| DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let weights = DVector::from_fn(r, |_, _| rng.gen_range(0.5..2.0));
        let mut f = CpFactors::new(factors, weights).unwrap();
        f.normalize();
        f
    }

    #[test]
    fn rank_one_recovered() {
        let f = random_factors(11, &[4, 5, 3], 1);
        let t = cp_reconstruct(&f);
        let dec = cp_decompose(&t, 1, &CpOptions::default()).unwrap();
        assert!(dec.fit.unwrap() >= 1.0 - 1e-6);
        assert!(relative_error(&t, &dec.factors) < 1e-6);
    }

    #[test]
    fn zero_tensor_gives_zero_weights() {
        let t = Tensor::zeros(&[3, 3, 3]).unwrap();
        let dec = cp_decompose(&t, 2, &CpOptions::default()).unwrap();
        assert_eq!(dec.fit, Some(1.0));
        assert!(dec.factors.weights().iter().all(|&w| w == 0.0));
        assert!(cp_reconstruct(&dec.factors).is_zero());
    }

    #[test]
    fn rank_zero_rejected() {
        let t = Tensor::zeros(&[2, 2]).unwrap();
        assert!(cp_decompose(&t, 0, &CpOptions::default()).is_err());
    }

    #[test]
    fn unit_columns_after_decomposition() {
        let f = random_factors(5, &[5, 4, 6], 2);
        let dec = cp_decompose(&cp_reconstruct(&f), 2, &CpOptions::default()).unwrap();
        for m in dec.factors.factors() {
            for c in 0..m.ncols() {
                assert!((m.column(c).norm() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(dec.factors.dims(), vec![5, 4, 6]);
    }

    #[test]
    fn reconstruct_single_component_is_outer_product() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[3.0, -1.0]);
        let c = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 2.0]);
        let f = CpFactors::new(vec![a.clone(), b.clone(), c.clone()], DVector::from_element(1, 1.0))
            .unwrap();
        let t = cp_reconstruct(&f);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    assert_eq!(t.get(&[i, j, k]), a[i] * b[j] * c[k]);
                }
            }
        }
        let zero = CpFactors::new(vec![a, b, c], DVector::zeros(1)).unwrap();
        assert!(cp_reconstruct(&zero).is_zero());
    }

    #[test]
    fn mode1_matrix_rank_one_and_superdiagonal() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_column_slice(3, 1, &[3.0, -1.0, 0.5]);
        let c = DMatrix::from_column_slice(2, 1, &[1.0, -2.0]);
        let f = CpFactors::new(vec![a.clone(), b.clone(), c.clone()], DVector::from_element(1, 2.5))
            .unwrap();
        let expected = (&a * kron(&c, &b).transpose()) * 2.5;
        assert!((cp_mode1_matrix(&f) - expected).abs().max() < 1e-14);

        let n = 3;
        let id = DMatrix::<f64>::identity(n, n);
        let f = CpFactors::new(vec![id.clone(), id.clone(), id], DVector::from_element(n, 1.0)).unwrap();
        let m = cp_mode1_matrix(&f);
        for i in 0..n {
            for col in 0..n * n {
                let expected = if col == i + n * i { 1.0 } else { 0.0 };
                assert_eq!(m[(i, col)], expected);
            }
        }
    }

    #[test]
    fn fiber_decomposition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tensor::zeros(&[4, 3, 3]).unwrap();
        for _ in 0..10 {
            let idx = [rng.gen_range(0..4), rng.gen_range(0..3), rng.gen_range(0..3)];
            t.set(&idx, rng.gen_range(-1.0..1.0));
        }
        let f = cp_from_fibers(&t);
        assert_eq!(f.rank(), fiber_rank(&t));
        assert!(relative_error(&t, &f) < 1e-14);
        let zero = Tensor::zeros(&[2, 2, 2]).unwrap();
        assert!(cp_reconstruct(&cp_from_fibers(&zero)).is_zero());
    }

    #[test]
    fn compaction_preserves_zero_slices() {
        let f = random_factors(21, &[3, 4, 3], 2);
        let small = cp_reconstruct(&f);
        let mut t = Tensor::zeros(&[5, 4, 6]).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..3 {
                    t.set(&[i + 1, j, 2 * k], small.get(&[i, j, k]));
                }
            }
        }
        let dec = cp_decompose(&t, 2, &CpOptions::default()).unwrap();
        assert!(relative_error(&t, &dec.factors) < 1e-6);
        for c in 0..2 {
            assert_eq!(dec.factors.factor(0)[(0, c)], 0.0);
            assert_eq!(dec.factors.factor(2)[(1, c)], 0.0);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let f = random_factors(3, &[4, 4, 4], 3);
        let t = cp_reconstruct(&f);
        let opts = CpOptions {
            max_iters: 50,
            ..CpOptions::default()
        };
        let a = cp_decompose(&t, 2, &opts).unwrap();
        let b = cp_decompose(&t, 2, &opts).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.history, b.history);
    }
}
