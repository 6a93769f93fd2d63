//! Per-load-level Taylor models and their factored evaluation.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::derivatives::{jacobian, taylor_tensor, DerivativeSource, RAW_TENSOR_LIMIT};
use crate::cp::{cp_als, cp_decompose, cp_from_fibers, fiber_rank, relative_error, CpDecomposition, CpFactors, CpOptions};
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// CP ranks of the second- and third-order terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ranks {
    /// Exact decomposition: one component per non-zero mode-1 fiber.
    Full,
    Fixed(usize, usize),
}

/// CP compression of a dense tensor.
///
/// A rank at or above the number of non-zero mode-1 fibers is "full": the
/// exact fiber decomposition is returned instead of an ALS fit. Below that,
/// ALS is run with `opts`.
pub fn compress(t: &Tensor, rank: usize, opts: &CpOptions) -> Result<CpDecomposition> {
    if rank == 0 {
        return Err(Error::invalid("CP rank must be at least 1"));
    }
    if !t.is_zero() && rank >= fiber_rank(t) {
        let factors = cp_from_fibers(t);
        let fit = 1.0 - relative_error(t, &factors);
        return Ok(CpDecomposition {
            factors,
            fit: Some(fit),
            iterations: 0,
            converged: true,
            history: vec![fit],
        });
    }
    cp_decompose(t, rank, opts)
}

/// Third-order Taylor model `Δẋ = A1 Δx + A2(Δx⊗Δx) + A3(Δx⊗Δx⊗Δx)` with
/// CP-compressed `A2` and `A3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorModel {
    pub load_level: f64,
    pub x0: Vec<f64>,
    pub a1: DMatrix<f64>,
    pub a2: CpFactors,
    pub a3: CpFactors,
    pub ranks: [usize; 2],
    /// `1 − ‖A − Â‖/‖A‖` per term; absent when the dense tensor was not formed.
    pub fit: [Option<f64>; 2],
    #[serde(skip)]
    pub raw: Option<(Tensor, Tensor)>,
}

impl TaylorModel {
    /// Expands `f` around `x0` and compresses the higher-order terms.
    ///
    /// Up to [`RAW_TENSOR_LIMIT`] states the dense tensors are formed and
    /// kept on the model. Above it only fixed ranks are accepted and ALS
    /// runs on directional derivatives.
    pub fn build<D: Dynamics + ?Sized>(
        f: &D,
        x0: &[f64],
        load_level: f64,
        ranks: Ranks,
        opts: &CpOptions,
    ) -> Result<Self> {
        let a1 = jacobian(f, x0)?;
        let n = x0.len();
        if n <= RAW_TENSOR_LIMIT {
            let t2 = taylor_tensor(f, x0, 2)?;
            let t3 = taylor_tensor(f, x0, 3)?;
            let (r2, r3) = match ranks {
                Ranks::Full => (fiber_rank(&t2), fiber_rank(&t3)),
                Ranks::Fixed(r2, r3) => (r2, r3),
            };
            let c2 = compress(&t2, r2, opts)?;
            let c3 = compress(&t3, r3, opts)?;
            Ok(TaylorModel {
                load_level,
                x0: x0.to_vec(),
                a1,
                ranks: [c2.factors.rank(), c3.factors.rank()],
                fit: [c2.fit, c3.fit],
                a2: c2.factors,
                a3: c3.factors,
                raw: Some((t2, t3)),
            })
        } else {
            let Ranks::Fixed(r2, r3) = ranks else {
                return Err(Error::invalid(format!(
                    "full rank needs dense tensors, unavailable above {RAW_TENSOR_LIMIT} states"
                )));
            };
            let c2 = cp_als(&DerivativeSource::new(f, x0, 2)?, r2, opts)?;
            let c3 = cp_als(&DerivativeSource::new(f, x0, 3)?, r3, opts)?;
            Ok(TaylorModel {
                load_level,
                x0: x0.to_vec(),
                a1,
                ranks: [r2, r3],
                fit: [None, None],
                a2: c2.factors,
                a3: c3.factors,
                raw: None,
            })
        }
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    /// Replaces the compressed terms, e.g. after recompressing the retained
    /// raw tensors at another rank.
    pub fn recompress(&self, ranks: Ranks, opts: &CpOptions) -> Result<Self> {
        let Some((t2, t3)) = &self.raw else {
            return Err(Error::invalid("model has no raw tensors to recompress"));
        };
        let (r2, r3) = match ranks {
            Ranks::Full => (fiber_rank(t2), fiber_rank(t3)),
            Ranks::Fixed(r2, r3) => (r2, r3),
        };
        let c2 = compress(t2, r2, opts)?;
        let c3 = compress(t3, r3, opts)?;
        Ok(TaylorModel {
            ranks: [c2.factors.rank(), c3.factors.rank()],
            fit: [c2.fit, c3.fit],
            a2: c2.factors,
            a3: c3.factors,
            ..self.clone()
        })
    }

    /// Evaluator over every row.
    pub fn evaluator(&self) -> TaylorRows {
        TaylorRows::new(self, &(0..self.n()).collect::<Vec<_>>(), true)
    }
}

/// `A1 Δx + A2^(1) diag(w) ((A2^(2)ᵀΔx) ∗ (A2^(3)ᵀΔx)) + (third-order analogue)`.
pub fn reduced_rhs(m: &TaylorModel, dx: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.n()];
    m.evaluator().eval(dx, &mut out);
    out
}

#[derive(Debug, Clone)]
struct CpTerm {
    rank: usize,
    /// Row-major `rows × rank` lead factor with the weights folded in.
    lead: Vec<f64>,
    /// Per trailing mode: rows of the factor that are non-zero, and the
    /// matching `support × rank` block, row-major.
    modes: Vec<(Vec<usize>, Vec<f64>)>,
}

impl CpTerm {
    fn new(f: &CpFactors, rows: &[usize]) -> Self {
        let r = f.rank();
        let w = f.weights();
        let a = f.factor(0);
        let mut lead = Vec::with_capacity(rows.len() * r);
        for &i in rows {
            for c in 0..r {
                lead.push(a[(i, c)] * w[c]);
            }
        }
        let modes = f.factors()[1..]
            .iter()
            .map(|m| {
                let support: Vec<usize> = (0..m.nrows()).filter(|&j| m.row(j).iter().any(|&v| v != 0.0)).collect();
                let mut block = Vec::with_capacity(support.len() * r);
                for &j in &support {
                    for c in 0..r {
                        block.push(m[(j, c)]);
                    }
                }
                (support, block)
            })
            .collect();
        CpTerm { rank: r, lead, modes }
    }

    fn flops(&self, rows: usize) -> usize {
        let proj: usize = self.modes.iter().map(|(s, _)| 2 * s.len() * self.rank).sum();
        proj + (self.modes.len() - 1) * self.rank + 2 * rows * self.rank
    }
}

/// A compiled row subset of a [`TaylorModel`]: sparse `A1` rows and CP
/// terms restricted to the non-zero rows of each trailing factor.
#[derive(Debug, Clone)]
pub struct TaylorRows {
    rows: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    terms: Vec<CpTerm>,
}

impl TaylorRows {
    /// `higher = false` keeps only the linear term.
    pub fn new(m: &TaylorModel, rows: &[usize], higher: bool) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &i in rows {
            for j in 0..m.n() {
                let v = m.a1[(i, j)];
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        let terms = if higher {
            vec![CpTerm::new(&m.a2, rows), CpTerm::new(&m.a3, rows)]
        } else {
            Vec::new()
        };
        TaylorRows {
            rows: rows.to_vec(),
            row_ptr,
            cols,
            vals,
            terms,
        }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Writes `Δẋ` for the compiled rows into `out`; other entries of `out`
    /// are untouched.
    pub fn eval(&self, dx: &[f64], out: &mut [f64]) {
        for (k, &i) in self.rows.iter().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[k]..self.row_ptr[k + 1] {
                s += self.vals[p] * dx[self.cols[p]];
            }
            out[i] = s;
        }
        let mut z = Vec::new();
        let mut y = Vec::new();
        for t in &self.terms {
            let r = t.rank;
            z.clear();
            z.resize(r, 1.0);
            for (support, block) in &t.modes {
                y.clear();
                y.resize(r, 0.0);
                for (s, &j) in support.iter().enumerate() {
                    let v = dx[j];
                    let row = &block[s * r..(s + 1) * r];
                    for c in 0..r {
                        y[c] += row[c] * v;
                    }
                }
                for c in 0..r {
                    z[c] *= y[c];
                }
            }
            for (k, &i) in self.rows.iter().enumerate() {
                let lead = &t.lead[k * r..(k + 1) * r];
                let mut s = 0.0;
                for c in 0..r {
                    s += lead[c] * z[c];
                }
                out[i] += s;
            }
        }
    }

    /// Floating-point operations of one [`TaylorRows::eval`] call.
    pub fn flops(&self) -> usize {
        2 * self.vals.len() + self.terms.iter().map(|t| t.flops(self.rows.len())).sum::<usize>()
    }
}

/// Taylor models at a set of representative load levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub format: u32,
    /// Version of the tool that wrote the set.
    #[serde(default)]
    pub version: String,
    pub system: String,
    pub config_hash: String,
    pub models: Vec<TaylorModel>,
}

pub const MODEL_SET_FORMAT: u32 = 1;

impl ModelSet {
    pub fn new(system: impl Into<String>, config_hash: impl Into<String>, models: Vec<TaylorModel>) -> Self {
        ModelSet {
            format: MODEL_SET_FORMAT,
            version: env!("CARGO_PKG_VERSION").to_string(),
            system: system.into(),
            config_hash: config_hash.into(),
            models,
        }
    }

    pub fn levels(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.load_level).collect()
    }

    /// Model whose level equals `level` to within `1e-9`.
    pub fn at_level(&self, level: f64) -> Option<&TaylorModel> {
        self.models.iter().find(|m| (m.load_level - level).abs() < 1e-9)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: ModelSet = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if set.format != MODEL_SET_FORMAT {
            return Err(Error::schema("format", format!("unsupported model set format {}", set.format)));
        }
        for (k, m) in set.models.iter().enumerate() {
            let n = m.x0.len();
            let ok = m.a1.nrows() == n
                && m.a1.ncols() == n
                && m.a2.dims().iter().all(|&d| d == n)
                && m.a3.dims().iter().all(|&d| d == n)
                && m.a2.order() == 3
                && m.a3.order() == 4;
            if !ok {
                return Err(Error::schema(format!("models[{k}]"), "inconsistent dimensions"));
            }
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnDynamics;
    use nalgebra::DVector;
    use crate::tensor::{kron_vec, matricize_mode1, mode_k_product};

    fn cubic() -> FnDynamics<impl Fn(&[f64], &mut [f64])> {
        FnDynamics::new(4, |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] * x[1] - 2.0 * x[2] * x[2] * x[3] + x[3];
            out[1] = x[1] * x[1] * x[1] - x[0];
            out[2] = 0.5 * x[0] * x[2] + 3.0 * x[1] * x[3] * x[0];
            out[3] = -x[3] + 0.25 * x[2] * x[2];
        })
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
    }

    #[test]
    fn cubic_is_reproduced_exactly() {
        let f = cubic();
        let x0 = [0.5, -1.0, 2.0, 0.25];
        let m = TaylorModel::build(&f, &x0, 1.0, Ranks::Full, &CpOptions::default()).unwrap();
        let mut f0 = [0.0; 4];
        f.eval(&x0, &mut f0);
        let mut rnd = lcg(3);
        for _ in 0..20 {
            let dx: Vec<f64> = (0..4).map(|_| 2.0 * rnd()).collect();
            let x: Vec<f64> = x0.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let mut fx = [0.0; 4];
            f.eval(&x, &mut fx);
            let r = reduced_rhs(&m, &dx);
            for i in 0..4 {
                assert!((fx[i] - f0[i] - r[i]).abs() < 1e-10, "{} vs {}", fx[i] - f0[i], r[i]);
            }
        }
    }

    #[test]
    fn zero_deviation_gives_zero() {
        let m = TaylorModel::build(&cubic(), &[0.5, -1.0, 2.0, 0.25], 1.0, Ranks::Full, &CpOptions::default()).unwrap();
        assert!(reduced_rhs(&m, &[0.0; 4]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factored_path_matches_kronecker_and_mode_products() {
        let f = FnDynamics::new(3, |x: &[f64], out: &mut [f64]| {
            out[0] = x[0].sin() * x[1] * x[2];
            out[1] = (x[1] * x[0]).exp();
            out[2] = x[2].cos() * x[0] * x[0];
        });
        let x0 = [0.3, -0.4, 0.8];
        let m = TaylorModel::build(&f, &x0, 1.0, Ranks::Full, &CpOptions::default()).unwrap();
        let (t2, t3) = m.raw.as_ref().unwrap();
        let mut rnd = lcg(11);
        for _ in 0..10 {
            let dx: Vec<f64> = (0..3).map(|_| 0.1 * rnd()).collect();
            let fast = reduced_rhs(&m, &dx);
            let k2 = kron_vec(&dx, &dx);
            let k3 = kron_vec(&k2, &dx);
            let lin = &m.a1 * DVector::from_column_slice(&dx);
            let kr = lin.clone()
                + matricize_mode1(t2) * DVector::from_vec(k2)
                + matricize_mode1(t3) * DVector::from_vec(k3);
            let row = DMatrix::from_row_slice(1, 3, &dx);
            let p2 = mode_k_product(&mode_k_product(t2, &row, 1).unwrap(), &row, 2).unwrap();
            let p3 = mode_k_product(&mode_k_product(&mode_k_product(t3, &row, 1).unwrap(), &row, 2).unwrap(), &row, 3)
                .unwrap();
            for i in 0..3 {
                let mp = lin[i] + p2.data()[i] + p3.data()[i];
                let scale = kr[i].abs().max(1e-12);
                assert!((fast[i] - kr[i]).abs() / scale < 1e-8);
                assert!((fast[i] - mp).abs() / scale < 1e-8);
            }
        }
    }

    #[test]
    fn row_subset_leaves_other_rows() {
        let m = TaylorModel::build(&cubic(), &[0.5, -1.0, 2.0, 0.25], 1.0, Ranks::Full, &CpOptions::default()).unwrap();
        let dx = [0.1, 0.2, -0.3, 0.05];
        let all = reduced_rhs(&m, &dx);
        let mut out = [f64::NAN; 4];
        TaylorRows::new(&m, &[1, 3], true).eval(&dx, &mut out);
        assert!(out[0].is_nan() && out[2].is_nan());
        assert!((out[1] - all[1]).abs() < 1e-15 && (out[3] - all[3]).abs() < 1e-15);
        let mut lin = [0.0; 4];
        TaylorRows::new(&m, &[0, 1, 2, 3], false).eval(&dx, &mut lin);
        let expect = &m.a1 * DVector::from_column_slice(&dx);
        for i in 0..4 {
            assert!((lin[i] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn lossy_rank_is_not_an_error() {
        let m = TaylorModel::build(&cubic(), &[0.5, -1.0, 2.0, 0.25], 1.0, Ranks::Fixed(1, 1), &CpOptions::default())
            .unwrap();
        assert!(m.fit[0].unwrap() < 1.0);
        assert_eq!(m.ranks, [1, 1]);
    }

    #[test]
    fn zero_tensor_compresses_to_zero_weights() {
        let t = Tensor::zeros(&[3, 3, 3]).unwrap();
        let c = compress(&t, 2, &CpOptions::default()).unwrap();
        assert!(c.factors.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn model_set_round_trip_is_bit_exact() {
        let m = TaylorModel::build(&cubic(), &[0.5, -1.0, 2.0, 0.25], 1.0, Ranks::Fixed(2, 2), &CpOptions::default())
            .unwrap();
        let set = ModelSet::new("toy", "abc", vec![m]);
        let back = ModelSet::from_json(&set.to_json()).unwrap();
        let a = &set.models[0];
        let b = &back.models[0];
        assert_eq!(a.x0, b.x0);
        assert_eq!(a.a1, b.a1);
        assert_eq!(a.a2, b.a2);
        assert_eq!(a.a3, b.a3);
        assert_eq!(set.to_json(), back.to_json());
    }
}
