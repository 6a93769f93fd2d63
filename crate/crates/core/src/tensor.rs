//! Dense tensors and the products used to evaluate Taylor terms.
//!
//! Storage is mode-1 fastest: the entry at zero-based multi-index
//! `(i_1, ..., i_d)` lives at `i_1 + n_1 * (i_2 + n_2 * (i_3 + ...))`.
//! With this layout the mode-1 unfolding is the flat buffer read as a
//! column-major `n_1 x (n_2 ... n_d)` matrix whose column index nests the
//! trailing modes with mode 2 fastest. That is the same row ordering as the
//! Khatri-Rao chain `A(d) ⊙ ... ⊙ A(2)`, so `matricize_mode1(T) * (y ⊗ x)`
//! contracts mode 2 with `x` and mode 3 with `y`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        })
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::dim(format!(
                "tensor data has {} entries, dims {:?} need {}",
                data.len(),
                dims,
                len
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of a zero-based multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut off = 0;
        for (k, (&i, &n)) in index.iter().zip(&self.dims).enumerate().rev() {
            debug_assert!(i < n, "index {i} out of range in mode {k}");
            off = off * n + i;
        }
        off
    }

    /// Inverse of [`Tensor::offset`].
    pub fn multi_index(&self, mut offset: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&n| {
                let i = offset % n;
                offset /= n;
                i
            })
            .collect()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Text dump: a `dims` line followed by the flat data, one value per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("dims");
        for n in &self.dims {
            let _ = write!(out, " {n}");
        }
        out.push('\n');
        for v in &self.data {
            let _ = writeln!(out, "{v:e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            column: 1,
            message: "empty tensor dump".into(),
        })?;
        let mut head = header.split_whitespace();
        if head.next() != Some("dims") {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "expected `dims` header".into(),
            });
        }
        let dims = head
            .map(|s| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line: 1,
                    column: 1,
                    message: format!("bad dimension `{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let data = lines
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    column: 1,
                    message: format!("bad value `{}`: {e}", l.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(&dims, data)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::dim("tensor needs at least one mode"));
    }
    if let Some(k) = dims.iter().position(|&n| n == 0) {
        return Err(Error::dim(format!("mode {k} has zero size")));
    }
    Ok(())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    DMatrix::from_fn(ra * rb, ca * cb, |row, col| {
        a[(row / rb, col / cb)] * b[(row % rb, col % cb)]
    })
}

/// Kronecker product of two vectors stored as slices; `b` varies fastest.
pub fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// Khatri-Rao (columnwise Kronecker) product `a ⊙ b`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let rb = b.nrows();
    Ok(DMatrix::from_fn(a.nrows() * rb, a.ncols(), |row, col| {
        a[(row / rb, col)] * b[(row % rb, col)]
    }))
}

/// Khatri-Rao product of a chain `mats[0] ⊙ mats[1] ⊙ ... `; the last
/// matrix's row index varies fastest. An empty chain yields a `1 x cols`
/// row of ones.
pub fn khatri_rao_chain(mats: &[&DMatrix<f64>], cols: usize) -> Result<DMatrix<f64>> {
    let mut acc = DMatrix::from_element(1, cols, 1.0);
    for m in mats {
        acc = khatri_rao(&acc, m)?;
    }
    Ok(acc)
}

/// Mode-k product `T ×_k X` with zero-based `mode`.
///
/// The result replaces `n_k` by `rows(X)`; entry
/// `out[.., i, ..] = Σ_j T[.., j, ..] X[i, j]`.
pub fn mode_k_product(t: &Tensor, x: &DMatrix<f64>, mode: usize) -> Result<Tensor> {
    let d = t.order();
    if mode >= d {
        return Err(Error::invalid(format!(
            "mode {mode} out of range for order-{d} tensor"
        )));
    }
    let nk = t.dims[mode];
    if x.ncols() != nk {
        return Err(Error::dim(format!(
            "mode-{mode} product needs a matrix with {nk} columns, got {}",
            x.ncols()
        )));
    }
    let m = x.nrows();
    let left: usize = t.dims[..mode].iter().product();
    let right: usize = t.dims[mode + 1..].iter().product();
    let mut dims = t.dims.clone();
    dims[mode] = m;
    let mut out = vec![0.0; left * m * right];
    for r in 0..right {
        for j in 0..nk {
            let src = &t.data[left * (j + nk * r)..left * (j + nk * r + 1)];
            for i in 0..m {
                let w = x[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[left * (i + m * r)..left * (i + m * r + 1)];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }
    Tensor::from_vec(&dims, out)
}

/// Mode-1 unfolding: `n_1 x (n_2 ... n_d)`.
pub fn matricize_mode1(t: &Tensor) -> DMatrix<f64> {
    let rows = t.dims[0];
    let cols = t.len() / rows;
    DMatrix::from_column_slice(rows, cols, &t.data)
}

/// Folds a mode-1 unfolding back into a tensor of the given dims.
pub fn tensorize(m: &DMatrix<f64>, dims: &[usize]) -> Result<Tensor> {
    check_dims(dims)?;
    let trailing: usize = dims[1..].iter().product();
    if m.nrows() != dims[0] || m.ncols() != trailing {
        return Err(Error::dim(format!(
            "cannot fold a {}x{} matrix into dims {:?}",
            m.nrows(),
            m.ncols(),
            dims
        )));
    }
    Tensor::from_vec(dims, m.as_slice().to_vec())
}
