/// An autonomous vector field `ẋ = f(x)`.
pub trait Dynamics {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Coordinates that enter `f` nonlinearly. Second and higher partial
    /// derivatives vanish unless every differentiation index is in this set.
    /// `None` means no structure is known.
    fn nonlinear_coords(&self) -> Option<Vec<usize>> {
        None
    }

    /// Output rows that can have non-zero second or higher derivatives.
    fn nonlinear_rows(&self) -> Option<Vec<usize>> {
        None
    }
}

/// Adapter for closures.
pub struct FnDynamics<F> {
    dim: usize,
    f: F,
    nonlinear: Option<Vec<usize>>,
    rows: Option<Vec<usize>>,
}

impl<F: Fn(&[f64], &mut [f64])> FnDynamics<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnDynamics {
            dim,
            f,
            nonlinear: None,
            rows: None,
        }
    }

    pub fn with_nonlinear_coords(mut self, coords: Vec<usize>) -> Self {
        self.nonlinear = Some(coords);
        self
    }

    pub fn with_nonlinear_rows(mut self, rows: Vec<usize>) -> Self {
        self.rows = Some(rows);
        self
    }
}

impl<F: Fn(&[f64], &mut [f64])> Dynamics for FnDynamics<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    fn nonlinear_coords(&self) -> Option<Vec<usize>> {
        self.nonlinear.clone()
    }

    fn nonlinear_rows(&self) -> Option<Vec<usize>> {
        self.rows.clone()
    }
}
