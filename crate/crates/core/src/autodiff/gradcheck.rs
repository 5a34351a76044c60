use super::{AdError, Tape, Tensor, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|)` over all coordinates.
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` occurred.
    pub worst_coordinate: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    /// First coordinate at or above tolerance, if any.
    pub fn failing_coordinate(&self) -> Option<usize> {
        (!self.passed()).then_some(self.worst_coordinate)
    }
}

/// Checks the gradient of the scalar function `f` at `point`.
///
/// `f` receives a fresh tape and the point recorded as a leaf. `h` must lie in
/// `(0, 1e-2)`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport, AdError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, AdError>,
{
    assert!(h > 0.0 && h < 1e-2, "finite-difference step must lie in (0, 1e-2)");
    let analytic = {
        let tape = Tape::new();
        let x = tape.leaf(point);
        let y = f(&tape, x)?;
        tape.backward(y)?;
        tape.grad(x).into_data()
    };
    let eval = |p: &Tensor| -> Result<f64, AdError> {
        let tape = Tape::new();
        let x = tape.constant(p);
        Ok(f(&tape, x)?.item())
    };
    let mut numeric = Vec::with_capacity(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = x0 - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = x0;
        numeric.push((up - down) / (2.0 * h));
    }
    let (worst_coordinate, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        max_rel_error,
        worst_coordinate,
        analytic,
        numeric,
        tol,
    })
}
