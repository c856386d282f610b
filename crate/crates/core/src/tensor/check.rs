//! Finite-difference gradient checking.

use super::{Graph, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Element index (into the checked tensor) where the error peaked.
    pub worst_index: usize,
    pub pass: bool,
}

/// Compares the analytic gradient of `f` with central finite differences,
/// element by element, perturbing `x` in place.
///
/// `f` must build the scalar loss on the graph it is given and must be
/// deterministic (dropout disabled or driven by a fixed seed); the check
/// evaluates it twice up front and refuses to proceed if the two values
/// differ in bits. The relative error uses `max(1, |analytic|, |numeric|)`
/// as the denominator.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Graph) -> Result<Tensor, TensorError>,
{
    assert!(h > 0.0 && tol > 0.0);
    assert!(
        x.requires_grad(),
        "grad_check target must have requires_grad set"
    );

    let eval = |f: &F| -> Result<f64, TensorError> {
        let g = Graph::train();
        Ok(f(&g)?.item())
    };
    let v1 = eval(&f)?;
    let v2 = eval(&f)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(TensorError::NonDeterministic);
    }

    x.zero_grad();
    let g = Graph::train();
    let loss = f(&g)?;
    g.backward(&loss)?;
    let analytic = x
        .grad()
        .expect("loss does not depend on the checked tensor");

    let original = x.to_vec();
    let n = original.len();
    let mut max_rel_err: f64 = 0.0;
    let mut worst_index = 0;
    let mut perturbed = original.clone();
    for i in 0..n {
        perturbed[i] = original[i] + h;
        x.set_data(&perturbed)?;
        let up = eval(&f)?;
        perturbed[i] = original[i] - h;
        x.set_data(&perturbed)?;
        let down = eval(&f)?;
        perturbed[i] = original[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = 1.0_f64.max(analytic[i].abs()).max(numeric.abs());
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    x.set_data(&original)?;

    Ok(GradCheckReport {
        max_rel_err,
        worst_index,
        pass: max_rel_err <= tol,
    })
}
