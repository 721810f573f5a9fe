/// Denominator floor for relative errors, so coordinates whose true gradient
/// is zero are judged on absolute error at this scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` occurs.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
///
/// `loss_fn` maps a flat parameter vector to `(loss, gradient)`.
///
/// # Panics
/// If `h` is not positive and finite.
pub fn grad_check<F, E>(mut loss_fn: F, params: &[f64], h: f64) -> Result<GradCheck, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    assert!(h > 0.0 && h.is_finite(), "finite-difference step must be positive");
    let (_, analytic) = loss_fn(params)?;
    assert_eq!(analytic.len(), params.len(), "gradient length");

    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let (up, _) = loss_fn(&probe)?;
        probe[i] = params[i] - h;
        let (down, _) = loss_fn(&probe)?;
        probe[i] = params[i];
        numeric.push((up - down) / (2.0 * h));
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });

    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
