use super::{Gradients, ParamStore, Tape, TensorError, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Entries whose analytic and numeric magnitudes sum below this are not compared.
pub const FD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub worst_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst_entry: String,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares the tape's gradients of `loss` against central finite
/// differences for every scalar of every parameter in `store`.
pub fn gradient_check<F>(store: &ParamStore<f64>, loss: F, tolerance: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    let analytic = tape.backward(l, store)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let l = loss(&mut tape, s)?;
        Ok(tape.value(l).item())
    };
    compare_gradients(store, eval, &analytic, tolerance)
}

/// Checks `analytic` against finite differences of `eval`.
///
/// The relative error of an entry is `|a - n| / max(|a|, |n|)`.
pub fn compare_gradients<E>(
    store: &ParamStore<f64>,
    eval: E,
    analytic: &Gradients<f64>,
    tolerance: f64,
) -> Result<GradCheckReport, TensorError>
where
    E: Fn(&ParamStore<f64>) -> Result<f64, TensorError>,
{
    let mut probe = store.clone();
    let mut report = GradCheckReport { passed: true, worst_rel_error: 0.0, worst_entry: String::new(), checked: 0, skipped: 0 };
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(TensorError::NonFinite(format!("loss near {}[{i}]", store.name(id))));
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            if a.abs() + numeric.abs() <= FD_FLOOR {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            if rel > report.worst_rel_error {
                report.worst_rel_error = rel;
                report.worst_entry = format!("{}[{i}]", store.name(id));
            }
        }
    }
    report.passed = report.worst_rel_error <= tolerance;
    Ok(report)
}
