use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest element-wise relative error between analytic and central
    /// finite-difference gradients.
    pub max_rel_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// Kink margin of the unperturbed forward pass (see [`Tape::kink_margin`]).
    pub kink_margin: f64,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences `(f(x+eps) - f(x-eps)) / 2eps` for every entry of every
/// parameter in `store`. Inputs to be checked should be registered as
/// parameters.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let kink_margin = tape.kink_margin();
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad().to_vec()).collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.value(l).item())
    };

    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).values()[j];
            store.get_mut(id).values_mut()[j] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).values_mut()[j] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            max_rel_error = max_rel_error.max(relative_error(analytic[pi][j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked,
        kink_margin,
    })
}
