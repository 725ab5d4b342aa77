use crate::diffcore::params::{ParamId, ParamStore};
use crate::diffcore::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Default pass threshold on the maximum relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub eps: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn coordinates(&self) -> usize {
        self.params.iter().map(|p| p.coordinates).sum()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<28} coords={:<8} max_rel_err={:.3e}",
                p.name, p.coordinates, p.max_rel_error
            )?;
        }
        write!(
            f,
            "eps={:e} tolerance={:e} max_rel_err={:.3e} pass={}",
            self.eps,
            self.tolerance,
            self.max_rel_error(),
            self.pass
        )
    }
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, store: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Evaluation(format!(
            "function must return a scalar, got shape {:?}",
            v.shape()
        )));
    }
    let y = v.data()[0];
    if !y.is_finite() {
        return Err(Error::Evaluation(format!("non-finite function value {y}")));
    }
    Ok(y)
}

/// Compares tape gradients with central differences on every coordinate of `params`.
///
/// `f` must be deterministic: it is re-run twice per coordinate. `coordinate_stride`
/// of 1 checks every coordinate; larger values visit every n-th one.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    eps: f64,
    tolerance: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    grad_check_strided(store, params, eps, tolerance, 1, f)
}

pub fn grad_check_strided<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    eps: f64,
    tolerance: f64,
    coordinate_stride: usize,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Domain(format!("perturbation must be positive, got {eps}")));
    }
    let stride = coordinate_stride.max(1);
    let analytic = {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        if !tape.value(out).is_finite() {
            return Err(Error::Evaluation("non-finite function value".into()));
        }
        tape.backward(out)?
    };

    let mut checks = Vec::with_capacity(params.len());
    for &id in params {
        let n = store.get(id).len();
        let grad: Vec<f64> = analytic
            .get(id)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let mut max_err: f64 = 0.0;
        let mut visited = 0;
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = evaluate(&f, store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = evaluate(&f, store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            max_err = max_err.max(relative_error(grad[i], numeric));
            visited += 1;
        }
        checks.push(ParamCheck {
            name: store.name(id).to_string(),
            coordinates: visited,
            max_rel_error: max_err,
        });
    }
    let pass = checks.iter().all(|c| c.max_rel_error < tolerance);
    Ok(GradCheckReport {
        params: checks,
        eps,
        tolerance,
        pass,
    })
}
