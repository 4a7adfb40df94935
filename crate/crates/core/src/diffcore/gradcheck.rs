use crate::scalar::Scalar;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::DiffError;

/// Finite-difference settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference half step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor: relative error is `|a − n| / max(|a|, |n|, floor)`.
    pub abs_floor: f64,
}

impl GradCheck {
    pub fn new(step: f64, tolerance: f64) -> Self {
        Self {
            step,
            tolerance,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// One-sided differences disagree: the point sits on a kink and the
    /// coordinate is excluded from the verdict.
    pub kink: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    /// Worst relative error over non-kink coordinates.
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn kinks(&self) -> impl Iterator<Item = &CoordCheck> {
        self.coords.iter().filter(|c| c.kink)
    }
}

const KINK_RATIO: f64 = 1e-2;

fn evaluate<T: Scalar, F>(params: &ParamSet<T>, f: &F) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = f(&mut tape, &vars);
    if let Some(fault) = tape.fault() {
        return Err(fault.clone());
    }
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(DiffError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item().to_f64_lossless())
}

/// Compares the tape gradient of `f` with central differences for every
/// coordinate of every parameter.
pub fn grad_check<T: Scalar, F>(params: &ParamSet<T>, f: F, settings: GradCheck) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Var,
{
    if !(settings.step > 0.0) {
        return Err(DiffError::InvalidArgument("step must be positive".into()));
    }
    let analytic = {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let out = f(&mut tape, &vars);
        tape.backward(out)?.take_all(&vars)
    };

    let h = settings.step;
    let base = evaluate(params, &f)?;
    let mut work = params.clone();
    let mut coords = Vec::new();
    for p in 0..params.len() {
        for idx in 0..params.tensor(p).len() {
            let x0 = params.tensor(p).data()[idx];
            work.tensor_mut(p).data_mut()[idx] = x0 + T::of(h);
            let plus = evaluate(&work, &f)?;
            work.tensor_mut(p).data_mut()[idx] = x0 - T::of(h);
            let minus = evaluate(&work, &f)?;
            work.tensor_mut(p).data_mut()[idx] = x0;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(DiffError::NonFinite {
                    op: "finite difference",
                    node: idx,
                });
            }

            let numeric = (plus - minus) / (2.0 * h);
            let forward = (plus - base) / h;
            let backward = (base - minus) / h;
            let scale = forward.abs().max(backward.abs()).max(1.0);
            let kink = (forward - backward).abs() > KINK_RATIO * scale;

            let a = analytic[p].data()[idx].to_f64_lossless();
            let denom = a.abs().max(numeric.abs()).max(settings.abs_floor);
            coords.push(CoordCheck {
                param: p,
                index: idx,
                analytic: a,
                numeric,
                rel_error: (a - numeric).abs() / denom,
                kink,
            });
        }
    }
    let max_rel_error = coords
        .iter()
        .filter(|c| !c.kink)
        .map(|c| c.rel_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error <= settings.tolerance,
        coords,
        max_rel_error,
    })
}

/// [`grad_check`] for a function of a single tensor argument.
pub fn grad_check_point<T: Scalar, F>(
    point: &Tensor<T>,
    f: F,
    settings: GradCheck,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape<T>, Var) -> Var,
{
    let mut params = ParamSet::new();
    params.push("x", point.clone());
    grad_check(&params, |tape, vars| f(tape, vars[0]), settings)
}
