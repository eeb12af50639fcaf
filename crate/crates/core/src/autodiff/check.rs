use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const PARAM_ID: usize = 0;

/// Per-coordinate comparison of reverse-mode and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// `f(x)` at the base point.
    pub value: f64,
    pub fd: Vec<f64>,
    pub ad: Vec<f64>,
}

impl FdReport {
    /// `max_i |FD_i - AD_i| / (|FD_i| + |AD_i| + 1e-12)`.
    pub fn max_rel_err(&self) -> f64 {
        self.fd
            .iter()
            .zip(&self.ad)
            .map(|(f, a)| (f - a).abs() / (f.abs() + a.abs() + 1e-12))
            .fold(0.0, f64::max)
    }

    /// Like [`FdReport::max_rel_err`], but coordinates whose absolute mismatch is below
    /// `floor` count as exact. Useful when gradient entries are comparable to the
    /// difference quotient's roundoff, about `ε_mach |f| / eps`.
    pub fn max_rel_err_above(&self, floor: f64) -> f64 {
        self.fd
            .iter()
            .zip(&self.ad)
            .filter(|(f, a)| (*f - *a).abs() > floor)
            .map(|(f, a)| (f - a).abs() / (f.abs() + a.abs() + 1e-12))
            .fold(0.0, f64::max)
    }
}

/// Compare the reverse-mode gradient of a scalar function against central differences.
///
/// `f` receives a fresh tape and the input variable and must return a scalar node.
pub fn finite_diff_report<F>(f: F, x: &Tensor, eps: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::usage("finite differences need eps > 0"));
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(PARAM_ID, t.clone());
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let v = tape.param(PARAM_ID, x.clone());
    let out = f(&mut tape, v)?;
    let value = tape.value(out).item()?;
    let grads = tape.backward(out)?;
    let ad = grads
        .get(PARAM_ID)
        .map_or_else(|| vec![0.0; x.len()], |g| g.data().to_vec());

    let mut fd = Vec::with_capacity(x.len());
    let mut data = x.data().to_vec();
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + eps;
        let plus = eval(&Tensor::new(x.shape().to_vec(), data.clone())?)?;
        data[i] = orig - eps;
        let minus = eval(&Tensor::new(x.shape().to_vec(), data.clone())?)?;
        data[i] = orig;
        fd.push((plus - minus) / (2.0 * eps));
    }
    Ok(FdReport { value, fd, ad })
}

/// `max_i |FD_i - AD_i| / (|FD_i| + |AD_i| + 1e-12)` over all input coordinates.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    Ok(finite_diff_report(f, x, eps)?.max_rel_err())
}
