//! Central finite-difference verification of recorded gradients.

use crate::{Result, Tape, Tensor, TensorError, Var};

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Outcome of a finite-difference comparison, one entry per checked input.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub rel_err: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

fn scalar_of(v: &Var) -> Result<f64> {
    match v.value().data() {
        [x] => Ok(*x),
        _ => Err(TensorError::Shape {
            op: "gradcheck",
            detail: format!("function must return one element, got {:?}", v.shape()),
        }),
    }
}

/// Compares tape gradients of the scalar `f(inputs)` with central differences
/// of width `2·step` over every element of every input.
pub fn check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let picks: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    check_elements(f, inputs, &picks, step)
}

/// As [`check`], restricted to the element indices `picks[i]` of input `i`.
pub fn check_elements<F>(f: F, inputs: &[Tensor], picks: &[Vec<usize>], step: f64) -> Result<GradReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&leaves)?;
    scalar_of(&out)?;
    let grads = tape.backward(&out)?;
    let mut report = GradReport {
        analytic: Vec::new(),
        numeric: Vec::new(),
        rel_err: Vec::new(),
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, idx) in picks.iter().enumerate() {
        let full = grads.get_or_zeros(&leaves[i]);
        let analytic: Vec<f64> = idx.iter().map(|&k| full.data()[k]).collect();
        let mut numeric = Vec::with_capacity(idx.len());
        for &k in idx {
            let orig = probe[i].data()[k];
            probe[i].data_mut()[k] = orig + step;
            let plus = eval(&f, &probe)?;
            probe[i].data_mut()[k] = orig - step;
            let minus = eval(&f, &probe)?;
            probe[i].data_mut()[k] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        report.rel_err.push(relative_error(&analytic, &numeric));
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let consts: Vec<Var> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
    scalar_of(&f(&consts)?)
}
