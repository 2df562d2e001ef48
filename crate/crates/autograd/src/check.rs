//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it shares no code
//! with the backward sweep it is checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients below `DENOM_FLOOR * max(1, |f|)` are compared on an absolute
/// scale. Scaling with `|f|` tracks the roundoff in `f(x + h) - f(x - h)`.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub floor: f64,
}

impl GradCheckEntry {
    pub fn rel_error(&self) -> f64 {
        floored_error(self.analytic, self.numeric, self.floor)
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(GradCheckEntry::rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    floored_error(a, b, DENOM_FLOOR)
}

pub fn floored_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks `d f / d inputs` for a scalar-valued `f`.
///
/// `select(input, numel)` chooses which flat elements of each input to probe;
/// pass `|_, n| (0..n).collect()` for all of them.
pub fn check_gradients<F, S>(inputs: &[Tensor], f: F, step: f64, mut select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    S: FnMut(usize, usize) -> Vec<usize>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    let floor = DENOM_FLOOR * g.value(loss).item()?.abs().max(1.0);
    let grads = g.backward(loss)?;

    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap_or_else(|| Tensor::zeros(input.shape()));
        for e in select(i, input.numel()) {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[e] = orig;
            report.entries.push(GradCheckEntry {
                input: i,
                element: e,
                analytic: analytic.data()[e],
                numeric: (up - down) / (2.0 * step),
                floor,
            });
        }
    }
    Ok(report)
}
