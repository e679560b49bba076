use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, entry) of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// (analytic, numeric) gradient at the worst entry.
    pub worst_values: Option<(f64, f64)>,
    pub entries: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Denominator floor so entries whose true gradient is ~0 are judged on an
/// absolute scale instead of amplifying roundoff.
const REL_FLOOR: f64 = 1e-4;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Checks `build` (which maps parameter handles to a scalar loss) at `params`
/// with step `h`. Every entry of every parameter is perturbed; `sample`
/// restricts the check to at most that many entries per tensor, spread evenly.
pub fn grad_check<F>(
    params: &[Tensor<f64>],
    h: f64,
    sample: Option<usize>,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone(), with_grad)).collect();
        let loss = build(&mut g, &vars)?;
        let val = g.value(loss).item();
        if !with_grad {
            return Ok((val, Vec::new()));
        }
        let gr = g.backward(loss)?;
        Ok((
            val,
            vars.iter()
                .zip(ps)
                .map(|(v, p)| gr.get_or_zeros(*v, &p.shape))
                .collect(),
        ))
    };
    let (_, analytic) = eval(params, true)?;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        entries: 0,
    };
    for pi in 0..params.len() {
        let n = params[pi].numel();
        let stride = match sample {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for e in (0..n).step_by(stride) {
            let orig = work[pi].data[e];
            work[pi].data[e] = orig + h;
            let (fp, _) = eval(&work, false)?;
            work[pi].data[e] = orig - h;
            let (fm, _) = eval(&work, false)?;
            work[pi].data[e] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let err = rel_error(analytic[pi].data[e], numeric);
            report.entries += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, e));
                report.worst_values = Some((analytic[pi].data[e], numeric));
            }
        }
    }
    Ok(report)
}
