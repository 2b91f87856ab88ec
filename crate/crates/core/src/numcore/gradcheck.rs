use super::{ParamId, ParamStore, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate, if any.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares `backward` of the loss produced by `build` with central finite
/// differences `(f(p+eps) - f(p-eps)) / 2eps` on every coordinate of every
/// parameter in `store`.
pub fn grad_check<S, F>(store: &ParamStore<S>, eps: f64, build: F) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<'_, S>) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Range(format!("grad_check: eps must be > 0, got {eps}")));
    }
    let eval = |s: &ParamStore<S>| -> Result<S> {
        let mut t = Tape::new(s);
        let l = build(&mut t)?;
        Ok(t.value(l).get(0, 0))
    };
    let analytic = {
        let mut t = Tape::new(store);
        let l = build(&mut t)?;
        let base = t.value(l).get(0, 0);
        if eval(store)? != base {
            return Err(Error::Contract("loss is not deterministic under fixed parameters".into()));
        }
        t.backward(l)?
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let h = S::lit(eps);
    for id in ids {
        for k in 0..store.get(id).values().len() {
            let orig = store.get(id).values()[k];
            work.get_mut(id).values_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).values_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).values_mut()[k] = orig;
            let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * eps);
            let a = analytic.get(id).values()[k].as_f64();
            let e = rel_err(a, numeric);
            report.coordinates += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
