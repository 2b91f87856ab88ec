use super::{DenseMatrix, Gradients, ParamStore, Scalar};
use crate::error::{Error, Result};

/// Adam moments and step counter for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    /// L2 penalty folded into the gradient before the moment update.
    pub weight_decay: S,
    step: u64,
    first: Vec<DenseMatrix<S>>,
    second: Vec<DenseMatrix<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros: Vec<_> = store
            .iter()
            .map(|(_, _, v)| DenseMatrix::zeros(v.rows(), v.cols()))
            .collect();
        Self {
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            weight_decay: S::zero(),
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn with_weight_decay(mut self, wd: S) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>, lr: S) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::Contract(format!(
                "adam: {} params, {} grads, {} moments",
                store.len(),
                grads.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let p = store.get_mut(id);
            if g.shape() != p.shape() || self.first[i].shape() != p.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            let m = self.first[i].values_mut();
            let v = self.second[i].values_mut();
            for (((pv, &gv), mv), vv) in p.values_mut().iter_mut().zip(g.values()).zip(m).zip(v) {
                let gv = gv + self.weight_decay * *pv;
                *mv = self.beta1 * *mv + (S::one() - self.beta1) * gv;
                *vv = self.beta2 * *vv + (S::one() - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Half-cosine decay from `base_lr` at step 0 to zero at `total_steps`.
pub fn cosine_lr<S: Scalar>(base_lr: S, step: usize, total_steps: usize) -> Result<S> {
    if total_steps == 0 {
        return Err(Error::Range("cosine_lr: total_steps must be >= 1".into()));
    }
    if step > total_steps {
        return Err(Error::Range(format!(
            "cosine_lr: step {step} exceeds total {total_steps}"
        )));
    }
    let frac = S::lit(step as f64) / S::lit(total_steps as f64);
    Ok(base_lr * (S::one() + (S::lit(std::f64::consts::PI) * frac).cos()) / S::lit(2.0))
}
