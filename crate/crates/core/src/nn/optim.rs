use crate::scalar::Scalar;

use super::params::ParamSet;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamSet<T>, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.ids().map(|id| vec![T::zero(); params.value(id).len()]).collect(),
            v: params.ids().map(|id| vec![T::zero(); params.value(id).len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient still decay unless listed in
    /// `no_decay`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Vec<T>>], lr: f64, no_decay: &[bool]) {
        self.step += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::c(1.0 - self.beta2.powi(self.step as i32));
        let lr_t = T::c(lr);
        let eps = T::c(self.eps);
        for id in params.ids().collect::<Vec<_>>() {
            let decay = if no_decay.get(id.0).copied().unwrap_or(false) {
                T::zero()
            } else {
                T::c(lr * self.weight_decay)
            };
            let p = params.value_mut(id);
            if decay > T::zero() {
                p.iter_mut().for_each(|x| *x -= decay * *x);
            }
            let Some(g) = &grads[id.0] else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr_t * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Step decay: the base rate halves (by `rate`) at each milestone epoch,
/// with milestones given for `reference_epochs` and rescaled to `epochs`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub rate: f64,
    pub milestones: Vec<usize>,
}

impl StepSchedule {
    pub fn scaled(base_lr: f64, rate: f64, reference: &[usize], reference_epochs: usize, epochs: usize) -> Self {
        let milestones = reference
            .iter()
            .map(|&m| ((m as f64 / reference_epochs as f64) * epochs as f64).round() as usize)
            .collect();
        Self {
            base_lr,
            rate,
            milestones,
        }
    }

    /// Rate during (zero-based) `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base_lr * self.rate.powi(n as i32)
    }
}
