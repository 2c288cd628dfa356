use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

/// Adam optimizer state: per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Tensor>,
    #[serde(skip)]
    pub v: Vec<Tensor>,
}

impl OptimState {
    pub fn adam(params: &ParamStore, lr: f64) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    /// Re-shapes moments after parameters were added or resized; existing
    /// moments are kept where shapes still match.
    pub fn sync_shapes(&mut self, params: &ParamStore) {
        for (id, p) in params.values().iter().enumerate() {
            if id >= self.m.len() {
                self.m.push(Tensor::zeros(p.shape()));
                self.v.push(Tensor::zeros(p.shape()));
            } else if self.m[id].shape() != p.shape() {
                self.m[id] = Tensor::zeros(p.shape());
                self.v[id] = Tensor::zeros(p.shape());
            }
        }
        self.m.truncate(params.len());
        self.v.truncate(params.len());
    }

    /// One bias-corrected Adam step on every parameter, then zeroes the gradients.
    pub fn apply(&mut self, params: &mut ParamStore) {
        self.sync_shapes(params);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in 0..params.len() {
            let g = params.grad(id).data().to_vec();
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let p = params.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        params.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(&[vals.len()], vals.to_vec()).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = store(&[0.5, -1.0, 2.0]);
        let before = p.clone();
        let mut opt = OptimState::adam(&p, 1e-3);
        opt.apply(&mut p);
        assert_eq!(p.values(), before.values());
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_bounded_by_lr() {
        let lr = 1e-3;
        let mut p = store(&[0.5, -1.0, 2.0]);
        p.grad_mut(0).data_mut().copy_from_slice(&[3.0, -0.2, 1e-4]);
        let before = p.value(0).data().to_vec();
        let mut opt = OptimState::adam(&p, lr);
        opt.apply(&mut p);
        for ((b, a), g) in before.iter().zip(p.value(0).data()).zip([3.0, -0.2, 1e-4]) {
            let delta = a - b;
            assert!(delta.abs() <= lr * (1.0 + 1e-6));
            assert!(delta * g < 0.0, "moves against the gradient");
        }
        assert!(p.grad(0).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mk = || {
            let mut p = store(&[0.1, 0.2]);
            p.grad_mut(0).data_mut().copy_from_slice(&[0.3, -0.7]);
            p
        };
        let (mut a, mut b) = (mk(), mk());
        let mut oa = OptimState::adam(&a, 1e-2);
        let mut ob = OptimState::adam(&b, 1e-2);
        for _ in 0..3 {
            a.grad_mut(0).data_mut().copy_from_slice(&[0.3, -0.7]);
            b.grad_mut(0).data_mut().copy_from_slice(&[0.3, -0.7]);
            oa.apply(&mut a);
            ob.apply(&mut b);
        }
        let bits = |p: &ParamStore| p.value(0).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
