use std::f64::consts::PI;

use crate::error::{config_err, Result};
use crate::tensor::{ParamStore, Real, Tensor};

/// `lr_min + ½(lr0 − lr_min)(1 + cos(πt/T))`; `T = 0` gives `lr0`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = t.min(total) as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * t / total as f64).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Completed steps.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Moments as `adam.m.<name>` / `adam.v.<name>` records.
    pub fn named(&self, params: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        let m = names.iter().zip(&self.m).map(|(n, t)| (format!("adam.m.{n}"), t.clone()));
        let v = names.iter().zip(&self.v).map(|(n, t)| (format!("adam.v.{n}"), t.clone()));
        m.chain(v).collect()
    }
}

/// One bias-corrected Adam update using each parameter's accumulated
/// gradient; a missing gradient counts as zero.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if state.m.len() != params.len() {
        return config_err!("optimizer state has {} slots for {} parameters", state.m.len(), params.len());
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (hyper.beta1, hyper.beta2, hyper.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.params_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let grad = p.grad.as_ref();
        if let Some(g) = grad {
            if g.shape() != p.value.shape() {
                return config_err!("gradient for {} has shape {:?}, value {:?}", p.name, g.shape(), p.value.shape());
            }
        }
        let value = std::sync::Arc::make_mut(&mut p.value);
        for j in 0..value.len() {
            let g = grad.map_or(0.0, |g| g.data()[j].f64());
            let mj = b1 * m.data()[j].f64() + (1.0 - b1) * g;
            let vj = b2 * v.data()[j].f64() + (1.0 - b2) * g * g;
            m.data_mut()[j] = T::c(mj);
            v.data_mut()[j] = T::c(vj);
            let step = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            value.data_mut()[j] = T::c(value.data()[j].f64() - step);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-6), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 1e-6) - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 1e-6) - (1e-3 + 1e-6) / 2.0).abs() < 1e-15);
        let lrs: Vec<f64> = (0..=37).map(|t| cosine_lr(t, 37, 1e-3, 1e-6)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(&[vals.len()], vals.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_grads_leave_params_and_decay_moments() {
        let mut s = store(&[1.0, -2.0]);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 1e-3, AdamHyper::default()).unwrap();
        assert_eq!(s.value(s.id("w").unwrap()).data(), &[1.0, -2.0]);
        let mut st2 = AdamState::new(&s);
        st2.m[0] = Tensor::full(&[2], 1.0);
        st2.v[0] = Tensor::full(&[2], 1.0);
        let mut s2 = store(&[1.0, -2.0]);
        adam_step(&mut s2, &mut st2, 0.0, AdamHyper::default()).unwrap();
        assert!((st2.m[0].data()[0] - 0.9).abs() < 1e-12);
        assert!((st2.v[0].data()[0] - 0.999).abs() < 1e-12);
    }

    #[test]
    fn first_step_is_sign_sized() {
        let mut s = store(&[0.5, 0.5, 0.5]);
        s.params_mut().next().unwrap().grad = Some(Tensor::new(&[3], vec![3.0, -0.02, 1e-4]).unwrap());
        let mut st = AdamState::new(&s);
        let lr = 1e-2;
        adam_step(&mut s, &mut st, lr, AdamHyper::default()).unwrap();
        let v = s.value(s.id("w").unwrap()).data().to_vec();
        for (x, g) in v.iter().zip([3.0f64, -0.02, 1e-4]) {
            let want = 0.5 - lr * g / (g.abs() + 1e-8);
            assert!((x - want).abs() < 1e-12, "{x} vs {want}");
        }
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        let target = [1.5, -0.5, 2.0];
        let mut s = store(&[0.0, 0.0, 0.0]);
        let mut st = AdamState::new(&s);
        let loss = |s: &ParamStore<f64>| {
            s.value(s.id("w").unwrap()).data().iter().zip(target).map(|(x, t)| (x - t).powi(2)).sum::<f64>()
        };
        let mut prev = loss(&s);
        for _ in 0..10 {
            let w = s.value(s.id("w").unwrap()).clone();
            let g = Tensor::from_fn(&[3], |i| 2.0 * (w.data()[i] - target[i]));
            s.params_mut().next().unwrap().grad = Some(g);
            adam_step(&mut s, &mut st, 0.1, AdamHyper::default()).unwrap();
            let l = loss(&s);
            assert!(l < prev);
            prev = l;
        }
        assert_eq!(st.t, 10);
    }
}
