use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{config_err, Error, Result};

/// Denominator floor for the relative error, so two gradients that are both
/// at rounding level do not register as a large relative disagreement.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        self.probes.iter().filter(|p| p.pass).count() as f64 / self.probes.len() as f64
    }

    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().fold(0.0, |m, p| m.max(p.rel_err))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Probe> {
        self.probes.iter().filter(|p| !p.pass)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients with central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on `probe_count` randomly chosen scalar entries.
///
/// `f` receives a tape and the store's parameters bound on it (in store
/// order) and returns a scalar.
pub fn grad_check<T, F>(
    params: &ParamStore<T>,
    f: F,
    probe_count: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    if probe_count == 0 {
        return config_err!("grad_check needs at least one probe");
    }
    if !(1e-4..=1e-2).contains(&h) {
        return config_err!("finite-difference step {h} outside [1e-4, 1e-2]");
    }
    let total = params.numel();
    if total == 0 {
        return config_err!("grad_check on an empty parameter set");
    }

    let tape = Tape::new();
    let vars = params.bind(&tape);
    let loss = f(&tape, &vars)?;
    check_finite(loss.value(), "unperturbed parameters")?;
    let mut grads = tape.backward(&loss)?;
    let analytic: Vec<Option<Tensor<T>>> = vars.iter().map(|v| grads.take(v)).collect();
    drop(vars);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut probes = Vec::with_capacity(probe_count);
    for _ in 0..probe_count {
        let mut flat = rng.random_range(0..total);
        let mut pi = 0;
        while flat >= params.get(ParamId(pi)).value.len() {
            flat -= params.get(ParamId(pi)).value.len();
            pi += 1;
        }
        let id = ParamId(pi);
        let name = params.get(id).name.clone();
        let orig = params.value(id).data()[flat];

        let mut eval = |delta: f64| -> Result<f64> {
            work.value_mut(id).data_mut()[flat] = T::c(orig.f64() + delta);
            let t = Tape::inference();
            let v = work.bind(&t);
            let out = f(&t, &v)?;
            let val = out.value().item().f64();
            if !val.is_finite() {
                return Err(Error::Eval(format!(
                    "non-finite loss with {name}[{flat}] perturbed by {delta}"
                )));
            }
            Ok(val)
        };
        let plus = eval(h)?;
        let minus = eval(-h)?;
        work.value_mut(id).data_mut()[flat] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[pi]
            .as_ref()
            .map_or(0.0, |g| g.data()[flat].f64());
        let rel_err = relative_error(a, numeric);
        probes.push(Probe {
            param: name.clone(),
            index: flat,
            analytic: a,
            numeric,
            rel_err,
            pass: rel_err < tol,
        });
    }
    Ok(GradCheckReport { tol, probes })
}

fn check_finite<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Eval(format!("non-finite loss at {what}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testing::{rand_tensor, rng};
    use crate::tensor::ConvSpec;

    #[test]
    fn quadratic() {
        let mut ps = ParamStore::<f64>::new();
        ps.add("theta", Tensor::scalar(3.0)).unwrap();
        let rep = grad_check(&ps, |_, v| v[0].mul(&v[0]), 3, 1e-3, 1e-3, 0).unwrap();
        for p in &rep.probes {
            assert_eq!(p.analytic, 6.0);
            assert!((p.numeric - 6.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn l1_of_pointwise_conv() {
        let mut r = rng(12);
        let spec = ConvSpec::pointwise(2, 2);
        let mut ps = ParamStore::<f64>::new();
        ps.add("w", rand_tensor(&mut r, &spec.weight_shape())).unwrap();
        ps.add("b", rand_tensor(&mut r, &[2])).unwrap();
        let x = rand_tensor::<f64>(&mut r, &[2, 2, 2]);
        // Target far from any output so no residual sits near the kink.
        let target = Tensor::<f64>::full(&[2, 2, 2], 10.0);
        let rep = grad_check(
            &ps,
            |t, v| {
                let y = t.constant(x.clone()).conv2d(&spec, &v[0], Some(&v[1]))?;
                Ok(y.sub(&t.constant(target.clone()))?.mean_abs())
            },
            20,
            1e-3,
            1e-3,
            1,
        )
        .unwrap();
        assert_eq!(rep.pass_fraction(), 1.0, "{:?}", rep.failures().collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let mut ps = ParamStore::<f64>::new();
        ps.add("theta", Tensor::scalar(1.0)).unwrap();
        assert!(grad_check(&ps, |_, v| Ok(v[0].clone()), 1, 0.5, 1e-3, 0).is_err());
        let err = grad_check(
            &ps,
            |t, v| {
                let inf = t.constant(Tensor::scalar(f64::INFINITY));
                v[0].mul(&inf)
            },
            1,
            1e-3,
            1e-3,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Eval(_)));
    }
}
