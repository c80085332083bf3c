use super::{BackwardMutation, NumericsError, ParamStore, ParamVars, Scalar, Tape, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Finite-difference gradient checker.
///
/// For every parameter entry, computes
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-12)` with
/// `fd = (f(x + h) - f(x - h)) / 2h` and reports the maximum.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    pub mutation: Option<BackwardMutation>,
}

impl GradCheck {
    pub fn new(h: f64) -> Self {
        Self { h, mutation: None }
    }

    pub fn with_mutation(mut self, mutation: BackwardMutation) -> Self {
        self.mutation = Some(mutation);
        self
    }

    pub fn run<S, E, F>(&self, params: &ParamStore<S>, f: F) -> Result<GradCheckReport, E>
    where
        S: Scalar,
        E: From<NumericsError>,
        F: for<'t> Fn(&'t Tape<S>, &ParamVars<'t, S>) -> Result<Var<'t, S>, E>,
    {
        let analytic = {
            let tape = Tape::with_mutation(self.mutation.clone());
            let vars = params.register(&tape);
            let loss = f(&tape, &vars)?;
            tape.backward(loss)?.into_params()
        };
        let eval = |p: &ParamStore<S>| -> Result<f64, E> {
            let tape = Tape::new();
            let vars = p.register(&tape);
            Ok(f(&tape, &vars)?.item().as_f64())
        };

        let h = S::lit(self.h);
        let mut work = params.clone();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        };
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let n = params.get(&name).map_or(0, |t| t.len());
            for k in 0..n {
                let orig = params.get(&name).unwrap().data()[k];
                work.get_mut(&name).unwrap().data_mut()[k] = orig + h;
                let plus = eval(&work)?;
                work.get_mut(&name).unwrap().data_mut()[k] = orig - h;
                let minus = eval(&work)?;
                work.get_mut(&name).unwrap().data_mut()[k] = orig;

                let fd = (plus - minus) / (2.0 * self.h);
                let an = analytic.get(&name).unwrap().data()[k].as_f64();
                let denom = an.abs().max(fd.abs()).max(1e-12);
                let rel = (an - fd).abs() / denom;
                report.checked += 1;
                if rel > report.max_rel_error || rel.is_nan() {
                    report.max_rel_error = rel;
                    report.worst = Some((name.clone(), k));
                }
            }
        }
        Ok(report)
    }
}

/// [`GradCheck`] with default settings; returns the maximum relative error.
pub fn grad_check<S, E, F>(f: F, params: &ParamStore<S>, h: f64) -> Result<f64, E>
where
    S: Scalar,
    E: From<NumericsError>,
    F: for<'t> Fn(&'t Tape<S>, &ParamVars<'t, S>) -> Result<Var<'t, S>, E>,
{
    Ok(GradCheck::new(h).run(params, f)?.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{OpKind, Tensor};

    fn bowl_params() -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![1, 3], vec![0.5, -1.25, 2.0]).unwrap());
        p
    }

    #[test]
    fn quadratic_bowl_is_exact() {
        let err = grad_check::<_, NumericsError, _>(
            |_, v| {
                let x = v.get("x")?;
                Ok(x.mul(x)?.sum())
            },
            &bowl_params(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn corrupted_rule_is_detected() {
        let report = GradCheck::new(1e-5)
            .with_mutation(BackwardMutation::ScaleOp {
                kind: OpKind::Gelu,
                factor: 1.5,
            })
            .run::<_, NumericsError, _>(&bowl_params(), |_, v| Ok(v.get("x")?.gelu().sum()))
            .unwrap();
        assert!(report.max_rel_error > 1e-2);
    }
}
