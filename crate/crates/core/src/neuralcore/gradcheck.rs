//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter (all of them when the parameter is smaller).
    pub coords_per_param: usize,
    pub seed: u64,
    /// The fragment draws random numbers per evaluation (dropout); finite
    /// differences are meaningless and every parameter is reported as skipped.
    pub stochastic: bool,
    /// Fault injection for harness self-tests: perturbs the analytic gradient
    /// of the named parameter before comparison.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            coords_per_param: 100,
            seed: 0,
            stochastic: false,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GradEntry {
    Checked(ParamCheck),
    Skipped { name: String, reason: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub fragment: String,
    pub entries: Vec<GradEntry>,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn failing(&self) -> Vec<&ParamCheck> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                GradEntry::Checked(c) if !c.pass => Some(c),
                _ => None,
            })
            .collect()
    }

    pub fn skipped(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, GradEntry::Skipped { .. }))
            .count()
    }
}

/// Below this magnitude a central difference at `eps = 1e-5` is mostly
/// rounding noise (about 1e-10 absolute), so errors are measured against it.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks the tape gradient of the scalar built by `f` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter the fragment uses.
pub fn grad_check<F>(
    fragment: &str,
    store: &ParamStore,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    let used: Vec<String> = tape.params().iter().map(|(n, _)| n.clone()).collect();

    if opts.stochastic {
        return Ok(GradReport {
            fragment: fragment.to_string(),
            entries: used
                .into_iter()
                .map(|name| GradEntry::Skipped {
                    name,
                    reason: "stochastic op".to_string(),
                })
                .collect(),
            tolerance: opts.tolerance,
            max_rel_error: 0.0,
            pass: true,
        });
    }

    let loss = tape.value(out);
    if loss.numel() != 1 {
        return Err(Error::Shape(format!(
            "grad_check needs a scalar, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.item().is_finite() {
        return Err(Error::NonFinite(format!("{fragment}: loss at base point")));
    }
    let grads = tape.backward(out);
    let mut analytic = tape.param_grads(&grads);
    if let Some(bad) = &opts.corrupt {
        if let Some(g) = analytic.get_mut(bad) {
            g.data_mut().iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
        }
    }

    let eval = |s: &ParamStore, name: &str| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(s, &mut t)?;
        let x = t.value(v).item();
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NonFinite(format!("{fragment}: loss while perturbing `{name}`")))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut entries = Vec::with_capacity(used.len());
    let mut overall = 0.0f64;
    for name in &used {
        let numel = store.get(name).map(|t| t.numel()).unwrap_or(0);
        let coords: Vec<usize> = if numel <= opts.coords_per_param {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let ga = &analytic[name];
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            coords_checked: coords.len(),
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            pass: true,
        };
        for &c in &coords {
            let orig = store.get(name).unwrap().data()[c];
            work.get_mut(name).unwrap().data_mut()[c] = orig + opts.eps;
            let fp = eval(&work, name)?;
            work.get_mut(name).unwrap().data_mut()[c] = orig - opts.eps;
            let fm = eval(&work, name)?;
            work.get_mut(name).unwrap().data_mut()[c] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = ga.data()[c];
            let err = relative_error(a, numeric);
            if err >= worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_coord = c;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        worst.pass = worst.max_rel_error <= opts.tolerance;
        overall = overall.max(worst.max_rel_error);
        entries.push(GradEntry::Checked(worst));
    }
    let pass = entries.iter().all(|e| match e {
        GradEntry::Checked(c) => c.pass,
        GradEntry::Skipped { .. } => true,
    });
    Ok(GradReport {
        fragment: fragment.to_string(),
        entries,
        tolerance: opts.tolerance,
        max_rel_error: overall,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(3.0));
        let f = |s: &ParamStore, t: &mut Tape| {
            let x = t.param(s, "x");
            let y = t.unary(x, crate::neuralcore::Unary::Square);
            Ok(t.sum_all(y))
        };
        let mut tape = Tape::new();
        let out = f(&store, &mut tape).unwrap();
        let g = tape.param_grads(&tape.backward(out));
        assert_eq!(g["x"].item(), 6.0);
        let report = grad_check("square", &store, f, &GradCheckOptions::default()).unwrap();
        match &report.entries[0] {
            GradEntry::Checked(c) => {
                assert!((c.numeric - 6.0).abs() < 1e-9);
                assert!(c.max_rel_error < 1e-9);
            }
            _ => panic!("expected a checked entry"),
        }
        assert!(report.pass);
    }

    #[test]
    fn stochastic_fragment_is_skipped() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1.0));
        let opts = GradCheckOptions {
            stochastic: true,
            ..Default::default()
        };
        let report = grad_check(
            "dropout",
            &store,
            |s, t| {
                let x = t.param(s, "x");
                Ok(t.sum_all(x))
            },
            &opts,
        )
        .unwrap();
        assert_eq!(report.skipped(), 1);
        match &report.entries[0] {
            GradEntry::Skipped { reason, .. } => assert_eq!(reason, "stochastic op"),
            _ => panic!(),
        }
    }

    #[test]
    fn corrupted_gradient_is_caught_and_named() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]));
        let opts = GradCheckOptions {
            corrupt: Some("w".into()),
            ..Default::default()
        };
        let report = grad_check(
            "tanh",
            &store,
            |s, t| {
                let w = t.param(s, "w");
                let y = t.tanh(w);
                Ok(t.sum_all(y))
            },
            &opts,
        )
        .unwrap();
        assert!(!report.pass);
        assert_eq!(report.failing()[0].name, "w");
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(1e308));
        let err = grad_check(
            "overflow",
            &store,
            |s, t| {
                let p = t.param(s, "p");
                let y = t.unary(p, crate::neuralcore::Unary::Square);
                Ok(t.sum_all(y))
            },
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
