//! Reverse-mode vs central-difference gradient comparison.

use std::collections::BTreeMap;

use crate::array::DenseArray;
use crate::error::Result;
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

/// Denominator floor for the relative error, so that gradients which are
/// zero up to rounding do not blow the ratio up.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_err >= self.tol)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "gradient check h={:e} tol={:e}: max rel err {:.3e}", self.h, self.tol, self.max_rel_err())?;
        for p in &self.params {
            writeln!(
                f,
                "  {:<40} {:.3e}  (elem {}: analytic {:.6e} numeric {:.6e})",
                p.name, p.max_rel_err, p.worst, p.analytic, p.numeric
            )?;
        }
        Ok(())
    }
}

/// Loss value and reverse-mode gradient of every store entry. Entries the
/// function never touches get a zero gradient.
pub fn analytic_gradients<F>(f: &mut F, store: &mut ParameterStore) -> Result<(f64, BTreeMap<String, DenseArray>)>
where
    F: FnMut(&mut Tape, &mut ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let value = tape.value(out).sum();
    let grads = tape.backward(out);
    let mut result: BTreeMap<String, DenseArray> = store
        .iter()
        .map(|(n, p)| (n.to_string(), DenseArray::zeros(p.value.shape())))
        .collect();
    for (name, v) in tape.params() {
        if let Some(g) = grads.get(v) {
            result.insert(name.to_string(), g.clone());
        }
    }
    Ok((value, result))
}

fn evaluate<F>(f: &mut F, store: &mut ParameterStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &mut ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    Ok(tape.value(out).sum())
}

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every element of
/// every store entry.
pub fn numeric_gradients<F>(f: &mut F, store: &mut ParameterStore, h: f64) -> Result<BTreeMap<String, DenseArray>>
where
    F: FnMut(&mut Tape, &mut ParameterStore) -> Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut result = BTreeMap::new();
    for name in names {
        let len = store.get(&name).map_or(0, DenseArray::len);
        let mut g = DenseArray::zeros(store.get(&name).expect("listed").shape());
        for i in 0..len {
            let orig = store.get(&name).expect("listed").data()[i];
            store.get_mut(&name).expect("listed").data_mut()[i] = orig + h;
            let plus = evaluate(f, store)?;
            store.get_mut(&name).expect("listed").data_mut()[i] = orig - h;
            let minus = evaluate(f, store)?;
            store.get_mut(&name).expect("listed").data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        result.insert(name, g);
    }
    Ok(result)
}

pub fn compare(
    analytic: &BTreeMap<String, DenseArray>,
    numeric: &BTreeMap<String, DenseArray>,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let params = numeric
        .iter()
        .map(|(name, n)| {
            let a = analytic.get(name);
            let mut check = ParamCheck {
                name: name.clone(),
                max_rel_err: 0.0,
                worst: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for (i, &nv) in n.data().iter().enumerate() {
                let av = a.map_or(0.0, |a| a.data()[i]);
                let e = relative_error(av, nv);
                let e = if e.is_nan() { f64::INFINITY } else { e };
                if e > check.max_rel_err {
                    check.max_rel_err = e;
                    check.worst = i;
                    check.analytic = av;
                    check.numeric = nv;
                }
            }
            check
        })
        .collect();
    GradCheckReport { h, tol, params }
}

/// Runs `f` once under reverse mode and then by central differences on every
/// parameter element. `f` must be deterministic (reseed any generator inside).
pub fn check_gradients<F>(mut f: F, store: &mut ParameterStore, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &mut ParameterStore) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(&mut f, store)?;
    let numeric = numeric_gradients(&mut f, store, h)?;
    Ok(compare(&analytic, &numeric, h, tol))
}
