//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensorcore::{ParamStore, Tape, Var};

/// Denominator floor for the relative error, so coordinates whose true
/// derivative is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub name: String,
    /// Entries in the parameter; every one is checked when this is at most the sample size.
    pub size: usize,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of `loss_fn` against central differences with
/// step `h`, sampling up to `per_group` coordinates of every parameter
/// (all of them when the parameter is smaller).
pub fn grad_check<F>(
    store: &mut ParamStore,
    loss_fn: F,
    h: f64,
    per_group: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= per_group {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, per_group).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic.get(id)[i];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite(format!("derivative of {}", store.name(id))));
            }
            worst = worst.max(relative_error(a, numeric));
        }
        groups.push(GroupReport {
            name: store.name(id).to_owned(),
            size: n,
            checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max),
        checked: groups.iter().map(|g| g.checked).sum(),
        groups,
    })
}
