use rand::seq::index::sample;
use serde::Serialize;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rng::{stream, Purpose};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(flat coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compares the gradients stored in `params` against central differences of
/// `loss` on up to `samples` coordinates drawn with `seed` (all coordinates
/// when `samples` covers them).
pub fn finite_diff_check<F>(params: &ParamStore, loss: F, samples: usize, seed: u64, exec: Exec) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> f64 + Sync + Send,
{
    let first = loss(params);
    let second = loss(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let total = params.num_scalars();
    let coords: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        let mut rng = stream(seed, Purpose::GradCheck, 0, 0);
        let mut c = sample(&mut rng, total, samples).into_vec();
        c.sort_unstable();
        c
    };
    let results = par::map(exec, &coords, |&coord| {
        let (id, off) = params.locate(coord);
        let mut p = params.clone();
        let x0 = p.value(id).data()[off];
        p.value_mut(id).data_mut()[off] = x0 + FD_STEP;
        let up = loss(&p);
        p.value_mut(id).data_mut()[off] = x0 - FD_STEP;
        let down = loss(&p);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = params.grad(id).data()[off];
        (coord, analytic, numeric)
    });
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: results.len(), worst: None };
    for (coord, a, n) in results {
        let e = rel_error(a, n);
        if !e.is_finite() {
            return Err(Error::invalid(format!("non-finite gradient at coordinate {coord}")));
        }
        if report.worst.is_none() || e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = Some((coord, a, n));
        }
    }
    Ok(report)
}
