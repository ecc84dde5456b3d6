use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compare tape gradients against central differences.
///
/// `loss` builds the scalar objective from the current parameter values.
/// For each parameter at most `samples_per_param` coordinates are probed
/// (`0` probes all of them). The error for one coordinate is
/// `|g_tape − g_fd| / max(|g_tape|, |g_fd|, 1e-8)`.
pub fn finite_difference_check<F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    samples_per_param: usize,
    seed: u64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::contract(format!(
            "finite difference step {eps} outside [1e-6, 1e-4]"
        )));
    }
    store.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    tape.backward_into(l, store)?;

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(&mut tape, store)?;
        Ok(tape.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).value.numel();
        let coords: Vec<usize> = if samples_per_param == 0 || samples_per_param >= n {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let orig = store.get(id).value.data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = store.get(id).grad[c];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                if rel >= report.max_rel_error {
                    report.worst_param = store.get(id).name.clone();
                    report.worst_index = c;
                }
            }
        }
    }
    Ok(report)
}
