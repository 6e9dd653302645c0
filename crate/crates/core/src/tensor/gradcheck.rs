use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Scalar, Var};
use crate::error::{Result, ScanError};

/// Which scalars to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Probes {
    All,
    /// `count` distinct scalars drawn uniformly over the whole store.
    Sample { count: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(parameter name, flat index, analytic, numeric)` of the worst probe.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with a `1e-8` floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<T: Scalar, F>(params: &ParamStore<T>, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph<'_, T>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let l = f(&mut g)?;
    Ok(g.value(l).item().f64())
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` records a scalar objective on the graph it is handed. It must be
/// deterministic: the objective is evaluated twice at the unperturbed point
/// and any difference is reported as [`ScanError::NonDeterministic`].
pub fn finite_diff_check<T: Scalar, F>(
    params: &mut ParamStore<T>,
    probes: Probes,
    eps: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_, T>) -> Result<Var>,
{
    let (base, grads) = {
        let mut g = Graph::new(&*params);
        let l = f(&mut g)?;
        (g.value(l).item().f64(), g.backward(l)?)
    };
    if evaluate(params, &mut f)?.to_bits() != base.to_bits() {
        return Err(ScanError::NonDeterministic);
    }

    let offsets: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.tensor(id).len()).map(move |j| (id, j)))
        .collect();
    let chosen: Vec<(ParamId, usize)> = match probes {
        Probes::All => offsets,
        Probes::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = count.min(offsets.len());
            let mut picked: Vec<usize> = index::sample(&mut rng, offsets.len(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| offsets[i]).collect()
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (id, j) in chosen {
        let original = params.tensor(id).data()[j];
        params.tensor_mut(id).data_mut()[j] = T::of(original.f64() + eps);
        let plus = evaluate(params, &mut f);
        params.tensor_mut(id).data_mut()[j] = T::of(original.f64() - eps);
        let minus = evaluate(params, &mut f);
        params.tensor_mut(id).data_mut()[j] = original;
        let numeric = (plus? - minus?) / (2.0 * eps);
        let analytic = grads.get(id).map_or(0.0, |g| g[j].f64());
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((params.get(id).name.clone(), j, analytic, numeric));
        }
    }
    Ok(report)
}
