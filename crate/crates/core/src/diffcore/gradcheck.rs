use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bound, DiffError, Graph, ParamSet, Var};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst element.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
}

/// Denominator floor for checks through whole networks. Central differences
/// of an O(1) loss carry about 1e-10 of absolute round-off and truncation
/// noise, so derivatives much smaller than this cannot be resolved relatively.
pub const NETWORK_FLOOR: f64 = 1e-5;

/// Compares analytic gradients of the scalar built by `loss` against central
/// differences of step `step`, perturbing every element of every tensor in
/// `params`. Relative error is `|a − n| / max(1e-12, |a| + |n|)`.
pub fn grad_check<F>(params: &ParamSet, loss: F, step: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, DiffError>,
{
    grad_check_with_floor(params, loss, step, 1e-12)
}

/// As [`grad_check`] with relative error `|a − n| / max(floor, |a| + |n|)`.
pub fn grad_check_with_floor<F>(params: &ParamSet, loss: F, step: f64, floor: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, DiffError>,
{
    let mut coords = Vec::new();
    for (name, t) in params.iter() {
        coords.extend((0..t.len()).map(|i| (name.to_string(), i)));
    }
    check_coords(params, loss, step, floor, &coords)
}

/// As [`grad_check_with_floor`] on `count` elements drawn uniformly (with
/// replacement) from all parameter elements. For networks too large to
/// perturb every weight.
pub fn grad_check_sampled<F>(
    params: &ParamSet,
    loss: F,
    step: f64,
    floor: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, DiffError>,
{
    let sizes: Vec<(String, usize)> = params.iter().map(|(n, t)| (n.to_string(), t.len())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    if total == 0 {
        return check_coords(params, loss, step, floor, &[]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<(String, usize)> = (0..count)
        .map(|_| {
            let mut k = rng.gen_range(0..total);
            for (name, len) in &sizes {
                if k < *len {
                    return (name.clone(), k);
                }
                k -= len;
            }
            unreachable!("index below total")
        })
        .collect();
    check_coords(params, loss, step, floor, &coords)
}

fn check_coords<F>(
    params: &ParamSet,
    loss: F,
    step: f64,
    floor: f64,
    coords: &[(String, usize)],
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, DiffError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(DiffError::BadShape(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |p: &ParamSet| -> Result<f64, DiffError> {
        let mut g = Graph::new();
        let b = g.bind(p, false)?;
        let l = loss(&mut g, &b)?;
        let v = g.value(l);
        if v.len() != 1 {
            return Err(DiffError::NotScalar(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut g = Graph::new();
    let bound = g.bind(params, true)?;
    let l = loss(&mut g, &bound)?;
    let analytic = g.backward(l)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, worst_values: None, checked: 0 };
    let mut probe = params.clone();
    for (name, i) in coords {
        let i = *i;
        let grad = analytic.get(name).expect("every bound parameter has a gradient");
        let orig = params.get(name)?.data()[i];
        probe.get_mut(name)?.data_mut()[i] = orig + step;
        let plus = eval(&probe)?;
        probe.get_mut(name)?.data_mut()[i] = orig - step;
        let minus = eval(&probe)?;
        probe.get_mut(name)?.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = grad.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((name.clone(), i));
            report.worst_values = Some((a, numeric));
        }
    }
    Ok(report)
}
