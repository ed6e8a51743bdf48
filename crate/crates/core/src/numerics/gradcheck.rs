use rand::seq::index;

use crate::error::Result;
use crate::rng::{self, domain};

use super::model::{Gradients, ModelParams};

/// Denominator floor for relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Central-difference step used by the gradient tests.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients against central differences with step `h`
/// on up to `sample` seeded coordinates (all of them when `sample` covers
/// the parameter count). `loss` must be deterministic.
pub fn finite_diff_check<F>(mut loss: F, p: &ModelParams, tolerance: f64, h: f64, sample: usize, seed: u64) -> Result<FdReport>
where
    F: FnMut(&ModelParams) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = loss(p)?;
    let total = p.num_params();
    let coords: Vec<usize> = if sample >= total {
        (0..total).collect()
    } else {
        let mut rng = rng::stream(seed, rng::tag(domain::FD_COORDS, 0));
        let mut v = index::sample(&mut rng, total, sample).into_vec();
        v.sort_unstable();
        v
    };
    let flat_analytic: Vec<f64> = analytic.values().collect();
    let mut max_rel_err: f64 = 0.0;
    let mut probe = p.clone();
    for &k in &coords {
        let orig = read_flat(&probe, k);
        write_flat(&mut probe, k, orig + h);
        let (up, _) = loss(&probe)?;
        write_flat(&mut probe, k, orig - h);
        let (down, _) = loss(&probe)?;
        write_flat(&mut probe, k, orig);
        let numeric = (up - down) / (2.0 * h);
        max_rel_err = max_rel_err.max(relative_error(flat_analytic[k], numeric));
    }
    Ok(FdReport {
        max_rel_err,
        checked: coords.len(),
        tolerance,
        passed: max_rel_err < tolerance,
    })
}

fn read_flat(p: &ModelParams, mut k: usize) -> f64 {
    for s in p.slices() {
        if k < s.len() {
            return s[k];
        }
        k -= s.len();
    }
    panic!("flat parameter index out of range")
}

fn write_flat(p: &mut ModelParams, mut k: usize, v: f64) {
    for s in p.slices_mut() {
        if k < s.len() {
            s[k] = v;
            return;
        }
        k -= s.len();
    }
    panic!("flat parameter index out of range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::model::Arch;

    #[test]
    fn constant_loss_passes_with_zero_error() {
        let p = ModelParams::init(Arch::Mlp2, 2, 3, 2, 0.0, false, 0).unwrap();
        let zeros = p.zeros_like();
        let report = finite_diff_check(|_| Ok((4.2, zeros.clone())), &p, 1e-4, 1e-5, usize::MAX, 0).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert!(report.passed);
        assert_eq!(report.checked, p.num_params());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = ModelParams::init(Arch::Mlp2, 2, 3, 2, 0.0, false, 0).unwrap();
        // loss = Σ w², claimed gradient = w (should be 2w)
        let report = finite_diff_check(
            |q| {
                let loss = q.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum();
                Ok((loss, q.as_tensors()))
            },
            &p,
            1e-4,
            1e-5,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(!report.passed);
    }
}
