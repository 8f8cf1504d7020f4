//! Central finite-difference verification of analytic gradients.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error after discounting central-difference roundoff.
    pub max_rel_error: f64,
    /// Same, without the roundoff discount.
    pub raw_max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinate with the largest error: name, index, analytic, numeric.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compare analytic gradients against central differences on randomly
/// sampled coordinates.
///
/// `loss` must be deterministic. When called with `true` it also has to
/// populate gradients (the checker zeroes them first); with `false` it only
/// returns the loss. The relative error per coordinate is
/// `(|a - n| - r)+ / max(1e-8, |a| + |n|)`, where `r = 8 u max(1, |L|) / eps`
/// bounds the roundoff of the central difference itself.
pub fn grad_check<F>(params: &mut ParameterSet, eps: f64, samples: usize, rng: &mut Rng, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParameterSet, bool) -> Result<f64>,
{
    params.zero_grad();
    let base = loss(params, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("grad_check: loss is {base}")));
    }

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, e)| (0..e.value.len()).map(move |i| (name.to_string(), i)))
        .collect();
    if coords.is_empty() {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            raw_max_rel_error: 0.0,
            coords_checked: 0,
            worst: None,
        });
    }
    let chosen: Vec<(String, usize)> = if samples >= coords.len() {
        coords
    } else {
        (0..samples).map(|_| coords[rng.random_range(0..coords.len())].clone()).collect()
    };

    let analytic: Vec<f64> = chosen
        .iter()
        .map(|(name, i)| params.grad(name).map(|g| g.data()[*i]))
        .collect::<Result<_>>()?;

    let roundoff = 8.0 * f64::EPSILON * base.abs().max(1.0) / eps;
    let mut worst: f64 = 0.0;
    let mut raw: f64 = 0.0;
    let mut at = None;
    for ((name, i), a) in chosen.iter().zip(analytic) {
        let orig = params.value(name)?.data()[*i];
        params.value_mut(name)?.data_mut()[*i] = orig + eps;
        let plus = loss(params, false)?;
        params.value_mut(name)?.data_mut()[*i] = orig - eps;
        let minus = loss(params, false)?;
        params.value_mut(name)?.data_mut()[*i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("grad_check: loss non-finite when perturbing `{name}`[{i}]")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let diff = (a - numeric).abs();
        let scale = (a.abs() + numeric.abs()).max(1e-8);
        raw = raw.max(diff / scale);
        let rel = (diff - roundoff).max(0.0) / scale;
        if at.is_none() || rel > worst {
            worst = rel;
            at = Some((name.clone(), *i, a, numeric));
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        raw_max_rel_error: raw,
        coords_checked: chosen.len(),
        worst: at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::rng::rng_from;
    use crate::tensor::Tensor;

    #[test]
    fn constant_loss_has_zero_error() {
        let mlp = Mlp::new("m", &[2, 2], Activation::Tanh);
        let mut p = ParameterSet::new(0);
        mlp.init(&mut p).unwrap();
        let r = grad_check(&mut p, 1e-4, 10, &mut rng_from(0), |_, _| Ok(3.0)).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn quadratic_loss_on_identity_net() {
        let mlp = Mlp::new("id", &[3, 3], Activation::None);
        let mut p = ParameterSet::new(0);
        mlp.init(&mut p).unwrap();
        {
            let w = p.value_mut("id.l0.w").unwrap();
            w.fill(0.0);
            for i in 0..3 {
                w.data_mut()[i * 4] = 1.0;
            }
        }
        p.value_mut("id.l0.b").unwrap().fill(0.0);
        let x = Tensor::row_vector(vec![0.5, -1.5, 2.0]);
        let r = grad_check(&mut p, 1e-4, 100, &mut rng_from(1), |p, grad| {
            let (y, cache) = mlp.forward(p, &x)?;
            let loss = 0.5 * y.data().iter().map(|v| v * v).sum::<f64>();
            if grad {
                mlp.backward(p, &cache, &y)?;
            }
            Ok(loss)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn zero_gradient_coordinates_tolerate_roundoff_but_not_real_errors() {
        let mut p = ParameterSet::new(0);
        p.insert("x", Tensor::from_vec(&[2], vec![0.3, 0.7]).unwrap()).unwrap();
        // Invariant to a shared shift in both coordinates: the true gradient of the sum direction is zero.
        let r = grad_check(&mut p, 1e-5, 2, &mut rng_from(0), |p, _| {
            let v = p.value("x")?.data();
            Ok((v[0] - v[1]).powi(2) + 1.0)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.5, "{r:?}");
        let r = grad_check(&mut p, 1e-5, 2, &mut rng_from(0), |p, grad| {
            let v = p.value("x")?.data().to_vec();
            if grad {
                let d = 2.0 * (v[0] - v[1]);
                p.grad_mut("x")?.data_mut().copy_from_slice(&[d, -d]);
            }
            Ok((v[0] - v[1]).powi(2) + 1.0)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut p = ParameterSet::new(0);
        p.insert("x", Tensor::zeros(&[1])).unwrap();
        let err = grad_check(&mut p, 1e-4, 1, &mut rng_from(0), |_, _| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
