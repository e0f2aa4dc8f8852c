use ndarray::{Array1, Array2, Zip};

use super::gaussian::LN_2PI;
use crate::data::LikelihoodFamily;
use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

pub const BERNOULLI_P_MIN: f64 = 1e-7;
pub const BERNOULLI_P_MAX: f64 = 1.0 - 1e-7;

/// Per-row `ln p(x | params)`. `params` holds the mean for the unit-variance
/// Gaussian and the success probability for the Bernoulli.
pub fn log_likelihood(
    params: &Array2<f64>,
    x: &Array2<f64>,
    family: LikelihoodFamily,
) -> Result<Array1<f64>> {
    if params.dim() != x.dim() {
        return Err(Error::shape(x.dim(), params.dim()));
    }
    let d = x.ncols() as f64;
    let mut out = Array1::zeros(x.nrows());
    Zip::from(&mut out)
        .and(params.rows())
        .and(x.rows())
        .for_each(|o, p, x| {
            *o = match family {
                LikelihoodFamily::GaussianUnitVariance => {
                    let sq: f64 = p.iter().zip(x).map(|(m, v)| (v - m).powi(2)).sum();
                    -0.5 * sq - 0.5 * d * LN_2PI
                }
                LikelihoodFamily::Bernoulli => p
                    .iter()
                    .zip(x)
                    .map(|(&p, &v)| {
                        let p = p.clamp(BERNOULLI_P_MIN, BERNOULLI_P_MAX);
                        v * p.ln() + (1.0 - v) * (1.0 - p).ln()
                    })
                    .sum(),
            };
        });
    Ok(out)
}

/// Draws observations from the likelihood with the given parameters.
pub fn sample_observations<R: rand::Rng + ?Sized>(
    params: &Array2<f64>,
    family: LikelihoodFamily,
    rng: &mut R,
) -> Array2<f64> {
    match family {
        LikelihoodFamily::GaussianUnitVariance => params + &super::gaussian::standard_normal(rng, params.dim()),
        LikelihoodFamily::Bernoulli => params.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 }),
    }
}

/// Graph version of [`log_likelihood`]; `x` is data (no gradient), result `N x 1`.
pub fn log_likelihood_var(g: &mut Graph, params: Var, x: &Array2<f64>, family: LikelihoodFamily) -> Var {
    assert_eq!(g.shape(params), x.dim(), "decoder output shape");
    match family {
        LikelihoodFamily::GaussianUnitVariance => {
            let d = x.ncols() as f64;
            let xv = g.constant(x.clone());
            let r = g.sub(xv, params);
            let sq = g.square(r);
            let s = g.sum_rows(sq);
            let s = g.scale(s, -0.5);
            g.offset(s, -0.5 * d * LN_2PI)
        }
        LikelihoodFamily::Bernoulli => {
            let p = g.clamp(params, BERNOULLI_P_MIN, BERNOULLI_P_MAX);
            let lp = g.log(p);
            let neg = g.neg(p);
            let q = g.offset(neg, 1.0);
            let lq = g.log(q);
            let xv = g.constant(x.clone());
            let xc = g.constant(x.mapv(|v| 1.0 - v));
            let a = g.mul(xv, lp);
            let b = g.mul(xc, lq);
            let t = g.add(a, b);
            g.sum_rows(t)
        }
    }
}
