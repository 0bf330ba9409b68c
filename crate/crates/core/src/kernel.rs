//! Random-variate generators used by the sampler.
//!
//! Every gamma draw is in shape–scale form (mean = shape · scale). Rates that
//! appear in the model's conditionals are inverted at the call site.
//!
//! Gamma, normal, Poisson and binomial variates come from `rand_distr`; the
//! model-specific generators (Pólya-Gamma, CRT, zero-truncated Poisson,
//! Wishart via Bartlett, precision-form Gaussians) are built on top of them.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Open01, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Number of explicit gamma terms in the Pólya-Gamma approximation.
pub const PG_TRUNCATION: usize = 5;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Gamma(shape, scale) without argument checks. Never returns zero: draws that
/// underflow are floored at the smallest positive normal `f64`.
pub(crate) fn gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0, "gamma({shape}, {scale})");
    if shape < 1.0 {
        // G(a) = G(a + 1) · U^{1/a}, evaluated in log space so that tiny
        // shapes do not round to zero.
        let g1 = Gamma::new(shape + 1.0, 1.0).expect("valid gamma").sample(rng);
        let u: f64 = Open01.sample(rng);
        let log_x = g1.ln() + u.ln() / shape + scale.ln();
        log_x.exp().max(f64::MIN_POSITIVE)
    } else {
        Gamma::new(shape, scale)
            .expect("valid gamma")
            .sample(rng)
            .max(f64::MIN_POSITIVE)
    }
}

pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma scale", scale)?;
    Ok(gamma(shape, scale, rng))
}

pub fn sample_normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> Result<f64> {
    if !(sd >= 0.0) || !sd.is_finite() || !mean.is_finite() {
        return Err(Error::domain(format!("normal({mean}, {sd})")));
    }
    Ok(mean + sd * std_normal(rng))
}

/// Draw from `N(precision⁻¹ · h, precision⁻¹)` given the Cholesky factor of
/// the precision. This is the canonical (information) form every latent
/// conditional in the sampler arrives in.
pub(crate) fn mvn_canonical<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    h: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let n = h.len();
    let mean = chol.solve(h);
    let eps = DVector::from_fn(n, |_, _| std_normal(rng));
    // Lᵀ z = ε  gives  Cov(z) = (L Lᵀ)⁻¹
    let z = chol
        .l_dirty()
        .tr_solve_lower_triangular(&eps)
        .expect("cholesky factor has a positive diagonal");
    mean + z
}

/// Multivariate normal parameterized by its precision matrix.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if precision.nrows() != mean.len() {
        return Err(Error::shape(format!(
            "mvn: mean has length {}, precision is {}x{}",
            mean.len(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    let chol = linalg::cholesky(precision, "mvn precision")?;
    let eps = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    let z = chol
        .l_dirty()
        .tr_solve_lower_triangular(&eps)
        .expect("cholesky factor has a positive diagonal");
    Ok(mean + z)
}

/// Bartlett construction `M A Aᵀ Mᵀ` for any square root `M Mᵀ = scale`.
pub(crate) fn wishart_with_root<R: Rng + ?Sized>(root: &DMatrix<f64>, dof: f64, rng: &mut R) -> DMatrix<f64> {
    let n = root.nrows();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        // chi-square(dof - i) = 2 · Gamma((dof - i) / 2)
        a[(i, i)] = (2.0 * gamma((dof - i as f64) / 2.0, 1.0, rng)).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let ma = root * a;
    let w = &ma * ma.transpose();
    linalg::symmetrize(&w)
}

fn check_wishart(scale: &DMatrix<f64>, dof: f64) -> Result<()> {
    if !scale.is_square() {
        return Err(Error::shape("wishart scale must be square"));
    }
    let n = scale.nrows() as f64;
    if !(dof >= n) || !dof.is_finite() {
        return Err(Error::domain(format!("wishart dof {dof} < dimension {n}")));
    }
    Ok(())
}

/// Wishart(scale, dof) with mean `dof · scale`.
pub fn sample_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    check_wishart(scale, dof)?;
    let chol = linalg::cholesky(scale, "wishart scale")?;
    Ok(wishart_with_root(&chol.l(), dof, rng))
}

/// Inverse-Wishart(scale, dof) with mean `scale / (dof − n − 1)`, drawn as the
/// inverse of a Wishart draw with inverted scale.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_wishart(scale, dof)?;
    let w = sample_precision_from_inverse_wishart(scale, dof, rng)?;
    linalg::spd_inverse(&w, "inverse-wishart draw")
}

/// If `Σ ~ IW(scale, dof)` this returns a draw of `Σ⁻¹ ~ W(scale⁻¹, dof)`
/// without forming `scale⁻¹`: with `scale = L Lᵀ`, `L⁻ᵀ` is a square root of
/// `scale⁻¹`.
pub(crate) fn sample_precision_from_inverse_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let chol = linalg::cholesky(scale, "inverse-wishart scale")?;
    let n = scale.nrows();
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Invariant("triangular inverse failed".into()))?;
    Ok(wishart_with_root(&l_inv.transpose(), dof, rng))
}

/// Chinese restaurant table count: the number of occupied tables after `n`
/// customers with concentration `r`.
pub fn sample_crt<R: Rng + ?Sized>(n: u64, r: f64, rng: &mut R) -> Result<u64> {
    check_positive("crt concentration", r)?;
    Ok(crt(n, r, rng))
}

pub(crate) fn crt<R: Rng + ?Sized>(n: u64, r: f64, rng: &mut R) -> u64 {
    if n == 0 {
        return 0;
    }
    // The first customer always opens a table.
    let mut tables = 1;
    for i in 1..n {
        let p = r / (r + i as f64);
        if rng.random::<f64>() < p {
            tables += 1;
        }
    }
    tables
}

/// Mean of PG(b, c): `b / (2c) · tanh(c / 2)`.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-2 {
        let x2 = c * c / 4.0;
        b / 4.0 * (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0)
    } else {
        b / (2.0 * c) * (c / 2.0).tanh()
    }
}

/// Variance of PG(b, c): `b / (4c³) · (sinh c − c) · sech²(c/2)`.
pub fn polya_gamma_variance(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-2 {
        let c2 = c * c;
        let series = 1.0 / 6.0 + c2 / 120.0 + c2 * c2 / 5040.0;
        let sech = 1.0 / (c / 2.0).cosh();
        b / 4.0 * series * sech * sech
    } else {
        // (sinh c − c) sech²(c/2) = 2 tanh(c/2) − c sech²(c/2), stable for large c
        let half = c / 2.0;
        let sech = 1.0 / half.cosh();
        b / (4.0 * c * c * c) * (2.0 * half.tanh() - c * sech * sech)
    }
}

/// Approximate Pólya-Gamma PG(b, c) draw.
///
/// Uses the first [`PG_TRUNCATION`] terms of the infinite gamma-sum
/// representation `(1 / 2π²) Σ_k g_k / ((k − ½)² + c² / 4π²)`, `g_k ~ Gamma(b, 1)`,
/// and replaces the remaining terms by a single gamma variable whose mean and
/// variance equal those of the discarded tail. The first two moments of the
/// result are therefore exact.
pub fn sample_polya_gamma<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> Result<f64> {
    check_positive("polya-gamma b", b)?;
    if !c.is_finite() {
        return Err(Error::domain(format!("polya-gamma c must be finite, got {c}")));
    }
    Ok(polya_gamma(b, c, rng))
}

pub(crate) fn polya_gamma<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> f64 {
    let two_pi2 = 2.0 * PI * PI;
    let shift = c * c / (4.0 * PI * PI);
    let mut draw = 0.0;
    let mut head_mean = 0.0;
    let mut head_var = 0.0;
    for k in 1..=PG_TRUNCATION {
        let d = (k as f64 - 0.5).powi(2) + shift;
        draw += gamma(b, 1.0, rng) / d;
        head_mean += b / d;
        head_var += b / (d * d);
    }
    draw /= two_pi2;
    head_mean /= two_pi2;
    head_var /= two_pi2 * two_pi2;

    let tail_mean = polya_gamma_mean(b, c) - head_mean;
    let tail_var = polya_gamma_variance(b, c) - head_var;
    if tail_mean > 0.0 && tail_var > 0.0 {
        draw += gamma(tail_mean * tail_mean / tail_var, tail_var / tail_mean, rng);
    } else if tail_mean > 0.0 {
        draw += tail_mean;
    }
    draw
}

/// Poisson draw; `lambda == 0` returns 0.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("poisson rate must be >= 0, got {lambda}")));
    }
    Ok(poisson(lambda, rng))
}

pub(crate) fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    // rand_distr caps the rate; beyond it the counts are astronomically large anyway
    let lambda = lambda.min(1e15);
    Poisson::new(lambda).expect("valid poisson").sample(rng) as u64
}

/// Zero-truncated Poisson: `P(k) = λᵏ e^{−λ} / (k! (1 − e^{−λ}))`, `k ≥ 1`.
///
/// For `λ ≥ 1` Poisson zeros are rejected (acceptance ≥ 1 − e⁻¹). Below that
/// the pmf is inverted directly, which keeps the cost bounded as `λ → 0`.
pub fn sample_truncated_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    check_positive("truncated poisson rate", lambda)?;
    Ok(truncated_poisson(lambda, rng))
}

pub(crate) fn truncated_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda >= 1.0 {
        loop {
            let k = poisson(lambda, rng);
            if k >= 1 {
                return k;
            }
        }
    }
    let u: f64 = rng.random();
    let mut k = 1u64;
    let mut p = lambda / lambda.exp_m1();
    let mut cdf = p;
    while u > cdf && k < 1000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        if p < f64::EPSILON * 1e-3 {
            break;
        }
    }
    k
}

/// Multinomial counts from non-negative weights (need not be normalized).
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, weights: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if weights.is_empty() {
        return Err(Error::domain("multinomial needs at least one category"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain("multinomial weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("multinomial weights sum to zero"));
    }
    let mut out = vec![0; weights.len()];
    multinomial_into(n, weights, total, &mut out, rng);
    Ok(out)
}

/// Multinomial counts from log-weights, robust to weights that would
/// underflow in linear space.
pub(crate) fn multinomial_log_into<R: Rng + ?Sized>(
    n: u64,
    log_weights: &[f64],
    scratch: &mut Vec<f64>,
    out: &mut [u64],
    rng: &mut R,
) {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    scratch.clear();
    scratch.extend(log_weights.iter().map(|l| (l - max).exp()));
    let total: f64 = scratch.iter().sum();
    multinomial_into(n, scratch, total, out, rng);
}

fn multinomial_into<R: Rng + ?Sized>(n: u64, weights: &[f64], total: f64, out: &mut [u64], rng: &mut R) {
    let mut remaining = n;
    let mut mass = total;
    let last = weights.len() - 1;
    for (k, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            out[k] = 0;
            continue;
        }
        if k == last {
            out[k] = remaining;
            break;
        }
        let p = if mass > 0.0 { (w / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = if p >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining, p).expect("valid binomial").sample(rng)
        };
        out[k] = draw;
        remaining -= draw;
        mass -= w;
    }
}

/// Numerically safe `ln(1 + eˣ)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard logistic function `1 / (1 + e⁻ˣ)`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
