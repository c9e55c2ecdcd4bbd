//! Scalar normal distribution functions and small matrix utilities shared by
//! every other module.
//!
//! `normal_cdf` / `normal_quantile` are rational approximations (Cody's
//! erf/erfc and Wichura's PPND16) accurate to a few ulps; the unit tests
//! validate them against an adaptive-quadrature / bisection oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

// ---------------------------------------------------------------------------
// Domain wrappers
// ---------------------------------------------------------------------------

/// Symmetric covariance-like matrix (also used for sample covariance and
/// precision estimates). Validated: square, finite, symmetric, positive
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    m: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Domain(format!(
                "covariance matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = 1.0 + m.amax();
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("covariance matrix has non-finite entries".into()));
        }
        for i in 0..m.nrows() {
            if m[(i, i)] <= 0.0 {
                return Err(Error::Domain(format!(
                    "covariance diagonal entry {i} is not strictly positive"
                )));
            }
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!(
                        "covariance matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(CovMatrix { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }
}

/// Mean vector of the latent Gaussian; entries must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector {
    v: DVector<f64>,
}

impl MeanVector {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain("mean vector has non-finite entries".into()));
        }
        Ok(MeanVector { v })
    }

    pub fn zeros(p: usize) -> Self {
        MeanVector { v: DVector::zeros(p) }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.v
    }
}

// ---------------------------------------------------------------------------
// Standard normal distribution function and quantile
// ---------------------------------------------------------------------------

/// Cody's rational approximation of erfc, |relative error| < 1.2e-16.
fn erfc_cody(x: f64) -> f64 {
    if x < -0.46875 {
        return 2.0 - erfc_cody(-x);
    }
    if x <= 0.46875 {
        return 1.0 - erf_central(x);
    }
    let y = x;
    if y <= 4.0 {
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        return scaled_exp_mul(y, r);
    }
    {
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        const SQRPI: f64 = 5.6418958354775628695e-1;
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let mut r = ysq * (num + P[4]) / (den + Q[4]);
        r = (SQRPI - r) / y;
        scaled_exp_mul(y, r)
    }
}

/// Computes exp(-y^2) * r with the split-argument trick that keeps full
/// precision in the exponential for large y.
fn scaled_exp_mul(y: f64, r: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Cody's rational approximation of erf on the central region |x| <= 0.46875.
fn erf_central(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let y = x.abs();
    let ysq = if y > 1e-300 { y * y } else { 0.0 };
    let mut num = A[4] * ysq;
    let mut den = ysq;
    for i in 0..3 {
        num = (num + A[i]) * ysq;
        den = (den + B[i]) * ysq;
    }
    x * (num + A[3]) / (den + B[3])
}

/// Standard normal distribution function. Total on [-inf, +inf].
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc_cody(-x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Wichura's PPND16 rational approximation of the standard normal quantile,
/// for u strictly inside (0, 1). Accurate to ~1e-15 relative.
fn quantile_core(u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0);
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { u } else { 1.0 - u };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_3)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_3e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_132e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal quantile. `0` and `1` map to the infinities; values
/// outside `[0, 1]` are a domain error.
pub fn normal_quantile(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!(
            "quantile argument {u} outside [0, 1]"
        )));
    }
    Ok(quantile_total(u))
}

/// Quantile for arguments already known to lie in [0, 1].
pub(crate) fn quantile_total(u: f64) -> f64 {
    if u <= 0.0 {
        f64::NEG_INFINITY
    } else if u >= 1.0 {
        f64::INFINITY
    } else {
        quantile_core(u)
    }
}

/// Standard normal draw by inversion; keeps all randomness on one uniform
/// stream so every sampler in the crate is reproducible from its seed.
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    quantile_core(u.max(1e-300))
}

// ---------------------------------------------------------------------------
// Conditional Gaussian parameters
// ---------------------------------------------------------------------------

/// Mean and variance of coordinate `j` of N(mu, sigma) conditional on all
/// other coordinates being fixed at `w_rest` (listed in index order with
/// coordinate `j` removed).
///
/// Solves one linear system against the conditioning block; no explicit
/// inverse is formed.
pub fn conditional_params(
    j: usize,
    w_rest: &[f64],
    mu: &MeanVector,
    sigma: &CovMatrix,
) -> Result<(f64, f64)> {
    let p = sigma.dim();
    if j >= p || w_rest.len() != p - 1 || mu.dim() != p {
        return Err(Error::Domain(format!(
            "conditional_params dimension mismatch (j={j}, p={p}, rest={})",
            w_rest.len()
        )));
    }
    let m = sigma.matrix();
    let mv = mu.vector();
    if p == 1 {
        return Ok((mv[0], m[(0, 0)]));
    }
    let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let block = DMatrix::from_fn(p - 1, p - 1, |r, c| m[(rest[r], rest[c])]);
    let cross = DVector::from_fn(p - 1, |r, _| m[(rest[r], j)]);
    let weights = match block.clone().cholesky() {
        Some(ch) => ch.solve(&cross),
        None => block
            .lu()
            .solve(&cross)
            .ok_or_else(|| Error::Numerical(format!("singular conditioning block for coordinate {j}")))?,
    };
    let mut mean = mv[j];
    for (r, &k) in rest.iter().enumerate() {
        mean += weights[r] * (w_rest[r] - mv[k]);
    }
    let var = m[(j, j)] - weights.dot(&cross);
    if !(var > 0.0) || !mean.is_finite() {
        return Err(Error::Numerical(format!(
            "non-positive conditional variance for coordinate {j}"
        )));
    }
    Ok((mean, var))
}

// ---------------------------------------------------------------------------
// Positive-definiteness repair
// ---------------------------------------------------------------------------

/// Clips eigenvalues below `floor` and reconstructs. Returns the input
/// unchanged when it is already sufficiently positive definite, which makes
/// the operation idempotent.
pub fn psd_repair(sigma: &DMatrix<f64>, floor: f64) -> Result<CovMatrix> {
    if !sigma.is_square() {
        return Err(Error::Domain("psd_repair input must be square".into()));
    }
    if !(floor > 0.0) {
        return Err(Error::Domain("psd_repair floor must be positive".into()));
    }
    let scale = 1.0 + sigma.amax();
    let mut max_asym = 0.0f64;
    for i in 0..sigma.nrows() {
        for j in 0..i {
            max_asym = max_asym.max((sigma[(i, j)] - sigma[(j, i)]).abs());
        }
    }
    if max_asym > 1e-8 * scale {
        return Err(Error::Domain(format!(
            "psd_repair input asymmetric beyond tolerance (max |A - A'| = {max_asym:.3e})"
        )));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    // Slack absorbs eigenvalue roundoff so a repaired matrix passes through
    // unchanged on the second call.
    let slack = 1e-10 * scale;
    let min_eig = eig.eigenvalues.min();
    if min_eig >= floor - slack {
        return CovMatrix::new(sigma.clone());
    }
    let clipped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&e| e.max(floor)),
    );
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    CovMatrix::new(rebuilt)
}

// ---------------------------------------------------------------------------
// Matrix norms
// ---------------------------------------------------------------------------

/// Frobenius and spectral (largest singular value) norms.
pub fn matrix_norms(a: &DMatrix<f64>) -> (f64, f64) {
    let frob = a.norm();
    if frob == 0.0 {
        return (0.0, 0.0);
    }
    let sv = a.clone().svd(false, false).singular_values;
    let spectral = sv.iter().cloned().fold(0.0f64, f64::max);
    (frob, spectral)
}
