//! SINRs, Shannon rates and the successive-convex-approximation surrogate
//! `alpha * log2(gamma) + beta`, which lower-bounds `log2(1 + gamma)` and is
//! tight at the expansion point.

// Float math for toolchains whose `core` has no inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::{effective_gain, ChannelVector};
use crate::error::{invalid, Result};
use crate::phase::BeamformingVector;

/// Receiver noise variance in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePower(f64);

impl NoisePower {
    pub fn new(sigma_sq: f64) -> Result<Self> {
        if !sigma_sq.is_finite() || sigma_sq <= 0.0 {
            return Err(invalid("noise power must be finite and positive"));
        }
        Ok(Self(sigma_sq))
    }

    pub fn sigma_sq(self) -> f64 {
        self.0
    }
}

/// NOMA power coefficients for the strong (`k`) and weak (`j`) user and the
/// total transmit power. `p_k + p_j = 1` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSplit {
    p_k: f64,
    p_j: f64,
    p_total: f64,
}

impl PowerSplit {
    /// Split with `p_j = 1 - p_k`.
    pub fn new(p_k: f64, p_total: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_k) {
            return Err(invalid("p_k must lie in [0, 1]"));
        }
        if !p_total.is_finite() || p_total <= 0.0 {
            return Err(invalid("total power must be finite and positive"));
        }
        Ok(Self {
            p_k,
            p_j: 1.0 - p_k,
            p_total,
        })
    }

    pub fn from_parts(p_k: f64, p_j: f64, p_total: f64) -> Result<Self> {
        if (p_k + p_j - 1.0).abs() > 1e-9 {
            return Err(invalid("power coefficients must sum to one"));
        }
        if !(0.0..=1.0).contains(&p_j) {
            return Err(invalid("p_j must lie in [0, 1]"));
        }
        let mut split = Self::new(p_k, p_total)?;
        split.p_j = p_j;
        Ok(split)
    }

    pub fn p_k(&self) -> f64 {
        self.p_k
    }

    pub fn p_j(&self) -> f64 {
        self.p_j
    }

    pub fn p_total(&self) -> f64 {
        self.p_total
    }

    pub fn with_total(&self, p_total: f64) -> Result<Self> {
        Self::from_parts(self.p_k, self.p_j, p_total)
    }
}

/// SCA expansion coefficients around `expansion_point`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaCoefficients {
    alpha: f64,
    beta: f64,
    expansion_point: f64,
}

impl ScaCoefficients {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn expansion_point(&self) -> f64 {
        self.expansion_point
    }

    /// Surrogate rate; `-inf` for `gamma <= 0`.
    pub fn surrogate(&self, gamma: f64) -> f64 {
        if gamma > 0.0 {
            self.alpha * gamma.log2() + self.beta
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub fn sinr_strong_from_gain(gain_k: f64, split: &PowerSplit, noise: NoisePower) -> f64 {
    gain_k * split.p_k * split.p_total / noise.sigma_sq()
}

pub fn sinr_weak_from_gain(gain_j: f64, split: &PowerSplit, noise: NoisePower) -> f64 {
    let received = gain_j * split.p_total;
    received * split.p_j / (noise.sigma_sq() + received * split.p_k)
}

/// SINR of the strong user after SIC removes the weak user's signal.
pub fn sinr_strong(
    g_k: &ChannelVector,
    phi: &BeamformingVector,
    split: &PowerSplit,
    noise: NoisePower,
) -> Result<f64> {
    Ok(sinr_strong_from_gain(
        effective_gain(g_k, phi)?,
        split,
        noise,
    ))
}

/// SINR of the weak user, which treats the strong user's signal as noise.
pub fn sinr_weak(
    g_j: &ChannelVector,
    phi: &BeamformingVector,
    split: &PowerSplit,
    noise: NoisePower,
) -> Result<f64> {
    Ok(sinr_weak_from_gain(effective_gain(g_j, phi)?, split, noise))
}

/// `log2(1 + gamma)` in b/s/Hz.
pub fn exact_rate(gamma: f64) -> Result<f64> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(invalid("SINR must be nonnegative"));
    }
    Ok(gamma.ln_1p() / core::f64::consts::LN_2)
}

pub fn sca_coefficients(gamma_hat: f64) -> Result<ScaCoefficients> {
    if !gamma_hat.is_finite() || gamma_hat <= 0.0 {
        return Err(invalid("SCA expansion point must be finite and positive"));
    }
    let alpha = gamma_hat / (1.0 + gamma_hat);
    let beta = gamma_hat.ln_1p() / core::f64::consts::LN_2 - alpha * gamma_hat.log2();
    Ok(ScaCoefficients {
        alpha,
        beta,
        expansion_point: gamma_hat,
    })
}

pub fn surrogate_rate(coeffs: &ScaCoefficients, gamma: f64) -> Result<f64> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(invalid("surrogate rate needs a positive SINR"));
    }
    Ok(coeffs.surrogate(gamma))
}
