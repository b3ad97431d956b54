//! Line-of-sight steering-vector channels from the transmissive surface to
//! the two secondary users and the primary victim receiver.

use core::f64::consts::PI;

// Float math for toolchains whose `core` has no inherent methods.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{CVec, C64};
use crate::phase::BeamformingVector;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Which receiver a channel vector points to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReceiverId {
    /// Secondary user nominally labelled `k`.
    UserK,
    /// Secondary user nominally labelled `j`.
    UserJ,
    /// Primary-network victim receiver.
    PrimaryL,
}

/// Array geometry and propagation parameters for one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    pub carrier_frequency_hz: f64,
    pub element_spacing_m: f64,
    pub speed_of_light_m_s: f64,
    /// Vertical angle of departure, radians.
    pub vertical_aod_rad: f64,
    /// Horizontal angle of departure, radians.
    pub horizontal_aod_rad: f64,
    /// Doppler parameter; enters only as the global factor `exp(i pi psi)`.
    pub doppler_shift: f64,
    /// Linear amplitude scale applied to every element.
    pub path_gain: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        let carrier = 2.0e9;
        Self {
            carrier_frequency_hz: carrier,
            element_spacing_m: SPEED_OF_LIGHT_M_S / (2.0 * carrier),
            speed_of_light_m_s: SPEED_OF_LIGHT_M_S,
            vertical_aod_rad: 0.0,
            horizontal_aod_rad: 0.0,
            doppler_shift: 0.0,
            path_gain: 1.0,
        }
    }
}

impl GeometryParams {
    /// Phase progression constant `2 pi f_c d_0 / c`.
    pub fn rho(&self) -> f64 {
        2.0 * PI * self.carrier_frequency_hz * self.element_spacing_m / self.speed_of_light_m_s
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("element_spacing_m", self.element_spacing_m),
            ("speed_of_light_m_s", self.speed_of_light_m_s),
            ("vertical_aod_rad", self.vertical_aod_rad),
            ("horizontal_aod_rad", self.horizontal_aod_rad),
            ("doppler_shift", self.doppler_shift),
            ("path_gain", self.path_gain),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(invalid(alloc::format!("{name} is not finite")));
            }
        }
        if self.carrier_frequency_hz <= 0.0 {
            return Err(invalid("carrier_frequency_hz must be positive"));
        }
        if self.element_spacing_m <= 0.0 {
            return Err(invalid("element_spacing_m must be positive"));
        }
        if self.speed_of_light_m_s <= 0.0 {
            return Err(invalid("speed_of_light_m_s must be positive"));
        }
        if self.path_gain < 0.0 {
            return Err(invalid("path_gain must be nonnegative"));
        }
        let rho = self.rho();
        if !rho.is_finite() || rho <= 0.0 {
            return Err(invalid("phase constant rho must be finite and positive"));
        }
        Ok(())
    }

    fn doppler_factor(&self) -> C64 {
        C64::from_polar(1.0, PI * self.doppler_shift)
    }
}

/// Complex per-element gains from the surface to one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    gains: CVec,
    receiver: ReceiverId,
}

impl ChannelVector {
    pub fn new(gains: CVec, receiver: ReceiverId) -> Result<Self> {
        if gains.is_empty() {
            return Err(invalid("channel vector must have at least one element"));
        }
        if gains.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("channel vector has non-finite entries"));
        }
        Ok(Self { gains, receiver })
    }

    pub fn gains(&self) -> &CVec {
        &self.gains
    }

    pub fn receiver(&self) -> ReceiverId {
        self.receiver
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Returns a copy with every entry multiplied by `exp(i alpha)`.
    pub fn rotated(&self, alpha: f64) -> Self {
        let rot = C64::from_polar(1.0, alpha);
        Self {
            gains: self.gains.map(|z| z * rot),
            receiver: self.receiver,
        }
    }
}

/// Uniform linear steering vector: entry `m` is
/// `path_gain * exp(i pi psi) * exp(-i rho sin(theta) cos(phi) m)`.
pub fn steering_vector(
    geom: &GeometryParams,
    m_elements: usize,
    receiver: ReceiverId,
) -> Result<ChannelVector> {
    if m_elements == 0 {
        return Err(invalid("m_elements must be at least 1"));
    }
    geom.validate()?;
    let progression = geom.rho() * geom.vertical_aod_rad.sin() * geom.horizontal_aod_rad.cos();
    let scale = geom.doppler_factor() * geom.path_gain;
    let gains = CVec::from_fn(m_elements, |m, _| {
        C64::from_polar(1.0, -progression * m as f64) * scale
    });
    ChannelVector::new(gains, receiver)
}

/// Rician channel: the steering vector plus a complex Gaussian scatter term,
/// mixed by the K-factor `k_factor` (linear). Both parts carry the same
/// path gain and Doppler factor.
pub fn rician_channel<R: Rng + ?Sized>(
    geom: &GeometryParams,
    m_elements: usize,
    receiver: ReceiverId,
    k_factor: f64,
    rng: &mut R,
) -> Result<ChannelVector> {
    if !k_factor.is_finite() || k_factor < 0.0 {
        return Err(invalid("Rician K-factor must be finite and nonnegative"));
    }
    let los = steering_vector(geom, m_elements, receiver)?;
    let los_weight = (k_factor / (k_factor + 1.0)).sqrt();
    let nlos_weight = (1.0 / (k_factor + 1.0)).sqrt();
    let scale = geom.doppler_factor() * geom.path_gain * nlos_weight;
    let gains = CVec::from_fn(m_elements, |m, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        los.gains[m] * los_weight + C64::new(re, im) * (scale * core::f64::consts::FRAC_1_SQRT_2)
    });
    ChannelVector::new(gains, receiver)
}

/// `|sum_m g_m phi_m|^2`.
pub fn effective_gain(g: &ChannelVector, phi: &BeamformingVector) -> Result<f64> {
    let beam = phi.elements();
    if beam.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: g.len(),
            actual: beam.len(),
        });
    }
    Ok(g.gains
        .iter()
        .zip(beam.iter())
        .map(|(a, b)| a * b)
        .sum::<C64>()
        .norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(theta: f64, phi: f64) -> GeometryParams {
        GeometryParams {
            vertical_aod_rad: theta,
            horizontal_aod_rad: phi,
            ..GeometryParams::default()
        }
    }

    fn beam(values: Vec<C64>) -> BeamformingVector {
        BeamformingVector::new(CVec::from_vec(values)).unwrap()
    }

    #[test]
    fn zero_angle_gives_all_ones() {
        let g = steering_vector(&geom(0.0, 1.3), 4, ReceiverId::UserK).unwrap();
        for z in g.gains().iter() {
            assert_relative_eq!(z.re, 1.0, epsilon = 1e-15);
            assert_relative_eq!(z.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_element_is_one() {
        let g = steering_vector(&geom(0.7, 0.2), 1, ReceiverId::UserJ).unwrap();
        assert_eq!(g.gains()[0], C64::new(1.0, 0.0));
    }

    #[test]
    fn half_wavelength_broadside_alternates_sign() {
        // Independent evaluation: rho = pi at d0 = c / (2 f_c), so entries are
        // exp(-i pi m) = [1, -1, 1].
        let g = steering_vector(&geom(PI / 2.0, 0.0), 3, ReceiverId::UserK).unwrap();
        let expected = [1.0, -1.0, 1.0];
        for (z, e) in g.gains().iter().zip(expected) {
            assert_relative_eq!(z.re, e, epsilon = 1e-12);
            assert_relative_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_geometry() {
        let mut g = geom(0.1, 0.1);
        g.horizontal_aod_rad = f64::NAN;
        assert!(matches!(
            steering_vector(&g, 3, ReceiverId::UserK),
            Err(Error::InvalidInput(_))
        ));
        let mut g = geom(0.1, 0.1);
        g.carrier_frequency_hz = f64::INFINITY;
        assert!(steering_vector(&g, 3, ReceiverId::UserK).is_err());
        assert!(steering_vector(&geom(0.1, 0.1), 0, ReceiverId::UserK).is_err());
    }

    #[test]
    fn coherent_sum_of_ones() {
        let g = steering_vector(&geom(0.0, 0.0), 4, ReceiverId::UserK).unwrap();
        let b = beam(alloc::vec![C64::new(1.0, 0.0); 4]);
        assert_relative_eq!(effective_gain(&g, &b).unwrap(), 16.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_beam_has_zero_gain() {
        let g = steering_vector(&geom(0.4, 0.9), 5, ReceiverId::UserK).unwrap();
        let b = beam(alloc::vec![C64::new(0.0, 0.0); 5]);
        assert_eq!(effective_gain(&g, &b).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = steering_vector(&geom(0.4, 0.9), 5, ReceiverId::UserK).unwrap();
        let b = beam(alloc::vec![C64::new(1.0, 0.0); 4]);
        assert_eq!(
            effective_gain(&g, &b),
            Err(Error::LengthMismatch {
                expected: 5,
                actual: 4
            })
        );
    }

    #[test]
    fn effective_gain_matches_brute_force_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g: Vec<C64> = (0..5)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let b: Vec<C64> = (0..5)
            .map(|_| C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(0.0..6.28)))
            .collect();
        let (mut re, mut im) = (0.0, 0.0);
        for m in 0..5 {
            re += g[m].re * b[m].re - g[m].im * b[m].im;
            im += g[m].re * b[m].im + g[m].im * b[m].re;
        }
        let oracle = re * re + im * im;
        let ch = ChannelVector::new(CVec::from_vec(g), ReceiverId::UserK).unwrap();
        assert_relative_eq!(
            effective_gain(&ch, &beam(b)).unwrap(),
            oracle,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rician_with_huge_k_factor_approaches_los() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = geom(0.3, 0.5);
        let los = steering_vector(&g, 6, ReceiverId::UserK).unwrap();
        let ric = rician_channel(&g, 6, ReceiverId::UserK, 1e12, &mut rng).unwrap();
        for (a, b) in los.gains().iter().zip(ric.gains().iter()) {
            assert!((a - b).norm() < 1e-5);
        }
        assert!(rician_channel(&g, 6, ReceiverId::UserK, -1.0, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn steering_entries_have_path_gain_magnitude(
            theta in -3.0f64..3.0, phi in -3.0f64..3.0, psi in -2.0f64..2.0,
            gain in 0.0f64..5.0, m in 1usize..16,
        ) {
            let g = GeometryParams { doppler_shift: psi, path_gain: gain, ..geom(theta, phi) };
            let ch = steering_vector(&g, m, ReceiverId::PrimaryL).unwrap();
            for z in ch.gains().iter() {
                prop_assert!((z.norm() - gain).abs() <= 1e-12 * gain.max(1.0));
            }
        }

        #[test]
        fn global_phase_leaves_gain_unchanged(
            seed in any::<u64>(), alpha in -6.3f64..6.3, m in 1usize..12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<C64> = (0..m)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let b: Vec<C64> = (0..m)
                .map(|_| C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(0.0..6.3)))
                .collect();
            let ch = ChannelVector::new(CVec::from_vec(g), ReceiverId::UserK).unwrap();
            let b = beam(b);
            let base = effective_gain(&ch, &b).unwrap();
            let rotated = effective_gain(&ch.rotated(alpha), &b).unwrap();
            prop_assert!((base - rotated).abs() <= 1e-12 * base.max(1e-300) + 1e-300);
        }

        #[test]
        fn gain_respects_triangle_bound(seed in any::<u64>(), m in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<C64> = (0..m)
                .map(|_| C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            let b: Vec<C64> = (0..m)
                .map(|_| C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(0.0..6.3)))
                .collect();
            let bound: f64 = g.iter().zip(b.iter()).map(|(x, y)| x.norm() * y.norm()).sum();
            let ch = ChannelVector::new(CVec::from_vec(g), ReceiverId::UserK).unwrap();
            let value = effective_gain(&ch, &beam(b)).unwrap();
            prop_assert!(value <= bound * bound * (1.0 + 1e-12) + 1e-15);
        }
    }
}
