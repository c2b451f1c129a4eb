//! Probabilistic line-of-sight channel and uplink rate model.
//!
//! Links mix a LoS and an NLoS power-law component by a geometry-dependent
//! LoS probability: distance-fitted for ground links, elevation-angle-fitted
//! for air links. In `Expected` mode the gain is the analytic mixture with
//! mean-one fading; in `Sampled` mode Nakagami-m power fading and log-normal
//! shadowing are drawn per component.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scenario::{EdgeServer, MobileDevice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainMode {
    Expected,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Orthogonal subchannel bandwidth, Hz.
    pub bandwidth: f64,
    /// Noise power over one subchannel, W.
    pub noise_power: f64,
    /// Ground-link LoS fit distances, m.
    pub terrestrial_d1: f64,
    pub terrestrial_d2: f64,
    /// Air-link LoS fit constants (environment dependent).
    pub aerial_c1: f64,
    pub aerial_c2: f64,
    /// Path-loss exponents for the LoS / NLoS components.
    pub pathloss_los: f64,
    pub pathloss_nlos: f64,
    /// Linear reference gain at 1 m.
    pub reference_gain: f64,
    pub nakagami_m_los: f64,
    pub nakagami_m_nlos: f64,
    pub shadow_sigma_los_db: f64,
    pub shadow_sigma_nlos_db: f64,
    pub mode: GainMode,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            bandwidth: 1e6,
            // -174 dBm/Hz thermal floor over 1 MHz.
            noise_power: 10f64.powf((-174.0 - 30.0) / 10.0) * 1e6,
            terrestrial_d1: 18.0,
            terrestrial_d2: 36.0,
            aerial_c1: 10.0,
            aerial_c2: 0.6,
            pathloss_los: 2.2,
            pathloss_nlos: 3.5,
            reference_gain: 10f64.powf(-40.0 / 10.0),
            nakagami_m_los: 3.0,
            nakagami_m_nlos: 1.0,
            shadow_sigma_los_db: 4.0,
            shadow_sigma_nlos_db: 8.2,
            mode: GainMode::Expected,
        }
    }
}

/// Ground-link LoS probability as a function of horizontal distance.
pub fn los_prob_terrestrial(d: f64, p: &ChannelParams) -> f64 {
    let near = if d <= p.terrestrial_d1 {
        1.0
    } else {
        p.terrestrial_d1 / d
    };
    let decay = (-d / p.terrestrial_d2).exp();
    near * (1.0 - decay) + decay
}

/// Air-link LoS probability from the elevation angle seen at the device.
pub fn los_prob_aerial(d: f64, altitude: f64, p: &ChannelParams) -> f64 {
    let angle_deg = altitude.atan2(d).to_degrees();
    1.0 / (1.0 + p.aerial_c1 * (-p.aerial_c2 * (angle_deg - p.aerial_c1)).exp())
}

fn power_law(gain0: f64, dist: f64, exponent: f64) -> f64 {
    gain0 * dist.powf(-exponent)
}

fn mean_one_shadow<R: Rng>(sigma_db: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let scale = sigma_db * std::f64::consts::LN_10 / 10.0;
    // Divide by E[e^{scale Z}] so the shadowing factor has unit mean.
    (scale * z).exp() / (scale * scale / 2.0).exp()
}

fn nakagami_power<R: Rng>(m: f64, rng: &mut R) -> f64 {
    Gamma::new(m, 1.0 / m).expect("nakagami shape").sample(rng)
}

/// Channel power gain for a link with the given LoS probability and 3-D
/// distance. Expected mode returns the analytic mixture of the two power-law
/// components; sampled mode realizes the LoS state, fading, and shadowing.
pub fn channel_gain<R: Rng>(
    los_probability: f64,
    dist_3d: f64,
    p: &ChannelParams,
    rng: Option<&mut R>,
) -> f64 {
    let g_los = power_law(p.reference_gain, dist_3d, p.pathloss_los);
    let g_nlos = power_law(p.reference_gain, dist_3d, p.pathloss_nlos);
    match (p.mode, rng) {
        (GainMode::Expected, _) | (GainMode::Sampled, None) => {
            los_probability * g_los + (1.0 - los_probability) * g_nlos
        }
        (GainMode::Sampled, Some(rng)) => {
            if rng.gen::<f64>() < los_probability {
                g_los * nakagami_power(p.nakagami_m_los, rng) * mean_one_shadow(p.shadow_sigma_los_db, rng)
            } else {
                g_nlos
                    * nakagami_power(p.nakagami_m_nlos, rng)
                    * mean_one_shadow(p.shadow_sigma_nlos_db, rng)
            }
        }
    }
}

/// Shannon uplink rate in bits/s.
pub fn data_rate(bandwidth: f64, tx_power: f64, gain: f64, noise_power: f64) -> f64 {
    bandwidth * (1.0 + tx_power * gain / noise_power).log2()
}

/// Fully evaluated MD-to-server link for one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub md: u32,
    pub server: u32,
    pub horizontal_distance: f64,
    pub los_probability: f64,
    pub gain: f64,
    pub rate: f64,
}

pub fn link_state<R: Rng>(
    md: &MobileDevice,
    server: &EdgeServer,
    p: &ChannelParams,
    rng: Option<&mut R>,
) -> LinkState {
    let horizontal = md.position.dist(server.position);
    let los = if server.is_aerial() {
        los_prob_aerial(horizontal, server.altitude(), p)
    } else {
        los_prob_terrestrial(horizontal, p)
    };
    let gain = channel_gain(los, server.distance_3d(md.position), p, rng);
    let rate = data_rate(p.bandwidth, md.transmit_power, gain, p.noise_power);
    LinkState {
        md: md.id,
        server: server.id,
        horizontal_distance: horizontal,
        los_probability: los,
        gain,
        rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn terrestrial_los_saturates_within_d1() {
        let p = ChannelParams::default();
        assert_eq!(los_prob_terrestrial(0.0, &p), 1.0);
        assert_eq!(los_prob_terrestrial(18.0, &p), 1.0);
        assert!((los_prob_terrestrial(9.0, &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn terrestrial_los_matches_direct_formula() {
        // d = 2*d1 with d2 = d1: 0.5*(1-e^-2) + e^-2.
        let mut p = ChannelParams::default();
        p.terrestrial_d2 = p.terrestrial_d1;
        let d = 2.0 * p.terrestrial_d1;
        let expect = 0.5 * (1.0 - (-2.0f64).exp()) + (-2.0f64).exp();
        assert!((los_prob_terrestrial(d, &p) - expect).abs() < 1e-15);
    }

    #[test]
    fn terrestrial_los_decays_toward_zero() {
        let p = ChannelParams::default();
        let mut prev = 1.0;
        for d in [50.0, 200.0, 1e3, 1e4, 1e6] {
            let v = los_prob_terrestrial(d, &p);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn aerial_los_overhead_is_one() {
        let p = ChannelParams::default();
        // Overhead geometry: angle 90 deg, deviation from 1 below 1e-19.
        let v = los_prob_aerial(0.0, 100.0, &p);
        let expect = 1.0 / (1.0 + 10.0 * (-0.6 * 80.0f64).exp());
        assert!((v - expect).abs() < 1e-15);
        assert!(1.0 - v < 1e-19);
    }

    #[test]
    fn aerial_los_horizon_limit() {
        let p = ChannelParams::default();
        let limit = 1.0 / (1.0 + p.aerial_c1 * (p.aerial_c2 * p.aerial_c1).exp());
        let v = los_prob_aerial(1e12, 100.0, &p);
        assert!((v - limit).abs() < 1e-9);
    }

    #[test]
    fn aerial_los_monotone_in_distance() {
        // Sampling oracle over 1e3 random pairs.
        let p = ChannelParams::default();
        let mut rng = stream(5, "test/los", 0, 0);
        for _ in 0..1000 {
            let a = rng.gen::<f64>() * 1e4;
            let b = rng.gen::<f64>() * 1e4;
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            assert!(los_prob_aerial(near, 100.0, &p) >= los_prob_aerial(far, 100.0, &p));
        }
    }

    #[test]
    fn expected_gain_degenerates_and_scales() {
        let p = ChannelParams::default();
        let mut p2 = p.clone();
        p2.pathloss_los = 2.0;
        let g_l = |d: f64| power_law(p2.reference_gain, d, 2.0);
        let g = channel_gain::<rand_chacha::ChaCha12Rng>(1.0, 100.0, &p2, None);
        assert!((g - g_l(100.0)).abs() / g < 1e-15);
        // Doubling distance at exponent 2 quarters the pure-LoS gain.
        let g2 = channel_gain::<rand_chacha::ChaCha12Rng>(1.0, 200.0, &p2, None);
        assert!((g2 * 4.0 - g).abs() / g < 1e-12);
    }

    #[test]
    fn expected_gain_is_analytic_mixture() {
        let p = ChannelParams::default();
        let dist = 173.2;
        let prob = 0.37;
        let expect = prob * power_law(p.reference_gain, dist, p.pathloss_los)
            + (1.0 - prob) * power_law(p.reference_gain, dist, p.pathloss_nlos);
        let got = channel_gain::<rand_chacha::ChaCha12Rng>(prob, dist, &p, None);
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn sampled_gain_mean_matches_expected_mode() {
        let mut p = ChannelParams::default();
        p.mode = GainMode::Sampled;
        let dist = 150.0;
        let prob = 0.6;
        let mut rng = stream(11, "test/fading", 0, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += channel_gain(prob, dist, &p, Some(&mut rng));
        }
        let mean = sum / f64::from(n);
        let mut exp_mode = p.clone();
        exp_mode.mode = GainMode::Expected;
        let expect = channel_gain::<rand_chacha::ChaCha12Rng>(prob, dist, &exp_mode, None);
        assert!(
            (mean - expect).abs() / expect < 0.01,
            "mean {mean} vs expected {expect}"
        );
    }

    #[test]
    fn rate_anchors() {
        // P*g/N0 = 1 doubles the SNR denominator: exactly B bits/s.
        assert!((data_rate(1e6, 1.0, 1.0, 1.0) - 1e6).abs() < 1e-6);
        assert!((data_rate(1e6, 3.0, 1.0, 1.0) - 2e6).abs() < 1e-6);
    }

    #[test]
    fn rate_hand_computation() {
        // 20 dBm transmitter, mixture gain at 141.42 m slant range.
        let p = ChannelParams::default();
        let tx = 10f64.powf((20.0 - 30.0) / 10.0);
        let dist = (100.0f64 * 100.0 + 100.0 * 100.0).sqrt();
        let prob = los_prob_aerial(100.0, 100.0, &p);
        let gain = prob * p.reference_gain * dist.powf(-2.2)
            + (1.0 - prob) * p.reference_gain * dist.powf(-3.5);
        let expect = 1e6 * (1.0 + tx * gain / p.noise_power).log2();
        let got = data_rate(p.bandwidth, tx, gain, p.noise_power);
        assert!((got - expect).abs() < 1e-9 * expect);
        assert!(expect > 1e6, "sanity: usable uplink at 141 m, got {expect}");
    }

    #[test]
    fn rate_decreases_with_distance_expected_mode() {
        let p = ChannelParams::default();
        let mut prev = f64::INFINITY;
        for d in [1.0, 10.0, 50.0, 120.0, 400.0, 1000.0] {
            let los = los_prob_aerial(d, 100.0, &p);
            let dist = (d * d + 100.0 * 100.0f64).sqrt();
            let g = channel_gain::<rand_chacha::ChaCha12Rng>(los, dist, &p, None);
            let r = data_rate(p.bandwidth, 0.1, g, p.noise_power);
            assert!(r < prev);
            prev = r;
        }
    }

    proptest! {
        #[test]
        fn los_probabilities_stay_in_unit_interval(d in 0.0..1e6f64, h in 1.0..500.0f64) {
            let p = ChannelParams::default();
            let a = los_prob_terrestrial(d, &p);
            let b = los_prob_aerial(d, h, &p);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&b));
        }
    }
}
