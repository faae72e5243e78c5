//! One simulated PRACH occasion: signal preamble, optional interfering
//! preamble, independent fading for each, and receiver noise.

use serde::{Deserialize, Serialize};

use crate::channel::{add_awgn, add_interference, apply_channel, draw_fading, measure_power, ChannelConfig, RxObservation};
use crate::error::Result;
use crate::seed::derive;
use crate::waveform::{modulate, PrachNumerology};
use crate::zc::{PreambleConfig, DEFAULT_N_CS};

const SIGNAL_STREAM: u64 = 0;
const INTERFERER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Preamble index carried by the wanted UE.
pub const SIGNAL_PREAMBLE_INDEX: usize = 32;
/// Preamble index carried by the interfering UE.
pub const INTERFERER_PREAMBLE_INDEX: usize = 3;
/// Root (sequence index) used by both UEs by default.
pub const DEFAULT_ROOT: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub numerology: PrachNumerology,
    pub signal: PreambleConfig,
    pub interferer: PreambleConfig,
    pub channel: ChannelConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            numerology: PrachNumerology::default(),
            signal: PreambleConfig {
                root_u: DEFAULT_ROOT,
                preamble_index_v: SIGNAL_PREAMBLE_INDEX,
                n_cs: DEFAULT_N_CS,
            },
            interferer: PreambleConfig {
                root_u: DEFAULT_ROOT,
                preamble_index_v: INTERFERER_PREAMBLE_INDEX,
                n_cs: DEFAULT_N_CS,
            },
            channel: ChannelConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.numerology.validate()?;
        self.channel.validate()?;
        self.channel.tap_delays_samples(&self.numerology)?;
        self.signal.build(self.numerology.n_zc)?;
        self.interferer.build(self.numerology.n_zc)?;
        Ok(())
    }

    /// Simulates one occasion. Deterministic in `(self, snr_db, interf_db, seed)`.
    ///
    /// SNR and interference power are both referred to the faded signal's
    /// body power averaged across antennas.
    pub fn observe(&self, snr_db: f64, interf_db: Option<f64>, seed: u64) -> Result<RxObservation> {
        let num = &self.numerology;
        let fs = num.sample_rate_hz();
        let len = num.burst_len();
        let channel = ChannelConfig {
            seed: derive(seed, self.channel.seed),
            ..self.channel.clone()
        };

        let tx = modulate(&self.signal.build(num.n_zc)?, num)?;
        let fading = draw_fading(&channel, len, fs, SIGNAL_STREAM)?;
        let mut rx = apply_channel(&tx.samples, &fading, num)?;
        let signal_power = measure_power(&rx, num.body_range());

        if let Some(rel_db) = interf_db {
            let itx = modulate(&self.interferer.build(num.n_zc)?, num)?;
            let ifading = draw_fading(&channel, len, fs, INTERFERER_STREAM)?;
            let irx = apply_channel(&itx.samples, &ifading, num)?;
            rx = add_interference(&rx, &irx, rel_db, num.body_range())?;
        }

        let per_antenna = add_awgn(&rx, snr_db, derive(seed, NOISE_STREAM), signal_power);
        Ok(RxObservation {
            per_antenna,
            snr_db,
            interf_power_db: interf_db,
            seed,
            label_interference: interf_db.is_some(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_shape_and_provenance() {
        let sc = ScenarioConfig::default();
        let obs = sc.observe(-6.0, Some(-9.0), 77).unwrap();
        assert_eq!(obs.per_antenna.len(), 2);
        assert!(obs.per_antenna.iter().all(|b| b.len() == 1280));
        assert!(obs.label_interference);
        assert_eq!(obs.interf_power_db, Some(-9.0));
        assert_eq!(obs.seed, 77);
        assert_eq!(obs, sc.observe(-6.0, Some(-9.0), 77).unwrap());
        assert_ne!(obs, sc.observe(-6.0, Some(-9.0), 78).unwrap());
    }

    #[test]
    fn default_validates() {
        ScenarioConfig::default().validate().unwrap();
    }
}
