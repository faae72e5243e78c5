//! Multipath Rayleigh fading, co-channel PRACH interference and AWGN.
//!
//! Fading taps are generated with a generalized method of exact Doppler
//! spread: each quadrature of a tap is a sum of `N` cosines whose Doppler
//! frequencies `f_d cos(alpha_n)` are deterministic, with
//!
//! ```text
//! alpha_{i,n} = pi (n - 1/2) / (2N) + (-1)^(i-1) pi / (8N),   n = 1..N,  i = 1, 2
//! ```
//!
//! and only the phases drawn from the seed. The two quadratures use disjoint
//! angle sets, which makes them uncorrelated in time average.

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::mean_power;
use crate::error::{invalid, Error, Result};
use crate::seed::derive;
use crate::waveform::PrachNumerology;
use crate::{ComplexBuffer, C64};

/// Extended Typical Urban tap delays, ns.
pub const ETU_DELAYS_NS: [f64; 9] = [0.0, 50.0, 120.0, 200.0, 230.0, 500.0, 1600.0, 2300.0, 5000.0];
/// Extended Typical Urban relative tap powers, dB.
pub const ETU_POWERS_DB: [f64; 9] = [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MimoCorrelation {
    #[default]
    Low,
    Medium,
    High,
}

impl MimoCorrelation {
    /// Correlation coefficient between any two receive antennas.
    pub fn coefficient(self) -> f64 {
        match self {
            MimoCorrelation::Low => 0.0,
            MimoCorrelation::Medium => 0.3,
            MimoCorrelation::High => 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_rx: usize,
    pub doppler_hz: f64,
    pub tap_delays_ns: Vec<f64>,
    pub tap_powers_db: Vec<f64>,
    pub mimo_correlation: MimoCorrelation,
    pub n_sinusoids: usize,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_rx: 2,
            doppler_hz: 70.0,
            tap_delays_ns: ETU_DELAYS_NS.to_vec(),
            tap_powers_db: ETU_POWERS_DB.to_vec(),
            mimo_correlation: MimoCorrelation::Low,
            n_sinusoids: 16,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rx == 0 {
            return Err(Error::InvalidConfig("n_rx must be >= 1".into()));
        }
        if self.n_sinusoids == 0 {
            return Err(Error::InvalidConfig("n_sinusoids must be >= 1".into()));
        }
        if self.tap_delays_ns.is_empty() || self.tap_delays_ns.len() != self.tap_powers_db.len() {
            return Err(Error::InvalidConfig(format!(
                "{} tap delays vs {} tap powers",
                self.tap_delays_ns.len(),
                self.tap_powers_db.len()
            )));
        }
        if self.tap_delays_ns.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidConfig("tap delays must be finite and >= 0".into()));
        }
        if !self.doppler_hz.is_finite() || self.doppler_hz < 0.0 {
            return Err(Error::InvalidConfig("doppler_hz must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Linear tap powers scaled to sum to one.
    pub fn normalized_tap_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.tap_powers_db.iter().map(|p| 10f64.powf(p / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.iter().map(|p| p / total).collect()
    }

    /// Tap delays rounded to the numerology's sample grid.
    pub fn tap_delays_samples(&self, num: &PrachNumerology) -> Result<Vec<usize>> {
        delays_in_samples(&self.tap_delays_ns, num)
    }
}

fn delays_in_samples(delays_ns: &[f64], num: &PrachNumerology) -> Result<Vec<usize>> {
    let fs = num.sample_rate_hz();
    delays_ns
        .iter()
        .map(|ns| {
            let d = (ns * 1e-9 * fs).round() as usize;
            if d > num.gp_len {
                Err(Error::InvalidConfig(format!(
                    "tap delay {ns} ns = {d} samples exceeds guard period {}",
                    num.gp_len
                )))
            } else {
                Ok(d)
            }
        })
        .collect()
}

/// Time-varying complex gains, indexed `[antenna][tap][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub gains: Vec<Vec<Vec<C64>>>,
    pub tap_delays_ns: Vec<f64>,
}

impl ChannelRealization {
    pub fn n_samples(&self) -> usize {
        self.gains
            .first()
            .and_then(|a| a.first())
            .map_or(0, Vec::len)
    }
}

/// Received buffers of one PRACH occasion with their generating provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RxObservation {
    pub per_antenna: Vec<ComplexBuffer>,
    pub snr_db: f64,
    pub interf_power_db: Option<f64>,
    pub seed: u64,
    pub label_interference: bool,
}

/// One Rayleigh quadrature-pair generator for a single tap on a single antenna.
struct SosTap {
    /// Doppler frequency (Hz) and phase per sinusoid, per quadrature.
    components: [Vec<(f64, f64)>; 2],
}

impl SosTap {
    fn draw(doppler_hz: f64, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let nf = n as f64;
        let components = [1.0f64, -1.0].map(|sign| {
            (1..=n)
                .map(|k| {
                    let alpha = PI * (k as f64 - 0.5) / (2.0 * nf) + sign * PI / (8.0 * nf);
                    let phase = rng.random::<f64>() * 2.0 * PI;
                    (doppler_hz * alpha.cos(), phase)
                })
                .collect()
        });
        Self { components }
    }

    /// Unit mean power sample at time `t` seconds.
    fn at(&self, t: f64) -> C64 {
        let quad = |c: &[(f64, f64)]| -> f64 {
            c.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).cos()).sum::<f64>()
                * (1.0 / c.len() as f64).sqrt()
        };
        // each quadrature has variance 1/2
        C64::new(quad(&self.components[0]), quad(&self.components[1]))
    }
}

/// Lower Cholesky factor of the equicorrelated matrix `R_ab = rho (a != b)`.
fn correlation_factor(n: usize, rho: f64) -> Vec<Vec<f64>> {
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let r = if i == j { 1.0 } else { rho };
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (r - s).max(0.0).sqrt();
            } else {
                l[i][j] = (r - s) / l[j][j];
            }
        }
    }
    l
}

/// Draws tap-gain trajectories of `n_samples` samples at `sample_rate_hz`.
///
/// Deterministic in `(cfg, n_samples, sample_rate_hz, rng_stream)`.
pub fn draw_fading(
    cfg: &ChannelConfig,
    n_samples: usize,
    sample_rate_hz: f64,
    rng_stream: u64,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    if n_samples == 0 {
        return invalid("n_samples must be > 0");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, rng_stream));
    let powers = cfg.normalized_tap_powers();
    let taps: Vec<Vec<SosTap>> = (0..cfg.n_rx)
        .map(|_| {
            powers
                .iter()
                .map(|_| SosTap::draw(cfg.doppler_hz, cfg.n_sinusoids, &mut rng))
                .collect()
        })
        .collect();

    let mut gains: Vec<Vec<Vec<C64>>> = taps
        .iter()
        .map(|ant| {
            ant.iter()
                .zip(&powers)
                .map(|(tap, p)| {
                    let amp = p.sqrt();
                    (0..n_samples)
                        .map(|n| tap.at(n as f64 / sample_rate_hz) * amp)
                        .collect()
                })
                .collect()
        })
        .collect();

    let rho = cfg.mimo_correlation.coefficient();
    if rho != 0.0 && cfg.n_rx > 1 {
        let l = correlation_factor(cfg.n_rx, rho);
        let independent = gains.clone();
        for (a, row) in l.iter().enumerate() {
            for tap in 0..powers.len() {
                for t in 0..n_samples {
                    gains[a][tap][t] = row
                        .iter()
                        .zip(&independent)
                        .map(|(c, g)| g[tap][t] * *c)
                        .sum();
                }
            }
        }
    }

    Ok(ChannelRealization {
        gains,
        tap_delays_ns: cfg.tap_delays_ns.clone(),
    })
}

/// Per antenna: `sum_tap g_tap(t) * burst(t - d_tap)`, truncated to the burst length.
pub fn apply_channel(
    burst: &[C64],
    real: &ChannelRealization,
    num: &PrachNumerology,
) -> Result<Vec<ComplexBuffer>> {
    if real.n_samples() < burst.len() {
        return invalid(format!(
            "realization has {} samples, burst needs {}",
            real.n_samples(),
            burst.len()
        ));
    }
    let delays = delays_in_samples(&real.tap_delays_ns, num)?;

    Ok(real
        .gains
        .iter()
        .map(|taps| {
            let mut out = vec![C64::new(0.0, 0.0); burst.len()];
            for (g, &d) in taps.iter().zip(&delays) {
                for t in d..burst.len() {
                    out[t] += g[t] * burst[t - d];
                }
            }
            out
        })
        .collect())
}

/// Mean sample power over `window`, averaged across antennas.
pub fn measure_power(rx: &[ComplexBuffer], window: Range<usize>) -> f64 {
    if rx.is_empty() {
        return 0.0;
    }
    rx.iter().map(|b| mean_power(&b[window.clone()])).sum::<f64>() / rx.len() as f64
}

fn check_shapes(a: &[ComplexBuffer], b: &[ComplexBuffer]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return invalid("interferer shape does not match the received buffers");
    }
    Ok(())
}

/// `rx + alpha * interferer`, with `alpha` chosen so the scaled interferer sits
/// `rel_power_db` relative to the signal, both measured over `window`.
pub fn add_interference(
    rx: &[ComplexBuffer],
    interferer: &[ComplexBuffer],
    rel_power_db: f64,
    window: Range<usize>,
) -> Result<Vec<ComplexBuffer>> {
    check_shapes(rx, interferer)?;
    if let Some(b) = rx.first() {
        if window.end > b.len() {
            return invalid("power window exceeds buffer length");
        }
    }
    let ps = measure_power(rx, window.clone());
    let pi = measure_power(interferer, window);
    let alpha = if pi > 0.0 {
        (ps / pi * 10f64.powf(rel_power_db / 10.0)).sqrt()
    } else {
        0.0
    };
    Ok(rx
        .iter()
        .zip(interferer)
        .map(|(s, i)| s.iter().zip(i).map(|(a, b)| a + b * alpha).collect())
        .collect())
}

/// Adds circularly symmetric Gaussian noise with power `signal_power / 10^(snr_db/10)`
/// independently to each antenna.
pub fn add_awgn(rx: &[ComplexBuffer], snr_db: f64, seed: u64, signal_power: f64) -> Vec<ComplexBuffer> {
    let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rx.iter()
        .map(|buf| {
            buf.iter()
                .map(|z| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    z + C64::new(re, im) * sigma
                })
                .collect()
        })
        .collect()
}
