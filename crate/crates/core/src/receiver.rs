//! Conventional correlation receiver.
//!
//! Per antenna: strip CP and GP, undo a known frequency offset, optionally
//! decimate, FFT, demap the occupied subcarriers, multiply by the conjugate
//! local root spectrum and inverse-transform into the cyclic correlation
//! domain. Squared magnitudes are summed across antennas into a power delay
//! profile (PDP) which is searched window by window for the signature.
//!
//! Preamble `v` occupies correlation window `[v N_CS, (v + 1) N_CS)`. The
//! peak's offset inside its window is the timing advance in correlation
//! samples; multiply by `fft_size / n_zc` for burst samples.

use serde::{Deserialize, Serialize};

use crate::dsp::{fft_in_place, ifft_in_place};
use crate::error::{invalid, Error, Result};
use crate::waveform::{rotate, sequence_spectrum, PrachNumerology};
use crate::zc::{ZcSequence, MAX_PREAMBLES};
use crate::{ComplexBuffer, C64};

pub const DEFAULT_THRESHOLD_FACTOR: f64 = 13.0;

/// Lowest noise floor relative to the PDP peak. Without noise the median is
/// floating-point roundoff, and roundoff spikes would otherwise clear the threshold.
pub const MIN_FLOOR_RATIO: f64 = 1e-12;

/// Demapped occupied subcarriers, one buffer of `n_zc` bins per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyObservation {
    pub bins: Vec<ComplexBuffer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub threshold_factor: f64,
    pub df_correction_hz: f64,
    pub decim: usize,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            threshold_factor: DEFAULT_THRESHOLD_FACTOR,
            df_correction_hz: 0.0,
            decim: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: bool,
    pub rapid_v: Option<usize>,
    pub timing_offset_samples: Option<usize>,
    pub peak_metric: f64,
    pub noise_floor: f64,
    pub threshold: f64,
}

impl DetectionResult {
    /// Timing offset converted from correlation samples to burst samples.
    pub fn timing_offset_burst_samples(&self, num: &PrachNumerology) -> Option<f64> {
        self.timing_offset_samples
            .map(|c| c as f64 / num.correlation_samples_per_sample())
    }
}

/// Peak of one cyclic-shift window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPeak {
    pub window: usize,
    pub position: usize,
    pub value: f64,
}

/// Steps (i) through (v): CP/GP removal, frequency alignment, decimation, FFT, demapping.
///
/// The frequency correction counts samples from the start of the burst, so it
/// exactly inverts [`crate::waveform::apply_frequency_offset`].
pub fn front_end(
    per_antenna: &[ComplexBuffer],
    num: &PrachNumerology,
    df_correction_hz: f64,
    decim: usize,
) -> Result<FrequencyObservation> {
    num.validate()?;
    if decim == 0 || num.fft_size % decim != 0 {
        return invalid(format!(
            "decimation {decim} must divide fft_size {}",
            num.fft_size
        ));
    }
    let m = num.fft_size;
    let md = m / decim;
    // Occupied bin k of the full-rate FFT lands on bin `f mod md` after decimation,
    // where f is its signed frequency index.
    let bin_map = (num.subcarrier_offset..num.subcarrier_offset + num.n_zc)
        .map(|k| {
            let f = if k < m / 2 { k as i64 } else { k as i64 - m as i64 };
            let half = (md / 2) as i64;
            if decim > 1 && (f < -half || f >= half) {
                invalid(format!(
                    "occupied bin {k} falls outside the band kept by decimation {decim}"
                ))
            } else {
                Ok(f.rem_euclid(md as i64) as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let fs = num.sample_rate_hz();
    // Undo the modulator's normalization and the decimated FFT's 1/decim gain.
    let scale = (num.n_zc as f64).sqrt() / m as f64 * decim as f64;

    let bins = per_antenna
        .iter()
        .enumerate()
        .map(|(a, buf)| {
            if buf.len() < num.burst_len() {
                return Err(Error::MalformedInput(format!(
                    "antenna {a}: {} samples, burst needs {}",
                    buf.len(),
                    num.burst_len()
                )));
            }
            let mut work = buf[..num.burst_len()].to_vec();
            rotate(&mut work, -df_correction_hz, fs);
            let mut body = work[num.body_range()].to_vec();
            if decim > 1 {
                body = decimate(body, decim);
            }
            fft_in_place(&mut body);
            Ok(bin_map.iter().map(|&i| body[i] * scale).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FrequencyObservation { bins })
}

/// Ideal circular lowpass to the decimated Nyquist band, then downsampling.
///
/// The body is one period of the OFDM symbol, so circular filtering is exact.
fn decimate(mut body: ComplexBuffer, decim: usize) -> ComplexBuffer {
    let m = body.len();
    let half = (m / decim / 2) as i64;
    fft_in_place(&mut body);
    for (k, z) in body.iter_mut().enumerate() {
        let f = if k < m / 2 { k as i64 } else { k as i64 - m as i64 };
        if f < -half || f >= half {
            *z = C64::new(0.0, 0.0);
        }
    }
    ifft_in_place(&mut body);
    let inv = 1.0 / m as f64;
    body.iter().step_by(decim).map(|z| z * inv).collect()
}

/// Complex cyclic correlation of one antenna's bins with the local root:
/// `r[tau] = (1/N) sum_n y[n] conj(x[(n + tau) mod N])`, computed in the frequency domain.
pub fn correlate_antenna(bins: &[C64], root_spectrum: &[C64]) -> Result<ComplexBuffer> {
    if bins.len() != root_spectrum.len() {
        return invalid(format!(
            "{} bins vs root of length {}",
            bins.len(),
            root_spectrum.len()
        ));
    }
    let n = bins.len() as f64;
    let mut prod: ComplexBuffer = bins
        .iter()
        .zip(root_spectrum)
        .map(|(y, x)| y * x.conj())
        .collect();
    ifft_in_place(&mut prod);
    prod.iter_mut().for_each(|z| *z /= n);
    Ok(prod)
}

/// Steps (vi) through (viii), non-coherently combined across antennas.
pub fn correlate(obs: &FrequencyObservation, root: &ZcSequence) -> Result<Vec<f64>> {
    let spectrum = sequence_spectrum(root.samples());
    let mut pdp = vec![0.0; root.n_zc()];
    for bins in &obs.bins {
        for (p, r) in pdp.iter_mut().zip(correlate_antenna(bins, &spectrum)?) {
            *p += r.norm_sqr();
        }
    }
    Ok(pdp)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Peak of every complete cyclic-shift window, at most [`MAX_PREAMBLES`].
pub fn window_peaks(pdp: &[f64], n_cs: usize) -> Vec<WindowPeak> {
    if n_cs == 0 {
        return Vec::new();
    }
    let windows = (pdp.len() / n_cs).min(MAX_PREAMBLES);
    (0..windows)
        .map(|w| {
            let start = w * n_cs;
            let (off, value) = pdp[start..start + n_cs]
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                });
            WindowPeak {
                window: w,
                position: start + off,
                value,
            }
        })
        .collect()
}

/// Step (ix): signature detection against `threshold_factor * median(pdp)`.
///
/// The median is floored at [`MIN_FLOOR_RATIO`] times the PDP peak.
pub fn detect(pdp: &[f64], n_cs: usize, threshold_factor: f64) -> DetectionResult {
    let peak = pdp.iter().cloned().fold(0.0, f64::max);
    let noise_floor = median(pdp).max(MIN_FLOOR_RATIO * peak);
    let threshold = threshold_factor * noise_floor;
    let best = window_peaks(pdp, n_cs)
        .into_iter()
        .fold(None::<WindowPeak>, |best, p| match best {
            Some(b) if b.value >= p.value => Some(b),
            _ => Some(p),
        });
    match best {
        Some(peak) if peak.value > threshold => DetectionResult {
            detected: true,
            rapid_v: Some(peak.window),
            timing_offset_samples: Some(peak.position - peak.window * n_cs),
            peak_metric: peak.value,
            noise_floor,
            threshold,
        },
        other => DetectionResult {
            detected: false,
            rapid_v: None,
            timing_offset_samples: None,
            peak_metric: other.map_or(0.0, |p| p.value),
            noise_floor,
            threshold,
        },
    }
}

/// Full chain for one observation.
pub fn receive(
    per_antenna: &[ComplexBuffer],
    num: &PrachNumerology,
    root: &ZcSequence,
    n_cs: usize,
    cfg: &ReceiverConfig,
) -> Result<(Vec<f64>, DetectionResult)> {
    let obs = front_end(per_antenna, num, cfg.df_correction_hz, cfg.decim)?;
    let pdp = correlate(&obs, root)?;
    let det = detect(&pdp, n_cs, cfg.threshold_factor);
    Ok((pdp, det))
}
