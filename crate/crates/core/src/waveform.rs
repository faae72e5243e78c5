//! Format-0 PRACH burst construction and transmit-side impairments.
//!
//! The desk numerology runs at 1.28 MHz: a 1024-point OFDM symbol carrying
//! the 839 occupied subcarriers at 1.25 kHz spacing, flanked by a 132-sample
//! cyclic prefix and a 124-sample guard period (the native format-0
//! 3168/24576/2976 split scaled by 1024/24576). One burst is 1280 samples, 1 ms.
//!
//! Subcarrier mapping uses the positive-exponent unitary transform of the
//! preamble (see [`sequence_spectrum`]). With that convention a propagation
//! delay and the preamble's cyclic shift move the receiver's correlation peak
//! in the same direction, so preamble `v` delayed by `c` correlation samples
//! peaks at `C_v + c`.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dsp::{ifft_in_place, mean_power};
use crate::error::{invalid, Result};
use crate::zc::{Preamble, N_ZC_LONG};
use crate::{ComplexBuffer, C64};

/// PRACH subcarrier spacing for long sequences.
pub const SUBCARRIER_SPACING_HZ: f64 = 1250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrachNumerology {
    pub n_zc: usize,
    pub fft_size: usize,
    pub cp_len: usize,
    pub gp_len: usize,
    /// First occupied FFT bin.
    pub subcarrier_offset: usize,
}

impl Default for PrachNumerology {
    fn default() -> Self {
        Self {
            n_zc: N_ZC_LONG,
            fft_size: 1024,
            cp_len: 132,
            gp_len: 124,
            subcarrier_offset: 12,
        }
    }
}

impl PrachNumerology {
    pub fn sample_rate_hz(&self) -> f64 {
        SUBCARRIER_SPACING_HZ * self.fft_size as f64
    }

    pub fn burst_len(&self) -> usize {
        self.cp_len + self.fft_size + self.gp_len
    }

    /// Sample range of the OFDM body (the sequence symbol without CP and GP).
    pub fn body_range(&self) -> Range<usize> {
        self.cp_len..self.cp_len + self.fft_size
    }

    /// Correlation samples per burst sample, `n_zc / fft_size`.
    pub fn correlation_samples_per_sample(&self) -> f64 {
        self.n_zc as f64 / self.fft_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size <= self.n_zc {
            return invalid(format!(
                "fft_size {} must exceed n_zc {}",
                self.fft_size, self.n_zc
            ));
        }
        if self.subcarrier_offset + self.n_zc > self.fft_size {
            return invalid(format!(
                "occupied bins [{}, {}) exceed fft_size {}",
                self.subcarrier_offset,
                self.subcarrier_offset + self.n_zc,
                self.fft_size
            ));
        }
        if self.cp_len > self.fft_size {
            return invalid("cp_len longer than the OFDM symbol");
        }
        Ok(())
    }
}

/// One transmitted PRACH occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    pub samples: ComplexBuffer,
    pub numerology: PrachNumerology,
    pub true_v: usize,
    pub true_delay: usize,
}

/// Unitary transform with kernel `exp(+j 2 pi k n / N)`.
///
/// For a Zadoff-Chu input every output bin has unit magnitude.
pub fn sequence_spectrum(seq: &[C64]) -> ComplexBuffer {
    let mut out = seq.to_vec();
    ifft_in_place(&mut out);
    let scale = 1.0 / (seq.len() as f64).sqrt();
    out.iter_mut().for_each(|z| *z *= scale);
    out
}

/// Builds CP + body + GP. The body has unit mean power.
pub fn modulate(preamble: &Preamble, num: &PrachNumerology) -> Result<Burst> {
    num.validate()?;
    let seq = preamble.sequence.samples();
    if seq.len() != num.n_zc {
        return invalid(format!(
            "preamble length {} does not match n_zc {}",
            seq.len(),
            num.n_zc
        ));
    }

    let mut grid = vec![C64::new(0.0, 0.0); num.fft_size];
    grid[num.subcarrier_offset..num.subcarrier_offset + num.n_zc]
        .copy_from_slice(&sequence_spectrum(seq));
    ifft_in_place(&mut grid);
    // Unit-magnitude bins: sum |body|^2 = fft_size * n_zc / n_zc after this scale.
    let scale = 1.0 / (num.n_zc as f64).sqrt();
    grid.iter_mut().for_each(|z| *z *= scale);

    let mut samples = Vec::with_capacity(num.burst_len());
    samples.extend_from_slice(&grid[num.fft_size - num.cp_len..]);
    samples.extend_from_slice(&grid);
    samples.resize(num.burst_len(), C64::new(0.0, 0.0));

    Ok(Burst {
        samples,
        numerology: *num,
        true_v: preamble.preamble_index_v,
        true_delay: 0,
    })
}

/// Delays the burst by `d` samples, zero-filling the head. `d` may not exceed the guard.
pub fn apply_delay(burst: &Burst, d: usize) -> Result<Burst> {
    let gp = burst.numerology.gp_len;
    if d > gp {
        return invalid(format!("delay {d} exceeds guard period {gp}"));
    }
    let len = burst.samples.len();
    let mut samples = vec![C64::new(0.0, 0.0); len];
    samples[d..].copy_from_slice(&burst.samples[..len - d]);
    Ok(Burst {
        samples,
        true_delay: d,
        ..burst.clone()
    })
}

/// Rotates sample `n` by `exp(j 2 pi df n / fs)`.
pub fn apply_frequency_offset(burst: &Burst, df_hz: f64) -> Burst {
    let mut out = burst.clone();
    rotate(&mut out.samples, df_hz, burst.numerology.sample_rate_hz());
    out
}

pub(crate) fn rotate(buf: &mut [C64], df_hz: f64, fs: f64) {
    if df_hz == 0.0 {
        return;
    }
    let w = 2.0 * PI * df_hz / fs;
    for (n, z) in buf.iter_mut().enumerate() {
        *z *= C64::from_polar(1.0, w * n as f64);
    }
}

/// Mean power over the burst body.
pub fn body_power(burst: &Burst) -> f64 {
    mean_power(&burst.samples[burst.numerology.body_range()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft_in_place;
    use crate::zc::preamble_from_index;

    fn burst(v: usize) -> Burst {
        let p = preamble_from_index(22, v, 13, 839).unwrap();
        modulate(&p, &PrachNumerology::default()).unwrap()
    }

    #[test]
    fn burst_layout() {
        let b = burst(32);
        let num = PrachNumerology::default();
        assert_eq!(b.samples.len(), 1280);
        assert_eq!(num.sample_rate_hz(), 1.28e6);
        for i in 0..132 {
            assert_eq!(b.samples[i], b.samples[1024 + i]);
        }
        assert!(b.samples[1156..].iter().all(|z| *z == C64::new(0.0, 0.0)));
        assert!((body_power(&b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn spectrum_is_unit_modulus() {
        let p = preamble_from_index(3, 5, 13, 839).unwrap();
        let s = sequence_spectrum(p.sequence.samples());
        assert!(s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn body_fft_recovers_spectrum_and_parseval() {
        let p = preamble_from_index(22, 32, 13, 839).unwrap();
        let num = PrachNumerology::default();
        let b = modulate(&p, &num).unwrap();
        let mut body = b.samples[num.body_range()].to_vec();
        let body_energy: f64 = body.iter().map(|z| z.norm_sqr()).sum();
        fft_in_place(&mut body);
        let scale = (num.n_zc as f64).sqrt() / num.fft_size as f64;
        let want = sequence_spectrum(p.sequence.samples());
        let mut err = 0.0f64;
        for (k, w) in want.iter().enumerate() {
            err = err.max((body[num.subcarrier_offset + k] * scale - w).norm());
        }
        assert!(err < 1e-9, "max abs error {err}");
        let bin_energy: f64 = body.iter().map(|z| z.norm_sqr()).sum::<f64>() / num.fft_size as f64;
        assert!((body_energy - bin_energy).abs() / body_energy < 1e-9);
        // unoccupied bins are empty
        assert!(body[..num.subcarrier_offset].iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn delay_examples() {
        let b = burst(32);
        assert_eq!(apply_delay(&b, 0).unwrap(), b);
        let d = apply_delay(&b, 5).unwrap();
        assert_eq!(d.samples[5], b.samples[0]);
        assert_eq!(d.true_delay, 5);
        assert!(d.samples[..5].iter().all(|z| z.norm() == 0.0));
        assert!(apply_delay(&b, 124).is_ok());
        assert!(apply_delay(&b, 125).is_err());
    }

    #[test]
    fn frequency_offset_examples() {
        let b = burst(32);
        assert_eq!(apply_frequency_offset(&b, 0.0), b);
        let r = apply_frequency_offset(&b, 312.5);
        for (x, y) in r.samples.iter().zip(&b.samples) {
            assert!((x.norm() - y.norm()).abs() < 1e-12);
        }
        let back = apply_frequency_offset(&r, -312.5);
        for (x, y) in back.samples.iter().zip(&b.samples) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_numerology() {
        let p = preamble_from_index(22, 0, 13, 839).unwrap();
        let mut num = PrachNumerology::default();
        num.fft_size = 512;
        assert!(modulate(&p, &num).is_err());
        let mut num = PrachNumerology::default();
        num.subcarrier_offset = 200;
        assert!(modulate(&p, &num).is_err());
    }
}
