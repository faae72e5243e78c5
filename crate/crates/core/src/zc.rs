//! Zadoff-Chu root sequences and cyclically shifted PRACH preambles.
//!
//! Root `u` of prime length `N`:
//!
//! ```text
//! x_u(n) = exp(-j * pi * u * n * (n + 1) / N),   0 <= n < N
//! ```
//!
//! Preamble `v` of the unrestricted set is the root advanced by `C_v = v * N_CS`:
//! `x_{u,v}(n) = x_u((n + C_v) mod N)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::{ComplexBuffer, C64};

/// Format-0 long sequence length.
pub const N_ZC_LONG: usize = 839;
/// Size of the RAPID space.
pub const MAX_PREAMBLES: usize = 64;
/// Cyclic-shift step of the unrestricted set for zero-correlation-zone config 1.
pub const DEFAULT_N_CS: usize = 13;

/// A Zadoff-Chu sequence, possibly cyclically shifted.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcSequence {
    data: ComplexBuffer,
    root_u: usize,
}

impl ZcSequence {
    pub fn root(&self) -> usize {
        self.root_u
    }

    pub fn n_zc(&self) -> usize {
        self.data.len()
    }

    pub fn samples(&self) -> &[C64] {
        &self.data
    }

    pub fn into_samples(self) -> ComplexBuffer {
        self.data
    }
}

impl std::ops::Index<usize> for ZcSequence {
    type Output = C64;

    fn index(&self, n: usize) -> &C64 {
        &self.data[n]
    }
}

/// A cyclically shifted root carrying its RAPID.
#[derive(Debug, Clone, PartialEq)]
pub struct Preamble {
    pub sequence: ZcSequence,
    pub cyclic_shift_cv: usize,
    pub preamble_index_v: usize,
}

/// Root, shift step and preamble index identifying one transmitted preamble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreambleConfig {
    pub root_u: usize,
    pub preamble_index_v: usize,
    pub n_cs: usize,
}

impl PreambleConfig {
    pub fn build(&self, n_zc: usize) -> Result<Preamble> {
        preamble_from_index(self.root_u, self.preamble_index_v, self.n_cs, n_zc)
    }
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Root sequence `u` of prime length `n_zc`.
///
/// The quadratic phase is reduced exactly as an integer modulo `2 * n_zc`
/// before conversion to floating point, so precision does not degrade with `n`.
pub fn zc_root(u: usize, n_zc: usize) -> Result<ZcSequence> {
    if !is_prime(n_zc) {
        return invalid(format!("n_zc={n_zc} is not prime"));
    }
    if u == 0 || u >= n_zc {
        return invalid(format!("root u={u} outside [1, {}]", n_zc - 1));
    }
    let modulus = 2 * n_zc as u128;
    let data = (0..n_zc as u128)
        .map(|n| {
            let m = (u as u128 * n * (n + 1)) % modulus;
            C64::from_polar(1.0, -PI * m as f64 / n_zc as f64)
        })
        .collect();
    Ok(ZcSequence { data, root_u: u })
}

/// `output[n] = seq[(n + cv) mod N]`.
pub fn cyclic_shift(seq: &ZcSequence, cv: usize) -> ZcSequence {
    let n = seq.n_zc();
    let mut data = seq.data.clone();
    data.rotate_left(cv % n);
    ZcSequence {
        data,
        root_u: seq.root_u,
    }
}

pub fn preamble_from_index(u: usize, v: usize, n_cs: usize, n_zc: usize) -> Result<Preamble> {
    if n_cs == 0 {
        return invalid("n_cs must be >= 1");
    }
    let shift = v * n_cs;
    if shift >= n_zc {
        return Err(Error::IndexExhausted {
            v,
            n_cs,
            shift,
            n_zc,
        });
    }
    let root = zc_root(u, n_zc)?;
    Ok(Preamble {
        sequence: cyclic_shift(&root, shift),
        cyclic_shift_cv: shift,
        preamble_index_v: v,
    })
}
