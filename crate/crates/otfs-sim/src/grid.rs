//! Frame geometry, constellation, bit mapping, and the flat-index convention
//! shared by all other modules.
//!
//! A frame is an `N x M` grid of symbols indexed by Doppler bin `k` (rows,
//! `N` time slots) and delay bin `l` (columns, `M` subcarriers). The flat
//! ordering is Doppler-major: flat index `k*M + l`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::modem::DdGrid;

/// Frame geometry: `N` Doppler bins (time slots) by `M` delay bins
/// (subcarriers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDims {
    pub n_doppler: usize,
    pub m_delay: usize,
}

impl FrameDims {
    pub fn new(n_doppler: usize, m_delay: usize) -> Result<Self> {
        if n_doppler == 0 || m_delay == 0 {
            return Err(Error::InvalidChannelConfig(format!(
                "frame dims must be positive, got {n_doppler}x{m_delay}"
            )));
        }
        Ok(Self { n_doppler, m_delay })
    }

    /// Total symbol count `N*M`, the vector length used everywhere.
    pub fn num_symbols(&self) -> usize {
        self.n_doppler * self.m_delay
    }
}

/// A position on the delay-Doppler grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DdIndex {
    /// Doppler index in `[0, N-1]`.
    pub k: usize,
    /// Delay index in `[0, M-1]`.
    pub l: usize,
}

impl DdIndex {
    pub fn new(k: usize, l: usize, dims: FrameDims) -> Result<Self> {
        if k >= dims.n_doppler || l >= dims.m_delay {
            return Err(Error::IndexOutOfBounds {
                k,
                l,
                n: dims.n_doppler,
                m: dims.m_delay,
            });
        }
        Ok(Self { k, l })
    }
}

/// Doppler-major flat index `k*M + l`.
pub fn flat_index(idx: DdIndex, dims: FrameDims) -> usize {
    idx.k * dims.m_delay + idx.l
}

/// Inverse of [`flat_index`].
pub fn unflatten(flat: usize, dims: FrameDims) -> DdIndex {
    debug_assert!(flat < dims.num_symbols());
    DdIndex {
        k: flat / dims.m_delay,
        l: flat % dims.m_delay,
    }
}

/// Modulation scheme identifier. Only QPSK is currently supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationScheme {
    Qpsk,
}

impl FromStr for ModulationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(ModulationScheme::Qpsk),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModulationScheme::Qpsk => write!(f, "qpsk"),
        }
    }
}

/// The symbol alphabet with its bit labeling.
///
/// Points are stored so that the point at index `i` carries the bit tuple
/// whose big-endian integer value is `i`; the labeling is a bijection and
/// the alphabet has unit average energy.
///
/// QPSK uses the Gray labeling
/// `(0,0) -> (+1+j)/sqrt(2)`, `(0,1) -> (-1+j)/sqrt(2)`,
/// `(1,1) -> (-1-j)/sqrt(2)`, `(1,0) -> (+1-j)/sqrt(2)`:
/// the first bit selects the sign of the imaginary part, the second the sign
/// of the real part, and neighboring points differ in exactly one bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    bits_per_symbol: usize,
    scheme: ModulationScheme,
}

impl Constellation {
    /// Build the unit-energy Gray-labeled constellation for `scheme`.
    pub fn new(scheme: ModulationScheme) -> Self {
        match scheme {
            ModulationScheme::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                // Index = (b0 << 1) | b1; b0 flips Im, b1 flips Re.
                let points = vec![
                    Complex64::new(a, a),   // (0,0)
                    Complex64::new(-a, a),  // (0,1)
                    Complex64::new(a, -a),  // (1,0)
                    Complex64::new(-a, -a), // (1,1)
                ];
                Self {
                    points,
                    bits_per_symbol: 2,
                    scheme,
                }
            }
        }
    }

    /// Parse a scheme name and build its constellation.
    pub fn from_scheme_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn scheme(&self) -> ModulationScheme {
        self.scheme
    }

    /// The alphabet, in label order.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Point index for a bit tuple (big-endian).
    pub fn index_of_bits(&self, bits: &[u8]) -> usize {
        debug_assert_eq!(bits.len(), self.bits_per_symbol);
        bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    /// Bit tuple (big-endian) for a point index.
    pub fn bits_of_index(&self, index: usize) -> Vec<u8> {
        (0..self.bits_per_symbol)
            .rev()
            .map(|shift| ((index >> shift) & 1) as u8)
            .collect()
    }

    /// Index of the point equal to `value`, if any.
    pub fn index_of_point(&self, value: Complex64) -> Option<usize> {
        self.points
            .iter()
            .position(|p| (p - value).norm() < 1e-9)
    }

    /// Index of the alphabet point closest to `value` (hard decision).
    pub fn nearest_point(&self, value: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - value).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Map a bit sequence onto the delay-Doppler grid in flat-index order.
///
/// `bits` must hold exactly `bits_per_symbol * N * M` entries, each 0 or 1.
pub fn map_bits(bits: &[u8], c: &Constellation, dims: FrameDims) -> Result<DdGrid> {
    let expected = c.bits_per_symbol() * dims.num_symbols();
    if bits.len() != expected {
        return Err(Error::BitLengthMismatch {
            expected,
            got: bits.len(),
        });
    }
    let b = c.bits_per_symbol();
    let entries = (0..dims.num_symbols())
        .map(|r| c.points()[c.index_of_bits(&bits[r * b..(r + 1) * b])])
        .collect();
    DdGrid::from_entries(entries, dims)
}

/// Recover the bit sequence from a grid of exact constellation points.
///
/// Inverse of [`map_bits`]; entries that are not alphabet points are
/// rejected (hard-decision demapping of noisy samples is the harness's job).
pub fn demap_grid(d: &DdGrid, c: &Constellation) -> Result<Vec<u8>> {
    let mut bits = Vec::with_capacity(c.bits_per_symbol() * d.dims().num_symbols());
    for (r, &value) in d.entries().iter().enumerate() {
        let idx = c
            .index_of_point(value)
            .ok_or_else(|| Error::NotAConstellationPoint {
                index: r,
                value: format!("{value}"),
            })?;
        bits.extend(c.bits_of_index(idx));
    }
    Ok(bits)
}
