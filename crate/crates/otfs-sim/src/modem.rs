//! Delay-Doppler / time-frequency grids and the unitary transform pair
//! between them.
//!
//! The forward map spreads every DD symbol over the whole TF lattice:
//! `X = F_N^H * D * F_M` with normalized DFT matrices, implemented as an
//! inverse FFT down each column (length `N`) followed by a forward FFT along
//! each row (length `M`), each scaled by `1/sqrt(len)` so the map is exactly
//! unitary. The inverse applies the conjugate transforms. Unitarity also
//! means white Gaussian noise keeps its statistics across domains.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::FrameDims;

/// An `N x M` complex grid in the delay-Doppler domain (Doppler-major layout,
/// entry `(k, l)` at flat index `k*M + l`).
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid {
    entries: Vec<Complex64>,
    dims: FrameDims,
}

/// An `N x M` complex grid in the time-frequency domain (entry `(n, m)` at
/// flat index `n*M + m`; `n` indexes time slots, `m` subcarriers).
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    entries: Vec<Complex64>,
    dims: FrameDims,
}

macro_rules! grid_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(dims: FrameDims) -> Self {
                Self {
                    entries: vec![Complex64::new(0.0, 0.0); dims.num_symbols()],
                    dims,
                }
            }

            pub fn from_entries(entries: Vec<Complex64>, dims: FrameDims) -> Result<Self> {
                if entries.len() != dims.num_symbols() {
                    return Err(Error::DimensionMismatch {
                        expected_n: dims.n_doppler,
                        expected_m: dims.m_delay,
                        got_n: entries.len() / dims.m_delay.max(1),
                        got_m: dims.m_delay,
                    });
                }
                Ok(Self { entries, dims })
            }

            pub fn dims(&self) -> FrameDims {
                self.dims
            }

            pub fn entries(&self) -> &[Complex64] {
                &self.entries
            }

            pub fn entries_mut(&mut self) -> &mut [Complex64] {
                &mut self.entries
            }

            /// Entry at row `a`, column `b` (row-major).
            pub fn at(&self, a: usize, b: usize) -> Complex64 {
                self.entries[a * self.dims.m_delay + b]
            }

            pub fn set(&mut self, a: usize, b: usize, v: Complex64) {
                self.entries[a * self.dims.m_delay + b] = v;
            }

            /// Frobenius norm.
            pub fn norm(&self) -> f64 {
                self.entries
                    .iter()
                    .map(|e| e.norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            }
        }
    };
}

grid_impl!(DdGrid);
grid_impl!(TfGrid);

/// In place, run `fft` over every length-`n` column of a row-major `n x m`
/// matrix and scale by `1/sqrt(n)`.
fn transform_columns(
    entries: &mut [Complex64],
    n: usize,
    m: usize,
    fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
) {
    let scale = 1.0 / (n as f64).sqrt();
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..m {
        for i in 0..n {
            col[i] = entries[i * m + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            entries[i * m + j] = col[i] * scale;
        }
    }
}

/// In place, run `fft` over every length-`m` row and scale by `1/sqrt(m)`.
fn transform_rows(
    entries: &mut [Complex64],
    n: usize,
    m: usize,
    fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
) {
    let scale = 1.0 / (m as f64).sqrt();
    for i in 0..n {
        let row = &mut entries[i * m..(i + 1) * m];
        fft.process(row);
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
}

/// DD -> TF: `X = F_N^H * D * F_M` with unitary normalization.
pub fn isfft(d: &DdGrid) -> TfGrid {
    let dims = d.dims();
    let (n, m) = (dims.n_doppler, dims.m_delay);
    let mut entries = d.entries().to_vec();
    let mut planner = FftPlanner::new();
    transform_columns(&mut entries, n, m, &planner.plan_fft_inverse(n));
    transform_rows(&mut entries, n, m, &planner.plan_fft_forward(m));
    TfGrid { entries, dims }
}

/// TF -> DD: `D = F_N * X * F_M^H`, the exact inverse of [`isfft`].
pub fn sfft(x: &TfGrid) -> DdGrid {
    let dims = x.dims();
    let (n, m) = (dims.n_doppler, dims.m_delay);
    let mut entries = x.entries().to_vec();
    let mut planner = FftPlanner::new();
    transform_columns(&mut entries, n, m, &planner.plan_fft_forward(n));
    transform_rows(&mut entries, n, m, &planner.plan_fft_inverse(m));
    DdGrid { entries, dims }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_grid(dims: FrameDims, rng: &mut ChaCha8Rng) -> DdGrid {
        let entries = (0..dims.num_symbols())
            .map(|_| {
                Complex64::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                )
            })
            .collect();
        DdGrid::from_entries(entries, dims).unwrap()
    }

    #[test]
    fn zeros_map_to_zeros() {
        let dims = FrameDims::new(4, 8).unwrap();
        let x = isfft(&DdGrid::zeros(dims));
        assert!(x.entries().iter().all(|e| e.norm() == 0.0));
        let d = sfft(&TfGrid::zeros(dims));
        assert!(d.entries().iter().all(|e| e.norm() == 0.0));
    }

    #[test]
    fn all_ones_2x2_concentrates_in_dc_bin() {
        // With F_2 = (1/sqrt(2)) [[1,1],[1,-1]], an all-ones D gives
        // X = F_2^H * D * F_2 = [[2,0],[0,0]].
        let dims = FrameDims::new(2, 2).unwrap();
        let d = DdGrid::from_entries(vec![Complex64::new(1.0, 0.0); 4], dims).unwrap();
        let x = isfft(&d);
        assert!((x.at(0, 0) - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        for (i, &e) in x.entries().iter().enumerate() {
            if i != 0 {
                assert!(e.norm() < 1e-12, "entry {i} = {e}");
            }
        }
    }

    #[test]
    fn round_trip_is_identity_at_full_scale() {
        let dims = FrameDims::new(128, 512).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = random_grid(dims, &mut rng);
        let back = sfft(&isfft(&d));
        let max_err = d
            .entries()
            .iter()
            .zip(back.entries())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
            ;
        assert!(max_err < 1e-12, "max round-trip error {max_err}");
    }

    #[test]
    fn both_transforms_preserve_frobenius_norm() {
        let dims = FrameDims::new(16, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_grid(dims, &mut rng);
        let x = isfft(&d);
        assert!((x.norm() - d.norm()).abs() < 1e-10);
        let d2 = sfft(&x);
        assert!((d2.norm() - x.norm()).abs() < 1e-10);
    }

    #[test]
    fn transforms_are_linear() {
        let dims = FrameDims::new(8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d1 = random_grid(dims, &mut rng);
        let d2 = random_grid(dims, &mut rng);
        let (a, b) = (Complex64::new(0.7, -0.3), Complex64::new(-1.2, 0.5));

        let combo_entries: Vec<Complex64> = d1
            .entries()
            .iter()
            .zip(d2.entries())
            .map(|(x, y)| a * x + b * y)
            .collect();
        let combo = DdGrid::from_entries(combo_entries, dims).unwrap();

        let lhs = isfft(&combo);
        let (f1, f2) = (isfft(&d1), isfft(&d2));
        for i in 0..dims.num_symbols() {
            let rhs = a * f1.entries()[i] + b * f2.entries()[i];
            assert!((lhs.entries()[i] - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn sfft_preserves_white_noise_variance() {
        // Unitary transform: CN(0, sigma^2) stays CN(0, sigma^2). Sample
        // variance over 2*128*512 = 131072 samples must sit within 3
        // standard errors (SE of the variance of CN samples is
        // sigma^2/sqrt(n)).
        let dims = FrameDims::new(128, 512).unwrap();
        let sigma2 = 0.25f64;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = (sigma2 / 2.0).sqrt();
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..2 {
            let entries: Vec<Complex64> = (0..dims.num_symbols())
                .map(|_| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re * scale, im * scale)
                })
                .collect();
            let noise = TfGrid::from_entries(entries, dims).unwrap();
            let out = sfft(&noise);
            total += out.entries().iter().map(|e| e.norm_sqr()).sum::<f64>();
            count += out.entries().len();
        }
        let sample_var = total / count as f64;
        let se = sigma2 / (count as f64).sqrt();
        assert!(
            (sample_var - sigma2).abs() < 3.0 * se,
            "sample variance {sample_var} vs {sigma2} (3 SE = {})",
            3.0 * se
        );
    }
}
