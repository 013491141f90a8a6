//! Exhaustive joint MAP detection for small grids.
//!
//! Enumerates every hypothesis grid, scores it by log prior minus the
//! noise-scaled squared residual, and returns the best. The hypothesis count
//! `|alphabet|^(N*M)` explodes quickly, so a budget guard rejects grids that
//! would enumerate more than the caller allows.

use num_complex::Complex64;

use crate::channel::SparseChannel;
use crate::error::{Error, Result};
use crate::grid::Constellation;
use crate::modem::DdGrid;

use super::{effective_noise_variance, Prior};

/// Default enumeration budget: 2^20 hypotheses.
pub const DEFAULT_MAP_BUDGET: u128 = 1 << 20;

/// Joint MAP by enumeration. Ties are broken toward the lexicographically
/// smallest index vector, which makes the result independent of the order
/// hypotheses are visited in.
pub fn map_exhaustive(
    y: &DdGrid,
    ch: &SparseChannel,
    cons: &Constellation,
    prior: &Prior,
    budget: u128,
) -> Result<DdGrid> {
    if y.dims() != ch.dims() {
        return Err(Error::DimensionMismatch {
            expected_n: ch.dims().n_doppler,
            expected_m: ch.dims().m_delay,
            got_n: y.dims().n_doppler,
            got_m: y.dims().m_delay,
        });
    }
    let sigma2 = effective_noise_variance(ch.noise_variance())?;
    let nm = ch.dims().num_symbols();
    let chi = cons.len();
    let required = (0..nm).try_fold(1u128, |acc, _| acc.checked_mul(chi as u128));
    let required = required.unwrap_or(u128::MAX);
    if required > budget {
        return Err(Error::MapBudgetExceeded { required, budget });
    }
    let log_prior = prior.log_table(nm, chi)?;
    let points = cons.points();
    let obs = y.entries();

    let mut indices = vec![0u8; nm];
    let mut symbols: Vec<Complex64> = vec![points[0]; nm];
    let mut best_indices = indices.clone();
    let mut best_score = f64::NEG_INFINITY;

    loop {
        // Score = sum_r ln p_r(d_r) - |y - H d|^2 / sigma^2.
        let mut score = 0.0;
        if let Some(t) = &log_prior {
            for (r, &i) in indices.iter().enumerate() {
                score += t[r * chi + i as usize];
            }
        }
        if score > f64::NEG_INFINITY {
            let mut residual = 0.0;
            for (r, row) in ch.rows().iter().enumerate() {
                let mut pred = Complex64::new(0.0, 0.0);
                for &(c, g) in row {
                    pred += g * symbols[c];
                }
                residual += (obs[r] - pred).norm_sqr();
            }
            score -= residual / sigma2;
        }
        // Lexicographic enumeration: strict improvement keeps the earliest,
        // i.e. lexicographically smallest, maximizer.
        if score > best_score {
            best_score = score;
            best_indices.copy_from_slice(&indices);
        }

        // Odometer increment on the last position; carry to the front.
        let mut pos = nm;
        let mut carried = true;
        while carried && pos > 0 {
            pos -= 1;
            if (indices[pos] as usize) + 1 < chi {
                indices[pos] += 1;
                symbols[pos] = points[indices[pos] as usize];
                carried = false;
            } else {
                indices[pos] = 0;
                symbols[pos] = points[0];
            }
        }
        if carried {
            break;
        }
    }

    let entries: Vec<Complex64> = best_indices
        .iter()
        .map(|&i| points[i as usize])
        .collect();
    DdGrid::from_entries(entries, ch.dims())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, build_effective_matrix, Path, PathSet};
    use crate::grid::{FrameDims, ModulationScheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qpsk() -> Constellation {
        Constellation::new(ModulationScheme::Qpsk)
    }

    fn identity_channel(dims: FrameDims, sigma2: f64) -> SparseChannel {
        let ps = PathSet::new(vec![Path {
            gain: Complex64::new(1.0, 0.0),
            doppler_index: 0,
            delay_index: 0,
        }])
        .unwrap();
        build_effective_matrix(&ps, sigma2, dims)
    }

    /// Deliberately naive reference: dense matrix, recursive enumeration,
    /// explicit lexicographic tie handling.
    fn map_dense_reference(
        y: &DdGrid,
        ch: &SparseChannel,
        cons: &Constellation,
    ) -> Vec<u8> {
        let nm = ch.dims().num_symbols();
        let chi = cons.len();
        let dense = ch.to_dense();
        let sigma2 = ch.noise_variance().max(crate::detect::NOISE_VARIANCE_FLOOR);
        let mut best: Option<(f64, Vec<u8>)> = None;
        let mut assign = vec![0u8; nm];
        fn recurse(
            pos: usize,
            nm: usize,
            chi: usize,
            assign: &mut Vec<u8>,
            dense: &[Complex64],
            y: &[Complex64],
            points: &[Complex64],
            sigma2: f64,
            best: &mut Option<(f64, Vec<u8>)>,
        ) {
            if pos == nm {
                let mut residual = 0.0;
                for r in 0..nm {
                    let mut pred = Complex64::new(0.0, 0.0);
                    for c in 0..nm {
                        pred += dense[r * nm + c] * points[assign[c] as usize];
                    }
                    residual += (y[r] - pred).norm_sqr();
                }
                let score = -residual / sigma2;
                let better = match best {
                    None => true,
                    Some((s, idx)) => score > *s || (score == *s && assign < idx),
                };
                if better {
                    *best = Some((score, assign.clone()));
                }
                return;
            }
            // Visit points in reverse so the tie rule is exercised.
            for i in (0..chi).rev() {
                assign[pos] = i as u8;
                recurse(pos + 1, nm, chi, assign, dense, y, points, sigma2, best);
            }
        }
        recurse(
            0,
            nm,
            chi,
            &mut assign,
            &dense,
            y.entries(),
            cons.points(),
            sigma2,
            &mut best,
        );
        best.unwrap().1
    }

    fn indices_of(grid: &DdGrid, cons: &Constellation) -> Vec<u8> {
        grid.entries()
            .iter()
            .map(|&e| cons.index_of_point(e).unwrap() as u8)
            .collect()
    }

    #[test]
    fn noiseless_identity_returns_transmitted_grid() {
        let dims = FrameDims::new(2, 2).unwrap();
        let c = qpsk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let indices: Vec<u8> = (0..4).map(|_| rng.gen_range(0..4)).collect();
        let entries: Vec<Complex64> =
            indices.iter().map(|&i| c.points()[i as usize]).collect();
        let d = DdGrid::from_entries(entries, dims).unwrap();
        let ch = identity_channel(dims, 1e-12);
        let y = apply_channel(&d, &ch, &mut rng).unwrap();
        let hat = map_exhaustive(&y, &ch, &c, &Prior::Uniform, DEFAULT_MAP_BUDGET).unwrap();
        assert_eq!(indices_of(&hat, &c), indices);
    }

    #[test]
    fn budget_accounting_is_exact() {
        // 1x2 QPSK grid: exactly 16 hypotheses.
        let dims = FrameDims::new(1, 2).unwrap();
        let ch = identity_channel(dims, 0.1);
        let y = DdGrid::zeros(dims);
        let c = qpsk();
        assert!(map_exhaustive(&y, &ch, &c, &Prior::Uniform, 16).is_ok());
        match map_exhaustive(&y, &ch, &c, &Prior::Uniform, 15) {
            Err(Error::MapBudgetExceeded { required, budget }) => {
                assert_eq!(required, 16);
                assert_eq!(budget, 15);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn matches_naive_dense_enumeration() {
        let dims = FrameDims::new(2, 2).unwrap();
        let ps = PathSet::new(vec![
            Path {
                gain: Complex64::new(0.85, -0.1),
                doppler_index: 0,
                delay_index: 0,
            },
            Path {
                gain: Complex64::new(0.3, 0.45),
                doppler_index: 1,
                delay_index: 1,
            },
        ])
        .unwrap();
        // 10 dB working point.
        let sigma2 = 0.1;
        let ch = build_effective_matrix(&ps, sigma2, dims);
        let c = qpsk();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let indices: Vec<u8> = (0..4).map(|_| rng.gen_range(0..4)).collect();
            let entries: Vec<Complex64> =
                indices.iter().map(|&i| c.points()[i as usize]).collect();
            let d = DdGrid::from_entries(entries, dims).unwrap();
            let y = apply_channel(&d, &ch, &mut rng).unwrap();
            let fast = map_exhaustive(&y, &ch, &c, &Prior::Uniform, DEFAULT_MAP_BUDGET).unwrap();
            let naive = map_dense_reference(&y, &ch, &c);
            assert_eq!(indices_of(&fast, &c), naive);
        }
    }

    #[test]
    fn tie_break_prefers_lexicographically_smallest() {
        // Zero observation at enormous noise variance: all hypotheses are
        // essentially tied; the all-zeros index vector must win.
        let dims = FrameDims::new(1, 2).unwrap();
        let ch = identity_channel(dims, 1e9);
        let y = DdGrid::zeros(dims);
        let c = qpsk();
        let hat = map_exhaustive(&y, &ch, &c, &Prior::Uniform, DEFAULT_MAP_BUDGET).unwrap();
        // With y = 0 every point has identical residual |x|^2 = 1.
        assert_eq!(indices_of(&hat, &c), vec![0, 0]);
    }

    #[test]
    fn prior_tilts_the_decision() {
        let dims = FrameDims::new(1, 1).unwrap();
        let ch = identity_channel(dims, 4.0);
        let c = qpsk();
        // Observation halfway ambiguous; strong prior on point 3 wins.
        let y = DdGrid::from_entries(vec![Complex64::new(0.05, 0.05)], dims).unwrap();
        let uniform = map_exhaustive(&y, &ch, &c, &Prior::Uniform, 16).unwrap();
        assert_eq!(indices_of(&uniform, &c), vec![0]);
        let prior = Prior::PerSymbol(vec![vec![0.01, 0.01, 0.01, 0.97]]);
        let tilted = map_exhaustive(&y, &ch, &c, &prior, 16).unwrap();
        assert_eq!(indices_of(&tilted, &c), vec![3]);
    }

    #[test]
    fn zero_prior_probability_excludes_hypotheses() {
        let dims = FrameDims::new(1, 1).unwrap();
        let ch = identity_channel(dims, 0.5);
        let c = qpsk();
        // Observation right on point 0, but the prior forbids it.
        let y = DdGrid::from_entries(vec![c.points()[0]], dims).unwrap();
        let prior = Prior::PerSymbol(vec![vec![0.0, 0.5, 0.25, 0.25]]);
        let hat = map_exhaustive(&y, &ch, &c, &prior, 16).unwrap();
        assert_eq!(indices_of(&hat, &c), vec![1]);
    }
}
