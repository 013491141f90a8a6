//! Elementary kernels for the hot detector loops.
//!
//! `tanh_unit` evaluates tanh with an exactly-saturated tail: past
//! `|z| = 20` the true value rounds to +-1.0 in f64, so clamping changes no
//! bits. The core builds `exp(2|z|)` from a base-2 split (magic-constant
//! rounding, exponent-field scaling) and a degree-12 Taylor polynomial in
//! Estrin form over `|g| <= ln(2)/2`; absolute error against libm stays
//! below 5e-16 across the whole range.
//!
//! `axis_moments` turns per-edge tanh arguments into the means and
//! variances of a four-point axis-symmetric alphabet in one pass. On x86-64
//! with AVX2 the pass runs four lanes at a time; the scalar fallback
//! performs the identical operation sequence, so both paths return
//! bit-identical results and output never depends on which one ran.

const SATURATION: f64 = 20.0;
const TWO_LOG2_E: f64 = 2.0 * std::f64::consts::LOG2_E;
/// 1.5 * 2^52; adding and subtracting it rounds to the nearest integer and
/// leaves that integer in the low mantissa bits of the sum.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

const C2: f64 = 1.0 / 2.0;
const C3: f64 = 1.0 / 6.0;
const C4: f64 = 1.0 / 24.0;
const C5: f64 = 1.0 / 120.0;
const C6: f64 = 1.0 / 720.0;
const C7: f64 = 1.0 / 5040.0;
const C8: f64 = 1.0 / 40_320.0;
const C9: f64 = 1.0 / 362_880.0;
const C10: f64 = 1.0 / 3_628_800.0;
const C11: f64 = 1.0 / 39_916_800.0;
const C12: f64 = 1.0 / 479_001_600.0;

/// `exp(2 z)` for `z` in `[0, 20]`: exact at `z = 0`, monotone to rounding.
#[inline]
fn exp_two_z(z: f64) -> f64 {
    let w = z * TWO_LOG2_E;
    let n = (w + ROUND_MAGIC) - ROUND_MAGIC;
    let g = (w - n) * std::f64::consts::LN_2;
    let g2 = g * g;
    let g4 = g2 * g2;
    let g8 = g4 * g4;
    let b0 = g + 1.0;
    let b1 = C3 * g + C2;
    let b2 = C5 * g + C4;
    let b3 = C7 * g + C6;
    let b4 = C9 * g + C8;
    let b5 = C11 * g + C10;
    let q0 = b1 * g2 + b0;
    let q1 = b3 * g2 + b2;
    let q2 = b5 * g2 + b4;
    let r0 = q1 * g4 + q0;
    let r1 = C12 * g4 + q2;
    let p = r1 * g8 + r0;
    // n is a small non-negative integer: scale by 2^n in the exponent field.
    f64::from_bits(p.to_bits().wrapping_add((n as u64) << 52))
}

/// `tanh(z)` for finite `z`; `|z| >= 20` returns exactly +-1.0.
#[inline]
pub(crate) fn tanh_unit(z: f64) -> f64 {
    let az = z.abs();
    let e1 = exp_two_z(az.min(SATURATION)) + 1.0;
    let t = 1.0 - 2.0 / e1;
    let t = if az >= SATURATION { 1.0 } else { t };
    t.copysign(z)
}

/// Per-edge message moments of an axis-symmetric alphabet `s*(+-1 +- i)`:
/// `mean = s * (tanh(arg_re), tanh(arg_im))`, `var = energy - |mean|^2`
/// floored at zero. All slices must share one length.
pub(crate) fn axis_moments(
    arg_re: &[f64],
    arg_im: &[f64],
    mean_re: &mut [f64],
    mean_im: &mut [f64],
    var: &mut [f64],
    scale: f64,
    energy: f64,
) {
    let n = arg_re.len();
    assert!(
        arg_im.len() == n && mean_re.len() == n && mean_im.len() == n && var.len() == n,
        "axis_moments slices must share one length"
    );
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just verified at runtime.
        unsafe {
            avx2::axis_moments(arg_re, arg_im, mean_re, mean_im, var, scale, energy);
        }
        return;
    }
    axis_moments_scalar(arg_re, arg_im, mean_re, mean_im, var, scale, energy);
}

fn axis_moments_scalar(
    arg_re: &[f64],
    arg_im: &[f64],
    mean_re: &mut [f64],
    mean_im: &mut [f64],
    var: &mut [f64],
    scale: f64,
    energy: f64,
) {
    for e in 0..arg_re.len() {
        let mr = scale * tanh_unit(arg_re[e]);
        let mi = scale * tanh_unit(arg_im[e]);
        mean_re[e] = mr;
        mean_im[e] = mi;
        var[e] = (energy - (mr * mr + mi * mi)).max(0.0);
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    /// Four-lane mirror of the scalar pass: same operations in the same
    /// order per element, hence bit-identical output.
    ///
    /// # Safety
    /// Caller must verify AVX2 support first.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn axis_moments(
        arg_re: &[f64],
        arg_im: &[f64],
        mean_re: &mut [f64],
        mean_im: &mut [f64],
        var: &mut [f64],
        scale: f64,
        energy: f64,
    ) {
        let n = arg_re.len();
        let sv = _mm256_set1_pd(scale);
        let ev = _mm256_set1_pd(energy);
        let mut e = 0usize;
        // Two independent blocks per step keep four tanh chains in flight.
        while e + 8 <= n {
            moments4(arg_re, arg_im, mean_re, mean_im, var, e, sv, ev);
            moments4(arg_re, arg_im, mean_re, mean_im, var, e + 4, sv, ev);
            e += 8;
        }
        while e + 4 <= n {
            moments4(arg_re, arg_im, mean_re, mean_im, var, e, sv, ev);
            e += 4;
        }
        for k in e..n {
            let mr = scale * super::tanh_unit(arg_re[k]);
            let mi = scale * super::tanh_unit(arg_im[k]);
            mean_re[k] = mr;
            mean_im[k] = mi;
            var[k] = (energy - (mr * mr + mi * mi)).max(0.0);
        }
    }

    /// One four-edge block starting at `e`; bounds guaranteed by the caller.
    #[inline]
    #[target_feature(enable = "avx2")]
    unsafe fn moments4(
        arg_re: &[f64],
        arg_im: &[f64],
        mean_re: &mut [f64],
        mean_im: &mut [f64],
        var: &mut [f64],
        e: usize,
        sv: __m256d,
        ev: __m256d,
    ) {
        let tr = tanh4(_mm256_loadu_pd(arg_re.as_ptr().add(e)));
        let ti = tanh4(_mm256_loadu_pd(arg_im.as_ptr().add(e)));
        let mr = _mm256_mul_pd(sv, tr);
        let mi = _mm256_mul_pd(sv, ti);
        let nsq = _mm256_add_pd(_mm256_mul_pd(mr, mr), _mm256_mul_pd(mi, mi));
        let v = _mm256_max_pd(_mm256_sub_pd(ev, nsq), _mm256_setzero_pd());
        _mm256_storeu_pd(mean_re.as_mut_ptr().add(e), mr);
        _mm256_storeu_pd(mean_im.as_mut_ptr().add(e), mi);
        _mm256_storeu_pd(var.as_mut_ptr().add(e), v);
    }

    /// Lane-wise `tanh_unit`, expression for expression.
    #[inline]
    #[target_feature(enable = "avx2")]
    unsafe fn tanh4(z: __m256d) -> __m256d {
        let absmask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7FFF_FFFF_FFFF_FFFFu64 as i64));
        let one = _mm256_set1_pd(1.0);
        let sat = _mm256_set1_pd(super::SATURATION);
        let magic = _mm256_set1_pd(super::ROUND_MAGIC);

        let az = _mm256_and_pd(z, absmask);
        let w = _mm256_mul_pd(_mm256_min_pd(az, sat), _mm256_set1_pd(super::TWO_LOG2_E));
        let nm = _mm256_add_pd(w, magic);
        let n = _mm256_sub_pd(nm, magic);
        let g = _mm256_mul_pd(_mm256_sub_pd(w, n), _mm256_set1_pd(std::f64::consts::LN_2));
        let g2 = _mm256_mul_pd(g, g);
        let g4 = _mm256_mul_pd(g2, g2);
        let g8 = _mm256_mul_pd(g4, g4);
        let b0 = _mm256_add_pd(g, one);
        let b1 = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(super::C3), g), _mm256_set1_pd(super::C2));
        let b2 = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(super::C5), g), _mm256_set1_pd(super::C4));
        let b3 = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(super::C7), g), _mm256_set1_pd(super::C6));
        let b4 = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(super::C9), g), _mm256_set1_pd(super::C8));
        let b5 = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(super::C11), g), _mm256_set1_pd(super::C10));
        let q0 = _mm256_add_pd(_mm256_mul_pd(b1, g2), b0);
        let q1 = _mm256_add_pd(_mm256_mul_pd(b3, g2), b2);
        let q2 = _mm256_add_pd(_mm256_mul_pd(b5, g2), b4);
        let r0 = _mm256_add_pd(_mm256_mul_pd(q1, g4), q0);
        let r1 = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(super::C12), g4), q2);
        let p = _mm256_add_pd(_mm256_mul_pd(r1, g8), r0);
        // Low mantissa bits of w + magic hold round(w): shift into exponents.
        let nbits = _mm256_and_si256(_mm256_castpd_si256(nm), _mm256_set1_epi64x(0xFFFF));
        let scaled = _mm256_castsi256_pd(_mm256_add_epi64(
            _mm256_castpd_si256(p),
            _mm256_slli_epi64(nbits, 52),
        ));
        let e1 = _mm256_add_pd(scaled, one);
        let t = _mm256_sub_pd(one, _mm256_div_pd(_mm256_set1_pd(2.0), e1));
        let t = _mm256_blendv_pd(t, one, _mm256_cmp_pd(az, sat, _CMP_GE_OQ));
        // copysign from z.
        _mm256_or_pd(_mm256_and_pd(t, absmask), _mm256_andnot_pd(absmask, z))
    }
}
