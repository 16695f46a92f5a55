//! Cross-checks the packed scalar implementation against an independent
//! exact-rational model of the format definition.
//!
//! The reference decoder below re-reads every field (sign, capped regime,
//! truncated exponent, fraction) directly from the bit pattern into a
//! `BigRational`, and the reference rounder finds nearest-even by binary
//! search over the value-ordered code space. Neither shares any code with the
//! library's shift-and-mask implementation.

use adm_core::arith::{Decoded, PositFormat, PositValue};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;

fn pow2(e: i32) -> BigRational {
    if e >= 0 {
        BigRational::from_integer(BigInt::one() << e)
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << (-e))
    }
}

/// Exact value of a bit pattern, straight from the format definition.
/// `None` is NaR.
fn reference_value(bits: u64, fmt: PositFormat) -> Option<BigRational> {
    let n = fmt.nbits();
    let p = bits & fmt.word_mask();
    if p == 0 {
        return Some(BigRational::zero());
    }
    if p == fmt.nar_pattern() {
        return None;
    }
    let neg = (p >> (n - 1)) & 1 == 1;
    let mag = if neg { p.wrapping_neg() & fmt.word_mask() } else { p };
    let bit = |i: i64| -> u64 { (mag >> i) & 1 };

    // regime: a run of identical bits, capped at r_max; the terminator is
    // present exactly when the cap is not reached
    let lead = bit(n as i64 - 2);
    let mut run = 1u32;
    let mut pos = n as i64 - 3;
    while run < fmt.r_max() && pos >= 0 && bit(pos) == lead {
        run += 1;
        pos -= 1;
    }
    if run < fmt.r_max() {
        pos -= 1;
    }
    let k: i32 = if lead == 1 { run as i32 - 1 } else { -(run as i32) };

    // exponent: up to es bits; bits falling off the short word read as zero
    let mut e: u32 = 0;
    let mut got = 0;
    while got < fmt.es() && pos >= 0 {
        e = (e << 1) | bit(pos) as u32;
        got += 1;
        pos -= 1;
    }
    e <<= fmt.es() - got;

    // fraction: whatever is left
    let fw = (pos + 1).max(0) as u32;
    let f = if fw == 0 { 0 } else { mag & ((1u64 << fw) - 1) };

    let scale = k * (1i32 << fmt.es()) + e as i32;
    let mant = BigRational::new(BigInt::from((1u64 << fw) + f), BigInt::one() << fw);
    let val = mant * pow2(scale);
    Some(if neg { -val } else { val })
}

fn signed_max(fmt: PositFormat) -> i64 {
    if fmt.nbits() == 64 {
        i64::MAX
    } else {
        (1i64 << (fmt.nbits() - 1)) - 1
    }
}

fn pattern_of_signed(s: i64, fmt: PositFormat) -> u64 {
    (s as u64) & fmt.word_mask()
}

fn value_of_signed(s: i64, fmt: PositFormat) -> BigRational {
    reference_value(pattern_of_signed(s, fmt), fmt).expect("finite code")
}

/// Reference nearest rounding: binary search the value-ordered code space,
/// break exact ties toward the even pattern, never land on zero for nonzero
/// input, and let the ends of the range saturate.
fn reference_encode(x: &BigRational, fmt: PositFormat) -> u64 {
    if x.is_zero() {
        return 0;
    }
    let smax = signed_max(fmt);
    let smin = -smax;
    if *x <= value_of_signed(smin, fmt) {
        return pattern_of_signed(smin, fmt);
    }
    if *x >= value_of_signed(smax, fmt) {
        return pattern_of_signed(smax, fmt);
    }
    let (mut lo, mut hi) = (smin, smax);
    while lo + 1 < hi {
        let mid = ((lo as i128 + hi as i128) / 2) as i64;
        if value_of_signed(mid, fmt) <= *x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dlo = x - value_of_signed(lo, fmt);
    let dhi = value_of_signed(hi, fmt) - x;
    let s = match dlo.cmp(&dhi) {
        Ordering::Less => lo,
        Ordering::Greater => hi,
        Ordering::Equal => {
            if pattern_of_signed(lo, fmt) & 1 == 0 {
                lo
            } else {
                hi
            }
        }
    };
    if s == 0 {
        // nonzero reals never round to zero
        return if x.is_positive() { 1 } else { pattern_of_signed(-1, fmt) };
    }
    pattern_of_signed(s, fmt)
}

fn decoded_rational(v: PositValue) -> Option<BigRational> {
    match v.decode_exact() {
        Decoded::Nar => None,
        Decoded::Zero => Some(BigRational::zero()),
        Decoded::Finite { neg, mant, exp } => {
            let m = BigRational::from_integer(BigInt::from(mant)) * pow2(exp);
            Some(if neg { -m } else { m })
        }
    }
}

fn small_formats() -> Vec<PositFormat> {
    [
        (5, 0, 2),
        (5, 0, 3),
        (6, 1, 3),
        (8, 0, 4),
        (8, 2, 2),
        (8, 2, 6),
        (10, 1, 4),
        (12, 2, 5),
    ]
    .into_iter()
    .map(|(n, es, r)| PositFormat::new(n, es, r).unwrap())
    .collect()
}

fn wide_formats() -> Vec<PositFormat> {
    [(16, 2, 6), (32, 2, 6), (64, 4, 6)]
        .into_iter()
        .map(|(n, es, r)| PositFormat::new(n, es, r).unwrap())
        .collect()
}

#[test]
fn every_pattern_decodes_to_the_reference_value() {
    for fmt in small_formats() {
        for bits in 0..(1u64 << fmt.nbits()) {
            let got = decoded_rational(PositValue::from_bits(bits, fmt));
            let want = reference_value(bits, fmt);
            assert_eq!(got, want, "{} pattern {bits:#x}", fmt.descriptor());
        }
    }
}

#[test]
fn wide_formats_decode_to_the_reference_value_on_sampled_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
    for fmt in wide_formats() {
        for _ in 0..4000 {
            let bits = rng.gen::<u64>() & fmt.word_mask();
            let got = decoded_rational(PositValue::from_bits(bits, fmt));
            let want = reference_value(bits, fmt);
            assert_eq!(got, want, "{} pattern {bits:#x}", fmt.descriptor());
        }
        // extremal regimes
        for bits in [0, 1, fmt.word_mask(), fmt.nar_pattern() - 1, fmt.nar_pattern() + 1, fmt.maxpos_pattern()] {
            assert_eq!(
                decoded_rational(PositValue::from_bits(bits, fmt)),
                reference_value(bits, fmt)
            );
        }
    }
}

#[test]
fn code_order_is_value_order_and_injective() {
    for fmt in small_formats() {
        let smax = signed_max(fmt);
        let mut prev: Option<BigRational> = None;
        for s in -smax..=smax {
            let v = value_of_signed(s, fmt);
            if let Some(p) = prev {
                assert!(p < v, "{} not strictly increasing at signed code {s}", fmt.descriptor());
            }
            prev = Some(v);
        }
    }
}

#[test]
fn scale_bounds_match_the_format_accessors() {
    for fmt in small_formats() {
        let maxpos = value_of_signed(signed_max(fmt), fmt);
        let minpos = value_of_signed(1, fmt);
        // the accessors give the nominal scale caps k_max * 2^es + e_max and
        // its mirror; the reachable extremes stay within those caps but can
        // sit up to 2^es - 1 octaves inside them when a maximal regime leaves
        // no room to store the exponent bits (they read as zero), and the
        // smallest magnitudes also carry the bits that keep them off the
        // reserved all-zeros pattern
        let spread = 1i32 << fmt.es();
        assert!(maxpos < pow2(fmt.max_scale() + 1));
        assert!(maxpos >= pow2(fmt.max_scale() - spread + 1));
        assert!(minpos >= pow2(fmt.min_scale()));
        assert!(minpos < pow2(fmt.min_scale() + spread));
    }
}

#[test]
fn every_pattern_round_trips_through_f64_encode() {
    for fmt in small_formats() {
        for bits in 0..(1u64 << fmt.nbits()) {
            let v = PositValue::from_bits(bits, fmt);
            let back = PositValue::encode(v.decode(), fmt);
            assert_eq!(back.bits(), v.bits(), "{} pattern {bits:#x}", fmt.descriptor());
        }
    }
}

#[test]
fn encoding_matches_the_reference_rounder_at_exact_midpoints() {
    for fmt in small_formats() {
        let smax = signed_max(fmt);
        for s in -smax..smax {
            let m = (value_of_signed(s, fmt) + value_of_signed(s + 1, fmt)) / BigRational::from_integer(2.into());
            // probe only midpoints that f64 represents exactly, so the
            // comparison exercises our rounding and not double rounding
            let Some(mf) = num_traits::ToPrimitive::to_f64(&m) else { continue };
            if BigRational::from_float(mf).as_ref() != Some(&m) {
                continue;
            }
            let got = PositValue::encode(mf, fmt).bits();
            let want = reference_encode(&m, fmt);
            assert_eq!(got, want, "{} midpoint below code {s}", fmt.descriptor());
        }
    }
}

#[test]
fn encoding_matches_the_reference_rounder_on_random_reals() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1ab1e);
    for fmt in small_formats().into_iter().chain(wide_formats()) {
        for _ in 0..600 {
            let exp = rng.gen_range(fmt.min_scale() - 6..=fmt.max_scale().min(900) + 6);
            let mant: u64 = rng.gen::<u64>() >> 11 | (1 << 52);
            let x = (mant as f64) * 2f64.powi(exp - 52) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            if !x.is_finite() {
                continue;
            }
            let got = PositValue::encode(x, fmt).bits();
            let want = reference_encode(&BigRational::from_float(x).unwrap(), fmt);
            assert_eq!(got, want, "{} x={x:e}", fmt.descriptor());
        }
    }
}

#[test]
fn non_finite_and_extreme_inputs_follow_the_saturation_rules() {
    for fmt in small_formats().into_iter().chain(wide_formats()) {
        assert_eq!(PositValue::encode(f64::NAN, fmt), PositValue::nar(fmt));
        assert_eq!(PositValue::encode(f64::INFINITY, fmt), PositValue::nar(fmt));
        assert_eq!(PositValue::encode(f64::NEG_INFINITY, fmt), PositValue::nar(fmt));
        assert!(PositValue::encode(0.0, fmt).is_zero());
        assert!(PositValue::encode(-0.0, fmt).is_zero());
        // overflow saturates instead of wrapping or producing NaR
        assert_eq!(PositValue::encode(f64::MAX, fmt), PositValue::maxpos(fmt));
        assert_eq!(PositValue::encode(f64::MIN, fmt), PositValue::maxpos(fmt).neg());
        // underflow never reaches zero
        assert_eq!(PositValue::encode(f64::MIN_POSITIVE, fmt), PositValue::minpos(fmt));
        assert_eq!(PositValue::encode(-f64::MIN_POSITIVE, fmt), PositValue::minpos(fmt).neg());
    }
}
