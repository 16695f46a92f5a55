use std::cmp::Ordering;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::format::PositFormat;
use super::limbs;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArithError {
    #[error("operands use different formats: {0} vs {1}")]
    FormatMismatch(String, String),
    #[error("dot product length mismatch: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("nothing to reduce")]
    EmptyReduce,
}

/// Exact classification of a bit pattern.
///
/// A finite value is `(-1)^neg * mant * 2^exp` with `mant` odd or even but
/// always nonzero; this is lossless for every supported format (mantissas
/// never exceed 63 bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Nar,
    Zero,
    Finite { neg: bool, mant: u64, exp: i32 },
}

/// One scalar in a bounded-regime tapered format.
///
/// All-zeros is exact zero; `100...0` is NaR (not a real). Every other
/// pattern denotes `(-1)^s * 2^(k*2^es + e) * (1 + f/2^fs)` where the regime
/// value k comes from a capped run: a run of `m < r_max` identical bits plus
/// a terminator gives k = m-1 (ones) or -m (zeros); a run that reaches the
/// cap has no terminator and gives k = r_max-1 or -r_max. Patterns compare
/// like two's complement integers, in the same order as the values they
/// denote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RawValue")]
pub struct PositValue {
    bits: u64,
    fmt: PositFormat,
}

/// Deserialization mirror; stray high bits are masked off like in `from_bits`.
#[derive(Deserialize)]
struct RawValue {
    bits: u64,
    fmt: PositFormat,
}

impl From<RawValue> for PositValue {
    fn from(raw: RawValue) -> Self {
        PositValue::from_bits(raw.bits, raw.fmt)
    }
}

impl PositValue {
    pub fn from_bits(bits: u64, fmt: PositFormat) -> Self {
        PositValue { bits: bits & fmt.word_mask(), fmt }
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn format(&self) -> PositFormat {
        self.fmt
    }

    pub fn zero(fmt: PositFormat) -> Self {
        PositValue { bits: 0, fmt }
    }

    pub fn nar(fmt: PositFormat) -> Self {
        PositValue { bits: fmt.nar_pattern(), fmt }
    }

    pub fn minpos(fmt: PositFormat) -> Self {
        PositValue { bits: 1, fmt }
    }

    pub fn maxpos(fmt: PositFormat) -> Self {
        PositValue { bits: fmt.maxpos_pattern(), fmt }
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    pub fn is_nar(&self) -> bool {
        self.bits == self.fmt.nar_pattern()
    }

    /// Two's complement negation; zero and NaR map to themselves.
    pub fn neg(&self) -> Self {
        PositValue {
            bits: self.bits.wrapping_neg() & self.fmt.word_mask(),
            fmt: self.fmt,
        }
    }

    /// Exact field-level decode of the pattern.
    pub fn decode_exact(&self) -> Decoded {
        let n = self.fmt.nbits();
        if self.bits == 0 {
            return Decoded::Zero;
        }
        if self.is_nar() {
            return Decoded::Nar;
        }
        let neg = (self.bits >> (n - 1)) & 1 == 1;
        let mag = if neg {
            self.bits.wrapping_neg() & self.fmt.word_mask()
        } else {
            self.bits
        };
        let (mant, exp) = decode_magnitude(mag, self.fmt);
        Decoded::Finite { neg, mant, exp }
    }

    /// Nearest float64 (exact whenever the mantissa fits 53 bits; see
    /// [`Self::decode_exact`] for the lossless form).
    pub fn decode(&self) -> f64 {
        match self.decode_exact() {
            Decoded::Nar => f64::NAN,
            Decoded::Zero => 0.0,
            Decoded::Finite { neg, mant, exp } => {
                let v = mant as f64 * 2f64.powi(exp);
                if neg {
                    -v
                } else {
                    v
                }
            }
        }
    }

    /// Exact decimal expansion of the denoted value (dyadic, so always finite).
    pub fn decode_decimal(&self) -> String {
        match self.decode_exact() {
            Decoded::Nar => "NaR".to_string(),
            Decoded::Zero => "0".to_string(),
            Decoded::Finite { neg, mant, exp } => {
                let sign = if neg { "-" } else { "" };
                if exp >= 0 {
                    let v = BigUint::from(mant) << exp as u32;
                    format!("{sign}{v}")
                } else {
                    let shift = (-exp) as u32;
                    let digits = (BigUint::from(mant) * BigUint::from(5u8).pow(shift)).to_string();
                    let digits = if digits.len() <= shift as usize {
                        format!("{}{}", "0".repeat(shift as usize + 1 - digits.len()), digits)
                    } else {
                        digits
                    };
                    let point = digits.len() - shift as usize;
                    let frac = digits[point..].trim_end_matches('0');
                    if frac.is_empty() {
                        format!("{sign}{}", &digits[..point])
                    } else {
                        format!("{sign}{}.{}", &digits[..point], frac)
                    }
                }
            }
        }
    }

    /// Round a finite float64 to the nearest representable value, ties to the
    /// even pattern. Magnitudes beyond the format's dynamic range clamp to
    /// maxpos / minpos (saturation; nonzero values never round to zero).
    /// Non-finite inputs map to NaR.
    pub fn encode(x: f64, fmt: PositFormat) -> Self {
        if !x.is_finite() {
            return PositValue::nar(fmt);
        }
        if x == 0.0 {
            return PositValue::zero(fmt);
        }
        let bits = x.to_bits();
        let neg = bits >> 63 == 1;
        let raw_exp = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        Self::encode_mag(neg, mant as u128, exp, fmt)
    }

    /// Round the exact value `(-1)^neg * mant * 2^exp` once.
    pub fn encode_mag(neg: bool, mant: u128, exp: i32, fmt: PositFormat) -> Self {
        if mant == 0 {
            return PositValue::zero(fmt);
        }
        let m = [mant as u64, (mant >> 64) as u64];
        PositValue::from_bits(nearest_from_mag(fmt, neg, &m, exp as i64), fmt)
    }

    /// Total order on denoted values via signed pattern comparison; NaR sorts
    /// below every real value.
    pub fn value_cmp(&self, other: &Self) -> Ordering {
        sign_extend(self.bits, self.fmt.nbits()).cmp(&sign_extend(other.bits, other.fmt.nbits()))
    }

    /// Exact sum, rounded once.
    pub fn scalar_add(self, rhs: Self) -> Result<Self, ArithError> {
        check_fmt(self.fmt, rhs.fmt)?;
        let (a, b) = (self.decode_exact(), rhs.decode_exact());
        match (a, b) {
            (Decoded::Nar, _) | (_, Decoded::Nar) => Ok(PositValue::nar(self.fmt)),
            (Decoded::Zero, _) => Ok(rhs),
            (_, Decoded::Zero) => Ok(self),
            (
                Decoded::Finite { neg: n1, mant: m1, exp: e1 },
                Decoded::Finite { neg: n2, mant: m2, exp: e2 },
            ) => {
                let e_out = e1.min(e2);
                let d1 = (e1 - e_out) as u32;
                let d2 = (e2 - e_out) as u32;
                let len = ((d1.max(d2) / 64) as usize) + 4;
                let mut acc = vec![0u64; len];
                limbs::add_shifted_signed(&mut acc, m1 as u128, d1, n1);
                limbs::add_shifted_signed(&mut acc, m2 as u128, d2, n2);
                let top_neg = acc[len - 1] >> 63 == 1;
                if top_neg {
                    limbs::negate(&mut acc);
                }
                if limbs::is_zero(&acc) {
                    return Ok(PositValue::zero(self.fmt));
                }
                Ok(PositValue::from_bits(
                    nearest_from_mag(self.fmt, top_neg, &acc, e_out as i64),
                    self.fmt,
                ))
            }
        }
    }

    pub fn scalar_sub(self, rhs: Self) -> Result<Self, ArithError> {
        self.scalar_add(rhs.neg())
    }

    /// Exact product, rounded once.
    pub fn scalar_mul(self, rhs: Self) -> Result<Self, ArithError> {
        check_fmt(self.fmt, rhs.fmt)?;
        match (self.decode_exact(), rhs.decode_exact()) {
            (Decoded::Nar, _) | (_, Decoded::Nar) => Ok(PositValue::nar(self.fmt)),
            (Decoded::Zero, _) | (_, Decoded::Zero) => Ok(PositValue::zero(self.fmt)),
            (
                Decoded::Finite { neg: n1, mant: m1, exp: e1 },
                Decoded::Finite { neg: n2, mant: m2, exp: e2 },
            ) => Ok(PositValue::encode_mag(
                n1 != n2,
                m1 as u128 * m2 as u128,
                e1 + e2,
                self.fmt,
            )),
        }
    }
}

pub(crate) fn check_fmt(a: PositFormat, b: PositFormat) -> Result<(), ArithError> {
    if a != b {
        Err(ArithError::FormatMismatch(a.descriptor(), b.descriptor()))
    } else {
        Ok(())
    }
}

fn sign_extend(bits: u64, n: u32) -> i64 {
    ((bits << (64 - n)) as i64) >> (64 - n)
}

/// Decode a positive (sign bit clear, nonzero) magnitude pattern to
/// `(mant, exp)` with value `mant * 2^exp`.
fn decode_magnitude(mag: u64, fmt: PositFormat) -> (u64, i32) {
    let n = fmt.nbits();
    let es = fmt.es();
    let r_max = fmt.r_max();
    let body_len = n - 1;
    let r0 = (mag >> (body_len - 1)) & 1;
    let mut run = 1u32;
    while run < r_max && run < body_len && (mag >> (body_len - 1 - run)) & 1 == r0 {
        run += 1;
    }
    let (k, field_len) = if run == r_max {
        // capped run, no terminator
        (if r0 == 1 { r_max as i32 - 1 } else { -(r_max as i32) }, r_max)
    } else {
        (if r0 == 1 { run as i32 - 1 } else { -(run as i32) }, run + 1)
    };
    let rem = body_len - field_len;
    let es_avail = es.min(rem);
    let tail = mag & ones(rem);
    let fs = rem - es_avail;
    let e_stored = (tail >> fs) & ones_u32(es_avail);
    let e = (e_stored as i32) << (es - es_avail);
    let f = tail & ones(fs);
    let scale = (k << es) + e;
    let mant = (1u64 << fs) | f;
    (mant, scale - fs as i32)
}

fn ones(c: u32) -> u64 {
    if c == 0 {
        0
    } else if c >= 64 {
        u64::MAX
    } else {
        (1u64 << c) - 1
    }
}

fn ones_u32(c: u32) -> u64 {
    ones(c)
}

fn regime_encode(k: i32, r_max: u32) -> (u64, u32) {
    if k >= 0 {
        if k as u32 == r_max - 1 {
            (ones(r_max), r_max)
        } else {
            (ones(k as u32 + 1) << 1, k as u32 + 2)
        }
    } else {
        let m = (-k) as u32;
        if m == r_max {
            (0, r_max)
        } else {
            (1, m + 1)
        }
    }
}

/// Round the exact magnitude `limbs * 2^exp` (nonzero) to the nearest
/// representable pattern, ties to even, saturating at the dynamic range ends.
/// This is the single rounding step shared by scalar encode and quire readout.
pub(crate) fn nearest_from_mag(fmt: PositFormat, neg: bool, m: &[u64], exp: i64) -> u64 {
    let n = fmt.nbits();
    let es = fmt.es();
    let bl = limbs::bitlen(m);
    debug_assert!(bl > 0);
    let s = bl as i64 - 1 + exp;
    let signed = |body: u64| -> u64 {
        if neg {
            body.wrapping_neg() & fmt.word_mask()
        } else {
            body
        }
    };
    if s > fmt.max_scale() as i64 {
        return signed(fmt.maxpos_pattern());
    }
    if s < fmt.min_scale() as i64 {
        return signed(1);
    }
    let s = s as i32;
    let k = s >> es;
    let e = (s - (k << es)) as u32;
    let (regime, field_len) = regime_encode(k, fmt.r_max());
    let avail = n - 1 - field_len;
    if es <= avail {
        // all exponent bits stored: the cut is inside the fraction, where
        // neighbor spacing is uniform, so guard/sticky rounding is exact
        let fs = avail - es;
        let below = bl - 1; // fraction source bits under the mantissa MSB
        let (frac, guard, sticky) = if fs >= below {
            (limbs::get_bits(m, 0, below) << (fs - below), false, false)
        } else {
            let lo = below - fs;
            let frac = limbs::get_bits(m, lo, fs);
            let guard = limbs::get_bit(m, lo - 1);
            let sticky = lo >= 1 && limbs::any_bit_below(m, lo - 1);
            (frac, guard, sticky)
        };
        let mut body = (regime << avail) | ((e as u64) << fs) | frac;
        if guard && (sticky || body & 1 == 1) {
            body += 1;
            if body > fmt.maxpos_pattern() {
                body = fmt.maxpos_pattern();
            }
        }
        if body == 0 {
            body = 1;
        }
        signed(body)
    } else {
        // short tail: low exponent bits fall off the word, spacing between
        // neighbors is geometric, so compare against the midpoint explicitly
        let cut = es - avail;
        let e_stored = (e >> cut) as u64;
        let body = (regime << avail) | e_stored;
        if body == 0 {
            return signed(1); // below minpos: nonzero never rounds to zero
        }
        if body >= fmt.maxpos_pattern() {
            return signed(fmt.maxpos_pattern());
        }
        let e_low = e & (ones_u32(cut) as u32);
        let exact = e_low == 0 && !limbs::any_bit_below(m, bl - 1);
        if exact {
            return signed(body);
        }
        let (m1, e1) = decode_magnitude(body, fmt);
        let (m2, e2) = decode_magnitude(body + 1, fmt);
        let e_min = e1.min(e2);
        let mut mid = vec![0u64; 4 + ((e1.max(e2) - e_min) as usize) / 64];
        limbs::add_shifted_signed(&mut mid, m1 as u128, (e1 - e_min) as u32, false);
        limbs::add_shifted_signed(&mut mid, m2 as u128, (e2 - e_min) as u32, false);
        // x vs mid/2  <=>  x*2 vs mid  <=>  m*2^(exp+1) vs mid*2^(e_min)
        let ord = cmp_mag_vs_limbs(m, exp + 1, &mid, e_min as i64);
        let chosen = match ord {
            Ordering::Less => body,
            Ordering::Greater => body + 1,
            Ordering::Equal => {
                if body & 1 == 0 {
                    body
                } else {
                    body + 1
                }
            }
        };
        signed(chosen)
    }
}

/// Compare `a * 2^ea` against `b * 2^eb` exactly (both magnitudes nonzero).
fn cmp_mag_vs_limbs(a: &[u64], ea: i64, b: &[u64], eb: i64) -> Ordering {
    let la = limbs::bitlen(a) as i64 + ea;
    let lb = limbs::bitlen(b) as i64 + eb;
    if la != lb {
        return la.cmp(&lb);
    }
    // align to the smaller exponent and compare limbwise
    if ea >= eb {
        let shifted = limbs::shift_limbs(a, (ea - eb) as u32);
        limbs::cmp_limbs(&shifted, b)
    } else {
        let shifted = limbs::shift_limbs(b, (eb - ea) as u32);
        limbs::cmp_limbs(a, &shifted)
    }
}
