use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("nbits {0} outside 5..=64")]
    Nbits(u32),
    #[error("es {0} outside 0..=4")]
    Es(u32),
    #[error("r_max {0} outside 2..=6")]
    RMax(u32),
    #[error("regime field does not fit: nbits {nbits} < r_max {r_max} + 2")]
    RegimeTooWide { nbits: u32, r_max: u32 },
}

/// Scalar format descriptor: word width, exponent bits, and the regime cap.
///
/// `r_max` bounds the regime *field* (run plus terminator, terminator omitted
/// when the run reaches the cap), so the regime value k always lies in
/// `-r_max ..= r_max - 1` and every non-significand field has a fixed maximum
/// width. `nbits >= r_max + 2` keeps at least one bit after the sign and a
/// capped regime; exponent bits that fall off the end of short words read as
/// zero and round on encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFormat")]
pub struct PositFormat {
    nbits: u32,
    es: u32,
    r_max: u32,
}

/// Unvalidated mirror so deserialized formats still pass through [`PositFormat::new`].
#[derive(Deserialize)]
struct RawFormat {
    nbits: u32,
    es: u32,
    r_max: u32,
}

impl TryFrom<RawFormat> for PositFormat {
    type Error = FormatError;
    fn try_from(raw: RawFormat) -> Result<Self, FormatError> {
        PositFormat::new(raw.nbits, raw.es, raw.r_max)
    }
}

impl PositFormat {
    pub fn new(nbits: u32, es: u32, r_max: u32) -> Result<Self, FormatError> {
        if !(5..=64).contains(&nbits) {
            return Err(FormatError::Nbits(nbits));
        }
        if es > 4 {
            return Err(FormatError::Es(es));
        }
        if !(2..=6).contains(&r_max) {
            return Err(FormatError::RMax(r_max));
        }
        if nbits < r_max + 2 {
            return Err(FormatError::RegimeTooWide { nbits, r_max });
        }
        Ok(PositFormat { nbits, es, r_max })
    }

    pub fn nbits(&self) -> u32 {
        self.nbits
    }

    pub fn es(&self) -> u32 {
        self.es
    }

    pub fn r_max(&self) -> u32 {
        self.r_max
    }

    /// Largest power-of-two scale of a finite value: k_max*2^es + e_max.
    pub fn max_scale(&self) -> i32 {
        ((self.r_max as i32) << self.es) - 1
    }

    /// Smallest power-of-two scale floor: k_min*2^es (realized fractions sit above it).
    pub fn min_scale(&self) -> i32 {
        -((self.r_max as i32) << self.es)
    }

    /// Mask selecting the low `nbits` of a pattern word.
    pub fn word_mask(&self) -> u64 {
        if self.nbits == 64 {
            u64::MAX
        } else {
            (1u64 << self.nbits) - 1
        }
    }

    pub fn nar_pattern(&self) -> u64 {
        1u64 << (self.nbits - 1)
    }

    pub fn maxpos_pattern(&self) -> u64 {
        self.nar_pattern() - 1
    }

    /// Accumulator width convention: 16 x nbits bits, rounded up to whole limbs.
    pub fn quire_limbs(&self) -> usize {
        (16 * self.nbits as usize).div_ceil(64)
    }

    /// Binary point of the quire: every product of two finite values in this
    /// format is an exact integer multiple of 2^-frac_bits.
    pub fn quire_frac_bits(&self) -> i32 {
        2 * (((self.r_max as i32) << self.es) + self.nbits as i32)
    }

    /// Human-readable descriptor, e.g. "posit(16,2,6)"; used in certificates.
    pub fn descriptor(&self) -> String {
        format!("posit({},{},{})", self.nbits, self.es, self.r_max)
    }
}

/// Serving and training default: 16-bit word, two exponent bits, regime capped
/// at six bits.
impl Default for PositFormat {
    fn default() -> Self {
        PositFormat::new(16, 2, 6).unwrap()
    }
}
