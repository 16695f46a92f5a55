use super::format::PositFormat;
use super::limbs;
use super::posit::{check_fmt, nearest_from_mag, ArithError, Decoded, PositValue};

/// Exact fixed-point accumulator for fused dot products.
///
/// Width follows the 16 x nbits convention, which covers sums of at least
/// 2^23 extremal products without overflow for every supported format (the
/// allocation is padded to whole limbs plus carry headroom). The binary point
/// sits `frac_bits` up from the LSB, chosen so that every product of two
/// finite values is an exact integer multiple of the quire ULP. Accumulation
/// is integer addition, hence associative and commutative bit for bit; the
/// only rounding happens at readout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quire {
    fmt: PositFormat,
    acc: Vec<u64>, // two's complement, little endian
    nar: bool,
}

impl Quire {
    pub fn new(fmt: PositFormat) -> Self {
        Quire {
            fmt,
            acc: vec![0; fmt.quire_limbs() + 4],
            nar: false,
        }
    }

    pub fn format(&self) -> PositFormat {
        self.fmt
    }

    pub fn is_nar(&self) -> bool {
        self.nar
    }

    pub fn is_zero(&self) -> bool {
        !self.nar && limbs::is_zero(&self.acc)
    }

    /// Fused accumulate of `x * y` with no intermediate rounding.
    pub fn add_product(&mut self, x: PositValue, y: PositValue) -> Result<(), ArithError> {
        self.accumulate(x, y, false)
    }

    /// Fused accumulate of `-x * y`.
    pub fn sub_product(&mut self, x: PositValue, y: PositValue) -> Result<(), ArithError> {
        self.accumulate(x, y, true)
    }

    /// Accumulate a single value exactly.
    pub fn add_value(&mut self, x: PositValue) -> Result<(), ArithError> {
        check_fmt(self.fmt, x.format())?;
        match x.decode_exact() {
            Decoded::Nar => self.nar = true,
            Decoded::Zero => {}
            Decoded::Finite { neg, mant, exp } => self.add_mag(neg, mant as u128, exp),
        }
        Ok(())
    }

    fn accumulate(&mut self, x: PositValue, y: PositValue, flip: bool) -> Result<(), ArithError> {
        check_fmt(self.fmt, x.format())?;
        check_fmt(self.fmt, y.format())?;
        match (x.decode_exact(), y.decode_exact()) {
            (Decoded::Nar, _) | (_, Decoded::Nar) => self.nar = true,
            (Decoded::Zero, _) | (_, Decoded::Zero) => {}
            (
                Decoded::Finite { neg: n1, mant: m1, exp: e1 },
                Decoded::Finite { neg: n2, mant: m2, exp: e2 },
            ) => self.add_mag((n1 != n2) != flip, m1 as u128 * m2 as u128, e1 + e2),
        }
        Ok(())
    }

    fn add_mag(&mut self, neg: bool, mant: u128, exp: i32) {
        let sh = exp + self.fmt.quire_frac_bits();
        debug_assert!(sh >= 0, "product below quire resolution");
        limbs::add_shifted_signed(&mut self.acc, mant, sh as u32, neg);
    }

    /// Exact merge of a partial accumulation (for split or distributed sums).
    pub fn merge(&mut self, other: &Quire) -> Result<(), ArithError> {
        check_fmt(self.fmt, other.fmt)?;
        self.nar |= other.nar;
        let mut carry = 0u64;
        for (a, &b) in self.acc.iter_mut().zip(other.acc.iter()) {
            let (s1, o1) = a.overflowing_add(b);
            let (s2, o2) = s1.overflowing_add(carry);
            *a = s2;
            carry = (o1 as u64) + (o2 as u64);
        }
        Ok(())
    }

    /// The single rounding step: nearest representable value, ties to even.
    pub fn to_posit(&self) -> PositValue {
        if self.nar {
            return PositValue::nar(self.fmt);
        }
        if limbs::is_zero(&self.acc) {
            return PositValue::zero(self.fmt);
        }
        let neg = self.acc[self.acc.len() - 1] >> 63 == 1;
        let mag = if neg {
            let mut m = self.acc.clone();
            limbs::negate(&mut m);
            m
        } else {
            self.acc.clone()
        };
        let bits = nearest_from_mag(self.fmt, neg, &mag, -(self.fmt.quire_frac_bits() as i64));
        PositValue::from_bits(bits, self.fmt)
    }
}

/// Fused dot product: one rounding over the whole sum.
pub fn quire_dot(
    fmt: PositFormat,
    xs: &[PositValue],
    ys: &[PositValue],
) -> Result<PositValue, ArithError> {
    if xs.len() != ys.len() {
        return Err(ArithError::LengthMismatch { xs: xs.len(), ys: ys.len() });
    }
    let mut q = Quire::new(fmt);
    for (&x, &y) in xs.iter().zip(ys) {
        q.add_product(x, y)?;
    }
    Ok(q.to_posit())
}

/// Merge partial quires and round once; bit-identical to a single quire over
/// the concatenated inputs, for any partition.
pub fn distributed_reduce(parts: &[Quire]) -> Result<PositValue, ArithError> {
    let mut iter = parts.iter();
    let first = iter.next().ok_or(ArithError::EmptyReduce)?;
    let mut total = first.clone();
    for q in iter {
        total.merge(q)?;
    }
    Ok(total.to_posit())
}
