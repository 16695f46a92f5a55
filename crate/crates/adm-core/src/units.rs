//! Exact dimension vectors over the seven SI base dimensions.
//!
//! A [`DimVec`] is a vector of rational exponents in the fixed order
//! (m, kg, s, A, K, mol, cd). Equality is exact and component-wise; derived
//! unit symbols expand to base dimensions at parse time, and metric prefixes
//! vanish (dimensions carry no scale).

use std::fmt;
use std::ops::{Div, Mul};
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{Signed, Zero};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const BASE_SYMBOLS: [&str; 7] = ["m", "kg", "s", "A", "K", "mol", "cd"];

#[derive(Debug, Error, PartialEq)]
pub enum DimError {
    #[error("unknown unit symbol '{0}'")]
    UnknownSymbol(String),
    #[error("bad exponent '{0}'")]
    BadExponent(String),
    #[error("empty unit factor in '{0}'")]
    EmptyFactor(String),
}

/// Dimension mismatch between adjacent layers of a pipeline.
#[derive(Debug, Error, PartialEq)]
#[error("dimension mismatch at boundary {boundary}: {left_out} feeds {right_in}")]
pub struct ChainMismatch {
    pub boundary: usize,
    pub left_out: DimVec,
    pub right_in: DimVec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DimVec {
    exps: [Rational64; 7],
}

impl DimVec {
    pub fn dimensionless() -> Self {
        DimVec { exps: [Rational64::zero(); 7] }
    }

    pub fn is_dimensionless(&self) -> bool {
        self.exps.iter().all(|e| e.is_zero())
    }

    pub fn exponents(&self) -> &[Rational64; 7] {
        &self.exps
    }

    fn base(i: usize) -> Self {
        let mut d = DimVec::dimensionless();
        d.exps[i] = Rational64::from_integer(1);
        d
    }

    pub fn meter() -> Self {
        Self::base(0)
    }

    pub fn kilogram() -> Self {
        Self::base(1)
    }

    pub fn second() -> Self {
        Self::base(2)
    }

    pub fn ampere() -> Self {
        Self::base(3)
    }

    pub fn kelvin() -> Self {
        Self::base(4)
    }

    pub fn mole() -> Self {
        Self::base(5)
    }

    pub fn candela() -> Self {
        Self::base(6)
    }

    pub fn inverse(&self) -> Self {
        let mut out = *self;
        for e in &mut out.exps {
            *e = -*e;
        }
        out
    }

    /// Scalar power: every exponent scales by `p`.
    pub fn pow(&self, p: Rational64) -> Self {
        let mut out = *self;
        for e in &mut out.exps {
            *e *= p;
        }
        out
    }

    /// Parse a unit literal: whitespace-separated factors `SYM` or `SYM^EXP`
    /// with integer or rational exponents, e.g. `"kg m^-2 s^-2"`, `"m^1/2"`.
    /// `"1"` (or an empty string) is dimensionless.
    pub fn parse(literal: &str) -> Result<Self, DimError> {
        let mut out = DimVec::dimensionless();
        for token in literal.split_whitespace() {
            if token == "1" {
                continue;
            }
            let (sym, exp) = match token.split_once('^') {
                None => (token, Rational64::from_integer(1)),
                Some((sym, e)) => (sym, parse_exponent(e)?),
            };
            if sym.is_empty() {
                return Err(DimError::EmptyFactor(token.to_string()));
            }
            let dim = symbol_dim(sym)?;
            out = out * dim.pow(exp);
        }
        Ok(out)
    }
}

fn parse_exponent(e: &str) -> Result<Rational64, DimError> {
    let bad = || DimError::BadExponent(e.to_string());
    match e.split_once('/') {
        None => e.parse::<i64>().map(Rational64::from_integer).map_err(|_| bad()),
        Some((n, d)) => {
            let n: i64 = n.parse().map_err(|_| bad())?;
            let d: i64 = d.parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Ok(Rational64::new(n, d))
        }
    }
}

/// Base symbols, a few common derived units expanded to base dimensions, and
/// their milli-prefixed spellings (prefixes carry no dimension).
fn symbol_dim(sym: &str) -> Result<DimVec, DimError> {
    if let Some(i) = BASE_SYMBOLS.iter().position(|&b| b == sym) {
        return Ok(DimVec::base(i));
    }
    let d = match sym {
        "g" => DimVec::kilogram(),
        "ms" => DimVec::second(),
        "mA" => DimVec::ampere(),
        "Hz" => DimVec::second().inverse(),
        "N" | "mN" => DimVec::kilogram() * DimVec::meter() * DimVec::second().pow((-2).into()),
        "Pa" => DimVec::kilogram() * DimVec::meter().inverse() * DimVec::second().pow((-2).into()),
        "J" => DimVec::kilogram() * DimVec::meter().pow(2.into()) * DimVec::second().pow((-2).into()),
        "W" => DimVec::kilogram() * DimVec::meter().pow(2.into()) * DimVec::second().pow((-3).into()),
        "C" => DimVec::ampere() * DimVec::second(),
        "V" | "mV" => {
            DimVec::kilogram() * DimVec::meter().pow(2.into()) * DimVec::second().pow((-3).into())
                / DimVec::ampere()
        }
        _ => return Err(DimError::UnknownSymbol(sym.to_string())),
    };
    Ok(d)
}

impl Mul for DimVec {
    type Output = DimVec;
    fn mul(self, rhs: DimVec) -> DimVec {
        let mut out = self;
        for (a, b) in out.exps.iter_mut().zip(rhs.exps.iter()) {
            *a += *b;
        }
        out
    }
}

impl Div for DimVec {
    type Output = DimVec;
    fn div(self, rhs: DimVec) -> DimVec {
        self * rhs.inverse()
    }
}

impl fmt::Display for DimVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_dimensionless() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, e) in self.exps.iter().enumerate() {
            if e.is_zero() {
                continue;
            }
            if !first {
                write!(f, " ")?;
            }
            first = false;
            write!(f, "{}", BASE_SYMBOLS[i])?;
            if *e != Rational64::from_integer(1) {
                if e.is_integer() {
                    write!(f, "^{}", e.numer())?;
                } else if e.is_negative() {
                    write!(f, "^-{}/{}", e.numer().abs(), e.denom())?;
                } else {
                    write!(f, "^{}/{}", e.numer(), e.denom())?;
                }
            }
        }
        Ok(())
    }
}

impl FromStr for DimVec {
    type Err = DimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DimVec::parse(s)
    }
}

impl Serialize for DimVec {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DimVec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        DimVec::parse(&s).map_err(de::Error::custom)
    }
}

/// Check that adjacent `(input, output)` dimension pairs compose; on failure
/// reports the first bad boundary (index of the right-hand layer).
pub fn check_chain(layers: &[(DimVec, DimVec)]) -> Result<(), ChainMismatch> {
    for i in 1..layers.len() {
        let left_out = layers[i - 1].1;
        let right_in = layers[i].0;
        if left_out != right_in {
            return Err(ChainMismatch { boundary: i, left_out, right_in });
        }
    }
    Ok(())
}
