//! Little-endian u64 limb helpers shared by the scalar encoder and the quire.

use std::cmp::Ordering;

pub(crate) fn bitlen(m: &[u64]) -> u32 {
    for (i, &w) in m.iter().enumerate().rev() {
        if w != 0 {
            return i as u32 * 64 + (64 - w.leading_zeros());
        }
    }
    0
}

pub(crate) fn is_zero(m: &[u64]) -> bool {
    m.iter().all(|&w| w == 0)
}

pub(crate) fn get_bit(m: &[u64], i: u32) -> bool {
    let (limb, bit) = ((i / 64) as usize, i % 64);
    if limb >= m.len() {
        return false;
    }
    (m[limb] >> bit) & 1 == 1
}

/// Bits `[lo, lo+len)` of the magnitude, `len <= 64`. Bits past the top read 0.
pub(crate) fn get_bits(m: &[u64], lo: u32, len: u32) -> u64 {
    debug_assert!(len <= 64);
    if len == 0 {
        return 0;
    }
    let mut out = 0u64;
    for i in 0..len {
        if get_bit(m, lo + i) {
            out |= 1 << i;
        }
    }
    out
}

pub(crate) fn any_bit_below(m: &[u64], i: u32) -> bool {
    let (limb, bit) = ((i / 64) as usize, i % 64);
    for (j, &w) in m.iter().enumerate() {
        match j.cmp(&limb) {
            Ordering::Less => {
                if w != 0 {
                    return true;
                }
            }
            Ordering::Equal => {
                if bit > 0 && w & ((1u64 << bit) - 1) != 0 {
                    return true;
                }
            }
            Ordering::Greater => {}
        }
    }
    false
}

pub(crate) fn shift_limbs(m: &[u64], sh: u32) -> Vec<u64> {
    let (limb, bit) = ((sh / 64) as usize, sh % 64);
    let mut out = vec![0u64; m.len() + limb + 1];
    for (i, &w) in m.iter().enumerate() {
        if bit == 0 {
            out[i + limb] = w;
        } else {
            out[i + limb] |= w << bit;
            out[i + limb + 1] |= w >> (64 - bit);
        }
    }
    out
}

pub(crate) fn cmp_limbs(a: &[u64], b: &[u64]) -> Ordering {
    let n = a.len().max(b.len());
    for i in (0..n).rev() {
        let x = a.get(i).copied().unwrap_or(0);
        let y = b.get(i).copied().unwrap_or(0);
        match x.cmp(&y) {
            Ordering::Equal => {}
            ord => return ord,
        }
    }
    Ordering::Equal
}

/// In-place two's complement add of `p * 2^sh` (or subtract when `neg`).
pub(crate) fn add_shifted_signed(acc: &mut [u64], p: u128, sh: u32, neg: bool) {
    let (limb, bit) = ((sh / 64) as usize, sh % 64);
    let mut chunk = [0u64; 3];
    let v = if bit == 0 { p } else { p << bit };
    chunk[0] = v as u64;
    chunk[1] = (v >> 64) as u64;
    if bit != 0 {
        chunk[2] = (p >> (128 - bit)) as u64;
    }
    if !neg {
        let mut carry = 0u64;
        for (i, &c) in chunk.iter().enumerate() {
            let (s1, o1) = acc[limb + i].overflowing_add(c);
            let (s2, o2) = s1.overflowing_add(carry);
            acc[limb + i] = s2;
            carry = (o1 as u64) + (o2 as u64);
        }
        let mut i = limb + 3;
        while carry != 0 && i < acc.len() {
            let (s, o) = acc[i].overflowing_add(carry);
            acc[i] = s;
            carry = o as u64;
            i += 1;
        }
    } else {
        let mut borrow = 0u64;
        for (i, &c) in chunk.iter().enumerate() {
            let (s1, o1) = acc[limb + i].overflowing_sub(c);
            let (s2, o2) = s1.overflowing_sub(borrow);
            acc[limb + i] = s2;
            borrow = (o1 as u64) + (o2 as u64);
        }
        let mut i = limb + 3;
        while borrow != 0 && i < acc.len() {
            let (s, o) = acc[i].overflowing_sub(borrow);
            acc[i] = s;
            borrow = o as u64;
            i += 1;
        }
    }
}

/// Two's complement negate in place.
pub(crate) fn negate(acc: &mut [u64]) {
    let mut carry = 1u64;
    for w in acc.iter_mut() {
        let (s, o) = (!*w).overflowing_add(carry);
        *w = s;
        carry = o as u64;
    }
}
