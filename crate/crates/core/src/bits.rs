//! Fixed-length bitstrings and Hamming geometry.
//!
//! Bits are packed into 64-bit words; bit `i` lives in word `i / 64` at
//! position `i % 64`. Unused high bits of the last word are always zero so
//! that equality and distance can be computed word-wise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Error, Result};

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitstring {
    len: usize,
    words: Vec<u64>,
}

fn words_for(n: usize) -> usize {
    n.div_ceil(WORD)
}

impl Bitstring {
    /// The all-zero string of length `n`.
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("bitstring length must be positive");
        }
        Ok(Bitstring {
            len: n,
            words: vec![0; words_for(n)],
        })
    }

    /// The string `1^n`, the initial target of the moving Hamming ball.
    pub fn all_ones(n: usize) -> Result<Self> {
        let mut s = Self::zeros(n)?;
        s.words.iter_mut().for_each(|w| *w = u64::MAX);
        s.clear_padding();
        Ok(s)
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mut s = Self::zeros(bits.len())?;
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.words[i / WORD] |= 1 << (i % WORD);
            }
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false; a bitstring has at least one bit.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Copy of `self` with the given positions flipped.
    pub fn with_flipped(&self, positions: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        for &p in positions {
            if p >= self.len {
                return invalid(format!("position {p} out of range for length {}", self.len));
            }
            out.flip(p);
        }
        Ok(out)
    }

    /// Bitwise complement.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|w| *w = !*w);
        out.clear_padding();
        out
    }

    pub(crate) fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD] ^= 1 << (i % WORD);
    }

    pub(crate) fn invert_in_place(&mut self) {
        self.words.iter_mut().for_each(|w| *w = !*w);
        self.clear_padding();
    }

    fn clear_padding(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << rem) - 1;
        }
    }

    /// Hamming distance without the length check. Callers guarantee equal lengths.
    pub(crate) fn distance_unchecked(&self, other: &Self) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Hex form used in trace files: digit `d` holds bits `4d..4d+4`, with
    /// bit `4d` as the most significant bit of the digit. Trailing padding
    /// bits are zero.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4);
        let mut out = String::with_capacity(digits);
        for d in 0..digits {
            let mut v = 0u32;
            for k in 0..4 {
                let i = 4 * d + k;
                if i < self.len && self.get(i) {
                    v |= 1 << (3 - k);
                }
            }
            out.push(char::from_digit(v, 16).expect("nibble"));
        }
        out
    }

    pub fn from_hex(s: &str, n: usize) -> Result<Self> {
        let mut out = Self::zeros(n)?;
        let digits = n.div_ceil(4);
        if s.len() != digits {
            return invalid(format!(
                "hex string has {} digits, expected {digits} for length {n}",
                s.len()
            ));
        }
        for (d, c) in s.chars().enumerate() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::InvalidInput(format!("invalid hex digit `{c}`")))?;
            for k in 0..4 {
                if v >> (3 - k) & 1 == 1 {
                    let i = 4 * d + k;
                    if i >= n {
                        return invalid("nonzero padding bits in hex string");
                    }
                    out.flip(i);
                }
            }
        }
        Ok(out)
    }
}

impl serde::Serialize for Bitstring {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Bitstring {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bitstring({}; {})", self.len, self.to_hex())
    }
}

/// Parses the canonical text form, e.g. `"0101"`.
impl FromStr for Bitstring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => invalid(format!("invalid bit character `{other}`")),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

pub fn hamming(x: &Bitstring, y: &Bitstring) -> Result<usize> {
    if x.len != y.len {
        return Err(Error::LengthMismatch {
            left: x.len,
            right: y.len,
        });
    }
    Ok(x.distance_unchecked(y))
}

/// True iff `x` lies in the closed Hamming ball of radius `r` around `center`.
pub fn in_ball(x: &Bitstring, center: &Bitstring, r: usize) -> Result<bool> {
    Ok(hamming(x, center)? <= r)
}

pub fn all_ones(n: usize) -> Result<Bitstring> {
    Bitstring::all_ones(n)
}

/// Uniformly random string at Hamming distance exactly `distance` from `center`.
pub fn sample_at_distance<R: Rng + ?Sized>(
    center: &Bitstring,
    distance: usize,
    rng: &mut R,
) -> Result<Bitstring> {
    if distance == 0 || distance > center.len {
        return invalid(format!(
            "distance must be in 1..={}, got {distance}",
            center.len
        ));
    }
    let mut positions = Vec::with_capacity(distance);
    sample_positions(center.len, distance, rng, &mut positions);
    let mut out = center.clone();
    for p in positions {
        out.flip(p);
    }
    Ok(out)
}

/// Uniform `k`-subset of `0..n` by a partial Fisher–Yates shuffle over a
/// virtual identity array. Small `k` keeps the displaced entries in a sparse
/// list so the cost is independent of `n`.
pub(crate) fn sample_positions<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    debug_assert!(k <= n);
    out.clear();
    if k > 64 && 4 * k > n {
        let mut a: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            a.swap(i, j);
        }
        out.extend_from_slice(&a[..k]);
        return;
    }
    // displaced[m] = (index, value) for virtual slots that no longer hold their own index
    let mut displaced: Vec<(usize, usize)> = Vec::with_capacity(2 * k);
    let lookup = |d: &Vec<(usize, usize)>, idx: usize| {
        d.iter()
            .rev()
            .find(|(i, _)| *i == idx)
            .map_or(idx, |&(_, v)| v)
    };
    for i in 0..k {
        let j = rng.random_range(i..n);
        let vi = lookup(&displaced, i);
        let vj = lookup(&displaced, j);
        out.push(vj);
        if i != j {
            displaced.push((j, vi));
        }
    }
}

/// Uniformly random member of the Hamming ball of radius `r` around `center`.
pub fn sample_in_ball<R: Rng + ?Sized>(
    center: &Bitstring,
    r: usize,
    rng: &mut R,
) -> Result<Bitstring> {
    let n = center.len;
    if r >= n {
        return invalid("radius must be smaller than the string length");
    }
    // P(distance = d) proportional to C(n, d)
    let mut weights = Vec::with_capacity(r + 1);
    let mut c = 1.0f64;
    for d in 0..=r {
        weights.push(c);
        c *= (n - d) as f64 / (d + 1) as f64;
    }
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut d = r;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            d = k;
            break;
        }
        u -= w;
    }
    if d == 0 {
        Ok(center.clone())
    } else {
        sample_at_distance(center, d, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RngStream;
    use proptest::prelude::*;

    fn bs(s: &str) -> Bitstring {
        s.parse().unwrap()
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming(&bs("1111"), &bs("1111")).unwrap(), 0);
        assert_eq!(hamming(&bs("1111"), &bs("0000")).unwrap(), 4);
        assert_eq!(hamming(&bs("1010"), &bs("1001")).unwrap(), 2);
    }

    #[test]
    fn hamming_rejects_length_mismatch() {
        assert!(matches!(
            hamming(&bs("101"), &bs("1010")),
            Err(Error::LengthMismatch { left: 3, right: 4 })
        ));
        assert!(in_ball(&bs("101"), &bs("1010"), 1).is_err());
    }

    #[test]
    fn in_ball_examples() {
        let x = bs("0110");
        assert!(in_ball(&x, &x, 0).unwrap());
        assert!(!in_ball(&bs("0000"), &bs("1111"), 3).unwrap());
        assert!(in_ball(&bs("0111"), &bs("1111"), 1).unwrap());
    }

    #[test]
    fn in_ball_matches_distance_exhaustively() {
        for n in 1..=10usize {
            let c = Bitstring::all_ones(n).unwrap();
            for mask in 0u32..(1 << n) {
                let x = Bitstring::from_bits(&(0..n).map(|i| mask >> i & 1 == 1).collect::<Vec<_>>())
                    .unwrap();
                let h = hamming(&x, &c).unwrap();
                for r in 0..=n {
                    assert_eq!(in_ball(&x, &c, r).unwrap(), h <= r);
                }
            }
        }
    }

    #[test]
    fn all_ones_examples() {
        assert_eq!(all_ones(3).unwrap().to_string(), "111");
        let a = all_ones(5).unwrap();
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert!(in_ball(&a, &a, 0).unwrap());
        assert!(all_ones(0).is_err());
        assert_eq!(all_ones(130).unwrap().count_ones(), 130);
    }

    #[test]
    fn sample_at_distance_full_distance_is_complement() {
        let mut rng = RngStream::new(1, 0);
        let c = bs("1011");
        assert_eq!(sample_at_distance(&c, 4, &mut rng).unwrap(), bs("0100"));
        assert!(sample_at_distance(&c, 0, &mut rng).is_err());
        assert!(sample_at_distance(&c, 5, &mut rng).is_err());
    }

    #[test]
    fn sample_at_distance_neighbours_are_uniform() {
        let mut rng = RngStream::new(7, 3);
        let c = all_ones(4).unwrap();
        let draws = 1_000_000u64;
        let mut counts = [0u64; 4];
        for _ in 0..draws {
            let y = sample_at_distance(&c, 1, &mut rng).unwrap();
            let pos = (0..4).find(|&i| !y.get(i)).unwrap();
            counts[pos] += 1;
        }
        let sigma = (0.25f64 * 0.75 / draws as f64).sqrt();
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.25).abs() <= 3.0 * sigma, "frequency {f}");
        }
    }

    #[test]
    fn hex_layout() {
        // bit 0 is the most significant bit of the first digit
        assert_eq!(bs("1000").to_hex(), "8");
        assert_eq!(bs("00010").to_hex(), "10");
        assert_eq!(bs("111111").to_hex(), "fc");
        assert_eq!(Bitstring::from_hex("fc", 6).unwrap(), bs("111111"));
        assert!(Bitstring::from_hex("ff", 6).is_err());
        assert!(Bitstring::from_hex("f", 6).is_err());
        assert!(Bitstring::from_hex("zz", 6).is_err());
    }

    #[test]
    fn uniform_in_ball_stays_in_ball() {
        let mut rng = RngStream::new(5, 0);
        let c = all_ones(40).unwrap();
        for _ in 0..1000 {
            let x = sample_in_ball(&c, 4, &mut rng).unwrap();
            assert!(hamming(&x, &c).unwrap() <= 4);
        }
    }

    fn arb_bits(n: usize) -> impl Strategy<Value = Bitstring> {
        proptest::collection::vec(any::<bool>(), n).prop_map(|v| Bitstring::from_bits(&v).unwrap())
    }

    fn arb_triple() -> impl Strategy<Value = (Bitstring, Bitstring, Bitstring)> {
        (1usize..=16).prop_flat_map(|n| (arb_bits(n), arb_bits(n), arb_bits(n)))
    }

    proptest! {
        #[test]
        fn triangle_inequality((x, y, z) in arb_triple()) {
            let xz = hamming(&x, &z).unwrap();
            let xy = hamming(&x, &y).unwrap();
            let yz = hamming(&y, &z).unwrap();
            prop_assert!(xz <= xy + yz);
            prop_assert_eq!(xy, hamming(&y, &x).unwrap());
        }

        #[test]
        fn text_and_hex_forms_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let x = Bitstring::from_bits(&bits).unwrap();
            prop_assert_eq!(&x.to_string().parse::<Bitstring>().unwrap(), &x);
            prop_assert_eq!(&Bitstring::from_hex(&x.to_hex(), x.len()).unwrap(), &x);
        }

        #[test]
        fn sampled_point_has_exact_distance(n in 1usize..300, seed in any::<u64>(), frac in 0.0f64..1.0) {
            let d = 1 + ((n - 1) as f64 * frac) as usize;
            let mut rng = RngStream::new(seed, 0);
            let c = all_ones(n).unwrap();
            let y = sample_at_distance(&c, d, &mut rng).unwrap();
            prop_assert_eq!(hamming(&c, &y).unwrap(), d);
        }
    }
}
