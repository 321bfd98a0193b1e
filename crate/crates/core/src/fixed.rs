//! Rounding rules and exact integer division helpers.
//!
//! Every `⌊·⌉` in the crate is round-half-away-from-zero.

/// Round half away from zero (the behaviour of `f64::round`).
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// `round_half_away(num / den)` for non-negative integers, without floats.
#[inline]
pub fn div_round_half_away(num: u64, den: u64) -> u64 {
    debug_assert!(den > 0);
    (2 * num + den) / (2 * den)
}

/// Bits of numerator an [`ExactDivisor`] is valid for.
pub const DIVIDEND_BITS: u32 = 41;

/// Floor division by a runtime-constant divisor via multiply and shift.
///
/// With `s = DIVIDEND_BITS + ceil(log2 d)` and `m = ceil(2^s / d)`,
/// `floor(n * m / 2^s) == floor(n / d)` for every `n < 2^DIVIDEND_BITS`.
#[derive(Debug, Clone, Copy)]
pub struct ExactDivisor {
    divisor: u64,
    multiplier: u128,
    shift: u32,
}

impl ExactDivisor {
    pub fn new(divisor: u64) -> Self {
        assert!(divisor > 0, "division by zero");
        assert!(divisor <= 1 << 40, "divisor {divisor} out of range");
        let log2_ceil = 64 - (divisor - 1).leading_zeros();
        let shift = DIVIDEND_BITS + log2_ceil;
        let pow = 1u128 << shift;
        let multiplier = pow.div_ceil(divisor as u128);
        Self {
            divisor,
            multiplier,
            shift,
        }
    }

    pub fn divisor(&self) -> u64 {
        self.divisor
    }

    #[inline(always)]
    pub fn div(&self, n: u64) -> u64 {
        debug_assert!(n < 1 << DIVIDEND_BITS);
        ((n as u128 * self.multiplier) >> self.shift) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_rounds_away() {
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.5), -3.0);
        assert_eq!(round_half_away(0.49), 0.0);
        assert_eq!(div_round_half_away(255 * 255, 510), 128);
        assert_eq!(div_round_half_away(5, 4), 1);
        assert_eq!(div_round_half_away(6, 4), 2);
    }

    #[test]
    fn exact_at_extremes() {
        let top = (1u64 << DIVIDEND_BITS) - 1;
        for d in [
            1u64,
            2,
            3,
            7,
            62,
            74670,
            (1 << 32) - 2,
            1 << 32,
            (1 << 40) - 1,
        ] {
            let div = ExactDivisor::new(d);
            for n in [
                0,
                1,
                d - 1,
                d,
                d + 1,
                top - 1,
                top,
                top / d * d,
                top / d * d - 1,
            ] {
                assert_eq!(div.div(n), n / d, "n = {n}, d = {d}");
            }
        }
    }

    proptest! {
        #[test]
        fn matches_hardware_division(d in 1u64..=(1 << 33), n in 0u64..(1 << DIVIDEND_BITS)) {
            prop_assert_eq!(ExactDivisor::new(d).div(n), n / d);
        }
    }
}
