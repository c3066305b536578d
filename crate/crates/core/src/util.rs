//! Small shared helpers: stable float formatting and a tiny stable hash.

/// Format a float with 17 significant digits in scientific notation.
///
/// 17 digits round-trip any f64 exactly, and the fixed format keeps artifacts
/// byte-identical across runs.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// FNV-1a 64-bit hash. Used to fingerprint resolved configurations in study
/// tables and reports; stable across runs and Rust versions, unlike the
/// standard library's default hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_g17_round_trips() {
        for &x in &[
            0.0,
            1.0,
            -1.0,
            std::f64::consts::PI,
            1.5042e-6,
            -5.859882958035852e-21,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn fnv1a64_reference_values() {
        // Reference digests of the FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
