//! Small shared helpers: stable hashing of parameter data and specs.

/// FNV-1a over a byte stream. Stable across platforms and runs, which is all
/// checkpoint compatibility checks and parameter-change detection need.
#[derive(Clone, Copy, Debug)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write(&v.to_bits().to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Bit-exact hash of a parameter vector.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h = Fnv64::new();
    for &v in values {
        h.write_f64(v);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_distinguishes_sign_of_zero_but_is_stable() {
        let a = hash_f64s(&[1.0, 2.0, 3.0]);
        let b = hash_f64s(&[1.0, 2.0, 3.0]);
        let c = hash_f64s(&[1.0, 2.0, 3.0 + 1e-15]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
