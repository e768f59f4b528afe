//! Stage seeds derived from the master seed.

use sha2::{Digest, Sha256};

/// Every stage name the tool derives a seed for.
pub const STAGES: [&str; 10] = [
    "analyze",
    "split",
    "augment",
    "train-skin",
    "train-ergan",
    "train-enhance",
    "generate",
    "enhance",
    "evaluate",
    "assemble",
];

/// First eight bytes (little-endian) of `sha256(master_le ‖ stage)`.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_distinct_and_stable() {
        for master in [0, 1, 42, u64::MAX] {
            let seeds: Vec<u64> = STAGES.iter().map(|s| derive_seed(master, s)).collect();
            for i in 0..seeds.len() {
                assert_eq!(seeds[i], derive_seed(master, STAGES[i]));
                for j in i + 1..seeds.len() {
                    assert_ne!(seeds[i], seeds[j], "{} vs {}", STAGES[i], STAGES[j]);
                }
            }
        }
        assert_ne!(derive_seed(0, "generate"), derive_seed(1, "generate"));
    }

    #[test]
    fn matches_independent_digest() {
        // sha256 of eight zero bytes followed by "split", first eight bytes little-endian.
        let mut bytes = vec![0u8; 8];
        bytes.extend_from_slice(b"split");
        let d = Sha256::digest(&bytes);
        let expect = d.iter().take(8).rev().fold(0u64, |acc, b| (acc << 8) | *b as u64);
        assert_eq!(derive_seed(0, "split"), expect);
    }
}
