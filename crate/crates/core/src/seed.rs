use sha2::{Digest, Sha256};

/// Independent 64-bit seed for a named stream of a master seed.
///
/// The first eight bytes of `SHA-256(master_le ‖ label)`, read little-endian.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

/// Stream labels used throughout the pipeline.
pub mod streams {
    pub const SPLIT: &str = "split";
    pub const INIT: &str = "init";
    pub const HEAD: &str = "head";
    pub const DROPOUT: &str = "dropout";
    pub const SHUFFLE: &str = "shuffle";
    pub const SAMPLING: &str = "sampling";
}
