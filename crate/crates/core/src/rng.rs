//! Seed derivation for independent, reproducible random streams.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master`. Distinct streams are statistically independent.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Labelled sub-streams used inside one replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    TrainData = 1,
    TestData = 2,
    Forest = 3,
    CopulaFolds = 4,
    NetworkInit = 5,
    Training = 6,
}

pub fn stream_seed(master: u64, stream: Stream, index: u64) -> u64 {
    derive_seed(derive_seed(master, stream as u64), index)
}
