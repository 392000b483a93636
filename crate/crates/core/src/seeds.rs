//! Deterministic seed derivation for Monte Carlo replications.
//!
//! Every `(cell, replication)` pair gets its own child seed derived from the
//! master seed by SplitMix64 finalisation, so results do not depend on the
//! order in which a work pool schedules tasks.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for replication `replication` of cell `cell`.
pub fn derive_seed(master: u64, cell: u64, replication: u64) -> u64 {
    let h = mix64(master.wrapping_add(GOLDEN_GAMMA));
    let h = mix64(
        h ^ cell
            .wrapping_mul(GOLDEN_GAMMA)
            .wrapping_add(0x632b_e59b_d9b4_e019),
    );
    mix64(
        h ^ replication
            .wrapping_mul(0xd1b5_4a32_d192_ed03)
            .wrapping_add(GOLDEN_GAMMA),
    )
}
