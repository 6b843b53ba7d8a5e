//! Deterministic per-run seeding. Every run is addressed by the coordinates
//! (method, horizon, n_cp, grid index, run index); its seed is a splitmix64
//! chain over them, so results do not depend on execution order and any
//! single run can be reproduced in isolation.

use crate::forecast::Method;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn run_seed(
    global_seed: u64,
    method: Method,
    h: usize,
    n_cp: usize,
    grid_index: usize,
    run_index: usize,
) -> u64 {
    let mut s = splitmix64(global_seed ^ fnv1a(method.label()));
    for v in [h as u64, n_cp as u64, grid_index as u64, run_index as u64] {
        s = splitmix64(s ^ v);
    }
    s
}
