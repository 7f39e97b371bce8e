//! Fixtures for the solver benchmarks.

use std::path::PathBuf;
use std::sync::Arc;

use balance_core::benchmark::{build_instance, parse_map, parse_scen};
use balance_core::{GridMap, Instance};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/random-32-32-10")
}

/// The first `m` agents of scenario `k` on the random-32-32-10 map.
pub fn random_32_instance(k: usize, m: usize) -> Instance {
    let dir = data_dir();
    let map_text = std::fs::read_to_string(dir.join("random-32-32-10.map")).expect("map file");
    let map: Arc<GridMap> = Arc::new(parse_map(&map_text).expect("valid map"));
    let scen = std::fs::read_to_string(dir.join(format!("random-32-32-10-random-{k}.scen"))).expect("scen file");
    build_instance(map, &parse_scen(&scen).expect("valid scenario"), m).expect("instance")
}
