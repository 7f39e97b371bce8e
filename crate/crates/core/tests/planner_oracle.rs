mod common;

use balance_core::model::{validate, Plan};
use balance_core::planner::{plan_path, DistanceCache};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{exhaustive_shortest, tiny_case};

const HORIZON: usize = 8;

#[test]
fn plan_path_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut solved, mut unsolved) = (0, 0);
    for case_no in 0..300 {
        let case = tiny_case(&mut rng, 6, 6);
        let table = case.table();
        let cache = DistanceCache::new(case.map.clone());
        let planned = plan_path(&case.map, &case.agent, &table, cache.get(case.agent.goal), HORIZON);
        let expected = exhaustive_shortest(&case, HORIZON);
        match (&planned, expected) {
            (Ok(path), Some(len)) => {
                assert_eq!(path.length(), len, "case {case_no}: {case:?}");
                path.check(&case.map, &case.agent).unwrap();
                let mut paths = case.others.clone();
                paths.push(path.clone());
                assert!(validate(&Plan::new(paths)).is_empty(), "case {case_no}");
                solved += 1;
            }
            (Err(_), None) => unsolved += 1,
            _ => panic!("case {case_no}: planner {planned:?}, exhaustive {expected:?}\n{case:?}"),
        }
    }
    // both outcomes must actually be exercised
    assert!(solved > 100 && unsolved > 5, "solved {solved}, unsolved {unsolved}");
}
