//! Split a pool across clients with skewed labels, then backdoor one share.

use fedblock::data::{self, PartitionSpec, PoisonSpec};

fn main() -> fedblock::Result<()> {
    let pool = data::gen_dataset(4000, 5, 20, 1)?;
    for q in [0.0, 0.5, 0.9] {
        let parts = data::partition_non_iid(&pool, &PartitionSpec { n_clients: 4, non_iid: q, per_client_size: 200, seed: 2 })?;
        println!("non_iid = {q}");
        for (i, p) in parts.iter().enumerate() {
            println!("  client {i}: {:?}", data::class_histogram(p, 5));
        }
    }

    let share = &pool[..200];
    for edge_case in [false, true] {
        let spec = PoisonSpec { target_class: 0, trigger_coords: vec![17, 18, 19], trigger_value: 3.0, pdr: 0.33, edge_case };
        let (poisoned, flags) = data::poison(share, &spec, 5)?;
        let hit: Vec<usize> = flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| share[i].y).collect();
        println!(
            "edge_case={edge_case}: {} of {} poisoned, original labels {:?}, now {:?}",
            hit.len(),
            share.len(),
            data::class_histogram(&share.iter().zip(&flags).filter(|(_, f)| **f).map(|(s, _)| s.clone()).collect::<Vec<_>>(), 5),
            data::class_histogram(&poisoned, 5),
        );
    }
    Ok(())
}
