//! Run both filters over one verifier's subset and show what each flags.

use fedblock::defense::{self, CorruptionMode, TaskEntry, VerificationTask};
use fedblock::ClientId;

fn entry(id: u32, du: Vec<f64>, db: Vec<f64>) -> TaskEntry {
    // local weights as the global (zero) minus one step along du
    let weights = du.iter().map(|g| -0.1 * g).collect();
    TaskEntry { client: ClientId(id), du, db, data_size: 100, weights }
}

fn main() -> fedblock::Result<()> {
    // two classes, width two; clients 4 and 5 push class 0 hard
    let entries = vec![
        entry(0, vec![0.2, 0.1, -0.2, -0.1], vec![0.1, -0.1]),
        entry(1, vec![0.3, 0.0, -0.3, 0.0], vec![0.1, -0.1]),
        entry(2, vec![0.1, 0.2, -0.1, -0.2], vec![0.0, 0.0]),
        entry(3, vec![0.2, 0.2, -0.2, -0.2], vec![0.1, -0.1]),
        entry(4, vec![-3.0, -2.5, 3.0, 2.5], vec![-1.0, 1.0]),
        entry(5, vec![-2.8, -3.1, 2.8, 3.1], vec![-1.0, 1.0]),
    ];
    let trust = [(0, 1.0), (1, 1.0), (2, 0.9), (3, 1.0), (4, 0.3), (5, 0.5)]
        .into_iter()
        .map(|(c, t)| (ClientId(c), t))
        .collect();
    let task = VerificationTask::new(ClientId(99), 0, 2, 2, entries, trust)?;

    println!("similarity a_i: {:?}", defense::similarity_scores(&task)?);
    println!("filter 1 set:   {:?}", defense::filter_gradient_similarity(&task)?);
    println!("filter 2 set:   {:?}", defense::filter_byclass_kmeans(&task)?);
    let report = defense::verify(&task)?;
    for (c, s) in &report.scores {
        println!("  {c}: {s:?}");
    }
    for mode in [CorruptionMode::Reverse, CorruptionMode::Random] {
        let bad = defense::corrupt_report(&report, mode, 1);
        println!("{mode:?} verifier: {:?}", bad.scores.values().collect::<Vec<_>>());
    }
    Ok(())
}
