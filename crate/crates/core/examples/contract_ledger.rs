//! Queue models on the contract, score them by hand, and aggregate by trust.

use fedblock::client::Submission;
use fedblock::ledger::{ContractState, OffchainStore, Score, TrustLedger};
use fedblock::nn::ModelParams;
use fedblock::ClientId;

fn main() -> fedblock::Result<()> {
    let global = ModelParams::mlp(4, &[3], 2, 0)?;
    let mut store = OffchainStore::new();
    let mut contract = ContractState::new(&global, 3, &mut store)?;
    let mut ledger = TrustLedger::new((0..3).map(ClientId));

    for i in 0..3u32 {
        let mut local = global.clone();
        local.layers_mut()[1].bias_mut()[0] += f64::from(i + 1);
        let sub = Submission::new(ClientId(i), 0, &global, local, 100, 0.1)?;
        let digest = store.put(sub.model.canonical_bytes());
        println!("client {i} stored {}", digest.to_hex());
        contract.submit(&store, sub)?;
    }

    for s in [Score::Benign, Score::Malicious, Score::Malicious] {
        ledger.update(ClientId(2), s)?;
    }
    ledger.update(ClientId(1), Score::Unsure)?;
    println!("trust: {:?}", ledger.snapshot());

    let new = contract.aggregate(&ledger, &mut store)?;
    println!("aggregated output bias shift: {:.4}", new.layers()[1].bias()[0] - global.layers()[1].bias()[0]);
    println!("global digest {}", contract.global_digest().to_hex());

    let digest = contract.global_digest();
    store.tamper(&digest, vec![0; 8]);
    match contract.global_model(&store) {
        Err(e) => println!("tampered blob rejected: {e}"),
        Ok(_) => println!("tampered blob accepted"),
    }
    for e in contract.events() {
        println!("{e:?}");
    }
    Ok(())
}
