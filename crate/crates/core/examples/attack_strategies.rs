//! How far each attack moves the model from the global, and how well it plants the trigger.

use fedblock::client::{self, AttackStrategy, ClientProfile};
use fedblock::data::{self, PoisonSpec};
use fedblock::harness::eval_ba;
use fedblock::nn::{ModelParams, TrainConfig};
use fedblock::ClientId;

fn main() -> fedblock::Result<()> {
    let pool = data::gen_dataset(1400, 5, 20, 4)?;
    let (test, share) = pool.split_at(1000);
    let spec = PoisonSpec { target_class: 0, trigger_coords: vec![17, 18, 19], trigger_value: 3.0, pdr: 0.33, edge_case: false };
    let triggered = data::triggered_testset(test, &spec);
    let global = ModelParams::mlp(20, &[32], 5, 9)?;
    let cfg = TrainConfig { learning_rate: 0.05, local_epochs: 2, batch_size: 20, seed: 1 };

    let honest = client::local_round(&ClientProfile::benign(ClientId(0), share.to_vec()), &global, &cfg, 0)?;
    let benign = honest.model.sub(&global)?.l2_norm();
    let radius = benign / 2.0;
    println!("benign          |Δ| = {benign:.4}, projection radius {radius:.4}");

    let attacks = [
        ("blackbox", AttackStrategy::Blackbox),
        ("pgd", AttackStrategy::Pgd { radius }),
        ("pgd + replace", AttackStrategy::PgdMr { scale: 10.0, radius }),
    ];
    for (name, attack) in attacks {
        let p = ClientProfile::malicious(ClientId(1), share.to_vec(), attack, spec.clone());
        let sub = client::local_round(&p, &global, &cfg, 0)?;
        let delta = sub.model.sub(&global)?.l2_norm();
        println!("{name:<15} |Δ| = {delta:.4}, backdoor accuracy of the local model {:.3}", eval_ba(&sub.model, &triggered, 0)?);
    }
    Ok(())
}
