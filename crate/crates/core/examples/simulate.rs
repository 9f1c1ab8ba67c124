//! A short defended run against an undefended one, with per-round metrics.
//!
//! `cargo run --release --example simulate -- [rounds]`

use fedblock::harness::{self, SimConfig};

fn main() -> fedblock::Result<()> {
    let rounds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    for defense in [false, true] {
        let cfg = SimConfig { rounds, defense, seed: 1, ..SimConfig::default() };
        let report = harness::run(cfg)?;
        println!("defense = {defense}, attackers {:?}", report.attackers);
        println!("round     MA     BA    TPR    TNR");
        for m in report.metrics.iter().step_by((rounds as usize / 10).max(1)) {
            let f = |v: Option<f64>| v.map_or("   -".into(), |x| format!("{x:.3}"));
            println!("{:>5} {:.3}  {:.3}  {}  {}", m.round, m.ma, m.ba, f(m.tpr), f(m.tnr));
        }
        println!("mean round time {:.4} s\n", report.mean_round_time());
    }
    Ok(())
}
