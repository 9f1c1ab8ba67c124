//! Dishonest verifiers under the open and trust-gated selection policies.

use fedblock::defense::CorruptionMode;
use fedblock::harness::{self, SimConfig};
use fedblock::ledger::VerifierPolicy;

fn main() -> fedblock::Result<()> {
    for mode in [CorruptionMode::Reverse, CorruptionMode::Random] {
        for policy in [VerifierPolicy::Open, VerifierPolicy::Caav] {
            let cfg = SimConfig {
                rounds: 20,
                bad_verifier_fraction: 0.4,
                bad_verifier_mode: mode,
                verifier_policy: policy,
                seed: 2,
                ..SimConfig::default()
            };
            let report = harness::run(cfg)?;
            let m = report.final_metrics();
            let bad_turns: usize = report.traces.iter().flat_map(|t| &t.reports).filter(|r| r.bad).count();
            let turns: usize = report.traces.iter().map(|t| t.reports.len()).sum();
            println!(
                "{mode:?}/{policy:?}: {} bad verifiers, {bad_turns}/{turns} reports corrupted, final MA {:.3} BA {:.3}",
                report.bad_verifiers.len(),
                m.ma,
                m.ba
            );
        }
    }
    Ok(())
}
