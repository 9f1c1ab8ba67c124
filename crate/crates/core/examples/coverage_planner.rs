//! Verifier coverage: closed forms against Monte Carlo, both directions.

use fedblock::planner;

fn main() -> fedblock::Result<()> {
    let m = 30;
    println!("{}", planner::plan_subset_size(m, 15, 50_000, 1)?.render());
    println!("{}", planner::plan_verifiers(m, 7, 50_000, 1)?.render());

    println!("\n  L   E[V]    P(covered by V=E[V])");
    for l in [1, 3, 5, 7, 10, 15, 30] {
        let ev = planner::expected_v(m, l)?;
        let v = ev.round() as u64;
        println!("{l:>3} {ev:>7.3}  {:.4}", planner::coverage_probability(m, l, v));
    }
    println!("\ncoupon collector for M={m}: {:.3}", planner::coupon_collector(m));
    Ok(())
}
