//! Mixes measured task times with the analytic fallback and shows which one
//! each task used.

use parasim::cost::{AnalyticCostModel, CostKey, CostProfile};
use parasim::generate::{generate_model, ModelParams};
use parasim::soap::{output_region, Degrees};

fn main() -> parasim::error::Result<()> {
    let graph = generate_model("alexnet-like", &ModelParams::default())?;
    let profile = CostProfile::new(AnalyticCostModel::uniform(8e12, 5e-6));

    // pretend the first convolution was measured on this device
    let conv = graph
        .ops
        .iter()
        .find(|op| op.kind.tag() == "Conv2D")
        .expect("alexnet has convolutions");
    let whole = output_region(conv, &Degrees::one(), 0)?;
    profile.insert(CostKey::new(conv, &whole, "gpu"), 4.2e-3);

    for op in graph.ops.iter().take(5) {
        let out = output_region(op, &Degrees::one(), 0)?;
        let before = profile.fallback_calls();
        let t = profile.task_exe_time(op, &out, "gpu");
        let source = if profile.fallback_calls() > before {
            "analytic"
        } else {
            "measured"
        };
        println!("{:<8} {:>10.3} us  {source}", op.id, t * 1e6);
    }
    println!("\nprofile as stored:\n{}", profile.render());
    Ok(())
}
