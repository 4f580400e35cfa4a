//! Shows how a convolution's output is tiled across tasks and which input
//! slices (with halos) each task reads.

use parasim::generate::{generate_model, ModelParams};
use parasim::model::Dim;
use parasim::soap::{enumerate_configs, input_regions, output_region, Degrees, TensorRegion};

fn show(r: &TensorRegion) -> String {
    let spans: Vec<String> = r.spans.iter().map(|s| format!("{}..{}", s.lo, s.hi)).collect();
    format!("[{}]", spans.join(", "))
}

fn main() -> parasim::error::Result<()> {
    let params = ModelParams {
        batch: 4,
        image: 28,
        ..ModelParams::default()
    };
    let graph = generate_model("lenet-like", &params)?;
    let conv = graph
        .ops
        .iter()
        .find(|op| op.kind.tag() == "Conv2D")
        .expect("lenet has a convolution");
    println!("{} output dims {:?}", conv.id, conv.output.dims);
    println!("parallelizable: {:?}", conv.parallelizable_dims());

    let maps = enumerate_configs(conv, 4, 4);
    println!("{} degree maps on 4 devices:", maps.len());
    for m in &maps {
        println!("  {m}");
    }

    let degrees = Degrees::new([(Dim::Height, 2), (Dim::Width, 2)]);
    for k in 0..degrees.size() {
        let out = output_region(conv, &degrees, k)?;
        println!("task {k}: writes {}", show(&out));
        for (slot, region) in input_regions(conv, &out)? {
            println!("    reads {slot:?} {}", show(&region));
        }
    }
    Ok(())
}
