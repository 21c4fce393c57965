//! Self-attentive pooling of a small hidden-state matrix, and trigger
//! attention over the same rows.

use ndarray::array;
use tmn::encoder::attentive_pool_values;
use tmn::tagger::{trigger_attention, TriggerAttentionParams};

fn main() -> tmn::Result<()> {
    let h = array![[1.0, 0.0, 0.5], [0.0, 1.0, -0.5], [0.5, 0.5, 0.0], [2.0, -1.0, 1.0]];
    let w1 = array![[0.3, -0.2, 0.1], [0.0, 0.4, 0.2]];
    let w2 = array![[1.0, -1.0]];
    let pooled = attentive_pool_values(&h, &w1, &w2)?;
    println!("pooling weights {:?}", pooled.weights);
    println!("pooled vector   {:?}", pooled.vector);

    let p = TriggerAttentionParams {
        u1: array![[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]],
        u2: array![[0.2, 0.2, 0.0], [0.0, -0.3, 0.3]],
        v: array![[1.0], [1.0]],
    };
    for query in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] {
        let (alpha, weighted) = trigger_attention(&h, &query, &p)?;
        println!("query {query:?}: alpha {alpha:.3?}");
        println!("  first weighted row {:.3?}", weighted.row(0).to_vec());
    }
    Ok(())
}
