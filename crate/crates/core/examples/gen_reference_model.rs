//! Regenerates `assets/reference.model`.
//!
//! cargo run -p congait-core --example gen_reference_model > crates/core/assets/reference.model

use congait_core::model::{save_model, Architecture};

fn main() {
    // First-layer gain keeps logits O(1) on raw Newton inputs.
    let model = Architecture::reference().build(20250601, 0.05, 0.002).expect("reference architecture is valid");
    println!("{}", save_model(&model));
}
