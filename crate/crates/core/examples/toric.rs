//! Print the 2x2 toric code instance: `cargo run --example toric > toric.json`.

fn main() {
    println!("{}", clh_core::model::toric_code_2x2().to_json_string());
}
