//! Regenerates `fixtures/sample_ci_336h_7regions.csv`.

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sample_ci_336h_7regions.csv").to_string());
    carbonfl_core::ci_traces::fixture_traces()
        .write_csv(&path)
        .expect("write fixture");
    println!("wrote {path}");
}
