//! Regenerates `fixtures/adult_synth.csv`: 5000 rows drawn from
//! `fixtures/adult_model.json` with seed 7.
//!
//! cargo run -p fairrepair --example synth_adult > crates/fairrepair/fixtures/adult_synth.csv

use std::path::Path;

use fairrepair::io::{bag_to_csv, read_model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let model = read_model(&dir.join("adult_model.json")).expect("fixture model loads");
    let bag = model.sample(&mut ChaCha8Rng::seed_from_u64(7), 5000);
    print!("{}", bag_to_csv(&bag));
}
