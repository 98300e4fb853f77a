//! Writes a demo fixture set (model, cameras, landmark def, ground truth,
//! pose archive, identity priors) for driving the `bodyfit` CLI.
//!
//! Usage: cargo run -p bodyfit-testkit --example make_fixtures -- <dir> [seed]

use bodyfit_testkit::fixtures::write_fixture_set;

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "fixtures".to_string());
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);
    let set = write_fixture_set(std::path::Path::new(&dir), seed).expect("fixture write failed");
    println!("model:    {}", set.model.display());
    println!("cameras:  {}", set.cameras.display());
    println!("def:      {}", set.dense_def.display());
    println!("truth:    {}", set.truth.display());
    println!("archive:  {}", set.archive.display());
    println!("identity: {}", set.identity.display());
}
