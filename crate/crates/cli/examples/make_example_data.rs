//! Regenerates `data/example.csv`: 231 effects in clusters, with a
//! cluster-level covariate `x` and a binary study-level covariate `z`.
//!
//! cargo run -p pgmeta-cli --example make_example_data > crates/cli/data/example.csv

use pgmeta::sim::{gen_sim2, replication_rng};
use rand::Rng;

const ROWS: usize = 231;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = replication_rng(20_231, 0);
    let data = gen_sim2(70, 0.6, 0.5, &mut rng)?;
    assert!(data.n() >= ROWS, "not enough records");
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["study", "y", "v", "x", "z", "cluster"])?;
    for (i, r) in data.records().iter().take(ROWS).enumerate() {
        let z = u8::from(rng.random_bool(0.5));
        w.write_record([
            format!("s{:03}", i + 1),
            format!("{:.6}", r.y),
            format!("{:.6}", r.v),
            format!("{:.6}", r.x[0]),
            z.to_string(),
            format!("c{:02}", r.cluster.as_deref().unwrap_or("0").parse::<usize>()?),
        ])?;
    }
    w.flush()?;
    Ok(())
}
