//! Parse `.tns` text, inspect the tensor, and write it back out.
//!
//! ```text
//! cargo run --example parse_tns [FILE]
//! ```

use std::io::{self, BufReader};

use tshm::CooTensor;

const SAMPLE: &str = "\
# three-mode sample, 1-based
1 1 1 2.0
5 4 4 5.0
8 6 7 -1.5
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = match std::env::args().nth(1) {
        Some(path) => CooTensor::parse_tns(BufReader::new(std::fs::File::open(path)?), None)?,
        None => CooTensor::parse_tns(SAMPLE.as_bytes(), None)?,
    };
    println!("dims {:?}, nnz {}", t.dims(), t.nnz());
    if t.nnz() > 0 {
        let probe = t.coord(t.nnz() - 1).to_vec();
        println!("value at {probe:?} (0-based) = {}", t.dense_lookup(&probe)?);
    }
    t.emit_tns(io::stdout().lock())?;
    Ok(())
}
