//! CP-ALS on a synthetic low-rank tensor.

use tshm::bench::gen_synthetic;
use tshm::{cp_als, CpOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = gen_synthetic(&[20, 20, 20], 3, 1.0, 1e-3, 0);
    let result = cp_als(&t.view(), &CpOptions { rank: 3, iterations: 60, seed: 100 })?;
    for (i, fit) in result.fit_history.iter().enumerate().step_by(10) {
        println!("iteration {:>3}: fit {fit:.6}", i + 1);
    }
    println!("final fit {:.6}, weights {:?}", result.fit, result.model.weights);
    Ok(())
}
