//! Partition plans for a skewed tensor: balanced cuts against fixed octants.

use tshm::bench::gen_synthetic;
use tshm::{CooTensor, PartitionPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = gen_synthetic(&[32, 32, 32], 2, 0.05, 0.0, 7);
    for parts in [1, 4, 8] {
        let plan = PartitionPlan::build(&t, parts)?;
        println!("P={parts}: grid {:?}, padding {:.3}", plan.grid(), plan.padding_ratio());
    }

    // Everything in the low octant.
    let coords: Vec<u64> = t.coords().iter().map(|&c| c / 2).collect();
    let skewed = CooTensor::new(t.dims().to_vec(), coords, t.values().to_vec())?;
    let octants = PartitionPlan::with_cuts(&skewed, vec![vec![16]; 3])?;
    let balanced = PartitionPlan::build(&skewed, 8)?;
    println!("octant cuts padding {:.3}", octants.padding_ratio());
    println!("balanced cuts padding {:.3}\n", balanced.padding_ratio());
    print!("{balanced}");
    Ok(())
}
