//! Build a sparse domain incrementally, then freeze it into a tensor.

use tshm::SparseDomain;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let session = format!("example{}", std::process::id());
    let mut dom = SparseDomain::new(&session, vec![100, 100])?;
    for i in 0..50u64 {
        let c = [i, (i * i) % 100];
        dom.add_index(&c)?;
        dom.set(&c, i as f64)?;
        if dom.len() == dom.capacity() {
            println!("full at {} elements", dom.len());
        }
    }
    println!("get(7, 49) = {}", dom.get(&[7, 49])?);
    println!("get(0, 1) = {} (never added)", dom.get(&[0, 1])?);
    println!("set before add: {}", dom.set(&[0, 1], 1.0).unwrap_err());

    dom.shrink_to_fit()?;
    println!("after shrink: capacity {}, {} bytes of values", dom.capacity(), dom.values_region().len());
    let t = dom.freeze();
    println!("frozen tensor: dims {:?}, nnz {}", t.dims(), t.nnz());
    Ok(())
}
