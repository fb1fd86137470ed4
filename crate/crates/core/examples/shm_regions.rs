//! Create, grow, attach and unlink a named shared-memory region.

use tshm::shm::{self, ShmRegion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = format!("/tshm-example{}-scratch", std::process::id());
    let mut region = ShmRegion::create(&name, 4 * 8)?;
    region.as_u64s_mut().copy_from_slice(&[1, 2, 3, 4]);

    region.grow(8 * 8)?;
    println!("grown to {} bytes: {:?}", region.len(), region.as_u64s());

    // A second mapping of the same object sees the same bytes.
    let mut other = ShmRegion::attach(&name)?;
    other.as_u64s_mut()[7] = 99;
    println!("creator reads slot 7 = {}", region.as_u64s()[7]);

    other.detach()?;
    shm::unlink(&name)?;
    println!("unlinked, exists: {}", shm::exists(&name));
    Ok(())
}
