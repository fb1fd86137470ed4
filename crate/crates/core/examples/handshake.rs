//! Two threads ordering themselves through a flag cell.

use std::thread;
use std::time::Duration;

use tshm::handshake::{FlagCell, Status};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = format!("/tshm-example{}-flag", std::process::id());
    let producer = FlagCell::create(&name)?;

    let peer_name = name.clone();
    let consumer = thread::spawn(move || -> Result<(), tshm::handshake::HandshakeError> {
        let flag = FlagCell::attach(&peer_name)?;
        flag.wait_for(Status::Ready, Duration::from_secs(5))?;
        println!("consumer saw {}", flag.status()?);
        flag.signal(Status::Done)
    });

    thread::sleep(Duration::from_millis(10));
    producer.signal(Status::Ready)?;
    producer.wait_for(Status::Done, Duration::from_secs(5))?;
    consumer.join().expect("consumer thread")?;
    println!("producer saw {}", producer.status()?);

    // DONE is terminal.
    println!("DONE -> READY allowed: {}", producer.signal(Status::Ready).is_ok());
    tshm::shm::unlink(&name)?;
    Ok(())
}
