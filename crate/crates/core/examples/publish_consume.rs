//! Publish a tensor and answer it from a consumer on another thread.
//!
//! Producer and consumer share nothing but the metadata path; the consumer
//! could equally be another process.

use std::thread;
use std::time::Duration;

use tshm::bench::gen_synthetic;
use tshm::producer::publish;
use tshm::{ConsumerSession, CpOptions, PartitionPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir();
    let meta = dir.join(format!("tshm-example{}.meta", std::process::id()));
    let t = gen_synthetic(&[40, 30, 20], 3, 0.05, 0.0, 1);
    let plan = PartitionPlan::build(&t, 4)?;

    let consumer_meta = meta.clone();
    let consumer = thread::spawn(move || -> Result<f64, tshm::session::SessionError> {
        let mut session = ConsumerSession::attach(&consumer_meta, Duration::from_secs(10))?;
        println!("consumer mapped {} partitions, {} elements", session.parts().len(), session.nnz());
        let result = session.decompose(&CpOptions { rank: 3, iterations: 20, seed: 0 })?;
        session.finish(&result.model)?;
        Ok(result.fit)
    });

    let session = format!("example{}", std::process::id());
    let mut producer = publish(&t, &plan, &session, &meta)?;
    println!("published {:?}", producer.region_names());
    let model = producer.await_done(Duration::from_secs(30))?;
    let fit = consumer.join().expect("consumer thread")?;
    println!("model rank {}, dims {:?}, fit {fit:.4}", model.rank(), model.dims());
    producer.teardown()?;
    Ok(())
}
