//! Zero-copy sharing of COO sparse tensors between processes.
//!
//! A producer partitions a tensor into non-overlapping bounding boxes,
//! copies each partition into its own pair of named shared-memory regions,
//! writes a small metadata file naming them, and raises a READY flag. A
//! consumer process reads the metadata, maps the same regions, runs a CP
//! decomposition directly over the shared pages, publishes the model in a
//! result region, and raises DONE.
//!
//! | module        | role                                                   |
//! |---------------|--------------------------------------------------------|
//! | [`coo`]       | COO tensor and `.tns` text I/O                         |
//! | [`shm`]       | named shared-memory regions                            |
//! | [`handshake`] | READY/DONE/ERROR flag cell                             |
//! | [`partition`] | grid bounding-box plans and padding                    |
//! | [`producer`]  | publishing a session                                   |
//! | [`consumer`]  | attaching, validating, computing, answering            |
//! | [`cp`]        | MTTKRP and CP-ALS                                      |
//! | [`layout`]    | growable shared-memory sparse domain                   |
//! | [`bench`]     | synthetic tensors and the timing harness               |

pub mod bench;
pub mod consumer;
pub mod coo;
pub mod cp;
pub mod handshake;
pub mod layout;
pub mod metadata;
pub mod partition;
pub mod producer;
pub mod result;
pub mod session;
pub mod shm;

pub use consumer::ConsumerSession;
pub use coo::CooTensor;
pub use cp::{cp_als, mttkrp, CpOptions, CpResult, KruskalModel, Matrix, TensorView};
pub use handshake::{FlagCell, Status};
pub use layout::SparseDomain;
pub use partition::{BoundingBox, PartitionPlan};
pub use producer::ProducerSession;
pub use shm::ShmRegion;
