//! Attaching to a published session and answering it.
//!
//! The consumer reads the metadata file, waits for READY, maps every
//! partition's regions without copying, validates them, and exposes them as
//! a [`TensorView`] for the CP kernels. When done it writes the model to
//! `/tshm-<session>-result` and raises DONE. Validation failures raise ERROR
//! with the matching code before returning.

use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use crate::cp::{cp_als, CpOptions, CpResult, KruskalModel, TensorView};
use crate::handshake::{FlagCell, HandshakeError, Status};
use crate::metadata::{MetadataError, PartitionEntry, SessionMetadata, FORMAT_VERSION};
use crate::partition::BoundingBox;
use crate::result;
use crate::session::{Result, SessionError};
use crate::shm::{ShmError, ShmRegion};

/// One partition mapped from shared memory.
#[derive(Debug)]
pub struct PartitionView {
    bounds: BoundingBox,
    count: usize,
    order: usize,
    coords: ShmRegion,
    values: ShmRegion,
}

impl PartitionView {
    pub fn bounds(&self) -> &BoundingBox {
        &self.bounds
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn coords(&self) -> &[u64] {
        &self.coords.as_u64s()[..self.count * self.order]
    }

    pub fn values(&self) -> &[f64] {
        &self.values.as_f64s()[..self.count]
    }

    /// Writes land in the producer's pages.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values.as_f64s_mut()[..self.count]
    }
}

/// The consumer side of a session.
#[derive(Debug)]
pub struct ConsumerSession {
    metadata: SessionMetadata,
    flag: FlagCell,
    parts: Vec<PartitionView>,
    finished: bool,
}

fn wait_for_file(path: &Path, timeout: Duration) -> Result<()> {
    let start = Instant::now();
    let mut backoff = Duration::from_micros(1);
    while !path.exists() {
        if start.elapsed() >= timeout {
            return Err(SessionError::Timeout(format!("metadata file {}", path.display())));
        }
        thread::sleep(backoff);
        backoff = (backoff * 2).min(Duration::from_millis(1));
    }
    Ok(())
}

fn expected_width(meta: &SessionMetadata) -> std::result::Result<(), String> {
    let host_endian = if cfg!(target_endian = "little") { "LE" } else { "BE" };
    if meta.version != FORMAT_VERSION {
        return Err(format!("metadata version {} (expected {FORMAT_VERSION})", meta.version));
    }
    if meta.index_width_bits != 64 {
        return Err(format!("index width {} bits (expected 64)", meta.index_width_bits));
    }
    if meta.value_width_bits != 64 {
        return Err(format!("value width {} bits (expected 64)", meta.value_width_bits));
    }
    if meta.endianness != "LE" || host_endian != "LE" {
        return Err(format!("endianness {} on a {host_endian} host", meta.endianness));
    }
    if meta.index_base != 0 {
        return Err(format!("index base {} (expected 0)", meta.index_base));
    }
    Ok(())
}

fn attach_region(name: &str) -> Result<ShmRegion> {
    ShmRegion::attach(name).map_err(|e| match e {
        ShmError::NotFound(name) => SessionError::RegionMissing(name),
        other => other.into(),
    })
}

fn attach_partition(k: usize, entry: &PartitionEntry, dims: &[usize]) -> Result<PartitionView> {
    let d = dims.len();
    if entry.count > entry.capacity {
        return Err(SessionError::LayoutMismatch(format!(
            "partition {k}: count {} exceeds capacity {}",
            entry.count, entry.capacity
        )));
    }
    let box_ok = entry
        .bounds
        .lower
        .iter()
        .zip(&entry.bounds.upper)
        .zip(dims)
        .all(|((&lo, &hi), &n)| lo <= hi && hi < n as u64);
    if !box_ok {
        return Err(SessionError::Metadata(MetadataError::Inconsistent(format!(
            "partition {k}: box {} does not fit dims {dims:?}",
            entry.bounds
        ))));
    }
    let coords = attach_region(&entry.coords_region)?;
    let values = attach_region(&entry.values_region)?;
    if coords.len() != entry.capacity * d * 8 || values.len() != entry.capacity * 8 {
        return Err(SessionError::LayoutMismatch(format!(
            "partition {k}: regions are {} and {} bytes, capacity {} implies {} and {}",
            coords.len(),
            values.len(),
            entry.capacity,
            entry.capacity * d * 8,
            entry.capacity * 8
        )));
    }
    let view = PartitionView {
        bounds: entry.bounds.clone(),
        count: entry.count,
        order: d,
        coords,
        values,
    };
    if let Some(element) = view
        .coords()
        .chunks_exact(d)
        .position(|c| !view.bounds.contains(c))
    {
        return Err(SessionError::OutOfBox {
            partition: k,
            element,
        });
    }
    Ok(view)
}

impl ConsumerSession {
    /// Reads the metadata, waits up to `timeout` for READY, then maps and
    /// validates every partition.
    pub fn attach(metadata_path: &Path, timeout: Duration) -> Result<Self> {
        let start = Instant::now();
        wait_for_file(metadata_path, timeout)?;
        let metadata = SessionMetadata::read_file(metadata_path)?;
        let flag = FlagCell::attach(&metadata.flag_region).map_err(|e| match e {
            HandshakeError::Shm(ShmError::NotFound(name)) => SessionError::RegionMissing(name),
            other => other.into(),
        })?;
        let remaining = timeout.saturating_sub(start.elapsed());
        match flag.wait_for(Status::Ready, remaining) {
            Ok(()) => {}
            Err(HandshakeError::Timeout { last, .. }) => {
                return Err(SessionError::Timeout(format!("READY (last status {last})")))
            }
            Err(e) => return Err(e.into()),
        }
        match Self::validate(&metadata) {
            Ok(parts) => Ok(Self {
                metadata,
                flag,
                parts,
                finished: false,
            }),
            Err(err) => {
                let _ = flag.signal_error(err.code());
                Err(err)
            }
        }
    }

    fn validate(metadata: &SessionMetadata) -> Result<Vec<PartitionView>> {
        expected_width(metadata).map_err(SessionError::LayoutMismatch)?;
        metadata
            .partitions
            .iter()
            .enumerate()
            .map(|(k, e)| attach_partition(k, e, &metadata.dims))
            .collect()
    }

    pub fn metadata(&self) -> &SessionMetadata {
        &self.metadata
    }

    pub fn flag(&self) -> &FlagCell {
        &self.flag
    }

    pub fn parts(&self) -> &[PartitionView] {
        &self.parts
    }

    pub fn part_mut(&mut self, k: usize) -> &mut PartitionView {
        &mut self.parts[k]
    }

    pub fn nnz(&self) -> usize {
        self.parts.iter().map(PartitionView::count).sum()
    }

    /// All partitions, in partition order, as one chunked view.
    pub fn view(&self) -> TensorView<'_> {
        TensorView::new(
            &self.metadata.dims,
            self.parts.iter().map(|p| (p.coords(), p.values())).collect(),
        )
    }

    /// Runs CP-ALS over the shared partitions. A compute failure is
    /// signalled to the producer before it is returned.
    pub fn decompose(&self, opts: &CpOptions) -> Result<CpResult> {
        cp_als(&self.view(), opts).map_err(|e| {
            let err = SessionError::from(e);
            let _ = self.flag.signal_error(err.code());
            err
        })
    }

    /// Publishes `model` in the result region and raises DONE.
    pub fn finish(&mut self, model: &KruskalModel) -> Result<()> {
        if self.finished {
            return Err(SessionError::Protocol("session already finished".into()));
        }
        if model.dims() != self.metadata.dims || !model.is_consistent() || model.rank() == 0 {
            return Err(SessionError::Protocol(format!(
                "model dims {:?} do not match session dims {:?}",
                model.dims(),
                self.metadata.dims
            )));
        }
        let bytes = result::encode(model);
        let mut region = match ShmRegion::create(&self.metadata.result_region, bytes.len()) {
            Ok(region) => region,
            Err(e) => {
                let err = SessionError::RegionMissing(format!("{}: {e}", self.metadata.result_region));
                let _ = self.flag.signal_error(err.code());
                return Err(err);
            }
        };
        region.as_bytes_mut()[..bytes.len()].copy_from_slice(&bytes);
        self.flag.signal(Status::Done)?;
        self.finished = true;
        Ok(())
    }

    /// Raises ERROR with `code`.
    pub fn fail(&mut self, code: u32) -> Result<()> {
        self.finished = true;
        Ok(self.flag.signal_error(code)?)
    }
}

/// Sum of all values, in partition order.
pub fn value_sum(view: &TensorView<'_>) -> f64 {
    view.value_sum()
}

/// Order-independent checksum of the stored coordinates.
///
/// Each element hashes its coordinates word by word, FNV-1a style
/// (`h = (h ^ c) * 0x100000001b3` from `0xcbf29ce484222325`); the element
/// hashes are added with wrapping arithmetic.
pub fn coord_hash(view: &TensorView<'_>) -> u64 {
    let d = view.order();
    view.chunks()
        .iter()
        .flat_map(|(coords, _)| coords.chunks_exact(d))
        .map(|c| {
            c.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &x| {
                (h ^ x).wrapping_mul(0x0000_0100_0000_01b3)
            })
        })
        .fold(0u64, u64::wrapping_add)
}
