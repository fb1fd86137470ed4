//! Publishing a partitioned tensor into shared memory.
//!
//! For every partition `k` the producer creates `/tshm-<session>-p<k>-coords`
//! (`capacity * d` u64 slots, element-major) and `/tshm-<session>-p<k>-vals`
//! (`capacity` f64 slots), fills the first `count_k` slots in input order,
//! writes the metadata file, and raises READY on `/tshm-<session>-flag`.
//! Padding slots stay zero; `count` in the metadata is authoritative.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::coo::CooTensor;
use crate::cp::KruskalModel;
use crate::handshake::{codes, FlagCell, HandshakeError, Status};
use crate::metadata::{PartitionEntry, SessionMetadata, FORMAT_VERSION};
use crate::partition::PartitionPlan;
use crate::result;
use crate::session::{validate_token, Result, SessionError};
use crate::shm::{self, partition_region_name, session_region_name, ShmRegion};

/// The producer side of a published session.
#[derive(Debug)]
pub struct ProducerSession {
    metadata: SessionMetadata,
    metadata_path: PathBuf,
    flag: FlagCell,
    coords: Vec<ShmRegion>,
    values: Vec<ShmRegion>,
    torn_down: bool,
}

/// Regions created so far, removed again if publishing fails.
struct Staging {
    names: Vec<String>,
    flag: Option<FlagCell>,
}

impl Staging {
    fn abort(self, err: &SessionError) {
        if let Some(flag) = &self.flag {
            let _ = flag.signal_error(err.code());
        }
        for name in &self.names {
            let _ = shm::unlink(name);
        }
    }
}

/// Creates and fills every region, writes the metadata file, and signals
/// READY. On failure the flag (if created) goes to ERROR and every region
/// created so far is unlinked.
pub fn publish(
    t: &CooTensor,
    plan: &PartitionPlan,
    session: &str,
    metadata_path: &Path,
) -> Result<ProducerSession> {
    validate_token(session)?;
    if cfg!(target_endian = "big") {
        return Err(SessionError::LayoutMismatch(
            "shared regions are little-endian; big-endian hosts are unsupported".into(),
        ));
    }
    if plan.dims() != t.dims() || plan.nnz() != t.nnz() {
        return Err(SessionError::PlanMismatch(format!(
            "plan covers dims {:?} with {} elements, tensor has dims {:?} with {}",
            plan.dims(),
            plan.nnz(),
            t.dims(),
            t.nnz()
        )));
    }
    let mut staging = Staging {
        names: Vec::new(),
        flag: None,
    };
    match stage(t, plan, session, metadata_path, &mut staging) {
        Ok((coords, values, metadata)) => {
            let flag = staging.flag.take().expect("flag staged");
            if let Err(e) = flag.signal(Status::Ready) {
                let err = SessionError::from(e);
                staging.flag = Some(flag);
                staging.abort(&err);
                let _ = fs::remove_file(metadata_path);
                return Err(err);
            }
            Ok(ProducerSession {
                metadata,
                metadata_path: metadata_path.to_path_buf(),
                flag,
                coords,
                values,
                torn_down: false,
            })
        }
        Err(err) => {
            staging.abort(&err);
            Err(err)
        }
    }
}

type Staged = (Vec<ShmRegion>, Vec<ShmRegion>, SessionMetadata);

fn stage(
    t: &CooTensor,
    plan: &PartitionPlan,
    session: &str,
    metadata_path: &Path,
    staging: &mut Staging,
) -> Result<Staged> {
    let d = t.order();
    let flag_name = session_region_name(session, "flag");
    let flag = FlagCell::create(&flag_name)?;
    staging.names.push(flag_name.clone());
    staging.flag = Some(flag);

    // Every partition gets the same slot count, at least one so each
    // region has a nonzero length.
    let capacity = plan.capacity().max(1);
    let mut coords = Vec::with_capacity(plan.parts());
    let mut values = Vec::with_capacity(plan.parts());
    for k in 0..plan.parts() {
        let c_name = partition_region_name(session, k, "coords");
        coords.push(ShmRegion::create(&c_name, capacity * d * 8)?);
        staging.names.push(c_name);
        let v_name = partition_region_name(session, k, "vals");
        values.push(ShmRegion::create(&v_name, capacity * 8)?);
        staging.names.push(v_name);
    }

    {
        let mut c_slices: Vec<&mut [u64]> = coords.iter_mut().map(ShmRegion::as_u64s_mut).collect();
        let mut v_slices: Vec<&mut [f64]> = values.iter_mut().map(ShmRegion::as_f64s_mut).collect();
        let mut fill = vec![0usize; plan.parts()];
        for (coord, &v) in t.coords().chunks_exact(d).zip(t.values()) {
            let k = plan.assign(coord);
            let slot = fill[k];
            c_slices[k][slot * d..(slot + 1) * d].copy_from_slice(coord);
            v_slices[k][slot] = v;
            fill[k] = slot + 1;
        }
    }

    let metadata = SessionMetadata {
        version: FORMAT_VERSION,
        session: session.to_string(),
        dims: t.dims().to_vec(),
        nnz: t.nnz(),
        grid: plan.grid().to_vec(),
        index_width_bits: 64,
        value_width_bits: 64,
        endianness: "LE".to_string(),
        index_base: 0,
        flag_region: flag_name,
        result_region: session_region_name(session, "result"),
        partitions: plan
            .boxes()
            .iter()
            .zip(plan.counts())
            .enumerate()
            .map(|(k, (b, &count))| PartitionEntry {
                coords_region: coords[k].name().to_string(),
                values_region: values[k].name().to_string(),
                bounds: b.clone(),
                count,
                capacity,
            })
            .collect(),
    };
    metadata.write_file(metadata_path)?;
    Ok((coords, values, metadata))
}

impl ProducerSession {
    pub fn metadata(&self) -> &SessionMetadata {
        &self.metadata
    }

    pub fn metadata_path(&self) -> &Path {
        &self.metadata_path
    }

    pub fn flag(&self) -> &FlagCell {
        &self.flag
    }

    pub fn parts(&self) -> usize {
        self.values.len()
    }

    /// Live coordinates of partition `k` (its first `count` slots).
    pub fn coords(&self, k: usize) -> &[u64] {
        let n = self.metadata.partitions[k].count * self.metadata.order();
        &self.coords[k].as_u64s()[..n]
    }

    /// Live values of partition `k`, read through the producer's mapping.
    pub fn values(&self, k: usize) -> &[f64] {
        &self.values[k].as_f64s()[..self.metadata.partitions[k].count]
    }

    pub fn values_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.metadata.partitions[k].count;
        &mut self.values[k].as_f64s_mut()[..n]
    }

    pub fn coords_region(&self, k: usize) -> &ShmRegion {
        &self.coords[k]
    }

    pub fn values_region(&self, k: usize) -> &ShmRegion {
        &self.values[k]
    }

    /// Every region name this session may own, including the result.
    pub fn region_names(&self) -> Vec<String> {
        let mut names = vec![self.metadata.flag_region.clone(), self.metadata.result_region.clone()];
        for p in &self.metadata.partitions {
            names.push(p.coords_region.clone());
            names.push(p.values_region.clone());
        }
        names
    }

    /// Waits for DONE and reads the consumer's model from the result region.
    /// A timeout leaves the session intact so the wait can be retried.
    pub fn await_done(&self, timeout: Duration) -> Result<KruskalModel> {
        match self.flag.wait_for(Status::Done, timeout) {
            Ok(()) => {}
            Err(HandshakeError::Timeout { last, .. }) => {
                return Err(SessionError::Timeout(format!("DONE (last status {last})")))
            }
            Err(e) => return Err(e.into()),
        }
        let region = ShmRegion::attach(&self.metadata.result_region).map_err(|e| match e {
            shm::ShmError::NotFound(name) => SessionError::RegionMissing(name),
            other => other.into(),
        })?;
        let model = result::decode(region.as_bytes())?;
        if model.dims() != self.metadata.dims {
            return Err(SessionError::LayoutMismatch(format!(
                "result dims {:?} differ from session dims {:?}",
                model.dims(),
                self.metadata.dims
            )));
        }
        Ok(model)
    }

    /// Marks the session failed so a waiting consumer gives up.
    pub fn abort(&self) -> Result<()> {
        Ok(self.flag.signal_error(codes::COMPUTE_FAILURE)?)
    }

    /// Unlinks every session region and removes the metadata file.
    /// Calling it again is a no-op.
    pub fn teardown(&mut self) -> Result<()> {
        if self.torn_down {
            return Ok(());
        }
        for name in self.region_names() {
            match shm::unlink(&name) {
                Ok(()) | Err(shm::ShmError::NotFound(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        match fs::remove_file(&self.metadata_path) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        self.torn_down = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handshake::HandshakeError;

    fn token(tag: &str) -> String {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static NEXT: AtomicUsize = AtomicUsize::new(0);
        format!("pr{}x{}{tag}", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed))
    }

    fn corner_tensor() -> CooTensor {
        CooTensor::new(vec![8, 6, 7], vec![0, 0, 0, 4, 3, 3], vec![2.0, 5.0]).unwrap()
    }

    fn shm_entries(session: &str) -> Vec<String> {
        let prefix = format!("tshm-{session}-");
        let mut names: Vec<String> = fs::read_dir("/dev/shm")
            .unwrap()
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n.starts_with(&prefix))
            .collect();
        names.sort();
        names
    }

    #[test]
    fn corner_example_layout() {
        let dir = tempfile::tempdir().unwrap();
        let t = corner_tensor();
        let plan = PartitionPlan::with_cuts(&t, vec![vec![4], vec![3], vec![3]]).unwrap();
        let s = token("corner");
        let mut p = publish(&t, &plan, &s, &dir.path().join("m")).unwrap();
        assert_eq!(p.flag().status().unwrap(), Status::Ready);
        assert_eq!(p.parts(), 8);
        assert_eq!(p.coords(0), &[0, 0, 0]);
        assert_eq!(p.values(0), &[2.0]);
        assert_eq!(p.coords(7), &[4, 3, 3]);
        assert_eq!(p.values(7), &[5.0]);
        for k in 1..7 {
            assert_eq!(p.metadata().partitions[k].count, 0);
            assert_eq!(p.metadata().partitions[k].capacity, 1);
            assert_eq!(p.values_region(k).len(), 8);
            assert!(p.values_region(k).as_f64s().iter().all(|&v| v == 0.0));
            assert!(p.coords_region(k).as_u64s().iter().all(|&c| c == 0));
        }
        let on_disk = SessionMetadata::read_file(p.metadata_path()).unwrap();
        assert_eq!(&on_disk, p.metadata());
        p.teardown().unwrap();
    }

    #[test]
    fn empty_tensor_gets_one_slot() {
        let dir = tempfile::tempdir().unwrap();
        let t = CooTensor::empty(vec![3, 3]).unwrap();
        let plan = PartitionPlan::build(&t, 1).unwrap();
        let s = token("empty");
        let mut p = publish(&t, &plan, &s, &dir.path().join("m")).unwrap();
        assert_eq!(p.coords_region(0).len(), 16);
        assert_eq!(p.values_region(0).len(), 8);
        assert_eq!(p.metadata().partitions[0].count, 0);
        assert_eq!(p.flag().status().unwrap(), Status::Ready);
        p.teardown().unwrap();
    }

    #[test]
    fn regions_match_metadata_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let t = crate::bench::gen_synthetic(&[9, 7, 5], 2, 0.3, 0.0, 4);
        let plan = PartitionPlan::build(&t, 4).unwrap();
        let s = token("lens");
        let mut p = publish(&t, &plan, &s, &dir.path().join("m")).unwrap();
        for e in &p.metadata().partitions {
            assert_eq!(ShmRegion::attach(&e.coords_region).unwrap().len(), e.capacity * 3 * 8);
            assert_eq!(ShmRegion::attach(&e.values_region).unwrap().len(), e.capacity * 8);
        }
        p.teardown().unwrap();
    }

    #[test]
    fn partitions_hold_the_input_multiset() {
        let dir = tempfile::tempdir().unwrap();
        let t = crate::bench::gen_synthetic(&[12, 10, 8], 3, 0.2, 0.1, 9);
        let plan = PartitionPlan::build(&t, 4).unwrap();
        let s = token("multi");
        let mut p = publish(&t, &plan, &s, &dir.path().join("m")).unwrap();
        let mut published: Vec<(Vec<u64>, u64)> = Vec::new();
        for k in 0..p.parts() {
            for (c, v) in p.coords(k).chunks_exact(3).zip(p.values(k)) {
                published.push((c.to_vec(), v.to_bits()));
            }
        }
        let mut input: Vec<(Vec<u64>, u64)> = t.iter().map(|(c, v)| (c.to_vec(), v.to_bits())).collect();
        published.sort();
        input.sort();
        assert_eq!(published, input);
        // Stable: partition order equals input order restricted to the partition.
        let split = plan.split(&t);
        for k in 0..p.parts() {
            assert_eq!(p.coords(k), split.parts()[k].0.as_slice());
        }
        p.teardown().unwrap();
    }

    #[test]
    fn await_done_times_out_and_can_retry() {
        let dir = tempfile::tempdir().unwrap();
        let t = corner_tensor();
        let plan = PartitionPlan::build(&t, 1).unwrap();
        let s = token("wait");
        let mut p = publish(&t, &plan, &s, &dir.path().join("m")).unwrap();
        assert!(matches!(
            p.await_done(Duration::from_millis(50)),
            Err(SessionError::Timeout(_))
        ));
        assert_eq!(p.values(0), &[2.0, 5.0]);
        let peer = FlagCell::attach(&p.metadata().flag_region).unwrap();
        peer.signal_error(4).unwrap();
        assert!(matches!(
            p.await_done(Duration::from_millis(50)),
            Err(SessionError::Handshake(HandshakeError::Peer(4)))
        ));
        p.teardown().unwrap();
    }

    #[test]
    fn teardown_is_idempotent_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let t = corner_tensor();
        let plan = PartitionPlan::build(&t, 2).unwrap();
        let s = token("tear");
        let meta = dir.path().join("m");
        let mut p = publish(&t, &plan, &s, &meta).unwrap();
        assert_eq!(shm_entries(&s).len(), 5);
        p.abort().unwrap();
        p.teardown().unwrap();
        assert!(shm_entries(&s).is_empty());
        assert!(!meta.exists());
        for name in p.region_names() {
            assert!(ShmRegion::attach(&name).is_err());
        }
        p.teardown().unwrap();
    }

    #[test]
    fn collision_cleans_up_and_flags_error() {
        let dir = tempfile::tempdir().unwrap();
        let t = corner_tensor();
        let plan = PartitionPlan::build(&t, 2).unwrap();
        let s = token("clash");
        let squatter_name = partition_region_name(&s, 1, "vals");
        let _squatter = ShmRegion::create(&squatter_name, 8).unwrap();
        let err = publish(&t, &plan, &s, &dir.path().join("m")).unwrap_err();
        assert!(matches!(err, SessionError::Shm(shm::ShmError::AlreadyExists(_))));
        assert_eq!(shm_entries(&s), vec![format!("tshm-{s}-p1-vals")]);
        shm::unlink(&squatter_name).unwrap();
    }

    #[test]
    fn rejects_foreign_plan_and_bad_token() {
        let dir = tempfile::tempdir().unwrap();
        let t = corner_tensor();
        let other = CooTensor::new(vec![8, 6, 7], vec![1, 1, 1], vec![1.0]).unwrap();
        let plan = PartitionPlan::build(&other, 1).unwrap();
        assert!(matches!(
            publish(&t, &plan, &token("foreign"), &dir.path().join("m")),
            Err(SessionError::PlanMismatch(_))
        ));
        let plan = PartitionPlan::build(&t, 1).unwrap();
        assert!(matches!(
            publish(&t, &plan, "bad/token", &dir.path().join("m")),
            Err(SessionError::InvalidToken(_))
        ));
    }
}
