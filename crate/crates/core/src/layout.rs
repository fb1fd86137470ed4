//! A growable sparse domain backed by shared memory.
//!
//! Coordinates and values live in two creator-owned regions,
//! `/tshm-<session>-layout-coords` and `/tshm-<session>-layout-vals`. A hash
//! index in ordinary memory maps each coordinate tuple to its slot. Indices
//! must be added before values can be stored at them; reads of in-bounds
//! coordinates that were never added return `0.0`.
//!
//! ```no_run
//! use tshm::SparseDomain;
//!
//! let mut dom = SparseDomain::new("doc", vec![4, 4]).unwrap();
//! dom.add_index(&[2, 3]).unwrap();
//! dom.set(&[2, 3], 7.5).unwrap();
//! assert_eq!(dom.get(&[2, 3]).unwrap(), 7.5);
//! assert_eq!(dom.get(&[0, 0]).unwrap(), 0.0);
//! ```

use std::collections::HashMap;

use thiserror::Error;

use crate::coo::{check_coord, CooTensor, TensorError};
use crate::session::validate_token;
use crate::shm::{self, session_region_name, ShmError, ShmRegion};

/// Slots allocated up front and kept as a floor when shrinking.
pub const MIN_CAPACITY: usize = 4;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error(transparent)]
    Shm(#[from] ShmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid session token {0:?}")]
    InvalidToken(String),
    #[error("index {0:?} has not been added to the domain")]
    NotAdded(Vec<u64>),
}

pub type Result<T> = std::result::Result<T, LayoutError>;

#[derive(Debug)]
pub struct SparseDomain {
    dims: Vec<usize>,
    count: usize,
    capacity: usize,
    coords: ShmRegion,
    values: ShmRegion,
    index: HashMap<Box<[u64]>, usize>,
}

impl SparseDomain {
    /// Creates both regions with room for [`MIN_CAPACITY`] elements.
    pub fn new(session: &str, dims: Vec<usize>) -> Result<Self> {
        validate_token(session).map_err(|_| LayoutError::InvalidToken(session.to_string()))?;
        // Reuse the tensor constructor's shape checks.
        CooTensor::empty(dims.clone())?;
        let d = dims.len();
        let coords = ShmRegion::create(
            &session_region_name(session, "layout-coords"),
            MIN_CAPACITY * d * 8,
        )?;
        let values = match ShmRegion::create(
            &session_region_name(session, "layout-vals"),
            MIN_CAPACITY * 8,
        ) {
            Ok(v) => v,
            Err(e) => {
                let _ = shm::unlink(coords.name());
                return Err(e.into());
            }
        };
        Ok(Self {
            dims,
            count: 0,
            capacity: MIN_CAPACITY,
            coords,
            values,
            index: HashMap::new(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn coords_region(&self) -> &ShmRegion {
        &self.coords
    }

    pub fn values_region(&self) -> &ShmRegion {
        &self.values
    }

    /// Live coordinates, element-major.
    pub fn coords(&self) -> &[u64] {
        &self.coords.as_u64s()[..self.count * self.order()]
    }

    /// Live values in slot order.
    pub fn values(&self) -> &[f64] {
        &self.values.as_f64s()[..self.count]
    }

    /// Slot of `coord`, if it has been added.
    pub fn slot(&self, coord: &[u64]) -> Option<usize> {
        self.index.get(coord).copied()
    }

    fn resize(&mut self, capacity: usize) -> Result<()> {
        let d = self.order();
        if capacity > self.capacity {
            self.coords.grow(capacity * d * 8)?;
            self.values.grow(capacity * 8)?;
        } else if capacity < self.capacity {
            self.coords.shrink(capacity * d * 8)?;
            self.values.shrink(capacity * 8)?;
        }
        self.capacity = capacity;
        Ok(())
    }

    /// Adds `coord` and returns its slot. Adding an existing index returns
    /// its current slot. A full domain doubles its capacity first.
    pub fn add_index(&mut self, coord: &[u64]) -> Result<usize> {
        check_coord(&self.dims, coord)?;
        if let Some(&slot) = self.index.get(coord) {
            return Ok(slot);
        }
        if self.count == self.capacity {
            self.resize((2 * self.capacity).max(MIN_CAPACITY))?;
        }
        let slot = self.count;
        let d = self.order();
        self.coords.as_u64s_mut()[slot * d..(slot + 1) * d].copy_from_slice(coord);
        self.values.as_f64s_mut()[slot] = 0.0;
        self.index.insert(coord.into(), slot);
        self.count += 1;
        Ok(slot)
    }

    pub fn set(&mut self, coord: &[u64], value: f64) -> Result<()> {
        check_coord(&self.dims, coord)?;
        let slot = self
            .slot(coord)
            .ok_or_else(|| LayoutError::NotAdded(coord.to_vec()))?;
        self.values.as_f64s_mut()[slot] = value;
        Ok(())
    }

    pub fn get(&self, coord: &[u64]) -> Result<f64> {
        check_coord(&self.dims, coord)?;
        Ok(self.slot(coord).map_or(0.0, |slot| self.values.as_f64s()[slot]))
    }

    /// Truncates both regions to the live prefix, keeping at least
    /// [`MIN_CAPACITY`] slots.
    pub fn shrink_to_fit(&mut self) -> Result<()> {
        self.resize(self.count.max(MIN_CAPACITY))
    }

    /// Copies the live prefix into a tensor, in slot order.
    pub fn freeze(&self) -> CooTensor {
        CooTensor::new(self.dims.clone(), self.coords().to_vec(), self.values().to_vec())
            .expect("stored coordinates are checked on insert")
    }

    /// Builds a domain from a tensor; a repeated coordinate keeps its first
    /// slot and its last value.
    pub fn from_tensor(session: &str, t: &CooTensor) -> Result<Self> {
        let mut dom = Self::new(session, t.dims().to_vec())?;
        for (c, v) in t.iter() {
            dom.add_index(c)?;
            dom.set(c, v)?;
        }
        Ok(dom)
    }
}

impl Drop for SparseDomain {
    fn drop(&mut self) {
        let _ = shm::unlink(self.coords.name());
        let _ = shm::unlink(self.values.name());
    }
}
