//! The status flag that orders producer and consumer across processes.
//!
//! The flag is a 64-byte cell at offset 0 of its own region:
//!
//! | offset | width | field                                  |
//! |--------|-------|----------------------------------------|
//! | 0      | u32   | magic `0x54534D31` (`"TSM1"`)          |
//! | 4      | u32   | status: 0 INIT, 1 READY, 2 DONE, 3 ERROR |
//! | 8      | u32   | error code (valid once status is ERROR) |
//! | 12     | 52 B  | zero                                   |
//!
//! All fields are little-endian. Status stores use release ordering and loads
//! use acquire ordering, so every write a side makes before signalling is
//! visible to a peer that observes the new status.

use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::shm::{ShmError, ShmRegion};

pub const FLAG_MAGIC: u32 = 0x5453_4D31;
pub const FLAG_LEN: usize = 64;

const MAGIC_OFFSET: usize = 0;
const STATUS_OFFSET: usize = 4;
const CODE_OFFSET: usize = 8;

const MIN_BACKOFF: Duration = Duration::from_micros(1);
const MAX_BACKOFF: Duration = Duration::from_millis(1);

/// Error codes carried by an ERROR status.
pub mod codes {
    pub const METADATA_INVALID: u32 = 1;
    pub const REGION_MISSING: u32 = 2;
    pub const LAYOUT_MISMATCH: u32 = 3;
    pub const COMPUTE_FAILURE: u32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u32)]
pub enum Status {
    Init = 0,
    Ready = 1,
    Done = 2,
    Error = 3,
}

impl Status {
    pub const ALL: [Status; 4] = [Status::Init, Status::Ready, Status::Done, Status::Error];

    pub fn from_u32(raw: u32) -> Option<Self> {
        Self::ALL.get(raw as usize).copied()
    }

    /// Whether the state machine permits `self -> next`.
    pub fn can_transition_to(self, next: Status) -> bool {
        matches!(
            (self, next),
            (Status::Init, Status::Ready)
                | (Status::Ready, Status::Done)
                | (Status::Ready, Status::Error)
                | (Status::Init, Status::Error)
        )
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Init => "INIT",
            Status::Ready => "READY",
            Status::Done => "DONE",
            Status::Error => "ERROR",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum HandshakeError {
    #[error(transparent)]
    Shm(#[from] ShmError),
    #[error("flag region is {0} bytes, need {FLAG_LEN}")]
    TooSmall(usize),
    #[error("flag magic is {0:#010x}, expected {FLAG_MAGIC:#010x}")]
    Corrupt(u32),
    #[error("flag holds unknown status {0}")]
    UnknownStatus(u32),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: Status, to: Status },
    #[error("cannot wait for {0}")]
    InvalidTarget(Status),
    #[error("timed out waiting for {target}; last status {last}")]
    Timeout { target: Status, last: Status },
    #[error("peer signalled ERROR with code {0}")]
    Peer(u32),
}

pub type Result<T> = std::result::Result<T, HandshakeError>;

/// A mapped flag cell.
#[derive(Debug)]
pub struct FlagCell {
    region: ShmRegion,
}

impl FlagCell {
    /// Creates the flag region in state INIT.
    pub fn create(name: &str) -> Result<Self> {
        let region = ShmRegion::create(name, FLAG_LEN)?;
        let cell = Self { region };
        cell.word(CODE_OFFSET).store(0, Ordering::Relaxed);
        cell.word(STATUS_OFFSET)
            .store(Status::Init as u32, Ordering::Relaxed);
        cell.word(MAGIC_OFFSET)
            .store(FLAG_MAGIC.to_le(), Ordering::Release);
        Ok(cell)
    }

    /// Attaches to an existing flag and checks its magic.
    pub fn attach(name: &str) -> Result<Self> {
        let region = ShmRegion::attach(name)?;
        if region.len() < FLAG_LEN {
            return Err(HandshakeError::TooSmall(region.len()));
        }
        let cell = Self { region };
        cell.check_magic()?;
        Ok(cell)
    }

    pub fn name(&self) -> &str {
        self.region.name()
    }

    fn word(&self, offset: usize) -> &AtomicU32 {
        // The mapping is page aligned and at least FLAG_LEN bytes long.
        unsafe { &*(self.region.as_ptr().add(offset) as *const AtomicU32) }
    }

    fn check_magic(&self) -> Result<()> {
        let magic = u32::from_le(self.word(MAGIC_OFFSET).load(Ordering::Acquire));
        if magic != FLAG_MAGIC {
            return Err(HandshakeError::Corrupt(magic));
        }
        Ok(())
    }

    fn load(&self) -> Result<Status> {
        self.check_magic()?;
        let raw = u32::from_le(self.word(STATUS_OFFSET).load(Ordering::Acquire));
        Status::from_u32(raw).ok_or(HandshakeError::UnknownStatus(raw))
    }

    pub fn status(&self) -> Result<Status> {
        self.load()
    }

    pub fn error_code(&self) -> u32 {
        u32::from_le(self.word(CODE_OFFSET).load(Ordering::Acquire))
    }

    /// Moves the flag to `next`. For ERROR prefer [`FlagCell::signal_error`],
    /// which also records a code; this form records code 0.
    pub fn signal(&self, next: Status) -> Result<()> {
        self.transition(next, 0)
    }

    /// Moves the flag to ERROR carrying `code`.
    pub fn signal_error(&self, code: u32) -> Result<()> {
        self.transition(Status::Error, code)
    }

    fn transition(&self, next: Status, code: u32) -> Result<()> {
        let status = self.word(STATUS_OFFSET);
        let mut current = self.load()?;
        loop {
            if !current.can_transition_to(next) {
                return Err(HandshakeError::IllegalTransition {
                    from: current,
                    to: next,
                });
            }
            if next == Status::Error {
                self.word(CODE_OFFSET).store(code.to_le(), Ordering::Relaxed);
            }
            match status.compare_exchange(
                (current as u32).to_le(),
                (next as u32).to_le(),
                Ordering::Release,
                Ordering::Acquire,
            ) {
                Ok(_) => return Ok(()),
                Err(raw) => {
                    let raw = u32::from_le(raw);
                    current = Status::from_u32(raw).ok_or(HandshakeError::UnknownStatus(raw))?;
                }
            }
        }
    }

    /// Polls until the status reaches `target`, backing off exponentially
    /// from 1 µs to 1 ms between polls.
    ///
    /// A peer's ERROR ends any wait for READY or DONE with
    /// [`HandshakeError::Peer`]; waiting for ERROR itself returns `Ok`.
    pub fn wait_for(&self, target: Status, timeout: Duration) -> Result<()> {
        if target == Status::Init {
            return Err(HandshakeError::InvalidTarget(target));
        }
        let start = Instant::now();
        let mut backoff = MIN_BACKOFF;
        loop {
            let current = self.load()?;
            if current == Status::Error {
                return if target == Status::Error {
                    Ok(())
                } else {
                    Err(HandshakeError::Peer(self.error_code()))
                };
            }
            if current >= target && target != Status::Error {
                return Ok(());
            }
            let elapsed = start.elapsed();
            if elapsed >= timeout {
                return Err(HandshakeError::Timeout {
                    target,
                    last: current,
                });
            }
            thread::sleep(backoff.min(timeout - elapsed));
            backoff = (backoff * 2).min(MAX_BACKOFF);
        }
    }

    pub fn detach(self) -> Result<()> {
        Ok(self.region.detach()?)
    }
}
