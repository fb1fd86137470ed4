//! Named POSIX shared-memory regions (`shm_open` + `mmap`).
//!
//! A region is created exclusively by one process and attached by any number
//! of others; every mapping of the same name aliases the same physical pages.
//! Only the creator may resize. Growth extends the backing object with
//! `ftruncate` and then remaps, in place when the kernel allows and otherwise
//! at a new address with identical contents.

use std::ffi::CString;
use std::io;
use std::os::unix::io::RawFd;
use std::ptr::NonNull;
use std::slice;

use thiserror::Error;

/// Longest accepted region name, including the leading slash.
pub const MAX_NAME_LEN: usize = 250;

/// Every region length is a multiple of this.
pub const ALIGN: usize = 8;

#[derive(Debug, Error)]
pub enum ShmError {
    #[error("invalid region name {0:?}: need a leading slash, no other slashes, at most 250 chars")]
    InvalidName(String),
    #[error("region length must be positive")]
    ZeroLength,
    #[error("region {0} already exists")]
    AlreadyExists(String),
    #[error("no such region {0}")]
    NotFound(String),
    #[error("permission denied for region {0}")]
    PermissionDenied(String),
    #[error("region {0} is attached, only its creator may resize it")]
    NotCreator(String),
    #[error("cannot grow region from {current} to {requested} bytes")]
    NotGrowth { current: usize, requested: usize },
    #[error("cannot shrink region from {current} to {requested} bytes")]
    NotShrink { current: usize, requested: usize },
    #[error("{op} failed for {name}: {source}")]
    Os {
        op: &'static str,
        name: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ShmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Creator,
    Attacher,
}

/// A mapped, named shared-memory region.
///
/// The mapping is released on drop. The name is only removed by [`unlink`].
#[derive(Debug)]
pub struct ShmRegion {
    name: String,
    fd: RawFd,
    ptr: NonNull<u8>,
    len: usize,
    role: Role,
}

// The handle owns its mapping; cross-thread use still needs external
// synchronization for the contents.
unsafe impl Send for ShmRegion {}

fn validate_name(name: &str) -> Result<CString> {
    let valid = name.len() > 1
        && name.len() <= MAX_NAME_LEN
        && name.starts_with('/')
        && !name[1..].contains('/')
        && !name.contains('\0');
    if !valid {
        return Err(ShmError::InvalidName(name.to_string()));
    }
    Ok(CString::new(name).expect("checked for NUL"))
}

fn round_up(len: usize) -> usize {
    len.div_ceil(ALIGN) * ALIGN
}

fn os_error(op: &'static str, name: &str) -> ShmError {
    let source = io::Error::last_os_error();
    match source.raw_os_error() {
        Some(libc::EEXIST) => ShmError::AlreadyExists(name.to_string()),
        Some(libc::ENOENT) => ShmError::NotFound(name.to_string()),
        Some(libc::EACCES) | Some(libc::EPERM) => ShmError::PermissionDenied(name.to_string()),
        _ => ShmError::Os {
            op,
            name: name.to_string(),
            source,
        },
    }
}

unsafe fn map(fd: RawFd, len: usize, name: &str) -> Result<NonNull<u8>> {
    let ptr = libc::mmap(
        std::ptr::null_mut(),
        len,
        libc::PROT_READ | libc::PROT_WRITE,
        libc::MAP_SHARED,
        fd,
        0,
    );
    if ptr == libc::MAP_FAILED {
        return Err(os_error("mmap", name));
    }
    Ok(NonNull::new(ptr.cast()).expect("mmap returned null"))
}

impl ShmRegion {
    /// Creates a new zero-filled region. Fails if the name is taken.
    ///
    /// The length is rounded up to a multiple of 8 bytes.
    pub fn create(name: &str, byte_len: usize) -> Result<Self> {
        let c_name = validate_name(name)?;
        if byte_len == 0 {
            return Err(ShmError::ZeroLength);
        }
        let len = round_up(byte_len);
        unsafe {
            let fd = libc::shm_open(
                c_name.as_ptr(),
                libc::O_CREAT | libc::O_EXCL | libc::O_RDWR,
                0o600 as libc::mode_t,
            );
            if fd < 0 {
                return Err(os_error("shm_open", name));
            }
            if libc::ftruncate(fd, len as libc::off_t) != 0 {
                let err = os_error("ftruncate", name);
                libc::close(fd);
                libc::shm_unlink(c_name.as_ptr());
                return Err(err);
            }
            let ptr = match map(fd, len, name) {
                Ok(ptr) => ptr,
                Err(err) => {
                    libc::close(fd);
                    libc::shm_unlink(c_name.as_ptr());
                    return Err(err);
                }
            };
            Ok(Self {
                name: name.to_string(),
                fd,
                ptr,
                len,
                role: Role::Creator,
            })
        }
    }

    /// Maps an existing region at its current length.
    pub fn attach(name: &str) -> Result<Self> {
        let c_name = validate_name(name)?;
        unsafe {
            let fd = libc::shm_open(c_name.as_ptr(), libc::O_RDWR, 0);
            if fd < 0 {
                return Err(os_error("shm_open", name));
            }
            let mut stat: libc::stat = std::mem::zeroed();
            if libc::fstat(fd, &mut stat) != 0 {
                let err = os_error("fstat", name);
                libc::close(fd);
                return Err(err);
            }
            let len = stat.st_size as usize;
            if len == 0 {
                // Creator has not sized it yet.
                libc::close(fd);
                return Err(ShmError::NotFound(name.to_string()));
            }
            let ptr = match map(fd, len, name) {
                Ok(ptr) => ptr,
                Err(err) => {
                    libc::close(fd);
                    return Err(err);
                }
            };
            Ok(Self {
                name: name.to_string(),
                fd,
                ptr,
                len,
                role: Role::Attacher,
            })
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn as_ptr(&self) -> *mut u8 {
        self.ptr.as_ptr()
    }

    pub fn as_bytes(&self) -> &[u8] {
        unsafe { slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        unsafe { slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }

    /// The region as 64-bit words. Mappings are page aligned and lengths
    /// are multiples of 8, so this covers every byte.
    pub fn as_u64s(&self) -> &[u64] {
        unsafe { slice::from_raw_parts(self.ptr.as_ptr().cast(), self.len / ALIGN) }
    }

    pub fn as_u64s_mut(&mut self) -> &mut [u64] {
        unsafe { slice::from_raw_parts_mut(self.ptr.as_ptr().cast(), self.len / ALIGN) }
    }

    pub fn as_f64s(&self) -> &[f64] {
        unsafe { slice::from_raw_parts(self.ptr.as_ptr().cast(), self.len / ALIGN) }
    }

    pub fn as_f64s_mut(&mut self) -> &mut [f64] {
        unsafe { slice::from_raw_parts_mut(self.ptr.as_ptr().cast(), self.len / ALIGN) }
    }

    /// Extends the region. Existing bytes keep their offsets; the new tail
    /// reads as zero. The mapping may move.
    pub fn grow(&mut self, new_byte_len: usize) -> Result<()> {
        self.require_creator()?;
        let new_len = round_up(new_byte_len);
        if new_byte_len <= self.len {
            return Err(ShmError::NotGrowth {
                current: self.len,
                requested: new_byte_len,
            });
        }
        unsafe {
            if libc::ftruncate(self.fd, new_len as libc::off_t) != 0 {
                return Err(os_error("ftruncate", &self.name));
            }
        }
        self.remap(new_len)
    }

    /// Truncates the region to `new_byte_len` (rounded up to 8), dropping the
    /// tail. Attachers must re-attach before touching bytes past the new end.
    pub fn shrink(&mut self, new_byte_len: usize) -> Result<()> {
        self.require_creator()?;
        let new_len = round_up(new_byte_len);
        if new_byte_len == 0 || new_len >= self.len {
            return Err(ShmError::NotShrink {
                current: self.len,
                requested: new_byte_len,
            });
        }
        // Remap first so no live mapping extends past the object's end.
        self.remap(new_len)?;
        unsafe {
            if libc::ftruncate(self.fd, new_len as libc::off_t) != 0 {
                return Err(os_error("ftruncate", &self.name));
            }
        }
        Ok(())
    }

    #[cfg(target_os = "linux")]
    fn remap(&mut self, new_len: usize) -> Result<()> {
        let ptr = unsafe {
            libc::mremap(
                self.ptr.as_ptr().cast(),
                self.len,
                new_len,
                libc::MREMAP_MAYMOVE,
            )
        };
        if ptr == libc::MAP_FAILED {
            return Err(os_error("mremap", &self.name));
        }
        self.ptr = NonNull::new(ptr.cast()).expect("mremap returned null");
        self.len = new_len;
        Ok(())
    }

    #[cfg(not(target_os = "linux"))]
    fn remap(&mut self, new_len: usize) -> Result<()> {
        unsafe {
            let ptr = map(self.fd, new_len, &self.name)?;
            libc::munmap(self.ptr.as_ptr().cast(), self.len);
            self.ptr = ptr;
        }
        self.len = new_len;
        Ok(())
    }

    fn require_creator(&self) -> Result<()> {
        match self.role {
            Role::Creator => Ok(()),
            Role::Attacher => Err(ShmError::NotCreator(self.name.clone())),
        }
    }

    /// Unmaps the region. The name stays until [`unlink`].
    pub fn detach(mut self) -> Result<()> {
        unsafe { self.release() }
    }

    unsafe fn release(&mut self) -> Result<()> {
        if self.fd < 0 {
            return Ok(());
        }
        let unmapped = libc::munmap(self.ptr.as_ptr().cast(), self.len) == 0;
        let err = (!unmapped).then(|| os_error("munmap", &self.name));
        libc::close(self.fd);
        self.fd = -1;
        err.map_or(Ok(()), Err)
    }
}

impl Drop for ShmRegion {
    fn drop(&mut self) {
        unsafe {
            let _ = self.release();
        }
    }
}

/// Removes a region name. Existing mappings stay valid until they detach.
pub fn unlink(name: &str) -> Result<()> {
    let c_name = validate_name(name)?;
    if unsafe { libc::shm_unlink(c_name.as_ptr()) } != 0 {
        return Err(os_error("shm_unlink", name));
    }
    Ok(())
}

/// Whether a region with this name currently exists.
pub fn exists(name: &str) -> bool {
    let Ok(c_name) = validate_name(name) else {
        return false;
    };
    unsafe {
        let fd = libc::shm_open(c_name.as_ptr(), libc::O_RDONLY, 0);
        if fd < 0 {
            return false;
        }
        libc::close(fd);
    }
    true
}

/// Region name for a per-partition array: `/tshm-<session>-p<k>-<role>`.
pub fn partition_region_name(session: &str, part: usize, role: &str) -> String {
    format!("/tshm-{session}-p{part}-{role}")
}

/// Region name for a per-session object such as `flag` or `result`.
pub fn session_region_name(session: &str, role: &str) -> String {
    format!("/tshm-{session}-{role}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn unique(tag: &str) -> String {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static NEXT: AtomicUsize = AtomicUsize::new(0);
        format!(
            "/tshm-ut{}-{}-{tag}",
            std::process::id(),
            NEXT.fetch_add(1, Ordering::Relaxed)
        )
    }

    struct Cleanup(String);
    impl Drop for Cleanup {
        fn drop(&mut self) {
            let _ = unlink(&self.0);
        }
    }

    fn checksum(bytes: &[u8]) -> u64 {
        bytes.iter().enumerate().fold(0u64, |acc, (i, &b)| {
            acc.wrapping_mul(1_099_511_628_211).wrapping_add((b as u64) ^ i as u64)
        })
    }

    #[test]
    fn create_zero_fills() {
        let name = unique("vals");
        let _g = Cleanup(name.clone());
        let r = ShmRegion::create(&name, 24).unwrap();
        assert_eq!(r.len(), 24);
        assert!(r.as_bytes().iter().all(|&b| b == 0));
        assert_eq!(r.role(), Role::Creator);
    }

    #[test]
    fn create_is_exclusive() {
        let name = unique("dup");
        let _g = Cleanup(name.clone());
        let _r = ShmRegion::create(&name, 8).unwrap();
        assert!(matches!(
            ShmRegion::create(&name, 8),
            Err(ShmError::AlreadyExists(_))
        ));
    }

    #[test]
    fn length_rounds_to_eight() {
        let name = unique("odd");
        let _g = Cleanup(name.clone());
        let r = ShmRegion::create(&name, 13).unwrap();
        assert_eq!(r.len(), 16);
    }

    #[test]
    fn rejects_bad_names_and_lengths() {
        assert!(matches!(ShmRegion::create("noslash", 8), Err(ShmError::InvalidName(_))));
        assert!(matches!(ShmRegion::create("/a/b", 8), Err(ShmError::InvalidName(_))));
        assert!(matches!(ShmRegion::create("/", 8), Err(ShmError::InvalidName(_))));
        let long = format!("/{}", "x".repeat(MAX_NAME_LEN));
        assert!(matches!(ShmRegion::create(&long, 8), Err(ShmError::InvalidName(_))));
        assert!(matches!(
            ShmRegion::create(&unique("zero"), 0),
            Err(ShmError::ZeroLength)
        ));
    }

    #[test]
    fn writes_are_visible_both_ways() {
        let name = unique("share");
        let _g = Cleanup(name.clone());
        let mut creator = ShmRegion::create(&name, 16).unwrap();
        creator.as_bytes_mut()[..3].copy_from_slice(&[1, 2, 3]);
        let mut attacher = ShmRegion::attach(&name).unwrap();
        assert_eq!(attacher.role(), Role::Attacher);
        assert_eq!(&attacher.as_bytes()[..3], &[1, 2, 3]);
        attacher.as_bytes_mut()[5] = 0xFF;
        assert_eq!(creator.as_bytes()[5], 0xFF);
    }

    #[test]
    fn attach_missing_fails() {
        assert!(matches!(
            ShmRegion::attach(&unique("absent")),
            Err(ShmError::NotFound(_))
        ));
    }

    #[test]
    fn grow_preserves_prefix_and_zero_fills_tail() {
        let name = unique("grow");
        let _g = Cleanup(name.clone());
        let mut r = ShmRegion::create(&name, 16).unwrap();
        let pattern: Vec<u8> = (1..=16).collect();
        r.as_bytes_mut().copy_from_slice(&pattern);
        r.grow(64).unwrap();
        assert_eq!(r.len(), 64);
        assert_eq!(&r.as_bytes()[..16], pattern.as_slice());
        assert!(r.as_bytes()[16..].iter().all(|&b| b == 0));
        assert!(matches!(r.grow(32), Err(ShmError::NotGrowth { .. })));
        assert!(matches!(r.grow(64), Err(ShmError::NotGrowth { .. })));
    }

    #[test]
    fn doubling_keeps_checksum_stable() {
        let name = unique("double");
        let _g = Cleanup(name.clone());
        let mut r = ShmRegion::create(&name, 8).unwrap();
        r.as_bytes_mut().copy_from_slice(b"tensors!");
        let mut expected = checksum(r.as_bytes());
        let mut grows = 0;
        while r.len() < 8192 {
            let old = r.len();
            r.grow(old * 2).unwrap();
            grows += 1;
            assert_eq!(checksum(&r.as_bytes()[..old]), expected);
            // Fill the new half so the next grow has more to preserve.
            for (i, b) in r.as_bytes_mut()[old..].iter_mut().enumerate() {
                *b = (i * 31 + grows) as u8;
            }
            expected = checksum(r.as_bytes());
        }
        assert_eq!(grows, 10);
    }

    #[test]
    fn attacher_cannot_resize() {
        let name = unique("ro");
        let _g = Cleanup(name.clone());
        let _c = ShmRegion::create(&name, 8).unwrap();
        let mut a = ShmRegion::attach(&name).unwrap();
        assert!(matches!(a.grow(16), Err(ShmError::NotCreator(_))));
        assert!(matches!(a.shrink(8), Err(ShmError::NotCreator(_))));
    }

    #[test]
    fn shrink_truncates() {
        let name = unique("shrink");
        let _g = Cleanup(name.clone());
        let mut r = ShmRegion::create(&name, 64).unwrap();
        r.as_bytes_mut()[..8].copy_from_slice(&[9; 8]);
        r.shrink(20).unwrap();
        assert_eq!(r.len(), 24);
        assert_eq!(&r.as_bytes()[..8], &[9; 8]);
        assert_eq!(ShmRegion::attach(&name).unwrap().len(), 24);
        assert!(matches!(r.shrink(24), Err(ShmError::NotShrink { .. })));
        assert!(matches!(r.shrink(0), Err(ShmError::NotShrink { .. })));
    }

    #[test]
    fn lifecycle() {
        let name = unique("life");
        let r = ShmRegion::create(&name, 8).unwrap();
        r.detach().unwrap();
        assert!(exists(&name));
        unlink(&name).unwrap();
        assert!(!exists(&name));
        assert!(matches!(ShmRegion::attach(&name), Err(ShmError::NotFound(_))));
        assert!(matches!(unlink(&name), Err(ShmError::NotFound(_))));
    }

    #[test]
    fn attacher_survives_unlink() {
        let name = unique("persist");
        let mut c = ShmRegion::create(&name, 8).unwrap();
        c.as_u64s_mut()[0] = 0xDEAD_BEEF;
        let a = ShmRegion::attach(&name).unwrap();
        unlink(&name).unwrap();
        c.detach().unwrap();
        assert_eq!(a.as_u64s()[0], 0xDEAD_BEEF);
        a.detach().unwrap();
        assert!(!exists(&name));
    }

    #[test]
    fn attach_cost_does_not_scale_with_size() {
        let small = unique("small");
        let large = unique("large");
        let _g1 = Cleanup(small.clone());
        let _g2 = Cleanup(large.clone());
        let _s = ShmRegion::create(&small, 1 << 20).unwrap();
        let _l = ShmRegion::create(&large, 256 << 20).unwrap();
        let time = |name: &str| {
            let mut best = f64::INFINITY;
            for _ in 0..20 {
                let t = Instant::now();
                let r = ShmRegion::attach(name).unwrap();
                best = best.min(t.elapsed().as_secs_f64());
                drop(r);
            }
            best
        };
        let (ts, tl) = (time(&small), time(&large));
        assert!(tl < 10.0 * ts.max(1e-6), "small {ts:e}s large {tl:e}s");
    }

    #[test]
    fn names_follow_pattern() {
        assert_eq!(partition_region_name("s1", 3, "coords"), "/tshm-s1-p3-coords");
        assert_eq!(session_region_name("s1", "flag"), "/tshm-s1-flag");
    }
}
