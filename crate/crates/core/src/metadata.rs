//! The session metadata file.
//!
//! Line-oriented UTF-8 with LF endings. Header lines are `key=value`; arrays
//! are comma-separated. Each partition block starts with `[partition k]`.
//! Blank lines and lines starting with `#` are ignored on read.
//!
//! ```text
//! version=1
//! session=demo
//! order=3
//! dims=8,6,7
//! nnz=2
//! parts=8
//! grid=2,2,2
//! index_width_bits=64
//! value_width_bits=64
//! endianness=LE
//! index_base=0
//! flag_region=/tshm-demo-flag
//! result_region=/tshm-demo-result
//! [partition 0]
//! coords_region=/tshm-demo-p0-coords
//! values_region=/tshm-demo-p0-vals
//! lower=0,0,0
//! upper=3,2,2
//! count=1
//! capacity=1
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::partition::BoundingBox;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing key {0}")]
    Missing(&'static str),
    #[error("inconsistent metadata: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionEntry {
    pub coords_region: String,
    pub values_region: String,
    pub bounds: BoundingBox,
    pub count: usize,
    /// Allocated element slots; region lengths follow from this.
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionMetadata {
    pub version: u32,
    pub session: String,
    pub dims: Vec<usize>,
    pub nnz: usize,
    pub grid: Vec<usize>,
    pub index_width_bits: u32,
    pub value_width_bits: u32,
    pub endianness: String,
    pub index_base: u32,
    pub flag_region: String,
    pub result_region: String,
    pub partitions: Vec<PartitionEntry>,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_scalar<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, MetadataError> {
    value.parse().map_err(|_| MetadataError::Syntax {
        line,
        message: format!("bad value {value:?} for {key}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, MetadataError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_scalar(line, key, v.trim())).collect()
}

#[derive(Default)]
struct PartialEntry {
    coords_region: Option<String>,
    values_region: Option<String>,
    lower: Option<Vec<u64>>,
    upper: Option<Vec<u64>>,
    count: Option<usize>,
    capacity: Option<usize>,
}

impl PartialEntry {
    fn finish(self) -> Result<PartitionEntry, MetadataError> {
        Ok(PartitionEntry {
            coords_region: self.coords_region.ok_or(MetadataError::Missing("coords_region"))?,
            values_region: self.values_region.ok_or(MetadataError::Missing("values_region"))?,
            bounds: BoundingBox {
                lower: self.lower.ok_or(MetadataError::Missing("lower"))?,
                upper: self.upper.ok_or(MetadataError::Missing("upper"))?,
            },
            count: self.count.ok_or(MetadataError::Missing("count"))?,
            capacity: self.capacity.ok_or(MetadataError::Missing("capacity"))?,
        })
    }
}

impl SessionMetadata {
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn parts(&self) -> usize {
        self.partitions.len()
    }

    /// Serializes to the on-disk text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version={}", self.version);
        let _ = writeln!(s, "session={}", self.session);
        let _ = writeln!(s, "order={}", self.order());
        let _ = writeln!(s, "dims={}", join(&self.dims));
        let _ = writeln!(s, "nnz={}", self.nnz);
        let _ = writeln!(s, "parts={}", self.parts());
        let _ = writeln!(s, "grid={}", join(&self.grid));
        let _ = writeln!(s, "index_width_bits={}", self.index_width_bits);
        let _ = writeln!(s, "value_width_bits={}", self.value_width_bits);
        let _ = writeln!(s, "endianness={}", self.endianness);
        let _ = writeln!(s, "index_base={}", self.index_base);
        let _ = writeln!(s, "flag_region={}", self.flag_region);
        let _ = writeln!(s, "result_region={}", self.result_region);
        for (k, p) in self.partitions.iter().enumerate() {
            let _ = writeln!(s, "[partition {k}]");
            let _ = writeln!(s, "coords_region={}", p.coords_region);
            let _ = writeln!(s, "values_region={}", p.values_region);
            let _ = writeln!(s, "lower={}", join(&p.bounds.lower));
            let _ = writeln!(s, "upper={}", join(&p.bounds.upper));
            let _ = writeln!(s, "count={}", p.count);
            let _ = writeln!(s, "capacity={}", p.capacity);
        }
        s
    }

    /// Parses and cross-checks the text form. Width, endianness and version
    /// values are kept as written; judging them is the reader's job.
    pub fn parse(text: &str) -> Result<Self, MetadataError> {
        let mut version = None;
        let mut session = None;
        let mut order: Option<usize> = None;
        let mut dims = None;
        let mut nnz = None;
        let mut parts: Option<usize> = None;
        let mut grid = None;
        let mut index_width_bits = None;
        let mut value_width_bits = None;
        let mut endianness = None;
        let mut index_base = None;
        let mut flag_region = None;
        let mut result_region = None;
        let mut partitions = Vec::new();
        let mut current: Option<PartialEntry> = None;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(header) = trimmed.strip_prefix("[partition ").and_then(|r| r.strip_suffix(']')) {
                let k: usize = parse_scalar(line, "partition", header.trim())?;
                if k != partitions.len() + usize::from(current.is_some()) {
                    return Err(MetadataError::Syntax {
                        line,
                        message: format!("partition {k} out of sequence"),
                    });
                }
                if let Some(done) = current.take() {
                    partitions.push(done.finish()?);
                }
                current = Some(PartialEntry::default());
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| MetadataError::Syntax {
                line,
                message: "expected key=value".to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(entry) = current.as_mut() {
                match key {
                    "coords_region" => entry.coords_region = Some(value.to_string()),
                    "values_region" => entry.values_region = Some(value.to_string()),
                    "lower" => entry.lower = Some(parse_list(line, key, value)?),
                    "upper" => entry.upper = Some(parse_list(line, key, value)?),
                    "count" => entry.count = Some(parse_scalar(line, key, value)?),
                    "capacity" => entry.capacity = Some(parse_scalar(line, key, value)?),
                    _ => {}
                }
                continue;
            }
            match key {
                "version" => version = Some(parse_scalar(line, key, value)?),
                "session" => session = Some(value.to_string()),
                "order" => order = Some(parse_scalar(line, key, value)?),
                "dims" => dims = Some(parse_list(line, key, value)?),
                "nnz" => nnz = Some(parse_scalar(line, key, value)?),
                "parts" => parts = Some(parse_scalar(line, key, value)?),
                "grid" => grid = Some(parse_list(line, key, value)?),
                "index_width_bits" => index_width_bits = Some(parse_scalar(line, key, value)?),
                "value_width_bits" => value_width_bits = Some(parse_scalar(line, key, value)?),
                "endianness" => endianness = Some(value.to_string()),
                "index_base" => index_base = Some(parse_scalar(line, key, value)?),
                "flag_region" => flag_region = Some(value.to_string()),
                "result_region" => result_region = Some(value.to_string()),
                _ => {}
            }
        }
        if let Some(done) = current.take() {
            partitions.push(done.finish()?);
        }

        let meta = Self {
            version: version.ok_or(MetadataError::Missing("version"))?,
            session: session.ok_or(MetadataError::Missing("session"))?,
            dims: dims.ok_or(MetadataError::Missing("dims"))?,
            nnz: nnz.ok_or(MetadataError::Missing("nnz"))?,
            grid: grid.ok_or(MetadataError::Missing("grid"))?,
            index_width_bits: index_width_bits.ok_or(MetadataError::Missing("index_width_bits"))?,
            value_width_bits: value_width_bits.ok_or(MetadataError::Missing("value_width_bits"))?,
            endianness: endianness.ok_or(MetadataError::Missing("endianness"))?,
            index_base: index_base.ok_or(MetadataError::Missing("index_base"))?,
            flag_region: flag_region.ok_or(MetadataError::Missing("flag_region"))?,
            result_region: result_region.ok_or(MetadataError::Missing("result_region"))?,
            partitions,
        };
        let order = order.ok_or(MetadataError::Missing("order"))?;
        let parts = parts.ok_or(MetadataError::Missing("parts"))?;
        meta.check(order, parts)?;
        Ok(meta)
    }

    fn check(&self, order: usize, parts: usize) -> Result<(), MetadataError> {
        let bad = |msg: String| Err(MetadataError::Inconsistent(msg));
        if order != self.dims.len() || self.grid.len() != order {
            return bad(format!("order {order} vs dims {:?} and grid {:?}", self.dims, self.grid));
        }
        if parts != self.partitions.len() || self.grid.iter().product::<usize>() != parts {
            return bad(format!(
                "parts {parts}, grid {:?}, {} partition blocks",
                self.grid,
                self.partitions.len()
            ));
        }
        for (k, p) in self.partitions.iter().enumerate() {
            if p.bounds.lower.len() != order || p.bounds.upper.len() != order {
                return bad(format!("partition {k} bounds have the wrong arity"));
            }
        }
        let total: usize = self.partitions.iter().map(|p| p.count).sum();
        if total != self.nnz {
            return bad(format!("partition counts sum to {total}, nnz is {}", self.nnz));
        }
        Ok(())
    }

    /// Writes the file through a temporary sibling and a rename, so readers
    /// never see a partial file.
    pub fn write_file(&self, path: &Path) -> io::Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, self.to_text())?;
        fs::rename(&tmp, path)
    }

    pub fn read_file(path: &Path) -> Result<Self, MetadataError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SessionMetadata {
        SessionMetadata {
            version: 1,
            session: "demo".into(),
            dims: vec![8, 6, 7],
            nnz: 2,
            grid: vec![2, 1, 1],
            index_width_bits: 64,
            value_width_bits: 64,
            endianness: "LE".into(),
            index_base: 0,
            flag_region: "/tshm-demo-flag".into(),
            result_region: "/tshm-demo-result".into(),
            partitions: vec![
                PartitionEntry {
                    coords_region: "/tshm-demo-p0-coords".into(),
                    values_region: "/tshm-demo-p0-vals".into(),
                    bounds: BoundingBox {
                        lower: vec![0, 0, 0],
                        upper: vec![3, 5, 6],
                    },
                    count: 1,
                    capacity: 1,
                },
                PartitionEntry {
                    coords_region: "/tshm-demo-p1-coords".into(),
                    values_region: "/tshm-demo-p1-vals".into(),
                    bounds: BoundingBox {
                        lower: vec![4, 0, 0],
                        upper: vec![7, 5, 6],
                    },
                    count: 1,
                    capacity: 1,
                },
            ],
        }
    }

    #[test]
    fn exact_text_form() {
        let expected = "version=1\nsession=demo\norder=3\ndims=8,6,7\nnnz=2\nparts=2\ngrid=2,1,1\n\
index_width_bits=64\nvalue_width_bits=64\nendianness=LE\nindex_base=0\n\
flag_region=/tshm-demo-flag\nresult_region=/tshm-demo-result\n\
[partition 0]\ncoords_region=/tshm-demo-p0-coords\nvalues_region=/tshm-demo-p0-vals\n\
lower=0,0,0\nupper=3,5,6\ncount=1\ncapacity=1\n\
[partition 1]\ncoords_region=/tshm-demo-p1-coords\nvalues_region=/tshm-demo-p1-vals\n\
lower=4,0,0\nupper=7,5,6\ncount=1\ncapacity=1\n";
        assert_eq!(sample().to_text(), expected);
    }

    #[test]
    fn round_trips_and_tolerates_comments() {
        let meta = sample();
        assert_eq!(SessionMetadata::parse(&meta.to_text()).unwrap(), meta);
        let commented = format!("# written by a test\n\n{}", meta.to_text());
        assert_eq!(SessionMetadata::parse(&commented).unwrap(), meta);
    }

    #[test]
    fn keeps_foreign_widths_for_the_reader_to_judge() {
        let text = sample().to_text().replace("index_width_bits=64", "index_width_bits=32");
        assert_eq!(SessionMetadata::parse(&text).unwrap().index_width_bits, 32);
    }

    #[test]
    fn rejects_inconsistent_counts() {
        let text = sample().to_text().replace("nnz=2", "nnz=3");
        assert!(matches!(SessionMetadata::parse(&text), Err(MetadataError::Inconsistent(_))));
    }

    #[test]
    fn rejects_missing_keys_and_bad_lines() {
        let text = sample().to_text().replace("flag_region=/tshm-demo-flag\n", "");
        assert!(matches!(SessionMetadata::parse(&text), Err(MetadataError::Missing("flag_region"))));
        let text = sample().to_text().replace("nnz=2", "nnz");
        assert!(matches!(SessionMetadata::parse(&text), Err(MetadataError::Syntax { line: 5, .. })));
        let text = sample().to_text().replace("[partition 1]", "[partition 3]");
        assert!(matches!(SessionMetadata::parse(&text), Err(MetadataError::Syntax { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("session.meta");
        sample().write_file(&path).unwrap();
        assert_eq!(SessionMetadata::read_file(&path).unwrap(), sample());
        assert!(!dir.path().join("session.meta.tmp").exists());
    }
}
