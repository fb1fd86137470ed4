//! COO sparse tensors and `.tns` text I/O.
//!
//! Coordinates are stored element-major: the `order` indices of element `i`
//! live at `coords[i * order..(i + 1) * order]`, so an element's tuple is never
//! split. Indices are 0-based in memory and 1-based in `.tns` files.

use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TnsError {
    #[error("line {line}: expected {expected} tokens, found {found}")]
    TokenCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse {token:?} as a number")]
    BadToken { line: usize, token: String },
    #[error("line {line}: coordinate {value} is below 1 (files are 1-based)")]
    CoordinateBelowOne { line: usize, value: i64 },
    #[error("no data lines in input")]
    Empty,
    #[error("line {line}: coordinate {value} in mode {mode} exceeds dimension {dim}")]
    ExceedsDims {
        line: usize,
        mode: usize,
        value: u64,
        dim: usize,
    },
    #[error("dims override has {found} modes but data has {expected}")]
    DimsOverride { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("tensor order must be at least 1")]
    ZeroOrder,
    #[error("mode {0} has size 0")]
    EmptyMode(usize),
    #[error("coords length {coords} is not order * nnz = {order} * {nnz}")]
    CoordsLength {
        coords: usize,
        order: usize,
        nnz: usize,
    },
    #[error("element {element} coordinate {value} out of bounds for mode {mode} of size {dim}")]
    OutOfBounds {
        element: usize,
        mode: usize,
        value: u64,
        dim: usize,
    },
    #[error("coordinate has {found} modes, tensor has {expected}")]
    Arity { expected: usize, found: usize },
}

/// A sparse tensor in coordinate format.
#[derive(Debug, Clone, PartialEq)]
pub struct CooTensor {
    dims: Vec<usize>,
    coords: Vec<u64>,
    values: Vec<f64>,
}

impl CooTensor {
    /// Builds a tensor, checking every invariant.
    pub fn new(dims: Vec<usize>, coords: Vec<u64>, values: Vec<f64>) -> Result<Self, TensorError> {
        let order = dims.len();
        if order == 0 {
            return Err(TensorError::ZeroOrder);
        }
        if let Some(m) = dims.iter().position(|&n| n == 0) {
            return Err(TensorError::EmptyMode(m));
        }
        if coords.len() != order * values.len() {
            return Err(TensorError::CoordsLength {
                coords: coords.len(),
                order,
                nnz: values.len(),
            });
        }
        for (element, tuple) in coords.chunks_exact(order).enumerate() {
            for (mode, (&value, &dim)) in tuple.iter().zip(&dims).enumerate() {
                if value >= dim as u64 {
                    return Err(TensorError::OutOfBounds {
                        element,
                        mode,
                        value,
                        dim,
                    });
                }
            }
        }
        Ok(Self {
            dims,
            coords,
            values,
        })
    }

    /// An empty tensor with the given shape.
    pub fn empty(dims: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(dims, Vec::new(), Vec::new())
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn coords(&self) -> &[u64] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coordinates of element `i`.
    pub fn coord(&self, i: usize) -> &[u64] {
        let d = self.order();
        &self.coords[i * d..(i + 1) * d]
    }

    /// Iterates `(coordinates, value)` pairs in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (&[u64], f64)> + '_ {
        self.coords
            .chunks_exact(self.order())
            .zip(self.values.iter().copied())
    }

    /// A single-chunk view for the compute kernels.
    pub fn view(&self) -> crate::cp::TensorView<'_> {
        crate::cp::TensorView::new(&self.dims, vec![(self.coords.as_slice(), self.values.as_slice())])
    }

    pub fn check_coord(&self, coord: &[u64]) -> Result<(), TensorError> {
        check_coord(&self.dims, coord)
    }

    /// Value at `coord` found by scanning every element; `0.0` when absent.
    ///
    /// This is the O(nnz) lookup plain COO storage allows. Duplicates resolve
    /// to the first match.
    pub fn dense_lookup(&self, coord: &[u64]) -> Result<f64, TensorError> {
        self.check_coord(coord)?;
        Ok(self
            .iter()
            .find(|(c, _)| *c == coord)
            .map_or(0.0, |(_, v)| v))
    }

    /// Parses `.tns` text. Mode sizes are inferred from the largest
    /// coordinate in each mode unless `dims` is given.
    pub fn parse_tns<R: BufRead>(reader: R, dims: Option<&[usize]>) -> Result<Self, TnsError> {
        let mut order: Option<usize> = None;
        let mut coords = Vec::new();
        let mut values = Vec::new();
        let mut max_seen: Vec<u64> = Vec::new();

        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = trimmed.split_whitespace().collect();
            let d = match order {
                Some(d) => d,
                None => {
                    if tokens.len() < 2 {
                        return Err(TnsError::TokenCount {
                            line: lineno,
                            expected: 2,
                            found: tokens.len(),
                        });
                    }
                    let d = tokens.len() - 1;
                    if let Some(dims) = dims {
                        if dims.len() != d {
                            return Err(TnsError::DimsOverride {
                                expected: d,
                                found: dims.len(),
                            });
                        }
                    }
                    order = Some(d);
                    d
                }
            };
            if tokens.len() != d + 1 {
                return Err(TnsError::TokenCount {
                    line: lineno,
                    expected: d + 1,
                    found: tokens.len(),
                });
            }
            if max_seen.is_empty() {
                max_seen = vec![0; d];
            }
            for (mode, tok) in tokens[..d].iter().enumerate() {
                let value: i64 = tok.parse().map_err(|_| TnsError::BadToken {
                    line: lineno,
                    token: (*tok).to_string(),
                })?;
                if value < 1 {
                    return Err(TnsError::CoordinateBelowOne {
                        line: lineno,
                        value,
                    });
                }
                let value = value as u64;
                if let Some(dims) = dims {
                    if value > dims[mode] as u64 {
                        return Err(TnsError::ExceedsDims {
                            line: lineno,
                            mode,
                            value,
                            dim: dims[mode],
                        });
                    }
                }
                max_seen[mode] = max_seen[mode].max(value);
                coords.push(value - 1);
            }
            let value: f64 = tokens[d].parse().map_err(|_| TnsError::BadToken {
                line: lineno,
                token: tokens[d].to_string(),
            })?;
            values.push(value);
        }

        let dims = match dims {
            Some(dims) => dims.to_vec(),
            None if order.is_some() => max_seen.iter().map(|&m| m as usize).collect(),
            None => return Err(TnsError::Empty),
        };
        Ok(Self::new(dims, coords, values)?)
    }

    /// Writes one `.tns` line per element, 1-based.
    ///
    /// Values use Rust's shortest round-trip float formatting, so parsing the
    /// output reproduces them bit for bit.
    pub fn emit_tns<W: Write>(&self, mut writer: W) -> io::Result<()> {
        let mut line = String::new();
        for (coord, value) in self.iter() {
            line.clear();
            for c in coord {
                line.push_str(&(c + 1).to_string());
                line.push(' ');
            }
            line.push_str(&format!("{value:?}"));
            line.push('\n');
            writer.write_all(line.as_bytes())?;
        }
        writer.flush()
    }
}

pub(crate) fn check_coord(dims: &[usize], coord: &[u64]) -> Result<(), TensorError> {
    if coord.len() != dims.len() {
        return Err(TensorError::Arity {
            expected: dims.len(),
            found: coord.len(),
        });
    }
    for (mode, (&value, &dim)) in coord.iter().zip(dims).enumerate() {
        if value >= dim as u64 {
            return Err(TensorError::OutOfBounds {
                element: 0,
                mode,
                value,
                dim,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn parse(text: &str) -> Result<CooTensor, TnsError> {
        CooTensor::parse_tns(text.as_bytes(), None)
    }

    fn emit(t: &CooTensor) -> String {
        let mut out = Vec::new();
        t.emit_tns(&mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn parses_two_elements() {
        let t = parse("1 1 1 2.0\n4 3 3 5.0\n").unwrap();
        assert_eq!(t.order(), 3);
        assert_eq!(t.nnz(), 2);
        assert_eq!(t.dims(), &[4, 3, 3]);
        assert_eq!(t.coords(), &[0, 0, 0, 3, 2, 2]);
        assert_eq!(t.values(), &[2.0, 5.0]);
    }

    #[test]
    fn infers_chicago_crime_shape() {
        let text = "# chicago-crime shaped\n1 1 1 1 1.0\n6186 2 3 4 1.0\n10 24 77 32 3.0\n";
        let t = parse(text).unwrap();
        assert_eq!(t.dims(), &[6186, 24, 77, 32]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse("2 2 0.5\n1 1 1 1.0\n"),
            Err(TnsError::TokenCount { line: 2, .. })
        ));
        assert!(matches!(parse("1 x 1.0\n"), Err(TnsError::BadToken { .. })));
        assert!(matches!(
            parse("0 1 1.0\n"),
            Err(TnsError::CoordinateBelowOne { value: 0, .. })
        ));
        assert!(matches!(parse("# only a comment\n\n"), Err(TnsError::Empty)));
    }

    #[test]
    fn override_rejects_out_of_range() {
        let err = CooTensor::parse_tns("3 1 1.0\n".as_bytes(), Some(&[2, 2])).unwrap_err();
        assert!(matches!(err, TnsError::ExceedsDims { mode: 0, .. }));
    }

    #[test]
    fn emits_single_element() {
        let t = CooTensor::new(vec![1], vec![0], vec![3.5]).unwrap();
        assert_eq!(emit(&t), "1 3.5\n");
    }

    #[test]
    fn empty_tensor_round_trips_with_override() {
        let t = CooTensor::empty(vec![3, 4]).unwrap();
        let text = emit(&t);
        assert!(text.is_empty());
        let back = CooTensor::parse_tns(text.as_bytes(), Some(&[3, 4])).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn round_trips_random_tensor() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let dims = vec![17, 9, 30];
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for _ in 0..1000 {
            for &n in &dims {
                coords.push(rng.gen_range(0..n as u64));
            }
            values.push(rng.gen::<f64>() * 1e3 - 500.0);
        }
        let t = CooTensor::new(dims.clone(), coords, values).unwrap();
        let back = CooTensor::parse_tns(emit(&t).as_bytes(), Some(&dims)).unwrap();
        assert_eq!(back.coords(), t.coords());
        let same_bits = back
            .values()
            .iter()
            .zip(t.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits);
    }

    #[test]
    fn dense_lookup_finds_first_match() {
        let t = parse("1 1 1 2.0\n4 3 3 5.0\n4 3 3 9.0\n").unwrap();
        assert_eq!(t.dense_lookup(&[3, 2, 2]).unwrap(), 5.0);
        assert_eq!(t.dense_lookup(&[0, 1, 0]).unwrap(), 0.0);
        assert!(t.dense_lookup(&[4, 0, 0]).is_err());
        assert!(t.dense_lookup(&[0, 0]).is_err());
    }

    #[test]
    fn constructor_checks_bounds() {
        assert_eq!(
            CooTensor::new(vec![2, 2], vec![0, 2], vec![1.0]),
            Err(TensorError::OutOfBounds {
                element: 0,
                mode: 1,
                value: 2,
                dim: 2
            })
        );
        assert_eq!(CooTensor::new(vec![], vec![], vec![]), Err(TensorError::ZeroOrder));
        assert!(CooTensor::new(vec![2], vec![0, 1], vec![1.0]).is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = CooTensor> {
        prop::collection::vec(1usize..12, 1..5).prop_flat_map(|dims| {
            let tuple: Vec<_> = dims.iter().map(|&n| 0..n as u64).collect();
            prop::collection::vec((tuple, -1e6f64..1e6), 0..60).prop_map(move |elems| {
                let mut coords = Vec::new();
                let mut values = Vec::new();
                for (c, v) in elems {
                    coords.extend(c);
                    values.push(v);
                }
                CooTensor::new(dims.clone(), coords, values).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn parse_inverts_emit(t in arb_tensor()) {
            let back = CooTensor::parse_tns(emit(&t).as_bytes(), Some(t.dims())).unwrap();
            prop_assert_eq!(back.coords(), t.coords());
            for (a, b) in back.values().iter().zip(t.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn tuples_are_contiguous_and_in_bounds(t in arb_tensor()) {
            let d = t.order();
            let reference: Vec<Vec<u64>> = (0..t.nnz())
                .map(|i| (0..d).map(|m| t.coords()[i * d + m]).collect())
                .collect();
            for (i, (coord, _)) in t.iter().enumerate() {
                prop_assert_eq!(coord, reference[i].as_slice());
                for (m, &c) in coord.iter().enumerate() {
                    prop_assert!(c < t.dims()[m] as u64);
                }
            }
        }
    }
}
