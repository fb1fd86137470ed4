//! Grid partitioning of a COO tensor into non-overlapping bounding boxes.
//!
//! A plan cuts every mode independently; the boxes are the cross product of
//! the per-mode chunks, numbered row-major over the grid. Because the boxes
//! tile the index space, every element lands in exactly one of them. Each
//! partition is given the same slot capacity (the largest box count), the
//! way a uniform block distribution of a padded dense array would.

use std::fmt;

use thiserror::Error;

use crate::coo::{check_coord, CooTensor, TensorError};
use crate::cp::TensorView;

/// Largest partition count the grid search accepts.
pub const MAX_PARTS: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("partition count must be at least 1")]
    ZeroParts,
    #[error("partition count {0} exceeds {MAX_PARTS}")]
    TooManyParts(usize),
    #[error("no grid of {parts} cells fits dims {dims:?}")]
    NoFeasibleGrid { dims: Vec<usize>, parts: usize },
    #[error("grid has {found} modes, tensor has {expected}")]
    Arity { expected: usize, found: usize },
    #[error("grid wants {chunks} chunks in mode {mode} of size {dim}")]
    GridTooFine {
        mode: usize,
        chunks: usize,
        dim: usize,
    },
    #[error("cuts for mode {mode} must be strictly increasing within (0, {dim})")]
    BadCuts { mode: usize, dim: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, PartitionError>;

/// An axis-aligned box with inclusive 0-based bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub lower: Vec<u64>,
    pub upper: Vec<u64>,
}

impl BoundingBox {
    pub fn contains(&self, coord: &[u64]) -> bool {
        coord.len() == self.lower.len()
            && coord
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&c, (&lo, &hi))| lo <= c && c <= hi)
    }

    pub fn volume(&self) -> u128 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| (hi - lo + 1) as u128)
            .product()
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(other.lower.iter().zip(&other.upper))
            .all(|((&alo, &ahi), (&blo, &bhi))| alo <= bhi && blo <= ahi)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}..={:?}", self.lower, self.upper)
    }
}

fn ordered_factorizations(n: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if slots == 1 {
        prefix.push(n);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for f in (1..=n).filter(|f| n.is_multiple_of(*f)) {
        prefix.push(f);
        ordered_factorizations(n / f, slots - 1, prefix, out);
        prefix.pop();
    }
}

fn max_box_volume(dims: &[usize], grid: &[usize]) -> u128 {
    dims.iter()
        .zip(grid)
        .map(|(&n, &g)| n.div_ceil(g) as u128)
        .product()
}

/// Picks the grid shape for `parts` cells.
///
/// Every ordered factorization of `parts` into `dims.len()` factors that fits
/// the mode sizes is scored by its largest possible box volume,
/// `prod ceil(dims[m] / grid[m])`. The lowest score wins; ties go to the
/// lexicographically smallest grid.
pub fn choose_grid(dims: &[usize], parts: usize) -> Result<Vec<usize>> {
    if parts == 0 {
        return Err(PartitionError::ZeroParts);
    }
    if parts > MAX_PARTS {
        return Err(PartitionError::TooManyParts(parts));
    }
    let mut candidates = Vec::new();
    ordered_factorizations(parts, dims.len(), &mut Vec::new(), &mut candidates);
    // Candidates arrive in lexicographic order, so the first minimum wins ties.
    candidates
        .into_iter()
        .filter(|g| g.iter().zip(dims).all(|(&g, &n)| g <= n))
        .map(|g| (max_box_volume(dims, &g), g))
        .min_by_key(|(score, _)| *score)
        .map(|(_, g)| g)
        .ok_or_else(|| PartitionError::NoFeasibleGrid {
            dims: dims.to_vec(),
            parts,
        })
}

/// Splits one mode into `chunks` pieces given its marginal histogram.
///
/// Returns `chunks - 1` cut positions; a cut at `c` starts a new chunk at
/// index `c`. Cut `j` is placed where the cumulative count is closest to
/// `(j + 1) / chunks` of the total, leftmost on ties, while leaving at least
/// one index for each later chunk.
pub fn balance_cuts(histogram: &[u64], chunks: usize) -> Vec<u64> {
    let dim = histogram.len();
    assert!(chunks >= 1 && chunks <= dim, "need 1 <= chunks <= dim");
    let mut prefix = Vec::with_capacity(dim + 1);
    prefix.push(0u64);
    for &h in histogram {
        prefix.push(prefix.last().unwrap() + h);
    }
    let total = prefix[dim] as f64;
    let mut cuts = Vec::with_capacity(chunks - 1);
    let mut prev = 0usize;
    for j in 0..chunks - 1 {
        let target = total * (j + 1) as f64 / chunks as f64;
        let last_allowed = dim - (chunks - 1 - j);
        let best = (prev + 1..=last_allowed)
            .min_by(|&a, &b| {
                let da = (prefix[a] as f64 - target).abs();
                let db = (prefix[b] as f64 - target).abs();
                da.total_cmp(&db)
            })
            .expect("non-empty candidate range");
        cuts.push(best as u64);
        prev = best;
    }
    cuts
}

/// Per-mode cuts for `grid`, each balanced on that mode's marginal counts.
pub fn choose_cuts(t: &CooTensor, grid: &[usize]) -> Result<Vec<Vec<u64>>> {
    check_grid(t.dims(), grid)?;
    let d = t.order();
    let mut histograms: Vec<Vec<u64>> = t.dims().iter().map(|&n| vec![0; n]).collect();
    for coord in t.coords().chunks_exact(d) {
        for (m, &c) in coord.iter().enumerate() {
            histograms[m][c as usize] += 1;
        }
    }
    Ok(histograms
        .iter()
        .zip(grid)
        .map(|(h, &g)| balance_cuts(h, g))
        .collect())
}

fn check_grid(dims: &[usize], grid: &[usize]) -> Result<()> {
    if grid.len() != dims.len() {
        return Err(PartitionError::Arity {
            expected: dims.len(),
            found: grid.len(),
        });
    }
    for (mode, (&g, &n)) in grid.iter().zip(dims).enumerate() {
        if g == 0 {
            return Err(PartitionError::ZeroParts);
        }
        if g > n {
            return Err(PartitionError::GridTooFine {
                mode,
                chunks: g,
                dim: n,
            });
        }
    }
    let parts: usize = grid.iter().product();
    if parts > MAX_PARTS {
        return Err(PartitionError::TooManyParts(parts));
    }
    Ok(())
}

/// A grid of boxes with the element count of each.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    dims: Vec<usize>,
    grid: Vec<usize>,
    cuts: Vec<Vec<u64>>,
    boxes: Vec<BoundingBox>,
    counts: Vec<usize>,
    capacity: usize,
}

impl PartitionPlan {
    /// Chooses a grid and balanced cuts for `parts` partitions.
    pub fn build(t: &CooTensor, parts: usize) -> Result<Self> {
        let grid = choose_grid(t.dims(), parts)?;
        Self::with_grid(t, &grid)
    }

    /// Balanced cuts over a caller-chosen grid.
    pub fn with_grid(t: &CooTensor, grid: &[usize]) -> Result<Self> {
        let cuts = choose_cuts(t, grid)?;
        Self::with_cuts(t, cuts)
    }

    /// A plan with explicit cuts; mode `m` gets `cuts[m].len() + 1` chunks.
    pub fn with_cuts(t: &CooTensor, cuts: Vec<Vec<u64>>) -> Result<Self> {
        let dims = t.dims().to_vec();
        if cuts.len() != dims.len() {
            return Err(PartitionError::Arity {
                expected: dims.len(),
                found: cuts.len(),
            });
        }
        for (mode, (c, &n)) in cuts.iter().zip(&dims).enumerate() {
            let increasing = c.windows(2).all(|w| w[0] < w[1]);
            let inside = c.iter().all(|&x| x > 0 && x < n as u64);
            if !increasing || !inside {
                return Err(PartitionError::BadCuts { mode, dim: n });
            }
        }
        let grid: Vec<usize> = cuts.iter().map(|c| c.len() + 1).collect();
        check_grid(&dims, &grid)?;
        let boxes = grid_boxes(&dims, &cuts);
        let mut plan = Self {
            counts: vec![0; boxes.len()],
            dims,
            grid,
            cuts,
            boxes,
            capacity: 0,
        };
        for coord in t.coords().chunks_exact(t.order()) {
            let k = plan.assign(coord);
            plan.counts[k] += 1;
        }
        plan.capacity = plan.counts.iter().copied().max().unwrap_or(0);
        Ok(plan)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn parts(&self) -> usize {
        self.boxes.len()
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn cuts(&self) -> &[Vec<u64>] {
        &self.cuts
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn nnz(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Uniform per-partition slot count: the largest box count.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Partition index of an in-bounds coordinate.
    pub fn assign(&self, coord: &[u64]) -> usize {
        debug_assert_eq!(coord.len(), self.dims.len());
        coord
            .iter()
            .zip(&self.cuts)
            .zip(&self.grid)
            .fold(0, |cell, ((&c, cuts), &g)| {
                cell * g + cuts.partition_point(|&cut| cut <= c)
            })
    }

    /// [`PartitionPlan::assign`] with a bounds check.
    pub fn try_assign(&self, coord: &[u64]) -> Result<usize> {
        check_coord(&self.dims, coord)?;
        Ok(self.assign(coord))
    }

    /// Allocated slots over stored elements: `parts * capacity / max(1, nnz)`.
    pub fn padding_ratio(&self) -> f64 {
        (self.parts() * self.capacity) as f64 / self.nnz().max(1) as f64
    }

    /// Copies the tensor into per-partition element lists, keeping input
    /// order within each partition.
    pub fn split(&self, t: &CooTensor) -> PartitionedTensor {
        let d = t.order();
        let mut parts: Vec<(Vec<u64>, Vec<f64>)> = self
            .counts
            .iter()
            .map(|&n| (Vec::with_capacity(n * d), Vec::with_capacity(n)))
            .collect();
        for (coord, v) in t.iter() {
            let k = self.assign(coord);
            parts[k].0.extend_from_slice(coord);
            parts[k].1.push(v);
        }
        PartitionedTensor {
            dims: self.dims.clone(),
            parts,
        }
    }
}

fn grid_boxes(dims: &[usize], cuts: &[Vec<u64>]) -> Vec<BoundingBox> {
    // Per mode, the inclusive ranges of each chunk.
    let ranges: Vec<Vec<(u64, u64)>> = cuts
        .iter()
        .zip(dims)
        .map(|(c, &n)| {
            let mut starts = vec![0u64];
            starts.extend_from_slice(c);
            let mut ends: Vec<u64> = c.iter().map(|&x| x - 1).collect();
            ends.push(n as u64 - 1);
            starts.into_iter().zip(ends).collect()
        })
        .collect();
    let mut boxes = vec![BoundingBox {
        lower: Vec::new(),
        upper: Vec::new(),
    }];
    for mode_ranges in &ranges {
        boxes = boxes
            .into_iter()
            .flat_map(|b| {
                mode_ranges.iter().map(move |&(lo, hi)| {
                    let mut next = b.clone();
                    next.lower.push(lo);
                    next.upper.push(hi);
                    next
                })
            })
            .collect();
    }
    boxes
}

impl fmt::Display for PartitionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dims      {:?}", self.dims)?;
        writeln!(f, "grid      {:?}", self.grid)?;
        for (m, c) in self.cuts.iter().enumerate() {
            writeln!(f, "cuts[{m}]   {c:?}")?;
        }
        writeln!(f, "nnz       {}", self.nnz())?;
        writeln!(f, "capacity  {}", self.capacity)?;
        writeln!(f, "padding   {:.4}", self.padding_ratio())?;
        for (k, (b, n)) in self.boxes.iter().zip(&self.counts).enumerate() {
            writeln!(f, "part {k:>4}  count {n:>10}  box {b}")?;
        }
        Ok(())
    }
}

/// A tensor copied into per-partition element lists in ordinary memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedTensor {
    dims: Vec<usize>,
    parts: Vec<(Vec<u64>, Vec<f64>)>,
}

impl PartitionedTensor {
    pub fn view(&self) -> TensorView<'_> {
        TensorView::new(
            &self.dims,
            self.parts
                .iter()
                .map(|(c, v)| (c.as_slice(), v.as_slice()))
                .collect(),
        )
    }

    pub fn parts(&self) -> &[(Vec<u64>, Vec<f64>)] {
        &self.parts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corner_tensor() -> CooTensor {
        // (1,1,1)=2.0 and (5,4,4)=5.0 in 1-based form.
        CooTensor::new(vec![8, 6, 7], vec![0, 0, 0, 4, 3, 3], vec![2.0, 5.0]).unwrap()
    }

    /// Exhaustive argmin over every ordered factorization, independent of
    /// the recursive enumerator.
    fn brute_grid(dims: &[usize], parts: usize) -> Vec<usize> {
        let d = dims.len();
        let mut best: Option<(u128, Vec<usize>)> = None;
        let mut grid = vec![1usize; d];
        loop {
            if grid.iter().product::<usize>() == parts && grid.iter().zip(dims).all(|(g, n)| g <= n) {
                let score: u128 = dims
                    .iter()
                    .zip(&grid)
                    .map(|(&n, &g)| n.div_ceil(g) as u128)
                    .product();
                let better = match &best {
                    None => true,
                    Some((s, g)) => score < *s || (score == *s && grid < *g),
                };
                if better {
                    best = Some((score, grid.clone()));
                }
            }
            // Odometer over [1, parts]^d.
            let mut m = d;
            loop {
                if m == 0 {
                    return best.unwrap().1;
                }
                m -= 1;
                grid[m] += 1;
                if grid[m] <= parts {
                    break;
                }
                grid[m] = 1;
            }
        }
    }

    #[test]
    fn single_partition_grid() {
        assert_eq!(choose_grid(&[8, 6, 7], 1).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn grid_ties_go_lexicographic() {
        // [1,10], [2,5], [5,2] and [10,1] all score 100.
        assert_eq!(brute_grid(&[100, 10], 10), vec![1, 10]);
        assert_eq!(choose_grid(&[100, 10], 10).unwrap(), vec![1, 10]);
    }

    #[test]
    fn grid_for_two_parts() {
        // [2,1,1] -> 168, [1,2,1] -> 168, [1,1,2] -> 192.
        assert_eq!(brute_grid(&[8, 6, 7], 2), vec![1, 2, 1]);
        assert_eq!(choose_grid(&[8, 6, 7], 2).unwrap(), vec![1, 2, 1]);
    }

    #[test]
    fn grid_matches_brute_force() {
        for dims in [vec![8, 6, 7], vec![3, 50], vec![5, 5, 5, 5], vec![64], vec![2, 3, 4, 5, 6]] {
            for parts in [1, 2, 3, 4, 6, 8, 12, 16] {
                if let Ok(g) = choose_grid(&dims, parts) {
                    assert_eq!(g, brute_grid(&dims, parts), "dims {dims:?} parts {parts}");
                }
            }
        }
    }

    #[test]
    fn grid_errors() {
        assert_eq!(choose_grid(&[4], 0), Err(PartitionError::ZeroParts));
        assert_eq!(choose_grid(&[4096], 1025), Err(PartitionError::TooManyParts(1025)));
        assert!(matches!(
            choose_grid(&[2, 2], 16),
            Err(PartitionError::NoFeasibleGrid { .. })
        ));
    }

    #[test]
    fn symmetric_histogram_splits_in_half() {
        assert_eq!(balance_cuts(&[5, 5, 5, 5], 2), vec![2]);
    }

    #[test]
    fn skewed_histogram_matches_exhaustive_search() {
        let hist = [9u64, 1, 1, 9];
        // Every single cut c in 1..4 and its imbalance against the half mark.
        let total: u64 = hist.iter().sum();
        let best = (1..hist.len())
            .min_by_key(|&c| {
                let left: u64 = hist[..c].iter().sum();
                (2 * left).abs_diff(total)
            })
            .unwrap();
        assert_eq!(best, 2);
        assert_eq!(balance_cuts(&hist, 2), vec![best as u64]);
    }

    #[test]
    fn leftmost_cut_on_ties() {
        // Cutting at 1 or 2 both give 4/6 or 6/4.
        assert_eq!(balance_cuts(&[4, 2, 4], 2), vec![1]);
    }

    #[test]
    fn one_chunk_has_no_cuts() {
        assert!(balance_cuts(&[1, 2, 3], 1).is_empty());
    }

    #[test]
    fn chunks_stay_nonempty_in_index_space() {
        assert_eq!(balance_cuts(&[0, 0, 0, 100], 4), vec![1, 2, 3]);
        assert_eq!(balance_cuts(&[100, 0, 0, 0], 3), vec![1, 2]);
        assert_eq!(balance_cuts(&[0; 5], 3), vec![1, 2]);
    }

    #[test]
    fn too_fine_grid_is_rejected() {
        let t = corner_tensor();
        assert_eq!(
            choose_cuts(&t, &[9, 1, 1]),
            Err(PartitionError::GridTooFine {
                mode: 0,
                chunks: 9,
                dim: 8
            })
        );
    }

    #[test]
    fn corner_boxes_are_grid_cells() {
        let plan = PartitionPlan::with_cuts(&corner_tensor(), vec![vec![4], vec![3], vec![3]]).unwrap();
        assert_eq!(plan.parts(), 8);
        let a = BoundingBox {
            lower: vec![0, 0, 0],
            upper: vec![3, 2, 2],
        };
        let b = BoundingBox {
            lower: vec![4, 3, 3],
            upper: vec![7, 5, 6],
        };
        assert_eq!(plan.boxes()[0], a);
        assert_eq!(plan.boxes()[7], b);
        assert_eq!(plan.assign(&[0, 0, 0]), 0);
        assert_eq!(plan.assign(&[4, 3, 3]), 7);
        assert_eq!(plan.counts(), &[1, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(plan.capacity(), 1);
    }

    #[test]
    fn one_partition_holds_everything() {
        let t = corner_tensor();
        let plan = PartitionPlan::build(&t, 1).unwrap();
        assert_eq!(
            plan.boxes(),
            &[BoundingBox {
                lower: vec![0, 0, 0],
                upper: vec![7, 5, 6]
            }]
        );
        assert_eq!(plan.counts(), &[2]);
        assert_eq!(plan.capacity(), 2);
        assert_eq!(plan.padding_ratio(), 1.0);
        assert_eq!(plan.assign(&[7, 5, 6]), 0);
    }

    #[test]
    fn padding_ratio_arithmetic() {
        let t = CooTensor::new(vec![2], vec![0; 10].into_iter().chain(vec![1; 10]).collect(), vec![1.0; 20]).unwrap();
        let balanced = PartitionPlan::with_cuts(&t, vec![vec![1]]).unwrap();
        assert_eq!(balanced.counts(), &[10, 10]);
        assert_eq!(balanced.padding_ratio(), 1.0);

        let mut coords = vec![0u64];
        coords.extend(vec![1u64; 9]);
        let t = CooTensor::new(vec![2], coords, vec![1.0; 10]).unwrap();
        let skewed = PartitionPlan::with_cuts(&t, vec![vec![1]]).unwrap();
        assert_eq!(skewed.counts(), &[1, 9]);
        assert!((skewed.padding_ratio() - 1.8).abs() < 1e-15);
    }

    #[test]
    fn bad_cuts_rejected() {
        let t = corner_tensor();
        for cuts in [vec![vec![0], vec![], vec![]], vec![vec![8], vec![], vec![]], vec![vec![3, 3], vec![], vec![]]] {
            assert!(matches!(
                PartitionPlan::with_cuts(&t, cuts),
                Err(PartitionError::BadCuts { mode: 0, .. })
            ));
        }
    }

    #[test]
    fn split_keeps_input_order() {
        let t = CooTensor::new(vec![4], vec![3, 0, 2, 1, 0], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let plan = PartitionPlan::with_cuts(&t, vec![vec![2]]).unwrap();
        let split = plan.split(&t);
        assert_eq!(split.parts()[0], (vec![0, 1, 0], vec![2.0, 4.0, 5.0]));
        assert_eq!(split.parts()[1], (vec![3, 2], vec![1.0, 3.0]));
    }

    fn arb_case() -> impl Strategy<Value = (CooTensor, usize)> {
        (prop::collection::vec(4usize..10, 1..5), prop::sample::select(vec![1usize, 2, 4, 8, 16]))
            .prop_flat_map(|(dims, parts)| {
                let tuple: Vec<_> = dims.iter().map(|&n| 0..n as u64).collect();
                (Just(dims), Just(parts), prop::collection::vec(tuple, 0..80))
            })
            .prop_filter_map("grid must fit", |(dims, parts, elems)| {
                let coords: Vec<u64> = elems.into_iter().flatten().collect();
                let nnz = coords.len() / dims.len();
                let t = CooTensor::new(dims.clone(), coords, vec![1.0; nnz]).unwrap();
                choose_grid(&dims, parts).ok().map(|_| (t, parts))
            })
    }

    proptest! {
        #[test]
        fn plan_invariants((t, parts) in arb_case()) {
            let plan = PartitionPlan::build(&t, parts).unwrap();
            prop_assert_eq!(plan.parts(), parts);
            prop_assert_eq!(plan.nnz(), t.nnz());
            for &c in plan.counts() {
                prop_assert!(c <= plan.capacity());
            }
            let total: u128 = plan.boxes().iter().map(BoundingBox::volume).sum();
            prop_assert_eq!(total, t.dims().iter().map(|&n| n as u128).product::<u128>());
            for (i, a) in plan.boxes().iter().enumerate() {
                for b in &plan.boxes()[i + 1..] {
                    prop_assert!(!a.intersects(b));
                }
            }
            for (coord, _) in t.iter() {
                let k = plan.assign(coord);
                prop_assert!(plan.boxes()[k].contains(coord));
            }
        }
    }
}
