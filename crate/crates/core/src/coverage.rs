//! Edge-coverage maps and the novelty index.

use alloc::vec;
use alloc::vec::Vec;

/// Cells in a campaign-sized coverage map.
pub const MAP_SIZE: usize = 1 << 16;

/// Number of hit-count classes returned by [`bucketize`].
pub const BUCKETS: u8 = 9;

/// Maps a saturating hit count to its count class:
/// `0, 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128-255` become `0..=8`.
pub const fn bucketize(count: u8) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 3,
        4..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        32..=127 => 7,
        _ => 8,
    }
}

const fn mix(mut x: u32) -> u32 {
    x ^= x >> 16;
    x = x.wrapping_mul(0x85EB_CA6B);
    x ^= x >> 13;
    x = x.wrapping_mul(0xC2B2_AE35);
    x ^= x >> 16;
    x
}

/// Cell index of the edge `prev -> current`. The previous location is
/// shifted so that `a -> b` and `b -> a` land in different cells.
pub const fn edge_index(prev: u32, current: u32, size: usize) -> usize {
    ((mix(prev) >> 1) ^ mix(current)) as usize % size
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMap {
    cells: Vec<u8>,
    pub run_id: u64,
}

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        Self::with_size(MAP_SIZE)
    }

    pub fn with_size(size: usize) -> Self {
        assert!(size > 0, "coverage map needs at least one cell");
        Self {
            cells: vec![0; size],
            run_id: 0,
        }
    }

    pub fn from_cells(cells: Vec<u8>) -> Self {
        assert!(!cells.is_empty(), "coverage map needs at least one cell");
        Self { cells, run_id: 0 }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|&c| c == 0)
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [u8] {
        &mut self.cells
    }

    pub fn get(&self, cell: usize) -> u8 {
        self.cells[cell]
    }

    pub fn clear(&mut self) {
        self.cells.fill(0);
    }

    pub fn record_edge(&mut self, prev: u32, current: u32) {
        let idx = edge_index(prev, current, self.cells.len());
        self.hit(idx);
    }

    /// Saturating increment of one cell.
    pub fn hit(&mut self, cell: usize) {
        let c = &mut self.cells[cell];
        *c = c.saturating_add(1);
    }

    /// Indices of non-zero cells.
    pub fn covered(&self) -> impl Iterator<Item = u32> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, _)| i as u32)
    }

    pub fn count_covered(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub is_novel: bool,
    pub novel_cells: Vec<u32>,
}

/// Highest count class ever observed per cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoveltyIndex {
    virgin: Vec<u8>,
}

impl Default for NoveltyIndex {
    fn default() -> Self {
        Self::new()
    }
}

impl NoveltyIndex {
    pub fn new() -> Self {
        Self::with_size(MAP_SIZE)
    }

    pub fn with_size(size: usize) -> Self {
        Self { virgin: vec![0; size] }
    }

    pub fn len(&self) -> usize {
        self.virgin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.virgin.iter().all(|&b| b == 0)
    }

    pub fn max_bucket(&self, cell: usize) -> u8 {
        self.virgin[cell]
    }

    /// Cells whose class would rise if `map` were merged, without merging.
    pub fn peek(&self, map: &CoverageMap) -> Vec<u32> {
        assert_eq!(map.len(), self.virgin.len(), "map size mismatch");
        map.cells()
            .iter()
            .zip(&self.virgin)
            .enumerate()
            .filter(|(_, (&c, &v))| bucketize(c) > v)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn observe(&mut self, map: &CoverageMap) -> Observation {
        let novel_cells = self.peek(map);
        for &cell in &novel_cells {
            let idx = cell as usize;
            self.virgin[idx] = bucketize(map.get(idx));
        }
        Observation {
            is_novel: !novel_cells.is_empty(),
            novel_cells,
        }
    }

    /// Number of cells ever covered.
    pub fn cells_seen(&self) -> usize {
        self.virgin.iter().filter(|&&b| b != 0).count()
    }

    /// Size of the downward-closed `(cell, class)` set recorded so far.
    pub fn recorded_pairs(&self) -> usize {
        self.virgin.iter().map(|&b| usize::from(b)).sum()
    }

    pub fn seen_cells(&self) -> impl Iterator<Item = u32> + '_ {
        self.virgin
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(i, _)| i as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_table() {
        let expected = [
            (0, 0),
            (1, 1),
            (2, 2),
            (3, 3),
            (4, 4),
            (5, 4),
            (7, 4),
            (8, 5),
            (15, 5),
            (16, 6),
            (31, 6),
            (32, 7),
            (127, 7),
            (128, 8),
            (255, 8),
        ];
        for (count, bucket) in expected {
            assert_eq!(bucketize(count), bucket, "count {count}");
        }
    }

    #[test]
    fn saturates_at_255() {
        let mut map = CoverageMap::new();
        for _ in 0..300 {
            map.record_edge(1, 2);
        }
        let idx = edge_index(1, 2, MAP_SIZE);
        assert_eq!(map.get(idx), 255);
        assert_eq!(map.count_covered(), 1);
    }

    #[test]
    fn distinct_edges_hit_distinct_cells() {
        // verified collision-free: the three indices below are pairwise different
        let edges = [(0u32, 10u32), (10, 20), (20, 10)];
        let idx: Vec<usize> = edges.iter().map(|&(a, b)| edge_index(a, b, MAP_SIZE)).collect();
        assert!(idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2]);
        let mut map = CoverageMap::new();
        for (a, b) in edges {
            map.record_edge(a, b);
        }
        assert_eq!(map.count_covered(), 3);
    }

    #[test]
    fn fresh_map_is_empty() {
        assert!(CoverageMap::new().is_empty());
        assert_eq!(CoverageMap::new().count_covered(), 0);
    }

    #[test]
    fn first_map_is_novel_and_repeat_is_not() {
        let mut index = NoveltyIndex::with_size(16);
        let mut map = CoverageMap::with_size(16);
        map.hit(3);
        let first = index.observe(&map);
        assert!(first.is_novel);
        assert_eq!(first.novel_cells, [3]);
        assert!(!index.observe(&map).is_novel);
    }

    #[test]
    fn higher_class_is_novel_lower_is_not() {
        let mut index = NoveltyIndex::with_size(4);
        let mut map = CoverageMap::with_size(4);
        for _ in 0..5 {
            map.hit(0);
        }
        index.observe(&map);
        let mut lower = CoverageMap::with_size(4);
        lower.hit(0);
        assert!(!index.observe(&lower).is_novel);
        for _ in 0..10 {
            lower.hit(0);
        }
        assert_eq!(index.observe(&lower).novel_cells, [0]);
    }
}
