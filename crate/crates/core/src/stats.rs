//! Per-iteration campaign statistics and cross-run aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub const CSV_HEADER: &str = "iteration,wall_ms,queue_len,crash_buckets,novel_cells_total,verdict";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsRow {
    pub iteration: u64,
    pub wall_ms: u64,
    pub queue_len: usize,
    pub crash_buckets: usize,
    pub novel_cells_total: usize,
    pub verdict: String,
}

impl StatsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.wall_ms, self.queue_len, self.crash_buckets, self.novel_cells_total, self.verdict
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut f = line.trim_end().split(',');
        let row = Self {
            iteration: f.next()?.parse().ok()?,
            wall_ms: f.next()?.parse().ok()?,
            queue_len: f.next()?.parse().ok()?,
            crash_buckets: f.next()?.parse().ok()?,
            novel_cells_total: f.next()?.parse().ok()?,
            verdict: String::from(f.next()?),
        };
        f.next().is_none().then_some(row)
    }
}

/// Linear-interpolation percentile over sorted data (the spreadsheet
/// `PERCENTILE.INC` definition). `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedRow {
    pub iteration: u64,
    pub runs: usize,
    pub median: f64,
    pub p17: f64,
    pub p83: f64,
}

pub const MERGED_HEADER: &str = "iteration,runs,median,p17,p83";

impl MergedRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration,
            self.runs,
            fmt_num(self.median),
            fmt_num(self.p17),
            fmt_num(self.p83)
        )
    }
}

fn fmt_num(x: f64) -> String {
    if x == (x as i64) as f64 {
        format!("{}", x as i64)
    } else {
        format!("{x:.4}")
    }
}

/// Aligns series by iteration. A run that ended earlier contributes its
/// last value to later iterations; before its first row it contributes
/// nothing.
pub fn merge_series(series: &[Vec<(u64, f64)>]) -> Vec<MergedRow> {
    let mut iterations: Vec<u64> = series.iter().flatten().map(|&(i, _)| i).collect();
    iterations.sort_unstable();
    iterations.dedup();
    let mut cursors = alloc::vec![0usize; series.len()];
    let mut out = Vec::with_capacity(iterations.len());
    for it in iterations {
        let mut values = Vec::with_capacity(series.len());
        for (s, cursor) in series.iter().zip(cursors.iter_mut()) {
            while *cursor < s.len() && s[*cursor].0 <= it {
                *cursor += 1;
            }
            if *cursor > 0 {
                values.push(s[*cursor - 1].1);
            }
        }
        values.sort_by(f64::total_cmp);
        out.push(MergedRow {
            iteration: it,
            runs: values.len(),
            median: percentile(&values, 0.5),
            p17: percentile(&values, 0.17),
            p83: percentile(&values, 0.83),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn csv_round_trip() {
        let row = StatsRow {
            iteration: 3,
            wall_ms: 12,
            queue_len: 4,
            crash_buckets: 1,
            novel_cells_total: 88,
            verdict: "clean".into(),
        };
        assert_eq!(row.to_csv(), "3,12,4,1,88,clean");
        assert_eq!(StatsRow::parse(&row.to_csv()), Some(row));
        assert_eq!(StatsRow::parse("1,2,3"), None);
    }

    #[test]
    fn single_run_median_is_input() {
        let merged = merge_series(&[vec![(0, 5.0), (1, 7.0)]]);
        assert_eq!(merged[1].median, 7.0);
        assert_eq!(merged[1].p17, 7.0);
    }

    #[test]
    fn three_constant_runs() {
        let merged = merge_series(&[vec![(0, 1.0)], vec![(0, 2.0)], vec![(0, 3.0)]]);
        assert_eq!(merged[0].median, 2.0);
        assert!((merged[0].p17 - 1.34).abs() < 1e-9);
        assert!((merged[0].p83 - 2.66).abs() < 1e-9);
    }

    #[test]
    fn shorter_runs_carry_forward() {
        let merged = merge_series(&[vec![(0, 1.0)], vec![(0, 3.0), (1, 5.0)]]);
        assert_eq!(merged[1].runs, 2);
        assert_eq!(merged[1].median, 3.0);
    }
}
