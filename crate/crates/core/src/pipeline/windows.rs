//! Rolling calendar-day training windows.

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::Dataset;

/// Fraction of window days that must have a complete case.
pub const MIN_PRESENCE: f64 = 0.9;

/// Training dates and target of one rolling window at one lead time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub lead_time_h: u32,
    pub target: NaiveDate,
    /// Issue dates of the training cases, ascending, all before `target`.
    pub training: Vec<NaiveDate>,
}

/// A target date for which no window was formed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkippedTarget {
    pub date: NaiveDate,
    pub lead_time_h: u32,
    pub reason: String,
}

/// Windows of the `window_days` calendar days preceding each target at
/// `lead_time_h`. Targets start `window_days` days after the first issue
/// date of the dataset; a target is skipped when fewer than 90% of its
/// window days have a complete case.
pub fn rolling_windows(
    ds: &Dataset,
    window_days: usize,
    lead_time_h: u32,
) -> (Vec<Window>, Vec<SkippedTarget>) {
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    let Some(first) = ds.cases.keys().next().map(|k| k.0) else {
        return (windows, skipped);
    };
    if window_days == 0 {
        return (windows, skipped);
    }
    let Some(earliest_target) = first.checked_add_days(Days::new(window_days as u64)) else {
        return (windows, skipped);
    };
    let needed = (MIN_PRESENCE * window_days as f64).ceil() as usize;
    let dates: Vec<NaiveDate> = ds
        .cases
        .keys()
        .filter(|k| k.1 == lead_time_h)
        .map(|k| k.0)
        .collect();
    for (i, &target) in dates.iter().enumerate() {
        if target < earliest_target {
            continue;
        }
        let start = target - Days::new(window_days as u64);
        let lo = dates[..i].partition_point(|d| *d < start);
        let training = dates[lo..i].to_vec();
        if training.len() < needed {
            log::warn!(
                "skipping {target} lead {lead_time_h} h: {} of {window_days} window days present",
                training.len()
            );
            skipped.push(SkippedTarget {
                date: target,
                lead_time_h,
                reason: format!("{} of {window_days} window days present", training.len()),
            });
            continue;
        }
        windows.push(Window {
            lead_time_h,
            target,
            training,
        });
    }
    (windows, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bma::{ForecastCase, GroupSpec};
    use std::collections::BTreeMap;

    fn dataset(dates: impl Iterator<Item = NaiveDate>) -> Dataset {
        let mut cases = BTreeMap::new();
        for d in dates {
            cases.insert(
                (d, 24),
                ForecastCase {
                    date: d,
                    lead_time_h: 24,
                    members: vec![vec![100.0]],
                    observation: Some(100.0),
                },
            );
        }
        Dataset {
            group_spec: GroupSpec::parse("solo:1").unwrap(),
            cases,
            exclusions: vec![],
        }
    }

    fn day(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2008, 1, 1).unwrap() + Days::new(n)
    }

    #[test]
    fn exactly_one_window() {
        let ds = dataset((0..101).map(day));
        let (w, s) = rolling_windows(&ds, 100, 24);
        assert_eq!(w.len(), 1);
        assert!(s.is_empty());
        assert_eq!(w[0].target, day(100));
        assert_eq!(w[0].training.len(), 100);
        assert_eq!(w[0].training[0], day(0));
        assert!(rolling_windows(&ds, 100, 1).0.is_empty());
        assert!(rolling_windows(&dataset((0..100).map(day)), 100, 24)
            .0
            .is_empty());
    }

    #[test]
    fn long_record_target_count() {
        let start = NaiveDate::from_ymd_opt(2008, 1, 1).unwrap();
        let end = NaiveDate::from_ymd_opt(2015, 12, 31).unwrap();
        let n = (end - start).num_days() as u64 + 1;
        let ds = dataset((0..n).map(|i| start + Days::new(i)));
        let (w, _) = rolling_windows(&ds, 100, 24);
        assert_eq!(w[0].target, NaiveDate::from_ymd_opt(2008, 4, 10).unwrap());
        assert_eq!(w.len(), 2822);
    }

    #[test]
    fn gaps_need_ninety_percent_presence() {
        // Days 50..=59 missing: windows containing all ten gap days have 90 of 100.
        let ds = dataset((0..200).filter(|d| !(50..60).contains(d)).map(day));
        let (w, s) = rolling_windows(&ds, 100, 24);
        assert!(s.is_empty());
        assert_eq!(w[0].training.len(), 90);
        // Eleven missing days drop presence below 90%.
        let ds = dataset((0..200).filter(|d| !(50..61).contains(d)).map(day));
        let (w, s) = rolling_windows(&ds, 100, 24);
        assert!(!s.is_empty());
        assert_eq!(s[0].date, day(100));
        assert!(w.iter().all(|w| w.training.len() >= 90));
        assert!(w.iter().all(|w| w.training.iter().all(|d| *d < w.target)));
    }
}
