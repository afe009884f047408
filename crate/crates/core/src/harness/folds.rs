//! Day-partitioned cross-validation folds.

use crate::error::{Error, Result};

pub const NUM_DAYS: usize = 26;
pub const NUM_FOLDS: usize = 10;
/// Folds 1..=6 test on consecutive triples, folds 7..=10 on pairs.
const FOLD_SIZES: [usize; NUM_FOLDS] = [3, 3, 3, 3, 3, 3, 2, 2, 2, 2];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    days: Vec<usize>,
    folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Test days of fold `k` (0-based).
    pub fn test_days(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }

    pub fn train_days(&self, k: usize) -> Vec<usize> {
        self.days
            .iter()
            .copied()
            .filter(|d| !self.folds[k].contains(d))
            .collect()
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }
}

/// Consecutive test blocks over the sorted day ids.
pub fn make_fold_plan(day_ids: &[usize]) -> Result<FoldPlan> {
    let mut days = day_ids.to_vec();
    days.sort_unstable();
    days.dedup();
    if days.len() != NUM_DAYS || day_ids.len() != NUM_DAYS {
        return Err(Error::DayCount(day_ids.len()));
    }
    let mut folds = Vec::with_capacity(NUM_FOLDS);
    let mut next = 0;
    for size in FOLD_SIZES {
        folds.push(days[next..next + size].to_vec());
        next += size;
    }
    Ok(FoldPlan { days, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_examples() {
        let days: Vec<usize> = (1..=26).collect();
        let plan = make_fold_plan(&days).unwrap();
        assert_eq!(plan.test_days(0), &[1, 2, 3]);
        assert_eq!(plan.test_days(5), &[16, 17, 18]);
        assert_eq!(plan.test_days(6), &[19, 20]);
        assert_eq!(plan.test_days(9), &[25, 26]);
        assert_eq!(plan.train_days(9).len(), 24);
    }

    #[test]
    fn wrong_day_count() {
        let days: Vec<usize> = (1..=25).collect();
        assert!(matches!(make_fold_plan(&days), Err(Error::DayCount(25))));
        let mut dup: Vec<usize> = (1..=26).collect();
        dup[25] = 1;
        assert!(make_fold_plan(&dup).is_err());
    }
}
