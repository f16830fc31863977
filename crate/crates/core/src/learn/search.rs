//! Randomized grid search.

use rand::seq::index::sample;

use super::LearnError;
use crate::seed;

/// Outcome of a search: the chosen configuration and every evaluated
/// `(grid index, score)` pair in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<P> {
    pub best: P,
    pub best_index: usize,
    pub evaluated: Vec<(usize, f64)>,
}

/// Draws `n_samples` grid entries uniformly without replacement (all of
/// them when the grid is smaller), scores each with `score` and keeps the
/// highest. Ties go to the entry evaluated first. Sampled indices are
/// visited in ascending order.
pub fn random_search<P: Clone, E>(
    grid: &[P],
    n_samples: usize,
    seed: u64,
    mut score: impl FnMut(&P) -> Result<f64, E>,
) -> Result<SearchResult<P>, E>
where
    E: From<LearnError>,
{
    if grid.is_empty() || n_samples == 0 {
        return Err(LearnError::EmptyGrid.into());
    }
    let mut picks: Vec<usize> = if n_samples >= grid.len() {
        (0..grid.len()).collect()
    } else {
        sample(&mut seed::rng(seed, &[0x7365_6172]), grid.len(), n_samples).into_vec()
    };
    picks.sort_unstable();
    let mut evaluated = Vec::with_capacity(picks.len());
    let mut best: Option<(usize, f64)> = None;
    for i in picks {
        let s = score(&grid[i])?;
        evaluated.push((i, s));
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (best_index, _) = best.expect("at least one configuration scored");
    Ok(SearchResult { best: grid[best_index].clone(), best_index, evaluated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_grid() {
        let r = random_search(&[7], 3, 0, |&p| Ok::<_, LearnError>(p as f64)).unwrap();
        assert_eq!((r.best, r.evaluated.len()), (7, 1));
    }

    #[test]
    fn exhaustive_when_samples_cover_grid() {
        let grid: Vec<u32> = (0..6).collect();
        let r = random_search(&grid, 10, 0, |&p| Ok::<_, LearnError>(-(f64::from(p) - 3.0).abs())).unwrap();
        assert_eq!(r.evaluated.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(r.best, 3);
    }

    #[test]
    fn subsample_is_seeded() {
        let grid: Vec<u32> = (0..20).collect();
        let run = |s| random_search(&grid, 5, s, |&p| Ok::<_, LearnError>(f64::from(p))).unwrap();
        assert_eq!(run(1), run(1));
        assert_eq!(run(1).evaluated.len(), 5);
        assert!(random_search(&[] as &[u32], 5, 0, |_| Ok::<_, LearnError>(0.0)).is_err());
    }
}
