//! Greedy farthest-point initial design over a random candidate pool.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par::map_slice;
use crate::space::{unit_dist_sq, Configuration, Space};

/// Knobs for [`random_explore_first`].
#[derive(Debug, Clone)]
pub struct InitDesignParams {
    /// Number of initial configurations to select.
    pub n_init: usize,
    /// Size of the random candidate pool the design is selected from.
    pub pool_size: usize,
}

impl Default for InitDesignParams {
    fn default() -> Self {
        Self {
            n_init: 10,
            pool_size: 10_000,
        }
    }
}

impl InitDesignParams {
    fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.n_init > self.pool_size {
            return Err(Error::InvalidInput(format!(
                "init design requires 1 <= n_init ({}) <= pool_size ({})",
                self.n_init, self.pool_size
            )));
        }
        Ok(())
    }
}

/// The selected design. `space_exhausted` is set when the deduplicated pool
/// could not supply `n_init` distinct configurations.
#[derive(Debug, Clone)]
pub struct InitialDesign {
    pub points: Vec<Configuration>,
    pub space_exhausted: bool,
}

/// Selects configurations one at a time from a random pool: the first
/// uniformly at random, each subsequent one maximizing the minimum unit-cube
/// Euclidean distance to everything already selected. Ties break toward the
/// lowest pool position.
pub fn random_explore_first<R: Rng>(
    space: &Space,
    params: &InitDesignParams,
    rng: &mut R,
) -> Result<InitialDesign> {
    params.validate()?;

    let mut pool = space.sample_random(rng, params.pool_size);
    let mut seen = std::collections::HashSet::new();
    pool.retain(|c| seen.insert(c.clone()));

    let units: Vec<Vec<f64>> = pool
        .iter()
        .map(|c| space.to_unit(c).expect("pool points are valid"))
        .collect();

    let mut selected: Vec<usize> = Vec::with_capacity(params.n_init.min(pool.len()));
    if pool.is_empty() {
        return Ok(InitialDesign {
            points: vec![],
            space_exhausted: true,
        });
    }
    selected.push(rng.random_range(0..pool.len()));

    // min_dist_sq[i] = squared distance from pool[i] to the selected set
    let mut min_dist_sq: Vec<f64> = map_slice(&units, |u| unit_dist_sq(u, &units[selected[0]]));

    while selected.len() < params.n_init.min(pool.len()) {
        let mut best = None;
        for (i, &d) in min_dist_sq.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            match best {
                Some((_, bd)) if d <= bd => {}
                _ => best = Some((i, d)),
            }
        }
        let (winner, _) = best.expect("pool larger than selection");
        selected.push(winner);
        let winner_unit = &units[winner];
        let updates = map_slice(&units, |u| unit_dist_sq(u, winner_unit));
        for (slot, d) in min_dist_sq.iter_mut().zip(updates) {
            if d < *slot {
                *slot = d;
            }
        }
    }

    let points: Vec<Configuration> = selected.iter().map(|&i| pool[i].clone()).collect();
    let space_exhausted = points.len() < params.n_init;
    Ok(InitialDesign {
        points,
        space_exhausted,
    })
}
