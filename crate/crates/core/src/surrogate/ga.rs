//! Integer-encoded genetic algorithm used to maximise acquisition functions.
//!
//! Genes are lattice coordinates, so every individual is feasible by
//! construction: uniform crossover only swaps coordinates between parents and
//! mutation resets a gene to a uniform draw within its bounds.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{HyperparameterSet, HyperparameterSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Per-gene reset probability; `None` means `1 / dims`.
    pub mutation_prob: Option<f64>,
    pub crossover_prob: f64,
    pub elitism: usize,
    pub tournament_size: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            generations: 60,
            mutation_prob: None,
            crossover_prob: 0.9,
            elitism: 2,
            tournament_size: 2,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::InvalidConfig("ga.population must be at least 4".into()));
        }
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.crossover_prob) || !self.mutation_prob.is_none_or(prob_ok) {
            return Err(Error::InvalidConfig(
                "ga probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.elitism >= self.population {
            return Err(Error::InvalidConfig(
                "ga.elitism must be smaller than ga.population".into(),
            ));
        }
        if self.tournament_size == 0 {
            return Err(Error::InvalidConfig("ga.tournament_size must be positive".into()));
        }
        Ok(())
    }
}

fn by_fitness(a: f64, b: f64) -> Ordering {
    // NaN ranks below everything.
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        _ => a.partial_cmp(&b).unwrap(),
    }
}

/// Best individual found while maximising `objective` over the lattice.
pub fn ga_maximize<F, R>(
    mut objective: F,
    space: &HyperparameterSpace,
    cfg: &GaConfig,
    rng: &mut R,
) -> Result<HyperparameterSet>
where
    F: FnMut(&HyperparameterSet) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let dims = space.dims();
    let mutation = cfg.mutation_prob.unwrap_or(1.0 / dims as f64);

    let mut scored: Vec<(HyperparameterSet, f64)> = (0..cfg.population)
        .map(|_| {
            let p = space.random_point(rng);
            let f = objective(&p);
            (p, f)
        })
        .collect();
    let mut best = scored
        .iter()
        .max_by(|a, b| by_fitness(a.1, b.1))
        .cloned()
        .expect("population is nonempty");

    for _ in 0..cfg.generations {
        scored.sort_by(|a, b| by_fitness(b.1, a.1));
        let mut next: Vec<(HyperparameterSet, f64)> = scored[..cfg.elitism].to_vec();
        while next.len() < cfg.population {
            let a = tournament(&scored, cfg.tournament_size, rng);
            let b = tournament(&scored, cfg.tournament_size, rng);
            let mut child: Vec<i64> = a.values().to_vec();
            if rng.random::<f64>() < cfg.crossover_prob {
                for (k, gene) in child.iter_mut().enumerate() {
                    if rng.random::<bool>() {
                        *gene = b.values()[k];
                    }
                }
            }
            for (k, gene) in child.iter_mut().enumerate() {
                if rng.random::<f64>() < mutation {
                    *gene = rng.random_range(space.lower()[k]..=space.upper()[k]);
                }
            }
            let child = HyperparameterSet::new(child);
            let f = objective(&child);
            if by_fitness(f, best.1) == Ordering::Greater {
                best = (child.clone(), f);
            }
            next.push((child, f));
        }
        scored = next;
    }
    Ok(best.0)
}

fn tournament<'a, R: Rng + ?Sized>(
    pool: &'a [(HyperparameterSet, f64)],
    size: usize,
    rng: &mut R,
) -> &'a HyperparameterSet {
    let mut winner = &pool[rng.random_range(0..pool.len())];
    for _ in 1..size {
        let c = &pool[rng.random_range(0..pool.len())];
        if by_fitness(c.1, winner.1) == Ordering::Greater {
            winner = c;
        }
    }
    &winner.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn finds_known_lattice_point() {
        let space = HyperparameterSpace::from_bounds(&[(0, 20), (-5, 5), (1, 30)]).unwrap();
        let target: HyperparameterSet = vec![13, -2, 7].into();
        // exhaustive oracle
        let oracle = space
            .enumerate()
            .max_by(|a, b| {
                let fa = -distance(a, &target).unwrap();
                let fb = -distance(b, &target).unwrap();
                fa.partial_cmp(&fb).unwrap()
            })
            .unwrap();
        assert_eq!(oracle, target);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let found = ga_maximize(
            |p| -distance(p, &target).unwrap(),
            &space,
            &GaConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(found, oracle);
    }

    #[test]
    fn single_point_space() {
        let space = HyperparameterSpace::from_bounds(&[(4, 4), (9, 9)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ga_maximize(|_| 0.0, &space, &GaConfig::default(), &mut rng).unwrap();
        assert_eq!(p.values(), &[4, 9]);
    }

    #[test]
    fn deterministic_per_seed() {
        let space = HyperparameterSpace::from_bounds(&[(0, 50), (0, 50)]).unwrap();
        let f = |p: &HyperparameterSet| ((p.values()[0] * 7 + p.values()[1] * 3) % 17) as f64;
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ga_maximize(f, &space, &GaConfig::default(), &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn survives_nan_fitness() {
        let space = HyperparameterSpace::from_bounds(&[(0, 9)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ga_maximize(
            |p| if p.values()[0] == 6 { 1.0 } else { f64::NAN },
            &space,
            &GaConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(p.values(), &[6]);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = GaConfig {
            population: 3,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GaConfig {
            crossover_prob: 1.5,
            ..GaConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
