//! Simulated participants: latent-utility judges with optional response
//! noise, and uniformly random responders.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::design::{design_participant, presentation_order, DesignConfig, DesignError, Registry, TupleDesign, TUPLE_SIZE};
use super::scoring::Judgment;

/// Independent standard-normal utility per stimulus.
pub fn latent_utilities(stimuli: &[String], seed: u64) -> HashMap<String, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stimuli
        .iter()
        .map(|s| (s.clone(), StandardNormal.sample(&mut rng)))
        .collect()
}

/// Uniformly random distinct (best, worst) positions.
pub fn random_choice<R: Rng>(rng: &mut R) -> (usize, usize) {
    let best = rng.random_range(0..TUPLE_SIZE);
    let mut worst = rng.random_range(0..TUPLE_SIZE - 1);
    if worst >= best {
        worst += 1;
    }
    (best, worst)
}

#[derive(Debug, Clone)]
pub enum Judge {
    /// Picks the highest and lowest utility, except that with probability
    /// `noise` the answer is a uniformly random valid choice.
    Latent { utilities: HashMap<String, f64>, noise: f64 },
    Random,
}

impl Judge {
    pub fn noiseless(utilities: HashMap<String, f64>) -> Self {
        Judge::Latent { utilities, noise: 0.0 }
    }

    pub fn choose<R: Rng>(&self, tuple: &[String; TUPLE_SIZE], rng: &mut R) -> (usize, usize) {
        match self {
            Judge::Random => random_choice(rng),
            Judge::Latent { utilities, noise } => {
                if *noise > 0.0 && rng.random_bool(noise.min(1.0)) {
                    return random_choice(rng);
                }
                let u = |i: usize| utilities.get(&tuple[i]).copied().unwrap_or(0.0);
                let best = (0..TUPLE_SIZE).max_by(|&a, &b| u(a).total_cmp(&u(b))).unwrap();
                let worst = (0..TUPLE_SIZE)
                    .filter(|&i| i != best)
                    .min_by(|&a, &b| u(a).total_cmp(&u(b)))
                    .unwrap();
                (best, worst)
            }
        }
    }
}

/// Judges every recorded trial of `design`.
pub fn simulate_session<R: Rng>(design: &TupleDesign, judge: &Judge, rng: &mut R) -> Vec<Judgment> {
    presentation_order(design)
        .into_iter()
        .filter(|t| t.phase.is_recorded())
        .map(|t| {
            let (best, worst) = judge.choose(&t.tuple.0, rng);
            Judgment {
                participant_id: design.participant_id,
                trial_index: t.index,
                tuple: t.tuple,
                best,
                worst,
                phase: t.phase,
            }
        })
        .collect()
}

/// `participants` sessions with a shared registry; participant `p` uses
/// design seed `seed + p` and its own response stream.
pub fn simulate_study(
    stimuli: &[String],
    participants: u32,
    judge: &Judge,
    seed: u64,
    config: &DesignConfig,
) -> Result<Vec<Judgment>, DesignError> {
    let mut registry = Registry::new();
    let mut out = Vec::new();
    for p in 1..=participants {
        let design = design_participant(stimuli, p, seed.wrapping_add(p as u64), &mut registry, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(p as u64)));
        out.extend(simulate_session(&design, judge, &mut rng));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn random_choice_is_valid_and_covers_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2000 {
            let (b, w) = random_choice(&mut rng);
            assert!(b != w && b < 4 && w < 4);
            seen.insert((b, w));
        }
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn noiseless_judge_is_consistent() {
        let stimuli = ids(8);
        let judge = Judge::noiseless(latent_utilities(&stimuli, 2));
        let t: [String; 4] = std::array::from_fn(|i| stimuli[i].clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = judge.choose(&t, &mut rng);
        assert!((0..20).all(|_| judge.choose(&t, &mut rng) == first));
    }

    #[test]
    fn study_shape() {
        let stimuli = ids(140);
        let judge = Judge::noiseless(latent_utilities(&stimuli, 1));
        let js = simulate_study(&stimuli, 3, &judge, 10, &DesignConfig::default()).unwrap();
        assert_eq!(js.len(), 3 * 39);
        assert_eq!(js.iter().filter(|j| j.phase == super::super::design::Phase::Retest).count(), 12);
    }
}
