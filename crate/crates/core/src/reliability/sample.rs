use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReliabilityError;
use crate::constructs::{ConstructId, EMOTION_DIMS};
use crate::parser::{majority_disclosure, majority_reflection, DisclosureLevel, ReflectionLabel};
use crate::pipeline::{ConstructScore, ScoreStore, TargetId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledTarget {
    pub stratum: String,
    pub target: TargetId,
}

/// Draws targets for human annotation.
///
/// * Self-disclosure, reflection: `per_stratum` targets per majority label.
/// * Epitome, rapport: `3 * per_stratum` targets allocated across the
///   low/medium/high thirds of the scale in proportion to their sizes
///   (epitome on the summed mechanisms, rapport on the overall rating).
/// * Emotion: `per_stratum` targets per emotion among those whose mean
///   rating is at least 4. A target may appear under several emotions.
///
/// Strata too small for their allocation produce `Underpopulated` instead
/// of a shorter sample. Output is sorted by stratum then target.
pub fn stratified_sample(
    store: &ScoreStore,
    construct: ConstructId,
    per_stratum: usize,
    seed: u64,
) -> Result<Vec<SampledTarget>, ReliabilityError> {
    let scores: Vec<&ConstructScore> = store.scores_for(construct).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<(String, Vec<&TargetId>, usize)> = match construct {
        ConstructId::SelfDisclosure => {
            let by = |lvl: DisclosureLevel| {
                scores
                    .iter()
                    .filter(|s| majority_disclosure(&s.completions) == Some(lvl))
                    .map(|s| &s.target)
                    .collect::<Vec<_>>()
            };
            [DisclosureLevel::G, DisclosureLevel::M, DisclosureLevel::H]
                .into_iter()
                .map(|l| (l.letter().to_string(), by(l), per_stratum))
                .collect()
        }
        ConstructId::EmpathyReflection => {
            let by = |lbl: ReflectionLabel| {
                scores
                    .iter()
                    .filter(|s| majority_reflection(&s.completions) == Some(lbl))
                    .map(|s| &s.target)
                    .collect::<Vec<_>>()
            };
            [ReflectionLabel::Reflection, ReflectionLabel::NonReflection]
                .into_iter()
                .map(|l| (l.to_string(), by(l), per_stratum))
                .collect()
        }
        ConstructId::EmpathyEpitome | ConstructId::Rapport => {
            let (lo, hi, value): (f64, f64, fn(&ConstructScore) -> f64) = if construct == ConstructId::Rapport {
                (1.0, 7.0, |s| s.value("overall").unwrap_or(f64::NAN))
            } else {
                (0.0, 6.0, |s| s.values.iter().sum())
            };
            let mut bins: [Vec<&TargetId>; 3] = Default::default();
            for s in &scores {
                bins[third(value(s), lo, hi)].push(&s.target);
            }
            let sizes = [bins[0].len(), bins[1].len(), bins[2].len()];
            let alloc = proportional(sizes, 3 * per_stratum).ok_or(ReliabilityError::Underpopulated {
                stratum: "all".into(),
                available: sizes.iter().sum(),
                requested: 3 * per_stratum,
            })?;
            let names = ["low", "medium", "high"];
            bins.into_iter()
                .zip(alloc)
                .enumerate()
                .map(|(i, (b, a))| (names[i].to_string(), b, a))
                .collect()
        }
        ConstructId::Emotion => EMOTION_DIMS
            .iter()
            .enumerate()
            .map(|(d, name)| {
                let high = scores
                    .iter()
                    .filter(|s| s.values[d] >= 4.0)
                    .map(|s| &s.target)
                    .collect();
                (name.to_string(), high, per_stratum)
            })
            .collect(),
    };

    let mut out = Vec::new();
    for (stratum, pool, want) in strata {
        if pool.len() < want {
            return Err(ReliabilityError::Underpopulated {
                stratum,
                available: pool.len(),
                requested: want,
            });
        }
        let mut picked: Vec<&TargetId> = pool.choose_multiple(&mut rng, want).copied().collect();
        picked.sort();
        out.extend(picked.into_iter().map(|t| SampledTarget {
            stratum: stratum.clone(),
            target: t.clone(),
        }));
    }
    Ok(out)
}

fn third(v: f64, lo: f64, hi: f64) -> usize {
    let w = (hi - lo) / 3.0;
    if v < lo + w {
        0
    } else if v < lo + 2.0 * w {
        1
    } else {
        2
    }
}

/// Largest-remainder allocation of `total` across strata by size.
fn proportional(sizes: [usize; 3], total: usize) -> Option<[usize; 3]> {
    let n: usize = sizes.iter().sum();
    if total > n {
        return None;
    }
    if n == 0 {
        return Some([0; 3]);
    }
    let mut alloc = [0usize; 3];
    let mut rem = [(0usize, 0usize); 3];
    for i in 0..3 {
        alloc[i] = sizes[i] * total / n;
        rem[i] = (sizes[i] * total % n, i);
    }
    let mut left = total - alloc.iter().sum::<usize>();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rem {
        if left == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    Some(alloc)
}
