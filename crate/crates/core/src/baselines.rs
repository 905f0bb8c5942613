//! Non-spatial comparison algorithms: set-equality-minimal stable matching
//! (BLS contract), Hoepman-style distributed greedy weighted matching, and
//! decentralized deferred-acceptance rounds (D-CF).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::matching::{enumerate_stable_matchings, is_stable, Matching};
use crate::metrics::{egalitarian_cost, set_equality_cost};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Bls,
    Ha,
    Dcf,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Bls => "bls",
            Baseline::Ha => "ha",
            Baseline::Dcf => "dcf",
        })
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bls" => Ok(Baseline::Bls),
            "ha" => Ok(Baseline::Ha),
            "dcf" => Ok(Baseline::Dcf),
            _ => Err(Error::Config(format!("unknown baseline {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub algorithm: Baseline,
    pub rng_seed: u64,
    pub matching: Matching,
    pub rounds_or_steps: usize,
}

/// Runs one baseline with its own seeded generator.
pub fn run_baseline<T: Scalar>(algorithm: Baseline, x: &Instance<T>, rng_seed: u64) -> Result<BaselineRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (matching, rounds_or_steps) = match algorithm {
        Baseline::Bls => (bls(x)?, 0),
        Baseline::Ha => hoepman_counted(x, &mut rng),
        Baseline::Dcf => dcf_counted(x, &mut rng)?,
    };
    Ok(BaselineRun { algorithm, rng_seed, matching, rounds_or_steps })
}

/// Stable matching with the smallest set-equality cost; ties go to the
/// smaller egalitarian cost, then canonical order.
///
/// Computed by enumerating the stable set, which yields the same output
/// contract as bidirectional local search at these instance sizes.
pub fn bls<T: Scalar>(x: &Instance<T>) -> Result<Matching> {
    let stable = enumerate_stable_matchings(x)?;
    let mut best: Option<((u32, u32), Matching)> = None;
    for m in stable {
        let key = (set_equality_cost(x, &m)?, egalitarian_cost(x, &m)?);
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((key, m));
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| Error::Internal("instance has no stable matching".into()))
}

/// Edge weight used by the greedy matcher: the sum of both utilities.
pub fn edge_weight<T: Scalar>(x: &Instance<T>, i: usize, j: usize) -> T {
    x.u1(i, j) + x.u2(j, i)
}

/// Distributed greedy weighted matching on the mutually acceptable pairs.
///
/// Every free agent points at its heaviest remaining neighbour; two agents
/// pointing at each other lock in, and locked agents drop out of everyone's
/// neighbour lists. Agents act in a fresh random order each round and
/// equal-weight edges are ordered by a random key, so runs with different
/// seeds can differ when weights tie.
pub fn hoepman<T: Scalar, R: Rng + ?Sized>(x: &Instance<T>, rng: &mut R) -> Matching {
    hoepman_counted(x, rng).0
}

fn hoepman_counted<T: Scalar, R: Rng + ?Sized>(x: &Instance<T>, rng: &mut R) -> (Matching, usize) {
    let n = x.n_side;
    // Nodes 0..n are side 1, n..2n are side 2.
    let mut tiebreak = vec![vec![0u64; n]; n];
    for row in tiebreak.iter_mut() {
        for k in row.iter_mut() {
            *k = rng.random();
        }
    }
    let heavier = |a: (usize, usize), b: (usize, usize)| -> Ordering {
        edge_weight(x, a.0, a.1)
            .partial_cmp(&edge_weight(x, b.0, b.1))
            .unwrap_or(Ordering::Equal)
            .then(tiebreak[a.0][a.1].cmp(&tiebreak[b.0][b.1]))
    };
    let edge = |a: usize, b: usize| if a < n { (a, b - n) } else { (b, a - n) };

    let mut neighbours: Vec<Vec<usize>> = (0..2 * n)
        .map(|a| {
            if a < n {
                (0..n).filter(|&j| x.mutually_acceptable(a, j)).map(|j| j + n).collect()
            } else {
                (0..n).filter(|&i| x.mutually_acceptable(i, a - n)).collect()
            }
        })
        .collect();
    let mut mate: Vec<Option<usize>> = vec![None; 2 * n];
    let mut pointing: Vec<Option<usize>> = vec![None; 2 * n];
    let mut order: Vec<usize> = (0..2 * n).collect();
    let mut rounds = 0;

    loop {
        rounds += 1;
        let mut changed = false;
        order.shuffle(rng);
        for &a in &order {
            if mate[a].is_some() {
                continue;
            }
            neighbours[a].retain(|&b| mate[b].is_none());
            let best = neighbours[a]
                .iter()
                .copied()
                .max_by(|&b, &c| heavier(edge(a, b), edge(a, c)));
            if pointing[a] != best {
                pointing[a] = best;
                changed = true;
            }
            if let Some(b) = best {
                if pointing[b] == Some(a) {
                    mate[a] = Some(b);
                    mate[b] = Some(a);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let partner_of_1 = (0..n).map(|i| mate[i].map(|b| b - n)).collect();
    let m = Matching::from_partner_of_1(partner_of_1).expect("locked pairs are disjoint");
    (m, rounds)
}

/// Decentralized deferred acceptance: in a freshly shuffled order every
/// agent proposes to the partner it likes best among those it prefers to
/// its current tentative partner and who would accept it; acceptance frees
/// both displaced partners. Stops after a round without change.
pub fn dcf<T: Scalar, R: Rng + ?Sized>(x: &Instance<T>, rng: &mut R) -> Result<Matching> {
    dcf_counted(x, rng).map(|(m, _)| m)
}

fn dcf_counted<T: Scalar, R: Rng + ?Sized>(x: &Instance<T>, rng: &mut R) -> Result<(Matching, usize)> {
    let n = x.n_side;
    let cap = 10 * n * n;
    let mut p1: Vec<Option<usize>> = vec![None; n];
    let mut p2: Vec<Option<usize>> = vec![None; n];
    let mut order: Vec<usize> = (0..2 * n).collect();

    let better_1 = |p1: &[Option<usize>], i: usize, j: usize| {
        x.acceptable_1(i, j) && p1[i].is_none_or(|c| !x.acceptable_1(i, c) || x.u1(i, j) > x.u1(i, c))
    };
    let better_2 = |p2: &[Option<usize>], j: usize, i: usize| {
        x.acceptable_2(j, i) && p2[j].is_none_or(|c| !x.acceptable_2(j, c) || x.u2(j, i) > x.u2(j, c))
    };

    for round in 1..=cap {
        let mut changed = false;
        order.shuffle(rng);
        for &a in &order {
            let (i, j) = if a < n {
                let i = a;
                let pick = (0..n)
                    .filter(|&j| better_1(&p1, i, j) && better_2(&p2, j, i))
                    .max_by(|&b, &c| x.u1(i, b).partial_cmp(&x.u1(i, c)).unwrap_or(Ordering::Equal).then(c.cmp(&b)));
                match pick {
                    Some(j) => (i, j),
                    None => continue,
                }
            } else {
                let j = a - n;
                let pick = (0..n)
                    .filter(|&i| better_2(&p2, j, i) && better_1(&p1, i, j))
                    .max_by(|&b, &c| x.u2(j, b).partial_cmp(&x.u2(j, c)).unwrap_or(Ordering::Equal).then(c.cmp(&b)));
                match pick {
                    Some(i) => (i, j),
                    None => continue,
                }
            };
            if let Some(old) = p1[i] {
                p2[old] = None;
            }
            if let Some(old) = p2[j] {
                p1[old] = None;
            }
            p1[i] = Some(j);
            p2[j] = Some(i);
            changed = true;
        }
        if !changed {
            let m = Matching::from_both(p1, p2)?;
            if !is_stable(x, &m)? {
                return Err(Error::Internal("D-CF fixed point is not stable".into()));
            }
            return Ok((m, round));
        }
    }
    Err(Error::NonTermination { algorithm: "dcf", cap })
}
