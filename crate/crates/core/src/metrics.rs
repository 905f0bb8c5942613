//! Outcome quality: instability (DoI, RoI, MD), fairness costs (regret,
//! egalitarian, set-equality) and median-match statistics.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::instance::{derive_ranks, Instance, RankProfile};
use crate::matching::{
    enumerate_stable_matchings, find_blocking_pairs, median_of, BlockingPair, Matching, StablePartners,
    ENUMERATION_LIMIT,
};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMetrics {
    pub stable: bool,
    pub blocking_pairs: usize,
    pub doi: usize,
    pub roi: f64,
    pub md: f64,
    /// `None` for the empty matching.
    pub regret: Option<u32>,
    pub egalitarian: u32,
    pub set_equality: u32,
    /// `None` when the number of stable matchings is even or enumeration is
    /// out of reach.
    pub is_msm: Option<bool>,
    /// `None` only when enumeration is out of reach.
    pub mm_fraction: Option<f64>,
}

/// Number of distinct agents appearing in at least one blocking pair.
pub fn doi_from_pairs(n_side: usize, pairs: &[BlockingPair]) -> usize {
    let mut seen_1 = vec![false; n_side];
    let mut seen_2 = vec![false; n_side];
    for p in pairs {
        seen_1[p.i] = true;
        seen_2[p.j] = true;
    }
    seen_1.iter().chain(seen_2.iter()).filter(|&&b| b).count()
}

pub fn degree_of_instability<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<usize> {
    Ok(doi_from_pairs(x.n_side, &find_blocking_pairs(x, m)?))
}

/// Blocking pairs divided by `n_side²`.
pub fn ratio_of_instability<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<f64> {
    let b = find_blocking_pairs(x, m)?.len();
    Ok(b as f64 / (x.n_side * x.n_side) as f64)
}

fn md_from_pairs<T: Scalar>(x: &Instance<T>, m: &Matching, pairs: &[BlockingPair]) -> T {
    let mut best = T::zero();
    for &BlockingPair { i, j } in pairs {
        let cur_1 = m.partner_of_1(i).map_or(T::zero(), |c| x.u1(i, c));
        let cur_2 = m.partner_of_2(j).map_or(T::zero(), |c| x.u2(j, c));
        best = best.max(x.u1(i, j) - cur_1).max(x.u2(j, i) - cur_2);
    }
    best
}

/// Largest utility gain any blocking agent could realise with a blocking
/// partner. Unmatched agents count as holding utility 0.
pub fn max_dissatisfaction<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<T> {
    let pairs = find_blocking_pairs(x, m)?;
    Ok(md_from_pairs(x, m, &pairs))
}

/// Ranks of a matched pair from both sides. An unacceptable partner is
/// scored `n_side + 1`, one past the end of any list.
fn pair_ranks(ranks: &RankProfile, n_side: usize, i: usize, j: usize) -> (u32, u32) {
    let past_end = n_side as u32 + 1;
    (ranks.rank_1[i][j].unwrap_or(past_end), ranks.rank_2[j][i].unwrap_or(past_end))
}

fn regret_from_ranks(ranks: &RankProfile, m: &Matching) -> Option<u32> {
    m.pairs()
        .map(|(i, j)| {
            let (a, b) = pair_ranks(ranks, m.n_side(), i, j);
            a.max(b)
        })
        .max()
}

fn rank_sums(ranks: &RankProfile, m: &Matching) -> (u32, u32) {
    m.pairs().fold((0, 0), |(s1, s2), (i, j)| {
        let (a, b) = pair_ranks(ranks, m.n_side(), i, j);
        (s1 + a, s2 + b)
    })
}

pub fn regret_cost<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<Option<u32>> {
    m.check(x.n_side)?;
    Ok(regret_from_ranks(&derive_ranks(x), m))
}

pub fn egalitarian_cost<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<u32> {
    m.check(x.n_side)?;
    let (a, b) = rank_sums(&derive_ranks(x), m);
    Ok(a + b)
}

/// `|side-1 rank sum − side-2 rank sum|`.
pub fn set_equality_cost<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<u32> {
    m.check(x.n_side)?;
    let (a, b) = rank_sums(&derive_ranks(x), m);
    Ok(a.abs_diff(b))
}

fn median_stats_with<T: Scalar>(x: &Instance<T>, m: &Matching, stable: &[Matching]) -> Result<(Option<bool>, f64)> {
    let k = stable.len();
    let partners = StablePartners::new(x, stable);
    // 0-based positions that count as a median match.
    let window: Vec<usize> = if k == 0 {
        Vec::new()
    } else if k % 2 == 1 {
        vec![k.div_ceil(2) - 1]
    } else {
        vec![k / 2 - 1, k / 2]
    };
    let hits_1 = (0..x.n_side)
        .filter(|&i| window.iter().any(|&w| partners.side_1[i][w] == m.partner_of_1(i)))
        .count();
    let hits_2 = (0..x.n_side)
        .filter(|&j| window.iter().any(|&w| partners.side_2[j][w] == m.partner_of_2(j)))
        .count();
    let fraction = (hits_1 + hits_2) as f64 / (2 * x.n_side) as f64;
    let is_msm = median_of(x, stable)?.map(|med| &med == m);
    Ok((is_msm, fraction))
}

/// `(is_msm, mm_fraction)` for `m`. With an even number of stable matchings
/// `is_msm` is `None` and an agent counts as a median match if its partner
/// sits at either of the two middle positions.
pub fn median_match_stats<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<(Option<bool>, f64)> {
    m.check(x.n_side)?;
    let stable = enumerate_stable_matchings(x)?;
    median_stats_with(x, m, &stable)
}

/// Every metric for one outcome. Median statistics are skipped (left
/// `None`) beyond the enumeration limit.
pub fn score<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<OutcomeMetrics> {
    let stable_set = if x.n_side <= ENUMERATION_LIMIT { Some(enumerate_stable_matchings(x)?) } else { None };
    score_with(x, m, stable_set.as_deref())
}

/// [`score`] with a precomputed stable set.
pub fn score_with<T: Scalar>(x: &Instance<T>, m: &Matching, stable_set: Option<&[Matching]>) -> Result<OutcomeMetrics> {
    let pairs = find_blocking_pairs(x, m)?;
    let ranks = derive_ranks(x);
    let (s1, s2) = rank_sums(&ranks, m);
    let (is_msm, mm_fraction) = match stable_set {
        Some(stable) => {
            let (a, b) = median_stats_with(x, m, stable)?;
            (a, Some(b))
        }
        None => (None, None),
    };
    Ok(OutcomeMetrics {
        stable: pairs.is_empty(),
        blocking_pairs: pairs.len(),
        doi: doi_from_pairs(x.n_side, &pairs),
        roi: pairs.len() as f64 / (x.n_side * x.n_side) as f64,
        md: md_from_pairs(x, m, &pairs).as_f64(),
        regret: regret_from_ranks(&ranks, m),
        egalitarian: s1 + s2,
        set_equality: s1.abs_diff(s2),
        is_msm,
        mm_fraction,
    })
}
