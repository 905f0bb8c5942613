//! One-to-one matchings, blocking pairs, Gale–Shapley, exhaustive
//! enumeration of stable matchings and the median stable matching.
//!
//! Stability is weak stability throughout: a pair blocks only if both agents
//! strictly prefer each other to their current situation. Being unmatched or
//! holding an unacceptable partner is worse than any acceptable partner.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::num::Scalar;

/// Largest `n_side` the exhaustive enumerator accepts.
pub const ENUMERATION_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    One,
    Two,
}

/// A (possibly partial) one-to-one matching between side 1 and side 2.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Matching {
    partner_of_1: Vec<Option<usize>>,
    partner_of_2: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockingPair {
    pub i: usize,
    pub j: usize,
}

impl Matching {
    pub fn empty(n_side: usize) -> Self {
        Matching { partner_of_1: vec![None; n_side], partner_of_2: vec![None; n_side] }
    }

    /// Builds a matching from side-1 partner indices, rejecting any side-2
    /// agent that appears twice or is out of range.
    pub fn from_partner_of_1(partner_of_1: Vec<Option<usize>>) -> Result<Self> {
        let n = partner_of_1.len();
        let mut partner_of_2 = vec![None; n];
        for (i, p) in partner_of_1.iter().enumerate() {
            if let Some(j) = *p {
                if j >= n {
                    return Err(Error::InvalidMatching(format!("partner {j} of agent {i} out of range")));
                }
                if let Some(prev) = partner_of_2[j] {
                    return Err(Error::InvalidMatching(format!(
                        "side-2 agent {j} matched to both {prev} and {i}"
                    )));
                }
                partner_of_2[j] = Some(i);
            }
        }
        Ok(Matching { partner_of_1, partner_of_2 })
    }

    pub fn from_pairs(n_side: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut p1 = vec![None; n_side];
        for &(i, j) in pairs {
            if i >= n_side {
                return Err(Error::InvalidMatching(format!("side-1 index {i} out of range")));
            }
            if p1[i].is_some() {
                return Err(Error::InvalidMatching(format!("side-1 agent {i} matched twice")));
            }
            p1[i] = Some(j);
        }
        Self::from_partner_of_1(p1)
    }

    /// Builds a matching from both partner arrays and checks mutual consistency.
    pub fn from_both(partner_of_1: Vec<Option<usize>>, partner_of_2: Vec<Option<usize>>) -> Result<Self> {
        let m = Self::from_partner_of_1(partner_of_1)?;
        if m.partner_of_2 != partner_of_2 {
            return Err(Error::InvalidMatching("partner arrays are not mutually consistent".into()));
        }
        Ok(m)
    }

    pub fn n_side(&self) -> usize {
        self.partner_of_1.len()
    }

    pub fn partner_of_1(&self, i: usize) -> Option<usize> {
        self.partner_of_1[i]
    }

    pub fn partner_of_2(&self, j: usize) -> Option<usize> {
        self.partner_of_2[j]
    }

    pub fn partners_1(&self) -> &[Option<usize>] {
        &self.partner_of_1
    }

    pub fn partners_2(&self) -> &[Option<usize>] {
        &self.partner_of_2
    }

    /// Matched pairs `(i, j)` in increasing `i`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.partner_of_1.iter().enumerate().filter_map(|(i, p)| p.map(|j| (i, j)))
    }

    pub fn len(&self) -> usize {
        self.partner_of_1.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_perfect(&self) -> bool {
        self.partner_of_1.iter().all(Option::is_some)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.partner_of_1.get(i).copied().flatten() == Some(j)
    }

    /// Checks internal consistency and the dimension against `n_side`.
    pub fn check(&self, n_side: usize) -> Result<()> {
        if self.partner_of_1.len() != n_side || self.partner_of_2.len() != n_side {
            return Err(Error::Contract(format!(
                "matching has sides {}/{}, instance has n_side {n_side}",
                self.partner_of_1.len(),
                self.partner_of_2.len()
            )));
        }
        for (i, p) in self.partner_of_1.iter().enumerate() {
            if let Some(j) = *p {
                if j >= n_side || self.partner_of_2[j] != Some(i) {
                    return Err(Error::Contract(format!("inconsistent partner for side-1 agent {i}")));
                }
            }
        }
        for (j, p) in self.partner_of_2.iter().enumerate() {
            if let Some(i) = *p {
                if i >= n_side || self.partner_of_1[i] != Some(j) {
                    return Err(Error::Contract(format!("inconsistent partner for side-2 agent {j}")));
                }
            }
        }
        Ok(())
    }
}

fn encode_side(v: &[Option<usize>]) -> Vec<i64> {
    v.iter().map(|p| p.map_or(-1, |x| x as i64)).collect()
}

fn decode_side(v: &[i64]) -> Result<Vec<Option<usize>>> {
    v.iter()
        .map(|&x| match x {
            -1 => Ok(None),
            x if x >= 0 => Ok(Some(x as usize)),
            x => Err(Error::InvalidMatching(format!("partner index {x} is neither -1 nor nonnegative"))),
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct MatchingDoc {
    partner_of_1: Vec<i64>,
    partner_of_2: Vec<i64>,
}

impl Serialize for Matching {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MatchingDoc {
            partner_of_1: encode_side(&self.partner_of_1),
            partner_of_2: encode_side(&self.partner_of_2),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matching {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = MatchingDoc::deserialize(deserializer)?;
        let build = || -> Result<Matching> {
            let m = Matching::from_both(decode_side(&doc.partner_of_1)?, decode_side(&doc.partner_of_2)?)?;
            m.check(m.n_side())?;
            Ok(m)
        };
        build().map_err(serde::de::Error::custom)
    }
}

/// Side-1 agent `i` strictly prefers `j` to its situation under `p1`.
#[inline]
fn wants_1<T: Scalar>(x: &Instance<T>, p1: &[Option<usize>], i: usize, j: usize) -> bool {
    x.acceptable_1(i, j)
        && match p1[i] {
            None => true,
            Some(c) => !x.acceptable_1(i, c) || x.u1(i, j) > x.u1(i, c),
        }
}

/// Side-2 agent `j` strictly prefers `i` to its situation under `p2`.
#[inline]
fn wants_2<T: Scalar>(x: &Instance<T>, p2: &[Option<usize>], j: usize, i: usize) -> bool {
    x.acceptable_2(j, i)
        && match p2[j] {
            None => true,
            Some(c) => !x.acceptable_2(j, c) || x.u2(j, i) > x.u2(j, c),
        }
}

/// All blocking pairs of `m`, sorted lexicographically.
pub fn find_blocking_pairs<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<Vec<BlockingPair>> {
    m.check(x.n_side)?;
    let mut out = Vec::new();
    for i in 0..x.n_side {
        for j in 0..x.n_side {
            if m.partner_of_1[i] != Some(j)
                && wants_1(x, &m.partner_of_1, i, j)
                && wants_2(x, &m.partner_of_2, j, i)
            {
                out.push(BlockingPair { i, j });
            }
        }
    }
    Ok(out)
}

pub fn is_stable<T: Scalar>(x: &Instance<T>, m: &Matching) -> Result<bool> {
    Ok(find_blocking_pairs(x, m)?.is_empty())
}

/// Gale–Shapley deferred acceptance with `proposing` as the proposing side.
///
/// Proposers walk their acceptable partners by (utility desc, index asc);
/// receivers reject unacceptable proposers and keep the incumbent on ties.
pub fn gale_shapley<T: Scalar>(x: &Instance<T>, proposing: Side) -> Matching {
    let n = x.n_side;
    let (prop_u, recv_u) = match proposing {
        Side::One => (&x.utility_1, &x.utility_2),
        Side::Two => (&x.utility_2, &x.utility_1),
    };
    let lists: Vec<Vec<usize>> = prop_u.iter().map(|row| preference_list(row)).collect();
    let mut next = vec![0usize; n];
    let mut held_by: Vec<Option<usize>> = vec![None; n];
    let mut free: VecDeque<usize> = (0..n).collect();

    while let Some(p) = free.pop_front() {
        while next[p] < lists[p].len() {
            let r = lists[p][next[p]];
            next[p] += 1;
            let u = recv_u[r][p];
            if u < T::zero() {
                continue;
            }
            match held_by[r] {
                None => {
                    held_by[r] = Some(p);
                    break;
                }
                Some(q) if u > recv_u[r][q] => {
                    held_by[r] = Some(p);
                    free.push_back(q);
                    break;
                }
                Some(_) => {}
            }
        }
    }

    let mut proposer_partner = vec![None; n];
    for (r, p) in held_by.iter().enumerate() {
        if let Some(p) = *p {
            proposer_partner[p] = Some(r);
        }
    }
    let m = match proposing {
        Side::One => Matching::from_partner_of_1(proposer_partner),
        Side::Two => Matching::from_partner_of_1(held_by),
    };
    m.expect("deferred acceptance yields a one-to-one matching")
}

/// Acceptable partners in order of preference: utility descending, index ascending.
pub fn preference_list<T: Scalar>(row: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&k| row[k] >= T::zero()).collect();
    idx.sort_by(|&a, &b| {
        row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    idx
}

struct Enumerator<'a, T> {
    x: &'a Instance<T>,
    p1: Vec<Option<usize>>,
    p2: Vec<Option<usize>>,
    found: Vec<Matching>,
}

impl<T: Scalar> Enumerator<'_, T> {
    /// Side-1 agents `< depth` are decided; so is every side-2 agent they hold.
    /// A pair whose two members are both decided and that blocks rules out
    /// the whole subtree.
    fn blocked_after_deciding(&self, i: usize) -> bool {
        let x = self.x;
        if let Some(j) = self.p1[i] {
            for k in 0..i {
                if self.p1[k] != Some(j) && wants_1(x, &self.p1, k, j) && wants_2(x, &self.p2, j, k) {
                    return true;
                }
            }
        }
        for k in 0..i {
            if let Some(jk) = self.p1[k] {
                if wants_1(x, &self.p1, i, jk) && wants_2(x, &self.p2, jk, i) {
                    return true;
                }
            }
        }
        false
    }

    fn descend(&mut self, i: usize) {
        let n = self.x.n_side;
        if i == n {
            let m = Matching { partner_of_1: self.p1.clone(), partner_of_2: self.p2.clone() };
            if find_blocking_pairs(self.x, &m).expect("enumerated matching is consistent").is_empty() {
                self.found.push(m);
            }
            return;
        }
        for j in 0..n {
            if self.p2[j].is_some() || !self.x.mutually_acceptable(i, j) {
                continue;
            }
            self.p1[i] = Some(j);
            self.p2[j] = Some(i);
            if !self.blocked_after_deciding(i) {
                self.descend(i + 1);
            }
            self.p2[j] = None;
        }
        self.p1[i] = None;
        if !self.blocked_after_deciding(i) {
            self.descend(i + 1);
        }
    }
}

/// Every (weakly) stable matching, sorted canonically.
///
/// Exhaustive search over partial injective assignments of mutually
/// acceptable pairs, pruned as soon as two finalized agents block.
pub fn enumerate_stable_matchings<T: Scalar>(x: &Instance<T>) -> Result<Vec<Matching>> {
    if x.n_side > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { n_side: x.n_side, limit: ENUMERATION_LIMIT });
    }
    let mut e = Enumerator {
        x,
        p1: vec![None; x.n_side],
        p2: vec![None; x.n_side],
        found: Vec::new(),
    };
    e.descend(0);
    let mut found = e.found;
    found.sort();
    found.dedup();
    Ok(found)
}

/// For every agent, its partners across `stable` sorted from most to least
/// preferred (utility desc, index asc, unmatched last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StablePartners {
    pub side_1: Vec<Vec<Option<usize>>>,
    pub side_2: Vec<Vec<Option<usize>>>,
}

impl StablePartners {
    pub fn new<T: Scalar>(x: &Instance<T>, stable: &[Matching]) -> Self {
        let n = x.n_side;
        let sort = |row: &[T], mut v: Vec<Option<usize>>| {
            v.sort_by(|a, b| match (a, b) {
                (Some(a), Some(b)) => row[*b]
                    .partial_cmp(&row[*a])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(b)),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            });
            v
        };
        let side_1 = (0..n)
            .map(|i| sort(&x.utility_1[i], stable.iter().map(|m| m.partner_of_1[i]).collect()))
            .collect();
        let side_2 = (0..n)
            .map(|j| sort(&x.utility_2[j], stable.iter().map(|m| m.partner_of_2[j]).collect()))
            .collect();
        StablePartners { side_1, side_2 }
    }

    pub fn count(&self) -> usize {
        self.side_1.first().map_or(0, Vec::len)
    }
}

/// Median stable matching, or `None` when the number of stable matchings is
/// even (or, under ties, when the per-agent medians do not form a stable
/// matching).
pub fn median_stable_matching<T: Scalar>(x: &Instance<T>) -> Result<Option<Matching>> {
    let stable = enumerate_stable_matchings(x)?;
    median_of(x, &stable)
}

/// Median of an already enumerated stable set.
pub fn median_of<T: Scalar>(x: &Instance<T>, stable: &[Matching]) -> Result<Option<Matching>> {
    let k = stable.len();
    if k.is_multiple_of(2) {
        return Ok(None);
    }
    let partners = StablePartners::new(x, stable);
    let mid = k.div_ceil(2) - 1;
    let p1: Vec<Option<usize>> = partners.side_1.iter().map(|v| v[mid]).collect();
    let p2: Vec<Option<usize>> = partners.side_2.iter().map(|v| v[mid]).collect();
    let candidate = Matching::from_both(p1, p2).ok();
    let ok = candidate.as_ref().filter(|m| stable.binary_search(m).is_ok());
    match ok {
        Some(m) => Ok(Some(m.clone())),
        None if x.has_strict_preferences() => Err(Error::Internal(
            "per-agent median partners do not form a stable matching".into(),
        )),
        None => Ok(None),
    }
}
