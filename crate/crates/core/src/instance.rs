//! Two-sided market instances: generation, validation, rank derivation and
//! the `smlab-instance/1` document format.
//!
//! Side 1 agents are indexed `0..n_side`, side 2 agents likewise. Utilities
//! are stored from each agent's own point of view: `utility_1[i][j]` is what
//! side-1 agent `i` receives from a match with side-2 agent `j`, and
//! `utility_2[j][i]` is what `j` receives from the same match.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::num::Scalar;

pub const INSTANCE_FORMAT: &str = "smlab-instance/1";

/// Upper bound on redraws during rejection sampling.
pub const MAX_REDRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Strict, complete preference lists.
    SM,
    /// Incomplete lists: negative utility marks an unacceptable partner.
    SMI,
    /// Ties allowed.
    SMT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrefType {
    Symmetric,
    Asymmetric,
}

impl Variant {
    /// Closed range utilities are drawn from.
    pub fn utility_range(self) -> (f64, f64) {
        match self {
            Variant::SM | Variant::SMT => (1.0, 10.0),
            Variant::SMI => (-10.0, 10.0),
        }
    }

    pub fn is_strict(self) -> bool {
        !matches!(self, Variant::SMT)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::SM => "SM",
            Variant::SMI => "SMI",
            Variant::SMT => "SMT",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" => Ok(Variant::SM),
            "smi" => Ok(Variant::SMI),
            "smt" => Ok(Variant::SMT),
            _ => Err(Error::Config(format!("unknown variant {s:?} (expected sm, smi or smt)"))),
        }
    }
}

impl fmt::Display for PrefType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrefType::Symmetric => f.write_str("Symmetric"),
            PrefType::Asymmetric => f.write_str("Asymmetric"),
        }
    }
}

impl FromStr for PrefType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sym" | "symmetric" => Ok(PrefType::Symmetric),
            "asym" | "asymmetric" => Ok(PrefType::Asymmetric),
            _ => Err(Error::Config(format!(
                "unknown preference type {s:?} (expected symmetric or asymmetric)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance<T> {
    pub n_side: usize,
    pub variant: Variant,
    pub pref_type: PrefType,
    pub utility_1: Vec<Vec<T>>,
    pub utility_2: Vec<Vec<T>>,
    pub seed: u64,
}

/// Position of a partner in an agent's list, 1 = best. `None` marks an
/// unacceptable partner.
pub type Rank = Option<u32>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankProfile {
    /// `rank_1[i][j]`: position of side-2 agent `j` in side-1 agent `i`'s list.
    pub rank_1: Vec<Vec<Rank>>,
    /// `rank_2[j][i]`: position of side-1 agent `i` in side-2 agent `j`'s list.
    pub rank_2: Vec<Vec<Rank>>,
}

impl<T: Scalar> Instance<T> {
    /// Utility side-1 agent `i` gets from side-2 agent `j`.
    #[inline]
    pub fn u1(&self, i: usize, j: usize) -> T {
        self.utility_1[i][j]
    }

    /// Utility side-2 agent `j` gets from side-1 agent `i`.
    #[inline]
    pub fn u2(&self, j: usize, i: usize) -> T {
        self.utility_2[j][i]
    }

    #[inline]
    pub fn acceptable_1(&self, i: usize, j: usize) -> bool {
        self.utility_1[i][j] >= T::zero()
    }

    #[inline]
    pub fn acceptable_2(&self, j: usize, i: usize) -> bool {
        self.utility_2[j][i] >= T::zero()
    }

    #[inline]
    pub fn mutually_acceptable(&self, i: usize, j: usize) -> bool {
        self.acceptable_1(i, j) && self.acceptable_2(j, i)
    }

    /// True when the instance has no ties among acceptable entries.
    pub fn has_strict_preferences(&self) -> bool {
        self.utility_1.iter().chain(self.utility_2.iter()).all(|row| row_is_strict(row))
    }

    /// Checks every invariant of the instance type.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_side;
        if n == 0 {
            return Err(Error::InvalidInstance("n_side must be at least 1".into()));
        }
        for (name, m) in [("utility_1", &self.utility_1), ("utility_2", &self.utility_2)] {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(Error::InvalidInstance(format!("{name} must be {n}x{n}")));
            }
            let (lo, hi) = self.variant.utility_range();
            for (r, row) in m.iter().enumerate() {
                for (c, &u) in row.iter().enumerate() {
                    let v = u.as_f64();
                    if !v.is_finite() || v < lo || v > hi {
                        return Err(Error::InvalidInstance(format!(
                            "{name}[{r}][{c}] = {v} outside [{lo}, {hi}] for {}",
                            self.variant
                        )));
                    }
                }
                if self.variant.is_strict() && !row_is_strict(row) {
                    return Err(Error::InvalidInstance(format!(
                        "strict order violated in {name} row {r}"
                    )));
                }
            }
        }
        if self.pref_type == PrefType::Symmetric {
            for i in 0..n {
                for j in 0..n {
                    if self.utility_1[i][j] != self.utility_2[j][i] {
                        return Err(Error::InvalidInstance(format!(
                            "symmetry violated: utility_1[{i}][{j}] != utility_2[{j}][{i}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the instance as a `smlab-instance/1` JSON document.
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Reads and validates a `smlab-instance/1` JSON document.
    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_reader(reader)?;
        doc.try_into_instance()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        doc.try_into_instance()
    }
}

/// Acceptable (nonnegative) entries of a row are pairwise distinct.
fn row_is_strict<T: Scalar>(row: &[T]) -> bool {
    let mut acc: Vec<T> = row.iter().copied().filter(|u| *u >= T::zero()).collect();
    acc.sort_by(|a, b| a.partial_cmp(b).expect("finite utilities"));
    acc.windows(2).all(|w| w[0] != w[1])
}

fn draw_row<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..n).map(|_| T::of(rng.random_range(lo..=hi))).collect()
}

/// Copies one entry of `row` over another with probability one half.
fn maybe_force_tie<T: Copy>(rng: &mut ChaCha8Rng, row: &mut [T]) {
    if row.len() < 2 || !rng.random_bool(0.5) {
        return;
    }
    let src = rng.random_range(0..row.len());
    let mut dst = rng.random_range(0..row.len() - 1);
    if dst >= src {
        dst += 1;
    }
    row[dst] = row[src];
}

/// Random Latin square with entries `0..n`: a cyclic square with rows,
/// columns and symbols independently permuted.
fn random_latin_square(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    let mut symbols: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    symbols.shuffle(rng);
    (0..n).map(|r| (0..n).map(|c| symbols[(rows[r] + cols[c]) % n]).collect()).collect()
}

/// Sweeps of coordinate-wise resampling used for symmetric instances.
const SYMMETRIC_SWEEPS: usize = 32;

/// Side-1 utilities of a symmetric instance.
///
/// A random Latin square fixes each entry's rank within both its row and
/// its column, so a side-1 agent ranks a partner exactly where that partner
/// ranks it back. Utilities are then drawn uniformly from `[lo, hi]`
/// subject to that order by Gibbs sampling: each sweep redraws every entry
/// uniformly between its next-worse and next-better neighbours in its row
/// and column.
fn symmetric_utilities(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    // rank[i][j] = 0 is the best.
    let rank = random_latin_square(rng, n);
    let mut at_rank_row = vec![vec![0usize; n]; n];
    let mut at_rank_col = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in 0..n {
            at_rank_row[i][rank[i][j]] = j;
            at_rank_col[j][rank[i][j]] = i;
        }
    }
    let width = hi - lo;
    let mut u: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| lo + width * ((n - rank[i][j]) as f64 - 0.5) / n as f64).collect())
        .collect();
    for _ in 0..SYMMETRIC_SWEEPS {
        for i in 0..n {
            for j in 0..n {
                let r = rank[i][j];
                let (mut below, mut above) = (lo, hi);
                if r + 1 < n {
                    below = below.max(u[i][at_rank_row[i][r + 1]]).max(u[at_rank_col[j][r + 1]][j]);
                }
                if r > 0 {
                    above = above.min(u[i][at_rank_row[i][r - 1]]).min(u[at_rank_col[j][r - 1]][j]);
                }
                if below < above {
                    u[i][j] = rng.random_range(below..above);
                }
            }
        }
    }
    u
}

fn transpose<T: Copy>(m: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = m.len();
    (0..n).map(|j| (0..n).map(|i| m[i][j]).collect()).collect()
}

/// Generates a random instance. Deterministic in all four arguments.
pub fn generate_instance<T: Scalar>(
    variant: Variant,
    pref_type: PrefType,
    n_side: usize,
    seed: u64,
) -> Result<Instance<T>> {
    if n_side == 0 {
        return Err(Error::InvalidInstance("n_side must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = variant.utility_range();
    let strict = variant.is_strict();
    let mut redraws = 0usize;
    let bump = |redraws: &mut usize| -> Result<()> {
        *redraws += 1;
        if *redraws > MAX_REDRAWS {
            Err(Error::Internal(format!(
                "instance generation exceeded {MAX_REDRAWS} redraws (n_side={n_side}, seed={seed})"
            )))
        } else {
            Ok(())
        }
    };

    let (utility_1, utility_2) = match pref_type {
        PrefType::Symmetric => {
            let mut u1 = loop {
                let m: Vec<Vec<T>> = symmetric_utilities(&mut rng, n_side, lo, hi)
                    .into_iter()
                    .map(|r| r.into_iter().map(T::of).collect())
                    .collect();
                let t = transpose(&m);
                if m.iter().chain(t.iter()).all(|r| row_is_strict(r)) {
                    break m;
                }
                bump(&mut redraws)?;
            };
            if !strict {
                for row in u1.iter_mut() {
                    maybe_force_tie(&mut rng, row);
                }
                let mut cols = transpose(&u1);
                for col in cols.iter_mut() {
                    maybe_force_tie(&mut rng, col);
                }
                u1 = transpose(&cols);
            }
            let u2 = transpose(&u1);
            (u1, u2)
        }
        PrefType::Asymmetric => {
            let mut side = || -> Result<Vec<Vec<T>>> {
                let mut m = Vec::with_capacity(n_side);
                for _ in 0..n_side {
                    let mut row = loop {
                        let row = draw_row(&mut rng, n_side, lo, hi);
                        if !strict || row_is_strict(&row) {
                            break row;
                        }
                        bump(&mut redraws)?;
                    };
                    if !strict {
                        maybe_force_tie(&mut rng, &mut row);
                    }
                    m.push(row);
                }
                Ok(m)
            };
            let u1 = side()?;
            let u2 = side()?;
            (u1, u2)
        }
    };

    let instance = Instance { n_side, variant, pref_type, utility_1, utility_2, seed };
    instance
        .validate()
        .map_err(|e| Error::Internal(format!("generator produced an invalid instance: {e}")))?;
    Ok(instance)
}

/// Competition ranks of one agent's row: `1 + #(acceptable entries strictly
/// better)`, `None` for unacceptable entries.
pub fn rank_row<T: Scalar>(row: &[T]) -> Vec<Rank> {
    row.iter()
        .map(|&u| {
            if u < T::zero() {
                None
            } else {
                let better = row.iter().filter(|&&v| v >= T::zero() && v > u).count();
                Some(better as u32 + 1)
            }
        })
        .collect()
}

pub fn derive_ranks<T: Scalar>(instance: &Instance<T>) -> RankProfile {
    RankProfile {
        rank_1: instance.utility_1.iter().map(|r| rank_row(r)).collect(),
        rank_2: instance.utility_2.iter().map(|r| rank_row(r)).collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    format: String,
    n_side: usize,
    variant: Variant,
    pref_type: PrefType,
    utility_1: Vec<Vec<String>>,
    utility_2: Vec<Vec<String>>,
    seed: u64,
}

/// 17 significant digits, enough for a bit-exact `f64` round trip.
fn encode_utility<T: Scalar>(u: T) -> String {
    format!("{:.16e}", u.as_f64())
}

fn decode_utility<T: Scalar>(s: &str) -> Result<T> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInstance(format!("utility {s:?} is not a decimal number")))?;
    Ok(T::of(v))
}

impl InstanceDoc {
    fn from_instance<T: Scalar>(x: &Instance<T>) -> Self {
        let enc = |m: &[Vec<T>]| -> Vec<Vec<String>> {
            m.iter().map(|r| r.iter().map(|&u| encode_utility(u)).collect()).collect()
        };
        InstanceDoc {
            format: INSTANCE_FORMAT.to_string(),
            n_side: x.n_side,
            variant: x.variant,
            pref_type: x.pref_type,
            utility_1: enc(&x.utility_1),
            utility_2: enc(&x.utility_2),
            seed: x.seed,
        }
    }

    fn try_into_instance<T: Scalar>(self) -> Result<Instance<T>> {
        if self.format != INSTANCE_FORMAT {
            return Err(Error::InvalidInstance(format!(
                "unsupported format tag {:?} (expected {INSTANCE_FORMAT:?})",
                self.format
            )));
        }
        let dec = |m: Vec<Vec<String>>| -> Result<Vec<Vec<T>>> {
            m.iter().map(|r| r.iter().map(|s| decode_utility(s)).collect()).collect()
        };
        let instance = Instance {
            n_side: self.n_side,
            variant: self.variant,
            pref_type: self.pref_type,
            utility_1: dec(self.utility_1)?,
            utility_2: dec(self.utility_2)?,
            seed: self.seed,
        };
        instance.validate()?;
        Ok(instance)
    }
}

impl<T: Scalar> Serialize for Instance<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        InstanceDoc::from_instance(self).serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Instance<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        InstanceDoc::deserialize(deserializer)?
            .try_into_instance()
            .map_err(serde::de::Error::custom)
    }
}
