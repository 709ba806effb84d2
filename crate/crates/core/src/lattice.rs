//! Finite bounded lattices of trust levels.
//!
//! A [`DecisionLattice`] is built from named levels plus covering pairs; the
//! reflexive-transitive closure is computed at construction and the structure
//! is checked to be a bounded poset. The lattice property itself (all meets
//! and joins exist) is checked eagerly but surfaced through [`validate`] and
//! through structured errors on the operations, because configured lattices
//! are allowed to be defective: a lattice that is not distributive, or where
//! some implication has no unique best candidate, is still usable as a
//! decision space, it just reports its defects. [`downset_completion`] is the
//! sanctioned repair: the lattice of non-empty down-closed subsets is always
//! a Heyting algebra.
//!
//! [`validate`]: DecisionLattice::validate
//! [`downset_completion`]: DecisionLattice::downset_completion

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

static NEXT_LATTICE_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of one constructed lattice; levels from different lattices never
/// compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatticeId(u64);

/// A named trust level, valid only within the lattice that created it.
#[derive(Debug, Clone)]
pub struct TrustLevel {
    lattice: LatticeId,
    index: u32,
    name: Arc<str>,
}

impl TrustLevel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lattice_id(&self) -> LatticeId {
        self.lattice
    }

    pub(crate) fn index(&self) -> usize {
        self.index as usize
    }
}

impl PartialEq for TrustLevel {
    fn eq(&self, other: &Self) -> bool {
        self.lattice == other.lattice && self.index == other.index
    }
}

impl Eq for TrustLevel {}

impl PartialOrd for TrustLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TrustLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.lattice, self.index).cmp(&(other.lattice, other.index))
    }
}

impl std::hash::Hash for TrustLevel {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        (self.lattice, self.index).hash(state);
    }
}

impl fmt::Display for TrustLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl Serialize for TrustLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("level name must be non-empty")]
    EmptyLevelName,
    #[error("duplicate level `{name}`")]
    DuplicateLevel { name: String },
    #[error("unknown level `{name}`")]
    UnknownLevel { name: String },
    #[error("level `{name}` belongs to a different lattice")]
    CrossLattice { name: String },
    #[error("order cycle: `{a}` and `{b}` are mutually below each other")]
    OrderCycle { a: String, b: String },
    #[error("no meet exists for `{a}` and `{b}`")]
    NoMeet { a: String, b: String },
    #[error("no join exists for `{a}` and `{b}`")]
    NoJoin { a: String, b: String },
    #[error("no implication `{a}` -> `{b}`: maximal candidates {maximal:?} are incomparable")]
    NoImplication {
        a: String,
        b: String,
        maximal: Vec<String>,
    },
}

/// One defect found by [`DecisionLattice::validate`], with concrete witness
/// levels from the diagnosed lattice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LatticeDiagnostic {
    /// Antisymmetry violated by the pair.
    NotAPoset { a: String, b: String },
    /// The pair has no greatest lower bound or no least upper bound.
    NotALattice { a: String, b: String },
    /// `a ∧ (b ∨ c) ≠ (a ∧ b) ∨ (a ∧ c)`; `b`, `c` in index order (the law is
    /// symmetric in them, so each unordered witness is reported once).
    NotDistributive { a: String, b: String, c: String },
    /// `max{x : x ∧ a ≤ b}` has two or more incomparable maximal elements.
    NoImplication { a: String, b: String },
}

/// A finite bounded poset of trust levels with lattice operations.
#[derive(Debug, Clone)]
pub struct DecisionLattice {
    id: LatticeId,
    names: Vec<Arc<str>>,
    index: BTreeMap<String, usize>,
    /// Reflexive-transitive closure: `leq[a][b]` iff a ≤ b.
    leq: Vec<Vec<bool>>,
    /// Covering pairs (lower, upper) derived from the closure, sorted.
    covers: Vec<(usize, usize)>,
    bottom: usize,
    top: usize,
    /// Cached greatest lower / least upper bounds; `None` where absent.
    meets: Vec<Option<usize>>,
    joins: Vec<Option<usize>>,
}

impl DecisionLattice {
    /// Build from level names, order pairs (covering or full relation; the
    /// closure is computed here), and named bottom/top. Fails if the input is
    /// not a bounded poset. Missing meets or joins do not fail construction;
    /// they surface through the operations and [`validate`].
    ///
    /// [`validate`]: DecisionLattice::validate
    pub fn new<S: AsRef<str>>(
        levels: &[S],
        order: &[(S, S)],
        bottom: &str,
        top: &str,
    ) -> Result<Self, LatticeError> {
        let mut names: Vec<Arc<str>> = Vec::with_capacity(levels.len());
        let mut index = BTreeMap::new();
        for level in levels {
            let name = level.as_ref();
            if name.is_empty() {
                return Err(LatticeError::EmptyLevelName);
            }
            if index.insert(name.to_string(), names.len()).is_some() {
                return Err(LatticeError::DuplicateLevel {
                    name: name.to_string(),
                });
            }
            names.push(Arc::from(name));
        }
        let n = names.len();
        let resolve = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| LatticeError::UnknownLevel {
                    name: name.to_string(),
                })
        };
        let bottom = resolve(bottom)?;
        let top = resolve(top)?;

        let mut leq = vec![vec![false; n]; n];
        for (i, row) in leq.iter_mut().enumerate() {
            row[i] = true;
        }
        for (lo, hi) in order {
            let lo = resolve(lo.as_ref())?;
            let hi = resolve(hi.as_ref())?;
            leq[lo][hi] = true;
        }
        // Declaring bottom/top implies their bounding relations.
        for (i, row) in leq.iter_mut().enumerate() {
            row[top] = true;
            if i == bottom {
                row.fill(true);
            }
        }
        // Warshall closure.
        for k in 0..n {
            let row_k = leq[k].clone();
            for row in leq.iter_mut() {
                if row[k] {
                    for (cell, &reach) in row.iter_mut().zip(&row_k) {
                        *cell |= reach;
                    }
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if leq[i][j] && leq[j][i] {
                    return Err(LatticeError::OrderCycle {
                        a: names[i].to_string(),
                        b: names[j].to_string(),
                    });
                }
            }
        }

        let mut lattice = DecisionLattice {
            id: LatticeId(NEXT_LATTICE_ID.fetch_add(1, Ordering::Relaxed)),
            names,
            index,
            leq,
            covers: Vec::new(),
            bottom,
            top,
            meets: vec![None; n * n],
            joins: vec![None; n * n],
        };
        lattice.covers = lattice.compute_covers();
        for a in 0..n {
            for b in 0..n {
                lattice.meets[a * n + b] = lattice.bound_of(a, b, true);
                lattice.joins[a * n + b] = lattice.bound_of(a, b, false);
            }
        }
        Ok(lattice)
    }

    fn compute_covers(&self) -> Vec<(usize, usize)> {
        let n = self.names.len();
        let mut covers = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a == b || !self.leq[a][b] {
                    continue;
                }
                let strictly_between = (0..n).any(|z| {
                    z != a && z != b && self.leq[a][z] && self.leq[z][b]
                });
                if !strictly_between {
                    covers.push((a, b));
                }
            }
        }
        covers.sort();
        covers
    }

    /// Greatest lower bound (glb=true) or least upper bound of a pair, if a
    /// unique one exists.
    fn bound_of(&self, a: usize, b: usize, glb: bool) -> Option<usize> {
        let n = self.names.len();
        let candidates: Vec<usize> = (0..n)
            .filter(|&x| {
                if glb {
                    self.leq[x][a] && self.leq[x][b]
                } else {
                    self.leq[a][x] && self.leq[b][x]
                }
            })
            .collect();
        // A unique extremal candidate in a finite set bounds all of them.
        let mut best: Vec<usize> = Vec::new();
        for &x in &candidates {
            let beaten = candidates.iter().any(|&y| {
                y != x && if glb { self.leq[x][y] } else { self.leq[y][x] }
            });
            if !beaten {
                best.push(x);
            }
        }
        match best.as_slice() {
            [unique] => Some(*unique),
            _ => None,
        }
    }

    pub fn id(&self) -> LatticeId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn handle(&self, index: usize) -> TrustLevel {
        TrustLevel {
            lattice: self.id,
            index: index as u32,
            name: Arc::clone(&self.names[index]),
        }
    }

    pub fn level(&self, name: &str) -> Result<TrustLevel, LatticeError> {
        self.index
            .get(name)
            .map(|&i| self.handle(i))
            .ok_or_else(|| LatticeError::UnknownLevel {
                name: name.to_string(),
            })
    }

    pub fn levels(&self) -> impl Iterator<Item = TrustLevel> + '_ {
        (0..self.names.len()).map(|i| self.handle(i))
    }

    pub fn bottom(&self) -> TrustLevel {
        self.handle(self.bottom)
    }

    pub fn top(&self) -> TrustLevel {
        self.handle(self.top)
    }

    /// Sorted level names, for the canonical report form.
    pub fn level_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.names.iter().map(|n| n.to_string()).collect();
        names.sort();
        names
    }

    /// Sorted covering pairs (lower, upper) by name, for the canonical report
    /// form and for re-rendering to the policy language.
    pub fn covering_pairs(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = self
            .covers
            .iter()
            .map(|&(a, b)| (self.names[a].to_string(), self.names[b].to_string()))
            .collect();
        pairs.sort();
        pairs
    }

    fn resolve(&self, level: &TrustLevel) -> Result<usize, LatticeError> {
        if level.lattice != self.id {
            return Err(LatticeError::CrossLattice {
                name: level.name().to_string(),
            });
        }
        let i = level.index();
        if i >= self.names.len() {
            return Err(LatticeError::UnknownLevel {
                name: level.name().to_string(),
            });
        }
        Ok(i)
    }

    pub fn leq(&self, a: &TrustLevel, b: &TrustLevel) -> Result<bool, LatticeError> {
        let (a, b) = (self.resolve(a)?, self.resolve(b)?);
        Ok(self.leq[a][b])
    }

    /// Strict comparison; `None` when the pair is incomparable.
    pub fn strict_cmp(
        &self,
        a: &TrustLevel,
        b: &TrustLevel,
    ) -> Result<Option<std::cmp::Ordering>, LatticeError> {
        let (i, j) = (self.resolve(a)?, self.resolve(b)?);
        Ok(match (self.leq[i][j], self.leq[j][i]) {
            (true, true) => Some(std::cmp::Ordering::Equal),
            (true, false) => Some(std::cmp::Ordering::Less),
            (false, true) => Some(std::cmp::Ordering::Greater),
            (false, false) => None,
        })
    }

    pub fn meet(&self, a: &TrustLevel, b: &TrustLevel) -> Result<TrustLevel, LatticeError> {
        let (i, j) = (self.resolve(a)?, self.resolve(b)?);
        self.meets[i * self.names.len() + j]
            .map(|m| self.handle(m))
            .ok_or_else(|| LatticeError::NoMeet {
                a: self.names[i].to_string(),
                b: self.names[j].to_string(),
            })
    }

    pub fn join(&self, a: &TrustLevel, b: &TrustLevel) -> Result<TrustLevel, LatticeError> {
        let (i, j) = (self.resolve(a)?, self.resolve(b)?);
        self.joins[i * self.names.len() + j]
            .map(|m| self.handle(m))
            .ok_or_else(|| LatticeError::NoJoin {
                a: self.names[i].to_string(),
                b: self.names[j].to_string(),
            })
    }

    /// Relative pseudo-complement `a -> b = max{x : x ∧ a ≤ b}`.
    ///
    /// Candidacy is decided order-theoretically (every common lower bound of
    /// `x` and `a` is below `b`), so the operation is meaningful even on
    /// posets with missing meets. When the candidate set has no unique
    /// maximum the implication does not exist and the incomparable maximal
    /// candidates are reported rather than approximated.
    pub fn implies(&self, a: &TrustLevel, b: &TrustLevel) -> Result<TrustLevel, LatticeError> {
        let (ai, bi) = (self.resolve(a)?, self.resolve(b)?);
        let n = self.names.len();
        let candidates: Vec<usize> = (0..n)
            .filter(|&x| {
                (0..n).all(|z| !(self.leq[z][x] && self.leq[z][ai]) || self.leq[z][bi])
            })
            .collect();
        let maximal: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&x| {
                !candidates
                    .iter()
                    .any(|&y| y != x && self.leq[x][y])
            })
            .collect();
        match maximal.as_slice() {
            [unique] => Ok(self.handle(*unique)),
            _ => Err(LatticeError::NoImplication {
                a: self.names[ai].to_string(),
                b: self.names[bi].to_string(),
                maximal: {
                    let mut names: Vec<String> =
                        maximal.iter().map(|&m| self.names[m].to_string()).collect();
                    names.sort();
                    names
                },
            }),
        }
    }

    /// Pseudo-complement `¬a = a -> ⊥`.
    pub fn negate(&self, a: &TrustLevel) -> Result<TrustLevel, LatticeError> {
        let bottom = self.bottom();
        self.implies(a, &bottom)
    }

    /// Check the full Heyting-algebra contract. Empty diagnostics iff the
    /// structure is a bounded, complete-in-the-finite-sense, distributive
    /// lattice with all implications. Distributivity is checked by brute
    /// force over all triples; each unordered witness is reported once.
    pub fn validate(&self) -> Vec<LatticeDiagnostic> {
        let n = self.names.len();
        let mut diags = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if self.leq[a][b] && self.leq[b][a] {
                    diags.push(LatticeDiagnostic::NotAPoset {
                        a: self.names[a].to_string(),
                        b: self.names[b].to_string(),
                    });
                }
            }
        }
        let mut is_lattice = true;
        for a in 0..n {
            for b in a..n {
                if self.meets[a * n + b].is_none() || self.joins[a * n + b].is_none() {
                    is_lattice = false;
                    diags.push(LatticeDiagnostic::NotALattice {
                        a: self.names[a].to_string(),
                        b: self.names[b].to_string(),
                    });
                }
            }
        }
        if is_lattice {
            // a ∧ (b ∨ c) = (a ∧ b) ∨ (a ∧ c); in a lattice this is
            // equivalent to the dual law, so one direction suffices.
            for a in 0..n {
                for b in 0..n {
                    for c in (b + 1)..n {
                        let lhs = self.meets[a * n + self.joins[b * n + c].unwrap()];
                        let ab = self.meets[a * n + b].unwrap();
                        let ac = self.meets[a * n + c].unwrap();
                        let rhs = self.joins[ab * n + ac];
                        if lhs != rhs {
                            diags.push(LatticeDiagnostic::NotDistributive {
                                a: self.names[a].to_string(),
                                b: self.names[b].to_string(),
                                c: self.names[c].to_string(),
                            });
                        }
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                if self.implies(&self.handle(a), &self.handle(b)).is_err() {
                    diags.push(LatticeDiagnostic::NoImplication {
                        a: self.names[a].to_string(),
                        b: self.names[b].to_string(),
                    });
                }
            }
        }
        diags
    }

    /// The lattice of non-empty down-closed subsets ordered by inclusion.
    ///
    /// Always a Heyting algebra for a finite bounded poset (every non-empty
    /// down-set contains bottom, so intersections stay non-empty). Original
    /// levels embed as principal down-sets under their own names; other
    /// down-sets are named by their maximal elements joined with `∨`.
    pub fn downset_completion(&self) -> DecisionLattice {
        let n = self.names.len();
        let mut downsets: Vec<Vec<bool>> = Vec::new();
        // Enumerate down-sets as characteristic vectors, smallest first so
        // naming below is deterministic.
        let mut frontier: BTreeSet<Vec<bool>> = BTreeSet::new();
        for seed in 0..n {
            let set: Vec<bool> = (0..n).map(|z| self.leq[z][seed]).collect();
            frontier.insert(set);
        }
        // Close under union; unions of down-sets are down-sets, and every
        // non-empty down-set is a union of principal ones.
        let mut all: BTreeSet<Vec<bool>> = frontier.clone();
        loop {
            let mut grew = false;
            let snapshot: Vec<Vec<bool>> = all.iter().cloned().collect();
            for x in &snapshot {
                for y in &snapshot {
                    let union: Vec<bool> =
                        x.iter().zip(y.iter()).map(|(a, b)| *a || *b).collect();
                    if all.insert(union) {
                        grew = true;
                    }
                }
            }
            if !grew {
                break;
            }
        }
        downsets.extend(all);

        let member_names: Vec<String> = downsets
            .iter()
            .map(|set| {
                // Maximal elements of the down-set.
                let members: Vec<usize> =
                    (0..n).filter(|&z| set[z]).collect();
                let maximal: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|&z| {
                        !members.iter().any(|&w| w != z && self.leq[z][w])
                    })
                    .collect();
                if maximal.len() == 1 {
                    self.names[maximal[0]].to_string()
                } else {
                    let mut names: Vec<&str> =
                        maximal.iter().map(|&z| &*self.names[z]).collect();
                    names.sort();
                    names.join("∨")
                }
            })
            .collect();

        let mut order: Vec<(String, String)> = Vec::new();
        for (i, x) in downsets.iter().enumerate() {
            for (j, y) in downsets.iter().enumerate() {
                if i != j && x.iter().zip(y.iter()).all(|(a, b)| !*a || *b) {
                    order.push((member_names[i].clone(), member_names[j].clone()));
                }
            }
        }
        let bottom_name = member_names
            .iter()
            .enumerate()
            .find(|(i, _)| downsets[*i].iter().filter(|m| **m).count() == 1)
            .map(|(_, name)| name.clone())
            .expect("principal down-set of bottom exists");
        let top_name = member_names
            .iter()
            .enumerate()
            .find(|(i, _)| downsets[*i].iter().all(|m| *m))
            .map(|(_, name)| name.clone())
            .expect("full down-set exists");

        DecisionLattice::new(&member_names, &order, &bottom_name, &top_name)
            .expect("down-set lattice is a bounded poset by construction")
    }
}
