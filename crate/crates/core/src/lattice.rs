//! Powerset security lattice over principals and the typing context that
//! assigns levels to atoms.
//!
//! A level is the set of principals allowed to know a value. Smaller sets
//! are higher: `⊤` is the empty set (nobody), `⊥` is every principal,
//! including ones that are never named. Meet is union, join is
//! intersection, and `a ⊒ b` holds iff `a ⊆ b`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Serialize, Serializer};

use crate::term::{Atom, KeyTable, Sort};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    /// All principals. Kept symbolic since the principal universe is open.
    Bottom,
    Principals(BTreeSet<String>),
}

impl Level {
    pub fn top() -> Level {
        Level::Principals(BTreeSet::new())
    }

    pub fn bottom() -> Level {
        Level::Bottom
    }

    pub fn of<I, S>(names: I) -> Level
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Level::Principals(names.into_iter().map(Into::into).collect())
    }

    pub fn is_top(&self) -> bool {
        matches!(self, Level::Principals(s) if s.is_empty())
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Level::Bottom)
    }

    /// Greatest lower bound `⊓` (set union).
    pub fn meet(&self, other: &Level) -> Level {
        match (self, other) {
            (Level::Bottom, _) | (_, Level::Bottom) => Level::Bottom,
            (Level::Principals(a), Level::Principals(b)) => {
                Level::Principals(a.union(b).cloned().collect())
            }
        }
    }

    /// Least upper bound `⊔` (set intersection).
    pub fn join(&self, other: &Level) -> Level {
        match (self, other) {
            (Level::Bottom, x) | (x, Level::Bottom) => x.clone(),
            (Level::Principals(a), Level::Principals(b)) => {
                Level::Principals(a.intersection(b).cloned().collect())
            }
        }
    }

    /// `self ⊒ other`.
    pub fn geq(&self, other: &Level) -> bool {
        match (self, other) {
            (_, Level::Bottom) => true,
            (Level::Bottom, Level::Principals(_)) => false,
            (Level::Principals(a), Level::Principals(b)) => a.is_subset(b),
        }
    }

    pub fn meet_all<'a>(levels: impl IntoIterator<Item = &'a Level>) -> Level {
        levels.into_iter().fold(Level::top(), |acc, l| acc.meet(l))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Bottom => f.write_str("BOT"),
            Level::Principals(s) if s.is_empty() => f.write_str("TOP"),
            Level::Principals(s) => {
                f.write_str("{")?;
                for (i, p) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(p)?;
                }
                f.write_str("}")
            }
        }
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// `⌜M⌝ ⊒ ⌜m⌝`: some element of `levels` is above `target`.
pub fn set_geq<'a>(levels: impl IntoIterator<Item = &'a Level>, target: &Level) -> bool {
    levels.into_iter().any(|l| l.geq(target))
}

/// Identity of the intruder and the atoms it starts with.
pub const INTRUDER: &str = "I";
pub const INTRUDER_KEY: &str = "kI";
pub const INTRUDER_NONCE: &str = "nI";

/// The function `⌜·⌝` restricted to atoms, the key-inverse table, and the
/// intruder's initial knowledge `K(I)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypingContext {
    levels: BTreeMap<String, Level>,
    pub keys: KeyTable,
    pub intruder_knowledge: BTreeSet<Atom>,
}

impl TypingContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares the level of every atom named `name`, whatever its session
    /// or instance tag.
    pub fn declare(&mut self, name: impl Into<String>, level: Level) {
        self.levels.insert(name.into(), level);
    }

    pub fn declared(&self, name: &str) -> Option<&Level> {
        self.levels.get(name)
    }

    pub fn declarations(&self) -> impl Iterator<Item = (&str, &Level)> {
        self.levels.iter().map(|(n, l)| (n.as_str(), l))
    }

    /// Principal identities are public; other atoms get their declared
    /// level, or `None` when undeclared.
    pub fn level_of(&self, atom: &Atom) -> Option<Level> {
        if atom.sort == Sort::Principal {
            return Some(Level::Bottom);
        }
        self.levels.get(&atom.name).cloned()
    }

    /// Level of the inverse of a key atom.
    pub fn inverse_level(&self, key: &Atom) -> Option<Level> {
        self.level_of(&self.keys.inverse(key))
    }

    /// Levels of the intruder's initial knowledge, for the `⌜K(I)⌝ ⊒ ⌜α⌝`
    /// escape clause.
    pub fn intruder_levels(&self) -> Vec<Level> {
        self.intruder_knowledge
            .iter()
            .filter_map(|a| self.level_of(a))
            .collect()
    }

    /// Adds the intruder identity and its own key and nonce, all public.
    pub fn add_intruder_defaults(&mut self) {
        self.intruder_knowledge.insert(Atom::principal(INTRUDER));
        self.intruder_knowledge.insert(Atom::key(INTRUDER_KEY));
        self.intruder_knowledge.insert(Atom::nonce(INTRUDER_NONCE));
        self.declare(INTRUDER_KEY, Level::Bottom);
        self.declare(INTRUDER_NONCE, Level::Bottom);
    }
}
