//! Derivation and the three safe functions `F_MAX`, `F_N`, `F_EK`.
//!
//! Each returns, for an atom `α` in a message, a level built from the
//! outermost protective key `k` around it (one with `⌜k⁻¹⌝ ⊒ ⌜α⌝`) and the
//! principals travelling with `α` under `k`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::EvalError;
use crate::lattice::{Level, TypingContext};
use crate::term::{apply, vars, Atom, Sort, Substitution, Symbol, Term, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Selector {
    #[serde(rename = "MAX")]
    Max,
    #[serde(rename = "N")]
    N,
    #[serde(rename = "EK")]
    Ek,
}

impl Selector {
    pub const ALL: [Selector; 3] = [Selector::Max, Selector::N, Selector::Ek];
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selector::Max => "MAX",
            Selector::N => "N",
            Selector::Ek => "EK",
        })
    }
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Selector::Max),
            "n" => Ok(Selector::N),
            "ek" => Ok(Selector::Ek),
            other => Err(format!(
                "unknown function `{other}` (expected max, n or ek)"
            )),
        }
    }
}

/// What is being evaluated: an atom, or a variable standing for a block
/// of unknown content.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subject {
    Atom(Atom),
    Var(Variable),
}

impl Subject {
    pub fn of(t: &Term) -> Option<Subject> {
        match t {
            Term::Atom(a) => Some(Subject::Atom(a.clone())),
            Term::Var(v) => Some(Subject::Var(v.clone())),
            _ => None,
        }
    }

    pub fn to_term(&self) -> Term {
        match self {
            Subject::Atom(a) => Term::Atom(a.clone()),
            Subject::Var(v) => Term::Var(v.clone()),
        }
    }

    /// Declared level; `None` for variables and undeclared atoms.
    pub fn level(&self, ctx: &TypingContext) -> Option<Level> {
        match self {
            Subject::Atom(a) => ctx.level_of(a),
            Subject::Var(_) => None,
        }
    }

    /// Whether the subject occurs in `m` outside key positions.
    pub fn occurs_in(&self, m: &Term) -> bool {
        match self {
            Subject::Atom(a) => m.contains_atom_as_data(a),
            Subject::Var(v) => var_as_data(m, v),
        }
    }
}

fn var_as_data(m: &Term, v: &Variable) -> bool {
    match m {
        Term::Var(w) => w == v,
        Term::Pair(a, b) => var_as_data(a, v) || var_as_data(b, v),
        Term::Enc(b, _) | Term::Dec(b, _) => var_as_data(b, v),
        _ => false,
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Atom(a) => a.fmt(f),
            Subject::Var(v) => v.fmt(f),
        }
    }
}

// ---------------------------------------------------------------------------
// Derivation

/// `∂_S m`: erases the variables of `remove` from payload positions.
/// Keys are left alone.
pub fn derive(m: &Term, remove: &BTreeSet<Variable>) -> Term {
    match m {
        Term::Var(v) if remove.contains(v) => Term::Empty,
        Term::Pair(a, b) => Term::pair(derive(a, remove), derive(b, remove)),
        Term::Enc(b, k) => Term::enc(derive(b, remove), (**k).clone()),
        Term::Dec(b, k) => match derive(b, remove) {
            Term::Empty => Term::Empty,
            body => Term::dec(body, (**k).clone()),
        },
        leaf => leaf.clone(),
    }
}

/// `∂[x̄] m`: erases every variable but `keep`. For an atom, every
/// variable goes.
pub fn derive_keep(m: &Term, keep: &Subject) -> Term {
    let mut remove = vars(m);
    if let Subject::Var(v) = keep {
        remove.remove(v);
    }
    derive(m, &remove)
}

// ---------------------------------------------------------------------------
// Protection sites

/// A candidate protective key around one occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectionSite {
    pub key: Term,
    /// `⌜k⁻¹⌝`, or `⊥` for a key that is itself a variable.
    pub key_level: Level,
    /// Principal identities anywhere under this encryption, the subject
    /// excluded.
    pub neighborhood: BTreeSet<String>,
}

/// One occurrence of the subject and the sites that protect it. No sites
/// means the occurrence is exposed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occurrence {
    pub sites: Vec<ProtectionSite>,
    /// A non-protective key encloses the chosen protective key.
    pub shadowed: bool,
}

pub fn occurrences(
    subject: &Subject,
    m: &Term,
    ctx: &TypingContext,
) -> Result<Vec<Occurrence>, EvalError> {
    let level = subject.level(ctx);
    let target = subject.to_term();
    let mut out = Vec::new();
    let mut stack: Vec<(&Term, &Term)> = Vec::new();
    collect(&target, level.as_ref(), m, ctx, &mut stack, &mut out)?;
    Ok(out)
}

fn collect<'a>(
    target: &Term,
    level: Option<&Level>,
    m: &'a Term,
    ctx: &TypingContext,
    stack: &mut Vec<(&'a Term, &'a Term)>,
    out: &mut Vec<Occurrence>,
) -> Result<(), EvalError> {
    if m == target {
        out.push(sites_for(target, level, stack, ctx)?);
        return Ok(());
    }
    match m {
        Term::Pair(a, b) => {
            collect(target, level, a, ctx, stack, out)?;
            collect(target, level, b, ctx, stack, out)
        }
        Term::Enc(b, k) => {
            stack.push((k, b));
            let r = collect(target, level, b, ctx, stack, out);
            stack.pop();
            r
        }
        Term::Dec(b, _) => collect(target, level, b, ctx, stack, out),
        _ => Ok(()),
    }
}

fn key_inverse_level(k: &Term, ctx: &TypingContext) -> Result<Option<Level>, EvalError> {
    match k {
        Term::Atom(a) => ctx
            .inverse_level(a)
            .map(Some)
            .ok_or_else(|| EvalError::MissingLevel(ctx.keys.inverse(a).to_string())),
        _ => Ok(None),
    }
}

fn neighborhood(body: &Term, target: &Term) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    body.walk(&mut |t| {
        if let Term::Atom(a) = t {
            if a.sort == Sort::Principal && t != target {
                out.insert(a.principal_label());
            }
        }
    });
    out
}

fn sites_for(
    target: &Term,
    level: Option<&Level>,
    stack: &[(&Term, &Term)],
    ctx: &TypingContext,
) -> Result<Occurrence, EvalError> {
    let mut sites = Vec::new();
    let mut shadowed = false;
    for &(key, body) in stack {
        let key_level = key_inverse_level(key, ctx)?;
        match level {
            Some(l) => {
                if let Some(kl) = key_level.filter(|kl| kl.geq(l)) {
                    sites.push(ProtectionSite {
                        key: key.clone(),
                        key_level: kl,
                        neighborhood: neighborhood(body, target),
                    });
                    break;
                }
                shadowed = true;
            }
            None => sites.push(ProtectionSite {
                key: key.clone(),
                key_level: key_level.unwrap_or(Level::Bottom),
                neighborhood: neighborhood(body, target),
            }),
        }
    }
    if sites.is_empty() {
        shadowed = false;
    }
    Ok(Occurrence { sites, shadowed })
}

/// Every candidate site over every occurrence.
pub fn protective_sites(
    subject: &Subject,
    m: &Term,
    ctx: &TypingContext,
) -> Result<Vec<ProtectionSite>, EvalError> {
    Ok(occurrences(subject, m, ctx)?
        .into_iter()
        .flat_map(|o| o.sites)
        .collect())
}

// ---------------------------------------------------------------------------
// Evaluation

/// A function from (subject, message) to a security level.
pub trait SafeFunction {
    fn name(&self) -> String;

    fn evaluate(
        &self,
        subject: &Subject,
        m: &Term,
        ctx: &TypingContext,
    ) -> Result<Level, EvalError>;

    /// `F(α, M)` for a set: the meet over its members, `⊤` when empty.
    fn evaluate_set(
        &self,
        subject: &Subject,
        ms: &[Term],
        ctx: &TypingContext,
    ) -> Result<Level, EvalError> {
        let mut acc = Level::top();
        for m in ms {
            acc = acc.meet(&self.evaluate(subject, m, ctx)?);
            if acc.is_bottom() {
                break;
            }
        }
        Ok(acc)
    }
}

impl Selector {
    pub fn site_value(self, site: &ProtectionSite) -> Level {
        let n = Level::Principals(site.neighborhood.clone());
        match self {
            Selector::Max => site.key_level.meet(&n),
            Selector::N => n,
            Selector::Ek => site.key_level.clone(),
        }
    }
}

impl SafeFunction for Selector {
    fn name(&self) -> String {
        self.to_string()
    }

    fn evaluate(
        &self,
        subject: &Subject,
        m: &Term,
        ctx: &TypingContext,
    ) -> Result<Level, EvalError> {
        let mut acc = Level::top();
        for occ in occurrences(subject, m, ctx)? {
            if occ.sites.is_empty() {
                return Ok(Level::Bottom);
            }
            for site in &occ.sites {
                acc = acc.meet(&self.site_value(site));
            }
        }
        Ok(acc)
    }
}

/// `F(α, ∂[ᾱ] origin·σ)`: the value an origin assigns to the subject of a
/// query it unifies with.
///
/// An atom found in the static part of the origin is evaluated there. An
/// atom carried by an origin variable, and a query variable, are evaluated
/// as an opaque block at the position of that variable.
pub fn evaluate_on_origin(
    f: &dyn SafeFunction,
    subject: &Subject,
    query: &Term,
    origin: &Term,
    sigma: &Substitution,
    ctx: &TypingContext,
) -> Result<Level, EvalError> {
    let params: Substitution = sigma
        .iter()
        .filter(|(s, _)| matches!(s, Symbol::Param(_)))
        .map(|(s, t)| (s.clone(), t.clone()))
        .collect();
    match subject {
        Subject::Atom(a) => {
            let alpha = match apply(&Term::Atom(a.clone()), sigma) {
                Term::Atom(x) => x,
                _ => a.clone(),
            };
            let alpha_s = Subject::Atom(alpha.clone());
            let instantiated = apply(origin, &params);
            let stat = derive_keep(&instantiated, &alpha_s);
            if stat.contains_atom_as_data(&alpha) {
                return f.evaluate(&alpha_s, &stat, ctx);
            }
            let mut acc: Option<Level> = None;
            for x in origin.vars_in_order() {
                let image = sigma
                    .get(&Symbol::Var(x.clone()))
                    .cloned()
                    .unwrap_or_else(|| Term::Var(x.clone()));
                if image.contains_atom_as_data(&alpha) && var_as_data(origin, &x) {
                    let block = Subject::Var(x);
                    let v = f.evaluate(&block, &derive_keep(&instantiated, &block), ctx)?;
                    acc = Some(acc.map_or(v.clone(), |l| l.meet(&v)));
                }
            }
            acc.ok_or_else(|| EvalError::NotPresent(alpha.to_string()))
        }
        Subject::Var(y) => {
            let marked = mark_block(query, origin, y);
            if !var_as_data(&marked, y) {
                return Err(EvalError::NotPresent(y.to_string()));
            }
            let instantiated = apply(&marked, &params);
            f.evaluate(subject, &derive_keep(&instantiated, subject), ctx)
        }
    }
}

/// Replaces by `y` each part of `origin` that lines up with `y` in the
/// query, or that is a variable whose image contains `y`.
fn mark_block(query: &Term, origin: &Term, y: &Variable) -> Term {
    if matches!(query, Term::Var(v) if v == y) {
        return Term::Var(y.clone());
    }
    match (query, origin) {
        (q, Term::Var(_)) if var_as_data(q, y) => Term::Var(y.clone()),
        (Term::Pair(q1, q2), Term::Pair(o1, o2)) => {
            Term::pair(mark_block(q1, o1, y), mark_block(q2, o2, y))
        }
        (Term::Enc(qb, _), Term::Enc(ob, ok)) => Term::enc(mark_block(qb, ob, y), (**ok).clone()),
        (Term::Dec(qb, _), Term::Dec(ob, ok)) => Term::dec(mark_block(qb, ob, y), (**ok).clone()),
        (_, o) => o.clone(),
    }
}
