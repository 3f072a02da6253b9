//! Message algebra: atoms, variables, pairing and encryption, kept in the
//! normal form where `dec(enc(m, k), k⁻¹)` has been cancelled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::TermError;

/// Kind of an atomic name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sort {
    Principal,
    Nonce,
    Key,
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::Principal => "principal",
            Sort::Nonce => "nonce",
            Sort::Key => "key",
        })
    }
}

/// Session tag carried by freshly generated values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Session {
    /// The symbolic session `i` of a generalized role.
    Symbolic,
    /// A concrete run, used by the trace simulator.
    Run(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub name: String,
    pub sort: Sort,
    pub session: Option<Session>,
    /// Occurrence index of a lifted parameter (`A_1`, `kas_3`).
    pub tag: Option<u32>,
}

impl Atom {
    pub fn new(name: impl Into<String>, sort: Sort) -> Self {
        Atom {
            name: name.into(),
            sort,
            session: None,
            tag: None,
        }
    }

    pub fn principal(name: impl Into<String>) -> Self {
        Atom::new(name, Sort::Principal)
    }

    pub fn nonce(name: impl Into<String>) -> Self {
        Atom::new(name, Sort::Nonce)
    }

    pub fn key(name: impl Into<String>) -> Self {
        Atom::new(name, Sort::Key)
    }

    pub fn with_session(mut self, session: Session) -> Self {
        self.session = Some(session);
        self
    }

    pub fn with_tag(mut self, tag: u32) -> Self {
        self.tag = Some(tag);
        self
    }

    /// Instantiation parameters are the instance-tagged atoms; they may be
    /// bound by substitution and unification.
    pub fn is_parameter(&self) -> bool {
        self.tag.is_some()
    }

    /// The same atom with its instance tag removed.
    pub fn base(&self) -> Atom {
        Atom {
            tag: None,
            ..self.clone()
        }
    }

    /// Name used inside security levels (`A`, `A_5`).
    pub fn principal_label(&self) -> String {
        match self.tag {
            Some(t) => format!("{}_{}", self.name, t),
            None => self.name.clone(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if let Some(t) = self.tag {
            write!(f, "_{t}")?;
        }
        match self.session {
            Some(Session::Symbolic) => f.write_str("^i"),
            Some(Session::Run(n)) => write!(f, "^{n}"),
            None => Ok(()),
        }
    }
}

/// Sort constraint on a variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum VarSort {
    #[default]
    Any,
    Principal,
    Nonce,
    Key,
}

impl VarSort {
    pub fn admits_sort(self, sort: Sort) -> bool {
        matches!(
            (self, sort),
            (VarSort::Any, _)
                | (VarSort::Principal, Sort::Principal)
                | (VarSort::Nonce, Sort::Nonce)
                | (VarSort::Key, Sort::Key)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variable {
    pub name: String,
    pub sort: VarSort,
}

impl Variable {
    pub fn new(name: impl Into<String>) -> Self {
        Variable {
            name: name.into(),
            sort: VarSort::Any,
        }
    }

    pub fn sorted(name: impl Into<String>, sort: VarSort) -> Self {
        Variable {
            name: name.into(),
            sort,
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Atom(Atom),
    Var(Variable),
    Pair(Box<Term>, Box<Term>),
    Enc(Box<Term>, Box<Term>),
    /// Only survives normalization when it is not a cancelling redex.
    Dec(Box<Term>, Box<Term>),
    Empty,
}

impl From<Atom> for Term {
    fn from(a: Atom) -> Self {
        Term::Atom(a)
    }
}

impl From<Variable> for Term {
    fn from(v: Variable) -> Self {
        Term::Var(v)
    }
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(Variable::new(name))
    }

    /// Concatenation with neutral-element elimination.
    pub fn pair(left: Term, right: Term) -> Term {
        match (left, right) {
            (Term::Empty, r) => r,
            (l, Term::Empty) => l,
            (l, r) => Term::Pair(Box::new(l), Box::new(r)),
        }
    }

    /// Right-nested concatenation: `seq([a, b, c]) = a.(b.c)`.
    pub fn seq<I>(items: I) -> Term
    where
        I: IntoIterator<Item = Term>,
        I::IntoIter: DoubleEndedIterator,
    {
        items
            .into_iter()
            .rev()
            .fold(Term::Empty, |acc, t| Term::pair(t, acc))
    }

    /// Encryption; an encryption of nothing carries no payload and
    /// collapses to `ε`.
    pub fn enc(body: Term, key: Term) -> Term {
        match body {
            Term::Empty => Term::Empty,
            b => Term::Enc(Box::new(b), Box::new(key)),
        }
    }

    /// Raw decryption node. Call [`normalize`] to cancel redexes.
    pub fn dec(body: Term, key: Term) -> Term {
        Term::Dec(Box::new(body), Box::new(key))
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Term::Empty)
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, Term::Atom(_) | Term::Var(_))
    }

    pub fn as_atom(&self) -> Option<&Atom> {
        match self {
            Term::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Variable> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    /// Number of constructor nodes.
    pub fn size(&self) -> usize {
        match self {
            Term::Pair(a, b) | Term::Enc(a, b) | Term::Dec(a, b) => 1 + a.size() + b.size(),
            _ => 1,
        }
    }

    pub fn is_closed(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Pair(a, b) | Term::Enc(a, b) | Term::Dec(a, b) => a.is_closed() && b.is_closed(),
            _ => true,
        }
    }

    pub fn contains_var(&self, v: &Variable) -> bool {
        match self {
            Term::Var(w) => w == v,
            Term::Pair(a, b) | Term::Enc(a, b) | Term::Dec(a, b) => {
                a.contains_var(v) || b.contains_var(v)
            }
            _ => false,
        }
    }

    pub fn contains_atom(&self, atom: &Atom) -> bool {
        match self {
            Term::Atom(a) => a == atom,
            Term::Pair(a, b) | Term::Enc(a, b) | Term::Dec(a, b) => {
                a.contains_atom(atom) || b.contains_atom(atom)
            }
            _ => false,
        }
    }

    /// Whether `sub` occurs as a subterm (including `self`).
    pub fn contains_term(&self, sub: &Term) -> bool {
        if self == sub {
            return true;
        }
        match self {
            Term::Pair(a, b) | Term::Enc(a, b) | Term::Dec(a, b) => {
                a.contains_term(sub) || b.contains_term(sub)
            }
            _ => false,
        }
    }

    /// Whether `atom` occurs in a payload position, i.e. not only as an
    /// encryption or decryption key.
    pub fn contains_atom_as_data(&self, atom: &Atom) -> bool {
        match self {
            Term::Atom(a) => a == atom,
            Term::Pair(a, b) => a.contains_atom_as_data(atom) || b.contains_atom_as_data(atom),
            Term::Enc(b, _) | Term::Dec(b, _) => b.contains_atom_as_data(atom),
            _ => false,
        }
    }

    /// Atoms, in first-occurrence order, without duplicates.
    pub fn atoms_in_order(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if let Term::Atom(a) = t {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
        });
        out
    }

    /// Variables, in first-occurrence order, without duplicates.
    pub fn vars_in_order(&self) -> Vec<Variable> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if let Term::Var(v) = t {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
        out
    }

    /// Pre-order, left-to-right traversal. Encryption bodies are visited
    /// before their keys.
    pub fn walk(&self, visit: &mut impl FnMut(&Term)) {
        visit(self);
        match self {
            Term::Pair(a, b) | Term::Enc(a, b) | Term::Dec(a, b) => {
                a.walk(visit);
                b.walk(visit);
            }
            _ => {}
        }
    }

    /// Structural map over the leaves; composite nodes are rebuilt with the
    /// neutral-element-eliminating constructors.
    pub fn map_leaves(&self, f: &mut impl FnMut(&Term) -> Term) -> Term {
        match self {
            Term::Pair(a, b) => Term::pair(a.map_leaves(f), b.map_leaves(f)),
            Term::Enc(b, k) => Term::enc(b.map_leaves(f), k.map_leaves(f)),
            Term::Dec(b, k) => {
                let body = b.map_leaves(f);
                if body.is_empty() {
                    Term::Empty
                } else {
                    Term::dec(body, k.map_leaves(f))
                }
            }
            leaf => f(leaf),
        }
    }

    /// Report rendering: pairs dot-separated, encryption as `{body}key`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        write_term(&mut s, self, ".");
        s
    }

    /// Protocol-file rendering: pairs comma-separated.
    pub fn render_dsl(&self) -> String {
        let mut s = String::new();
        write_term(&mut s, self, ", ");
        s
    }
}

fn write_term(out: &mut String, t: &Term, sep: &str) {
    match t {
        Term::Atom(a) => out.push_str(&a.to_string()),
        Term::Var(v) => out.push_str(&v.name),
        Term::Empty => out.push('ε'),
        Term::Pair(a, b) => {
            if matches!(**a, Term::Pair(..)) {
                out.push('(');
                write_term(out, a, sep);
                out.push(')');
            } else {
                write_term(out, a, sep);
            }
            out.push_str(sep);
            write_term(out, b, sep);
        }
        Term::Enc(b, k) => {
            out.push('{');
            write_term(out, b, sep);
            out.push('}');
            write_key(out, k, sep);
        }
        Term::Dec(b, k) => {
            out.push_str("dec(");
            write_term(out, b, sep);
            out.push_str(", ");
            write_key(out, k, sep);
            out.push(')');
        }
    }
}

fn write_key(out: &mut String, k: &Term, sep: &str) {
    if k.is_atomic() {
        write_term(out, k, sep);
    } else {
        out.push('(');
        write_term(out, k, sep);
        out.push(')');
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Involutive key-inverse table. Keys absent from the table are symmetric.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyTable {
    inverse: BTreeMap<String, String>,
}

impl KeyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares `a` and `b` as each other's inverse.
    pub fn add_pair(&mut self, a: &str, b: &str) {
        self.inverse.insert(a.to_string(), b.to_string());
        self.inverse.insert(b.to_string(), a.to_string());
    }

    pub fn inverse_name<'a>(&'a self, name: &'a str) -> &'a str {
        self.inverse.get(name).map(String::as_str).unwrap_or(name)
    }

    /// Inverse of a key atom. Session and instance tag are preserved.
    pub fn inverse(&self, key: &Atom) -> Atom {
        Atom {
            name: self.inverse_name(&key.name).to_string(),
            ..key.clone()
        }
    }

    /// Inverse of a key term, if it can be determined.
    pub fn inverse_term(&self, key: &Term) -> Option<Term> {
        match key {
            Term::Atom(a) => Some(Term::Atom(self.inverse(a))),
            _ => None,
        }
    }

    pub fn is_symmetric(&self, name: &str) -> bool {
        self.inverse_name(name) == name
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.inverse.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

/// The normal form `m↓`: cancels `dec(enc(m, k), k⁻¹)` and removes `ε`
/// from composite positions. Idempotent.
pub fn normalize(m: &Term, keys: &KeyTable) -> Term {
    match m {
        Term::Pair(a, b) => Term::pair(normalize(a, keys), normalize(b, keys)),
        Term::Enc(b, k) => Term::enc(normalize(b, keys), normalize(k, keys)),
        Term::Dec(b, k) => {
            let body = normalize(b, keys);
            let key = normalize(k, keys);
            match body {
                Term::Empty => Term::Empty,
                Term::Enc(inner, enc_key) => {
                    if keys.inverse_term(&enc_key).as_ref() == Some(&key) {
                        *inner
                    } else {
                        Term::dec(Term::Enc(inner, enc_key), key)
                    }
                }
                other => Term::dec(other, key),
            }
        }
        leaf => leaf.clone(),
    }
}

pub fn atoms(m: &Term) -> BTreeSet<Atom> {
    let mut out = BTreeSet::new();
    m.walk(&mut |t| {
        if let Term::Atom(a) = t {
            out.insert(a.clone());
        }
    });
    out
}

pub fn vars(m: &Term) -> BTreeSet<Variable> {
    let mut out = BTreeSet::new();
    m.walk(&mut |t| {
        if let Term::Var(v) = t {
            out.insert(v.clone());
        }
    });
    out
}

/// Something a substitution may replace: a variable or an instantiation
/// parameter.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Var(Variable),
    Param(Atom),
}

impl Symbol {
    pub fn of(t: &Term) -> Option<Symbol> {
        match t {
            Term::Var(v) => Some(Symbol::Var(v.clone())),
            Term::Atom(a) if a.is_parameter() => Some(Symbol::Param(a.clone())),
            _ => None,
        }
    }

    pub fn to_term(&self) -> Term {
        match self {
            Symbol::Var(v) => Term::Var(v.clone()),
            Symbol::Param(a) => Term::Atom(a.clone()),
        }
    }

    /// Whether `t` is an admissible image for this symbol.
    pub fn admits(&self, t: &Term) -> bool {
        match self {
            Symbol::Var(v) => match t {
                Term::Atom(a) => v.sort.admits_sort(a.sort),
                Term::Var(w) => v.sort == VarSort::Any || v.sort == w.sort,
                _ => v.sort == VarSort::Any,
            },
            Symbol::Param(p) => match t {
                Term::Atom(a) => a.sort == p.sort && a.session.is_some() == p.session.is_some(),
                _ => false,
            },
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Var(v) => v.fmt(f),
            Symbol::Param(a) => a.fmt(f),
        }
    }
}

/// Finite map from symbols to terms, applied simultaneously.
pub type Substitution = BTreeMap<Symbol, Term>;

/// Simultaneous replacement without normalization or sort checks.
pub fn apply(m: &Term, sigma: &Substitution) -> Term {
    if sigma.is_empty() {
        return m.clone();
    }
    m.map_leaves(&mut |leaf| match Symbol::of(leaf) {
        Some(s) => sigma.get(&s).cloned().unwrap_or_else(|| leaf.clone()),
        None => leaf.clone(),
    })
}

/// Simultaneous replacement followed by normalization.
pub fn substitute(m: &Term, sigma: &Substitution, keys: &KeyTable) -> Result<Term, TermError> {
    for (sym, image) in sigma {
        let key_slot = match sym {
            Symbol::Var(v) => v.sort == VarSort::Key,
            Symbol::Param(a) => a.sort == Sort::Key,
        };
        if key_slot && !is_key_term(image) {
            return Err(TermError::SortMismatch {
                symbol: sym.to_string(),
                image: image.render(),
            });
        }
    }
    let replaced = apply(m, sigma);
    check_key_positions(&replaced)?;
    Ok(normalize(&replaced, keys))
}

fn is_key_term(t: &Term) -> bool {
    match t {
        Term::Atom(a) => a.sort == Sort::Key,
        Term::Var(v) => matches!(v.sort, VarSort::Key | VarSort::Any),
        _ => false,
    }
}

/// Every encryption and decryption key must be a key atom or a variable.
pub fn check_key_positions(m: &Term) -> Result<(), TermError> {
    match m {
        Term::Enc(b, k) | Term::Dec(b, k) => {
            if !is_key_term(k) {
                return Err(TermError::SortMismatch {
                    symbol: "key position".into(),
                    image: k.render(),
                });
            }
            check_key_positions(b)
        }
        Term::Pair(a, b) => {
            check_key_positions(a)?;
            check_key_positions(b)
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(n: &str) -> Term {
        Term::Atom(Atom::principal(n))
    }
    fn k(n: &str) -> Term {
        Term::Atom(Atom::key(n))
    }

    #[test]
    fn dec_of_matching_enc_cancels() {
        let keys = KeyTable::new();
        let m = Term::dec(Term::enc(a("a"), k("k")), k("k"));
        assert_eq!(normalize(&m, &keys), a("a"));
    }

    #[test]
    fn dec_with_asymmetric_inverse_cancels_only_with_inverse() {
        let mut keys = KeyTable::new();
        keys.add_pair("pk", "sk");
        let good = Term::dec(Term::enc(a("a"), k("pk")), k("sk"));
        let bad = Term::dec(Term::enc(a("a"), k("pk")), k("pk"));
        assert_eq!(normalize(&good, &keys), a("a"));
        assert_eq!(normalize(&bad, &keys), bad);
    }

    #[test]
    fn atom_is_already_normal() {
        assert_eq!(normalize(&a("a"), &KeyTable::new()), a("a"));
    }

    #[test]
    fn neutral_element_is_removed() {
        let enc = Term::enc(a("a"), k("k"));
        let m = Term::Pair(Box::new(Term::Empty), Box::new(enc.clone()));
        assert_eq!(normalize(&m, &KeyTable::new()), enc);
    }

    #[test]
    fn atoms_reach_every_depth() {
        let m = Term::enc(Term::seq([a("B"), k("kab")]), k("kas"));
        let got: Vec<_> = atoms(&m).into_iter().map(|x| x.name).collect();
        assert_eq!(got, vec!["B", "kab", "kas"]);
        assert!(atoms(&Term::var("X")).is_empty());
    }

    #[test]
    fn example_message_atoms() {
        let m = Term::enc(
            Term::seq([
                a("A"),
                Term::enc(
                    Term::seq([a("S"), Term::Atom(Atom::nonce("alpha")), a("D")]),
                    k("kas"),
                ),
            ]),
            k("kab"),
        );
        let got: BTreeSet<_> = atoms(&m).into_iter().map(|x| x.name).collect();
        let want: BTreeSet<_> = ["A", "S", "alpha", "D", "kas", "kab"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn vars_of_server_message() {
        let m = Term::enc(
            Term::seq([
                a("A"),
                Term::var("U"),
                Term::enc(Term::seq([a("B"), Term::var("V")]), k("kas")),
            ]),
            k("kbs"),
        );
        let got: Vec<_> = vars(&m).into_iter().map(|v| v.name).collect();
        assert_eq!(got, vec!["U", "V"]);
        assert!(vars(&a("A")).is_empty());
        assert_eq!(vars(&Term::var("X")).len(), 1);
    }

    #[test]
    fn substitute_instantiates_parameters() {
        let b1 = Atom::principal("B").with_tag(1);
        let kab1 = Atom::key("kab").with_tag(1).with_session(Session::Symbolic);
        let kas1 = Atom::key("kas").with_tag(1);
        let m = Term::enc(
            Term::seq([Term::Atom(b1.clone()), Term::Atom(kab1.clone())]),
            Term::Atom(kas1.clone()),
        );
        let kab_i = Atom::key("kab").with_session(Session::Symbolic);
        let sigma: Substitution = [
            (Symbol::Param(b1), a("B")),
            (Symbol::Param(kab1), Term::Atom(kab_i.clone())),
            (Symbol::Param(kas1), k("kas")),
        ]
        .into_iter()
        .collect();
        let got = substitute(&m, &sigma, &KeyTable::new()).unwrap();
        assert_eq!(
            got,
            Term::enc(Term::seq([a("B"), Term::Atom(kab_i)]), k("kas"))
        );
        assert_eq!(got.render(), "{B.kab^i}kas");
    }

    #[test]
    fn substitute_variable_and_identity() {
        let sigma: Substitution = [(Symbol::Var(Variable::new("X")), a("a"))]
            .into_iter()
            .collect();
        assert_eq!(
            substitute(&Term::var("X"), &sigma, &KeyTable::new()).unwrap(),
            a("a")
        );
        let m = Term::Pair(Box::new(a("a")), Box::new(Term::Empty));
        assert_eq!(
            substitute(&m, &Substitution::new(), &KeyTable::new()).unwrap(),
            a("a")
        );
    }

    #[test]
    fn key_slot_rejects_non_key() {
        let kv = Variable::sorted("K", VarSort::Key);
        let m = Term::enc(a("a"), Term::Var(kv.clone()));
        let sigma: Substitution = [(Symbol::Var(kv), a("B"))].into_iter().collect();
        assert!(matches!(
            substitute(&m, &sigma, &KeyTable::new()),
            Err(TermError::SortMismatch { .. })
        ));
        // An unconstrained variable placed in key position is still checked.
        let m = Term::enc(a("a"), Term::var("Z"));
        let sigma: Substitution = [(Symbol::Var(Variable::new("Z")), a("B"))]
            .into_iter()
            .collect();
        assert!(substitute(&m, &sigma, &KeyTable::new()).is_err());
    }

    #[test]
    fn rendering() {
        let m = Term::enc(Term::seq([a("A"), Term::var("U")]), k("kbs"));
        assert_eq!(m.render(), "{A.U}kbs");
        assert_eq!(m.render_dsl(), "{A, U}kbs");
        let left = Term::pair(Term::pair(a("a"), a("b")), a("c"));
        assert_eq!(left.render(), "(a.b).c");
    }
}
