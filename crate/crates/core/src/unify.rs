//! Sorted syntactic unification and origin lookup in `M_p^G`.

use std::collections::BTreeSet;

use crate::roles::GeneralizedMessageSet;
use crate::term::{apply, Atom, Substitution, Symbol, Term, Variable};

/// A most general unifier, kept idempotent: no bound symbol occurs in any
/// image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Unifier {
    pub bindings: Substitution,
}

impl Unifier {
    pub fn apply(&self, t: &Term) -> Term {
        apply(t, &self.bindings)
    }

    pub fn get(&self, s: &Symbol) -> Option<&Term> {
        self.bindings.get(s)
    }

    fn bind(&mut self, s: Symbol, t: Term) {
        let single: Substitution = [(s.clone(), t.clone())].into_iter().collect();
        for image in self.bindings.values_mut() {
            *image = apply(image, &single);
        }
        self.bindings.insert(s, t);
    }
}

impl std::fmt::Display for Unifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("{")?;
        for (i, (s, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{s} ↦ {t}")?;
        }
        f.write_str("}")
    }
}

/// Unifies `t1` with `t2`. When both sides of a pair are bindable symbols
/// of the same kind, the one from `t2` is bound, so passing the query first
/// and a message-set entry second expresses the entry in query terms. A
/// variable facing a parameter is always the one bound.
pub fn unify(t1: &Term, t2: &Term) -> Option<Unifier> {
    let mut u = Unifier::default();
    let mut todo = vec![(t1.clone(), t2.clone())];
    while let Some((a, b)) = todo.pop() {
        let a = u.apply(&a);
        let b = u.apply(&b);
        if a == b {
            continue;
        }
        match (Symbol::of(&a), Symbol::of(&b)) {
            (Some(sa), Some(sb)) => {
                let (first, second) = match (&sa, &sb) {
                    (Symbol::Var(_), Symbol::Param(_)) => ((sa, b), (sb, a)),
                    (Symbol::Param(_), Symbol::Var(_)) => ((sb, a), (sa, b)),
                    _ => ((sb, a), (sa, b)),
                };
                if first.0.admits(&first.1) {
                    u.bind(first.0, first.1);
                } else if second.0.admits(&second.1) {
                    u.bind(second.0, second.1);
                } else {
                    return None;
                }
            }
            (Some(s), None) => bind_checked(&mut u, s, b)?,
            (None, Some(s)) => bind_checked(&mut u, s, a)?,
            (None, None) => match (a, b) {
                (Term::Pair(a1, a2), Term::Pair(b1, b2))
                | (Term::Enc(a1, a2), Term::Enc(b1, b2))
                | (Term::Dec(a1, a2), Term::Dec(b1, b2)) => {
                    todo.push((*a2, *b2));
                    todo.push((*a1, *b1));
                }
                _ => return None,
            },
        }
    }
    Some(u)
}

fn bind_checked(u: &mut Unifier, s: Symbol, t: Term) -> Option<()> {
    if !s.admits(&t) {
        return None;
    }
    if let Symbol::Var(v) = &s {
        if t.contains_var(v) {
            return None;
        }
    }
    u.bind(s, t);
    Some(())
}

/// An entry of `M_p^G` that unifies with a query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Origin {
    /// Position in the message set.
    pub index: usize,
    /// The entry, renamed apart from the query when needed.
    pub entry: Term,
    pub unifier: Unifier,
}

/// Entries of `set` that unify with `query`, in listing order. A bare
/// variable entry only counts for atomic queries.
pub fn origins(query: &Term, set: &GeneralizedMessageSet) -> Vec<Origin> {
    let mut out = Vec::new();
    for (index, entry) in set.iter().enumerate() {
        if matches!(entry, Term::Var(_)) && !query.is_atomic() {
            continue;
        }
        let entry = rename_apart(entry, query);
        if let Some(unifier) = unify(query, &entry) {
            out.push(Origin {
                index,
                entry,
                unifier,
            });
        }
    }
    out
}

/// Renames the symbols of `entry` that also occur in `other`.
pub fn rename_apart(entry: &Term, other: &Term) -> Term {
    let mut taken_vars: BTreeSet<String> = BTreeSet::new();
    let mut params: BTreeSet<Atom> = BTreeSet::new();
    let mut max_tag = 0;
    for t in [entry, other] {
        t.walk(&mut |s| match s {
            Term::Var(v) => {
                taken_vars.insert(v.name.clone());
            }
            Term::Atom(a) => {
                if let Some(tag) = a.tag {
                    max_tag = max_tag.max(tag);
                }
            }
            _ => {}
        });
    }
    other.walk(&mut |s| {
        if let Term::Atom(a) = s {
            if a.is_parameter() {
                params.insert(a.clone());
            }
        }
    });
    let clash_vars: BTreeSet<Variable> = crate::term::vars(other);
    let mut sigma = Substitution::new();
    for v in crate::term::vars(entry) {
        if clash_vars.contains(&v) {
            let mut name = format!("{}'", v.name);
            while taken_vars.contains(&name) {
                name.push('\'');
            }
            taken_vars.insert(name.clone());
            sigma.insert(
                Symbol::Var(v.clone()),
                Term::Var(Variable::sorted(name, v.sort)),
            );
        }
    }
    for a in crate::term::atoms(entry) {
        if a.is_parameter() && params.contains(&a) {
            max_tag += 1;
            sigma.insert(Symbol::Param(a.clone()), Term::Atom(a.with_tag(max_tag)));
        }
    }
    apply(entry, &sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{parse, parse_term, Resolution, SymbolTable};
    use crate::roles::{collect_generalized_messages, extract_roles};
    use crate::term::{substitute, Session};

    const WOO_LAM: &str = include_str!("../../../fixtures/woolam_amended.wl");

    fn fixture() -> (crate::protocol::Protocol, GeneralizedMessageSet) {
        let p = parse(WOO_LAM).unwrap();
        let set = collect_generalized_messages(&extract_roles(&p).unwrap());
        (p, set)
    }

    fn term(p: &crate::protocol::Protocol, s: &str) -> Term {
        let table = SymbolTable::for_protocol(p, Resolution::Query);
        parse_term(s, &table, &p.key_table(), 1, 1).unwrap()
    }

    fn sigma_text(u: &Unifier) -> String {
        u.to_string()
    }

    #[test]
    fn identical_variables_need_no_binding() {
        let u = unify(&Term::var("X"), &Term::var("X")).unwrap();
        assert!(u.bindings.is_empty());
    }

    #[test]
    fn constructor_clash_fails() {
        let a = Term::Atom(Atom::nonce("a"));
        let k = Term::Atom(Atom::key("k"));
        let b = Term::Atom(Atom::nonce("b"));
        assert!(unify(&Term::pair(a.clone(), b), &Term::enc(a, k)).is_none());
    }

    #[test]
    fn occurs_check() {
        let x = Term::var("X");
        let a = Term::Atom(Atom::nonce("a"));
        assert!(unify(&x, &Term::pair(a, x.clone())).is_none());
    }

    #[test]
    fn parameters_respect_sort_and_session() {
        let kp = Term::Atom(Atom::key("kab").with_tag(1).with_session(Session::Symbolic));
        let k = Term::Atom(Atom::key("kab").with_session(Session::Symbolic));
        let plain = Term::Atom(Atom::key("kas"));
        let principal = Term::Atom(Atom::principal("B"));
        assert!(unify(&k, &kp).is_some());
        assert!(unify(&plain, &kp).is_none());
        assert!(unify(&principal, &kp).is_none());
    }

    #[test]
    fn server_query_has_two_origins() {
        let (p, set) = fixture();
        let q = term(&p, "{U, {A, V}kbs}kbs");
        let found = origins(&q, &set);
        let entries: Vec<String> = found.iter().map(|o| o.entry.render()).collect();
        assert_eq!(
            entries,
            vec!["{Nb_3^i.{A_3.Z_1}kbs_2}kbs_2", "{U_2.{A_5.V_2}kbs_4}kbs_4"]
        );
        assert_eq!(
            sigma_text(&found[0].unifier),
            "{U ↦ Nb_3^i, Z_1 ↦ V, A_3 ↦ A, kbs_2 ↦ kbs}"
        );
        assert_eq!(
            sigma_text(&found[1].unifier),
            "{U_2 ↦ U, V_2 ↦ V, A_5 ↦ A, kbs_4 ↦ kbs}"
        );
    }

    #[test]
    fn initiator_query_has_one_origin() {
        let (p, set) = fixture();
        let q = term(&p, "{B, kab^i}kas");
        let found = origins(&q, &set);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].entry.render(), "{B_1.kab_1^i}kas_1");
        assert_eq!(
            sigma_text(&found[0].unifier),
            "{B_1 ↦ B, kab_1^i ↦ kab^i, kas_1 ↦ kas}"
        );
    }

    #[test]
    fn bare_atom_query_meets_parameter_and_variable_entries() {
        let (p, set) = fixture();
        let found = origins(&term(&p, "A"), &set);
        let entries: Vec<String> = found.iter().map(|o| o.entry.render()).collect();
        assert_eq!(entries, vec!["A_1", "X_1"]);
    }

    #[test]
    fn origins_are_sound_and_include_the_entry_itself() {
        let (p, set) = fixture();
        let keys = p.key_table();
        for e in set.iter() {
            let found = origins(e, &set);
            assert!(found
                .iter()
                .any(|o| o.index == set.iter().position(|x| x == e).unwrap()));
            for o in found {
                let l = substitute(e, &o.unifier.bindings, &keys).unwrap();
                let r = substitute(&o.entry, &o.unifier.bindings, &keys).unwrap();
                assert_eq!(l, r);
            }
        }
    }
}
