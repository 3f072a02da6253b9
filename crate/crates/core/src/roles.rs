//! Generalized roles and the generalized message set.
//!
//! Each agent's view of the protocol is rebuilt from what it can check:
//! a ciphertext is opened only when the agent holds its key or the
//! inverse, and an atom is kept only when the agent already knows it.
//! Everything else becomes a variable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::protocol::Protocol;
use crate::term::{Atom, Session, Symbol, Term, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Receive,
    Send,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleEvent {
    pub step: u32,
    pub direction: Direction,
    /// The other party named in the protocol step.
    pub peer: String,
    pub pattern: Term,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneralizedRole {
    pub principal: String,
    /// 1-based, per principal.
    pub id: usize,
    pub events: Vec<RoleEvent>,
}

impl GeneralizedRole {
    pub fn name(&self) -> String {
        format!("{}_G^{}", self.principal, self.id)
    }

    pub fn ends_in_send(&self) -> bool {
        matches!(self.events.last(), Some(e) if e.direction == Direction::Send)
    }

    /// The last send `r⁺` and every receive before it, `R⁻`.
    pub fn split_last_send(&self) -> Option<(Vec<&Term>, &Term)> {
        let last = self
            .events
            .last()
            .filter(|e| e.direction == Direction::Send)?;
        let received = self.events[..self.events.len() - 1]
            .iter()
            .filter(|e| e.direction == Direction::Receive)
            .map(|e| &e.pattern)
            .collect();
        Some((received, &last.pattern))
    }
}

impl fmt::Display for RoleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨i.{}, {} : {}⟩", self.step, self.peer, self.pattern)
    }
}

impl fmt::Display for GeneralizedRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} =", self.name())?;
        for (i, e) in self.events.iter().enumerate() {
            let (from, to) = match e.direction {
                Direction::Receive => (format!("I({})", e.peer), self.principal.clone()),
                Direction::Send => (self.principal.clone(), format!("I({})", e.peer)),
            };
            let sep = if i + 1 == self.events.len() { "" } else { "." };
            writeln!(f, "  ⟨i.{}, {from} → {to} : {}⟩{sep}", e.step, e.pattern)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("step {step}: `{agent}` cannot build {what}")]
pub struct RoleError {
    pub step: u32,
    pub agent: String,
    pub what: String,
}

/// Hands out variable names `X, Y, Z, U, V, W, X1, Y1, ...`.
#[derive(Clone, Debug, Default)]
pub struct VarNamer {
    next: usize,
}

impl VarNamer {
    const BASE: [&'static str; 6] = ["X", "Y", "Z", "U", "V", "W"];

    pub fn fresh(&mut self) -> Variable {
        let n = self.next;
        self.next += 1;
        let base = Self::BASE[n % Self::BASE.len()];
        let round = n / Self::BASE.len();
        if round == 0 {
            Variable::new(base)
        } else {
            Variable::new(format!("{base}{round}"))
        }
    }
}

struct AgentView<'p> {
    p: &'p Protocol,
    agent: &'p str,
    known: BTreeSet<Atom>,
    /// Concrete subterms the agent could not check, and their variables.
    opaque: BTreeMap<Term, Variable>,
}

impl AgentView<'_> {
    fn own_fresh(&self, a: &Atom) -> bool {
        self.p.generator_of(a) == Some(self.agent)
    }

    fn atom_pattern(&self, a: &Atom) -> Term {
        if self.own_fresh(a) {
            Term::Atom(a.clone().with_session(Session::Symbolic))
        } else {
            Term::Atom(a.clone())
        }
    }

    fn holds_key(&self, k: &Term) -> bool {
        match k {
            Term::Atom(a) => {
                let inv = self.p.key_table().inverse(a);
                self.known.contains(a)
                    || self.known.contains(&inv)
                    || self.opaque.contains_key(k)
                    || self.opaque.contains_key(&Term::Atom(inv))
            }
            _ => self.opaque.contains_key(k),
        }
    }

    fn key_pattern(&self, k: &Term) -> Option<Term> {
        if let Some(v) = self.opaque.get(k) {
            return Some(Term::Var(v.clone()));
        }
        match k {
            Term::Atom(a) if self.known.contains(a) => Some(self.atom_pattern(a)),
            _ => None,
        }
    }

    fn opaque_var(&mut self, t: &Term, namer: &mut VarNamer) -> Term {
        let v = self
            .opaque
            .entry(t.clone())
            .or_insert_with(|| namer.fresh())
            .clone();
        Term::Var(v)
    }

    fn receive(&mut self, t: &Term, namer: &mut VarNamer) -> Term {
        if let Some(v) = self.opaque.get(t) {
            return Term::Var(v.clone());
        }
        match t {
            Term::Atom(a) if self.known.contains(a) => self.atom_pattern(a),
            Term::Pair(l, r) => {
                let l = self.receive(l, namer);
                let r = self.receive(r, namer);
                Term::pair(l, r)
            }
            Term::Enc(body, key) if self.holds_key(key) => {
                let kp = self.key_pattern(key);
                let body = self.receive(body, namer);
                match kp {
                    Some(kp) => Term::enc(body, kp),
                    // Holding only the inverse: the key is named but not owned.
                    None => Term::enc(body, (**key).clone()),
                }
            }
            Term::Empty => Term::Empty,
            other => self.opaque_var(other, namer),
        }
    }

    fn send(&self, t: &Term, step: u32) -> Result<Term, RoleError> {
        if let Some(v) = self.opaque.get(t) {
            return Ok(Term::Var(v.clone()));
        }
        let fail = |what: String| RoleError {
            step,
            agent: self.agent.to_string(),
            what,
        };
        match t {
            Term::Atom(a) if self.known.contains(a) => Ok(self.atom_pattern(a)),
            Term::Atom(a) => Err(fail(format!("`{a}`: it is not known at this point"))),
            Term::Pair(l, r) => Ok(Term::pair(self.send(l, step)?, self.send(r, step)?)),
            Term::Enc(body, key) => {
                let kp = self.key_pattern(key).ok_or_else(|| {
                    fail(format!("`{t}`: the key `{key}` is not known at this point"))
                })?;
                Ok(Term::enc(self.send(body, step)?, kp))
            }
            Term::Empty => Ok(Term::Empty),
            other => Err(fail(format!("`{other}`"))),
        }
    }
}

fn generalize(
    p: &Protocol,
    agent: &str,
    namer: &mut VarNamer,
) -> Result<Vec<RoleEvent>, RoleError> {
    let mut known = p.initial_knowledge(agent);
    known.extend(
        p.fresh
            .iter()
            .filter(|f| f.generator == agent)
            .map(|f| f.atom.clone()),
    );
    let mut view = AgentView {
        p,
        agent,
        known,
        opaque: BTreeMap::new(),
    };
    let mut events = Vec::new();
    for s in &p.steps {
        if s.sender == agent {
            events.push(RoleEvent {
                step: s.index,
                direction: Direction::Send,
                peer: s.receiver.clone(),
                pattern: view.send(&s.payload, s.index)?,
            });
        } else if s.receiver == agent {
            let pattern = view.receive(&s.payload, namer);
            events.push(RoleEvent {
                step: s.index,
                direction: Direction::Receive,
                peer: s.sender.clone(),
                pattern,
            });
        }
    }
    Ok(events)
}

/// The full generalized trace of one agent, with variables named from a
/// fresh sequence. Fails when the agent cannot produce one of its sends.
pub fn agent_trace(p: &Protocol, agent: &str) -> Result<Vec<RoleEvent>, RoleError> {
    generalize(p, agent, &mut VarNamer::default())
}

/// One role per prefix of an agent's trace that ends in a send. When the
/// trace ends in a receive, the whole trace is kept as a further role so
/// that its final receive reaches the generalized message set; such a role
/// has no send to analyze.
pub fn extract_roles(p: &Protocol) -> Result<Vec<GeneralizedRole>, RoleError> {
    let mut namer = VarNamer::default();
    let mut roles = Vec::new();
    for agent in &p.agents {
        let events = generalize(p, agent, &mut namer)?;
        let mut id = 0;
        for (i, e) in events.iter().enumerate() {
            if e.direction == Direction::Send {
                id += 1;
                roles.push(GeneralizedRole {
                    principal: agent.clone(),
                    id,
                    events: events[..=i].to_vec(),
                });
            }
        }
        if matches!(events.last(), Some(e) if e.direction == Direction::Receive) {
            roles.push(GeneralizedRole {
                principal: agent.clone(),
                id: id + 1,
                events,
            });
        }
    }
    Ok(roles)
}

/// `M_p^G`: every role pattern with its atoms lifted to instance-tagged
/// parameters and its variables renamed apart, deduplicated modulo renaming.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneralizedMessageSet {
    pub entries: Vec<Term>,
}

impl GeneralizedMessageSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.entries.iter()
    }
}

pub fn collect_generalized_messages(roles: &[GeneralizedRole]) -> GeneralizedMessageSet {
    // Prefix roles repeat events; take each distinct pattern once, in order.
    let mut patterns: Vec<&Term> = Vec::new();
    for r in roles {
        for e in &r.events {
            if !patterns.contains(&&e.pattern) {
                patterns.push(&e.pattern);
            }
        }
    }
    let mut atom_tags: BTreeMap<String, u32> = BTreeMap::new();
    let mut var_tags: BTreeMap<String, u32> = BTreeMap::new();
    let mut entries: Vec<Term> = Vec::new();
    for pattern in patterns {
        let mut local: BTreeMap<Term, Term> = BTreeMap::new();
        let lifted = pattern.map_leaves(&mut |leaf| {
            if let Some(t) = local.get(leaf) {
                return t.clone();
            }
            let image = match leaf {
                Term::Atom(a) => {
                    let n = atom_tags.entry(a.name.clone()).or_insert(0);
                    *n += 1;
                    Term::Atom(a.clone().with_tag(*n))
                }
                Term::Var(v) => {
                    let n = var_tags.entry(v.name.clone()).or_insert(0);
                    *n += 1;
                    Term::Var(Variable::sorted(format!("{}_{}", v.name, n), v.sort))
                }
                other => other.clone(),
            };
            local.insert(leaf.clone(), image.clone());
            image
        });
        if !entries.iter().any(|e| alpha_equivalent(e, &lifted)) {
            entries.push(lifted);
        }
    }
    GeneralizedMessageSet { entries }
}

/// Equality up to a bijective renaming of variables and of parameters of
/// equal sort and session-ness.
pub fn alpha_equivalent(a: &Term, b: &Term) -> bool {
    let mut fwd = BTreeMap::new();
    let mut bwd = BTreeMap::new();
    alpha_walk(a, b, &mut fwd, &mut bwd)
}

fn alpha_walk(
    a: &Term,
    b: &Term,
    fwd: &mut BTreeMap<Symbol, Symbol>,
    bwd: &mut BTreeMap<Symbol, Symbol>,
) -> bool {
    match (a, b) {
        (Term::Pair(a1, a2), Term::Pair(b1, b2))
        | (Term::Enc(a1, a2), Term::Enc(b1, b2))
        | (Term::Dec(a1, a2), Term::Dec(b1, b2)) => {
            alpha_walk(a1, b1, fwd, bwd) && alpha_walk(a2, b2, fwd, bwd)
        }
        (Term::Empty, Term::Empty) => true,
        _ => match (Symbol::of(a), Symbol::of(b)) {
            (Some(sa), Some(sb)) => {
                let compatible = match (&sa, &sb) {
                    (Symbol::Var(x), Symbol::Var(y)) => x.sort == y.sort,
                    (Symbol::Param(x), Symbol::Param(y)) => {
                        x.sort == y.sort && x.session.is_some() == y.session.is_some()
                    }
                    _ => false,
                };
                if !compatible {
                    return false;
                }
                match (fwd.get(&sa), bwd.get(&sb)) {
                    (None, None) => {
                        fwd.insert(sa.clone(), sb.clone());
                        bwd.insert(sb, sa);
                        true
                    }
                    (Some(x), Some(y)) => *x == sb && *y == sa,
                    _ => false,
                }
            }
            (None, None) => a == b,
            _ => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse;

    const WOO_LAM: &str = include_str!("../../../fixtures/woolam_amended.wl");

    fn role<'a>(roles: &'a [GeneralizedRole], name: &str) -> &'a GeneralizedRole {
        roles.iter().find(|r| r.name() == name).unwrap()
    }

    fn patterns(r: &GeneralizedRole) -> Vec<String> {
        r.events.iter().map(|e| e.pattern.render()).collect()
    }

    #[test]
    fn woo_lam_roles() {
        let p = parse(WOO_LAM).unwrap();
        let roles = extract_roles(&p).unwrap();
        let names: Vec<String> = roles.iter().map(|r| r.name()).collect();
        assert_eq!(
            names,
            vec!["A_G^1", "A_G^2", "B_G^1", "B_G^2", "B_G^3", "S_G^1"]
        );
        assert_eq!(patterns(role(&roles, "A_G^1")), vec!["A"]);
        assert_eq!(
            patterns(role(&roles, "A_G^2")),
            vec!["A", "X", "{B.kab^i}kas"]
        );
        assert_eq!(
            patterns(role(&roles, "B_G^3")),
            vec!["A", "Nb^i", "Y", "{A.Nb^i.Y}kbs", "{Nb^i.{A.Z}kbs}kbs"]
        );
        assert_eq!(
            patterns(role(&roles, "S_G^1")),
            vec!["{A.U.{B.V}kas}kbs", "{U.{A.V}kbs}kbs"]
        );
        assert!(!role(&roles, "B_G^3").ends_in_send());
    }

    #[test]
    fn role_display_marks_intruder_channel() {
        let p = parse(WOO_LAM).unwrap();
        let roles = extract_roles(&p).unwrap();
        let text = role(&roles, "S_G^1").to_string();
        assert!(text.contains("⟨i.4, I(B) → S : {A.U.{B.V}kas}kbs⟩."));
        assert!(text.contains("⟨i.5, S → I(B) : {U.{A.V}kbs}kbs⟩"));
    }

    #[test]
    fn unexecutable_send_is_reported() {
        let src = "protocol P\nagents A B\nsymkey k level {A}\n\
                   fresh nonce N by A level {A}\n\
                   msg 1 A -> B : {N}k\nmsg 2 B -> A : N\n";
        let p = parse(src).unwrap();
        let err = extract_roles(&p).unwrap_err();
        assert_eq!(err.step, 2);
        assert_eq!(err.agent, "B");
    }

    #[test]
    fn woo_lam_message_set_has_eight_entries() {
        let p = parse(WOO_LAM).unwrap();
        let set = collect_generalized_messages(&extract_roles(&p).unwrap());
        let got: Vec<String> = set.iter().map(Term::render).collect();
        assert_eq!(
            got,
            vec![
                "A_1",
                "X_1",
                "{B_1.kab_1^i}kas_1",
                "Nb_1^i",
                "{A_2.Nb_2^i.Y_2}kbs_1",
                "{Nb_3^i.{A_3.Z_1}kbs_2}kbs_2",
                "{A_4.U_1.{B_2.V_1}kas_2}kbs_3",
                "{U_2.{A_5.V_2}kbs_4}kbs_4",
            ]
        );
    }

    #[test]
    fn alpha_equivalence_respects_sorts_and_sharing() {
        let a1 = Term::Atom(Atom::principal("A").with_tag(1));
        let a3 = Term::Atom(Atom::principal("A").with_tag(3));
        let b2 = Term::Atom(Atom::principal("B").with_tag(2));
        let k1 = Term::Atom(Atom::key("k").with_tag(1));
        assert!(alpha_equivalent(&a1, &a3));
        assert!(alpha_equivalent(&a1, &b2));
        assert!(!alpha_equivalent(&a1, &k1));
        assert!(alpha_equivalent(&Term::var("X_1"), &Term::var("Y_1")));
        let same = Term::seq([a1.clone(), a1.clone()]);
        let diff = Term::seq([a1.clone(), a3.clone()]);
        assert!(!alpha_equivalent(&same, &diff));
        assert!(alpha_equivalent(&diff, &Term::seq([a3, b2])));
    }

    #[test]
    fn extraction_is_deterministic() {
        let p = parse(WOO_LAM).unwrap();
        let a = collect_generalized_messages(&extract_roles(&p).unwrap());
        let b = collect_generalized_messages(&extract_roles(&p).unwrap());
        assert_eq!(a, b);
    }
}
