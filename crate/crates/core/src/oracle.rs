//! Bounded Dolev-Yao intruder: deduction closure, an empirical check that
//! a function cannot be lowered by the intruder, and a small trace
//! explorer that looks for leaked secrets.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use crate::error::OracleError;
use crate::lattice::{set_geq, Level, TypingContext};
use crate::protocol::Protocol;
use crate::roles::{agent_trace, Direction, RoleEvent};
use crate::safe::{SafeFunction, Subject};
use crate::term::{
    apply, atoms, normalize, KeyTable, Session, Sort, Substitution, Symbol, Term, Variable,
};
use crate::unify::unify;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    Initial,
    Split { from: Term },
    Decrypt { from: Term, key: Term },
    Pair { left: Term, right: Term },
    Encrypt { body: Term, key: Term },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Derivation {
    pub rule: Rule,
    /// Round in which the term was first derived; 0 for initial terms.
    pub round: usize,
}

/// A finite set of closed normal terms, each with how it was obtained.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Knowledge {
    terms: BTreeMap<Term, Derivation>,
}

impl Knowledge {
    pub fn new<I: IntoIterator<Item = Term>>(terms: I, keys: &KeyTable) -> Self {
        let mut k = Knowledge::default();
        for t in terms {
            k.terms.entry(normalize(&t, keys)).or_insert(Derivation {
                rule: Rule::Initial,
                round: 0,
            });
        }
        k
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.terms.contains_key(t)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.terms.keys()
    }

    pub fn derivation(&self, t: &Term) -> Option<&Derivation> {
        self.terms.get(t)
    }

    /// The rule applications that build `t`, premises first.
    pub fn proof(&self, t: &Term) -> Vec<(Term, Rule)> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        self.proof_into(t, &mut out, &mut seen);
        out
    }

    fn proof_into(&self, t: &Term, out: &mut Vec<(Term, Rule)>, seen: &mut BTreeSet<Term>) {
        if !seen.insert(t.clone()) {
            return;
        }
        let Some(d) = self.terms.get(t) else { return };
        match &d.rule {
            Rule::Initial => {}
            Rule::Split { from } => self.proof_into(from, out, seen),
            Rule::Decrypt { from, key } => {
                self.proof_into(from, out, seen);
                self.proof_into(key, out, seen);
            }
            Rule::Pair { left, right } => {
                self.proof_into(left, out, seen);
                self.proof_into(right, out, seen);
            }
            Rule::Encrypt { body, key } => {
                self.proof_into(body, out, seen);
                self.proof_into(key, out, seen);
            }
        }
        out.push((t.clone(), d.rule.clone()));
    }

    fn insert(&mut self, t: Term, rule: Rule, round: usize) -> bool {
        if self.terms.contains_key(&t) {
            return false;
        }
        self.terms.insert(t, Derivation { rule, round });
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClosureConfig {
    /// Rounds of rule application.
    pub depth: usize,
    /// Upper bound on the number of terms.
    pub max_terms: usize,
    /// Also build pairs `a.t` with `a` atomic and encryptions `{t}k` with
    /// `k` a known key atom.
    pub compose: bool,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        ClosureConfig {
            depth: 4,
            max_terms: 20_000,
            compose: true,
        }
    }
}

/// Applies the deduction rules for `cfg.depth` rounds, or until nothing
/// new appears.
pub fn closure(
    m: &Knowledge,
    keys: &KeyTable,
    cfg: &ClosureConfig,
) -> Result<Knowledge, OracleError> {
    let mut k = m.clone();
    let mut fresh: Vec<Term> = k.iter().cloned().collect();
    for round in 1..=cfg.depth {
        let mut derived: Vec<(Term, Rule)> = Vec::new();
        for t in k.iter() {
            match t {
                Term::Pair(a, b) => {
                    derived.push(((**a).clone(), Rule::Split { from: t.clone() }));
                    derived.push(((**b).clone(), Rule::Split { from: t.clone() }));
                }
                Term::Enc(body, key) => {
                    if let Some(inv) = keys.inverse_term(key) {
                        if k.contains(&inv) {
                            derived.push((
                                (**body).clone(),
                                Rule::Decrypt {
                                    from: t.clone(),
                                    key: inv,
                                },
                            ));
                        }
                    }
                }
                _ => {}
            }
        }
        if cfg.compose {
            let fresh_set: HashSet<&Term> = fresh.iter().collect();
            let atoms_known: Vec<&Term> = k.iter().filter(|t| matches!(t, Term::Atom(_))).collect();
            let key_atoms: Vec<&Term> = atoms_known
                .iter()
                .copied()
                .filter(|t| matches!(t, Term::Atom(a) if a.sort == Sort::Key))
                .collect();
            for t in k.iter() {
                let t_new = fresh_set.contains(t);
                for &a in &atoms_known {
                    if t_new || fresh_set.contains(a) {
                        derived.push((
                            Term::pair(a.clone(), t.clone()),
                            Rule::Pair {
                                left: a.clone(),
                                right: t.clone(),
                            },
                        ));
                    }
                }
                for &key in &key_atoms {
                    if t_new || fresh_set.contains(key) {
                        derived.push((
                            Term::enc(t.clone(), key.clone()),
                            Rule::Encrypt {
                                body: t.clone(),
                                key: key.clone(),
                            },
                        ));
                    }
                }
            }
        }
        fresh.clear();
        for (t, rule) in derived {
            if k.insert(t.clone(), rule, round) {
                fresh.push(t);
                if k.len() > cfg.max_terms {
                    return Err(OracleError::ResourceBound {
                        what: "intruder knowledge",
                        limit: cfg.max_terms,
                    });
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
    }
    Ok(k)
}

/// Whether `t` can be built from `k` by pairing and encryption.
pub fn derivable(t: &Term, k: &Knowledge) -> bool {
    if k.contains(t) {
        return true;
    }
    match t {
        Term::Pair(a, b) => derivable(a, k) && derivable(b, k),
        Term::Enc(b, key) => k.contains(key) && derivable(b, k),
        Term::Empty => true,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Invariance by intruder

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub message: Term,
    pub atom: crate::term::Atom,
    /// `F(α, m)`.
    pub value: Level,
    /// `F(α, M)`.
    pub reference: Level,
}

/// Looks for `m` deducible from `M ∪ K(I)` and `α` in `m` with
/// `F(α, m) ⋣ F(α, M)`, unless the intruder's initial knowledge already
/// sits at or above `⌜α⌝`.
pub fn check_invariant_by_intruder(
    f: &dyn SafeFunction,
    messages: &[Term],
    ctx: &TypingContext,
    cfg: &ClosureConfig,
) -> Result<Vec<Counterexample>, OracleError> {
    let mut base: Vec<Term> = messages.iter().map(|m| normalize(m, &ctx.keys)).collect();
    base.extend(ctx.intruder_knowledge.iter().cloned().map(Term::Atom));
    let reference_set: Vec<Term> = base.clone();
    let known = closure(&Knowledge::new(base, &ctx.keys), &ctx.keys, cfg)?;
    let intruder_levels = ctx.intruder_levels();
    let mut references: BTreeMap<crate::term::Atom, Level> = BTreeMap::new();
    let mut out = Vec::new();
    for m in known.iter() {
        for a in atoms(m) {
            let escaped = ctx
                .level_of(&a)
                .is_some_and(|l| set_geq(&intruder_levels, &l));
            if escaped {
                continue;
            }
            let subject = Subject::Atom(a.clone());
            let reference = match references.get(&a) {
                Some(r) => r.clone(),
                None => {
                    let r = f.evaluate_set(&subject, &reference_set, ctx)?;
                    references.insert(a.clone(), r.clone());
                    r
                }
            };
            let value = f.evaluate(&subject, m, ctx)?;
            if !value.geq(&reference) {
                out.push(Counterexample {
                    message: m.clone(),
                    atom: a,
                    value,
                    reference,
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trace simulation

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub sessions: u32,
    /// Rounds of intruder analysis after each emitted message.
    pub depth: usize,
    pub max_states: usize,
    /// Candidate terms tried for one variable of a receive pattern.
    pub candidate_cap: usize,
    pub max_terms: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sessions: 2,
            depth: 4,
            max_states: 200_000,
            candidate_cap: 64,
            max_terms: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimReport {
    pub states: usize,
    /// States in which every role instance has run to completion.
    pub completed: usize,
    /// Names of declared secrets the intruder obtained.
    pub leaked: BTreeSet<String>,
}

struct Instance {
    events: Vec<RoleEvent>,
    /// Variables still used from position `i` on.
    live: Vec<BTreeSet<Variable>>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    pos: Vec<usize>,
    bindings: Vec<BTreeMap<Variable, Term>>,
    known: BTreeSet<Term>,
}

fn instantiate(events: &[RoleEvent], run: u32) -> Vec<RoleEvent> {
    events
        .iter()
        .map(|e| RoleEvent {
            pattern: e.pattern.map_leaves(&mut |leaf| match leaf {
                Term::Atom(a) if a.session == Some(Session::Symbolic) => {
                    Term::Atom(a.clone().with_session(Session::Run(run)))
                }
                Term::Var(v) => Term::Var(Variable::sorted(format!("{}#{run}", v.name), v.sort)),
                other => other.clone(),
            }),
            ..e.clone()
        })
        .collect()
}

fn analyze_knowledge(
    known: &BTreeSet<Term>,
    keys: &KeyTable,
    cfg: &SimConfig,
) -> Result<BTreeSet<Term>, OracleError> {
    let k = Knowledge::new(known.iter().cloned(), keys);
    let c = closure(
        &k,
        keys,
        &ClosureConfig {
            depth: cfg.depth,
            max_terms: cfg.max_terms,
            compose: false,
        },
    )?;
    Ok(c.iter().cloned().collect())
}

fn to_subst(b: &BTreeMap<Variable, Term>) -> Substitution {
    b.iter()
        .map(|(v, t)| (Symbol::Var(v.clone()), t.clone()))
        .collect()
}

/// Substitutions for the free variables of `pattern` under which the
/// intruder can produce it, at most `cap` of them.
fn synthesize(pattern: &Term, known: &Knowledge, pool: &[Term], cap: usize) -> Vec<Substitution> {
    if pattern.is_closed() {
        return if derivable(pattern, known) {
            vec![Substitution::new()]
        } else {
            Vec::new()
        };
    }
    let mut out: Vec<Substitution> = Vec::new();
    let push = |s: Substitution, out: &mut Vec<Substitution>| {
        if out.len() < cap && !out.contains(&s) {
            out.push(s);
        }
    };
    match pattern {
        Term::Var(v) => {
            for t in pool {
                push(
                    [(Symbol::Var(v.clone()), t.clone())].into_iter().collect(),
                    &mut out,
                );
            }
        }
        Term::Pair(a, b) => {
            for s1 in synthesize(a, known, pool, cap) {
                let rest = apply(b, &s1);
                for s2 in synthesize(&rest, known, pool, cap) {
                    let mut s = s1.clone();
                    s.extend(s2);
                    push(s, &mut out);
                }
            }
        }
        Term::Enc(body, key) => {
            for t in known.iter().filter(|t| matches!(t, Term::Enc(..))) {
                if let Some(u) = unify(pattern, t) {
                    push(u.bindings, &mut out);
                }
            }
            if key.is_closed() && known.contains(key) {
                for s in synthesize(body, known, pool, cap) {
                    push(s, &mut out);
                }
            }
        }
        _ => {}
    }
    out
}

/// Explores interleavings of `cfg.sessions` honest runs of every agent,
/// with the intruder delivering anything it can build. Emissions happen
/// as soon as they are enabled.
pub fn simulate(p: &Protocol, cfg: &SimConfig) -> Result<SimReport, OracleError> {
    let ctx = p.typing_context();
    let keys = &ctx.keys;
    let mut instances = Vec::new();
    for run in 1..=cfg.sessions {
        for agent in &p.agents {
            let Ok(trace) = agent_trace(p, agent) else {
                continue;
            };
            let events = instantiate(&trace, run);
            let mut live = vec![BTreeSet::new(); events.len() + 1];
            for i in (0..events.len()).rev() {
                let mut s = live[i + 1].clone();
                s.extend(crate::term::vars(&events[i].pattern));
                live[i] = s;
            }
            instances.push(Instance { events, live });
        }
    }
    let secrets: BTreeSet<&str> = p.secrets.iter().map(|a| a.name.as_str()).collect();
    let initial_known: BTreeSet<Term> = ctx
        .intruder_knowledge
        .iter()
        .cloned()
        .map(Term::Atom)
        .collect();
    let start = State {
        pos: vec![0; instances.len()],
        bindings: vec![BTreeMap::new(); instances.len()],
        known: analyze_knowledge(&initial_known, keys, cfg)?,
    };

    let mut report = SimReport {
        states: 0,
        completed: 0,
        leaked: BTreeSet::new(),
    };
    let mut visited: HashSet<State> = HashSet::new();
    let mut queue = VecDeque::new();
    queue.push_back(start);
    while let Some(mut state) = queue.pop_front() {
        // Run every enabled send.
        let mut sent_any = false;
        loop {
            let mut progressed = false;
            for (i, inst) in instances.iter().enumerate() {
                let pos = state.pos[i];
                if let Some(e) = inst.events.get(pos) {
                    if e.direction == Direction::Send {
                        let msg =
                            normalize(&apply(&e.pattern, &to_subst(&state.bindings[i])), keys);
                        state.known.insert(msg);
                        state.pos[i] += 1;
                        let live = &inst.live[pos + 1];
                        state.bindings[i].retain(|v, _| live.contains(v));
                        progressed = true;
                        sent_any = true;
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        if sent_any {
            state.known = analyze_knowledge(&state.known, keys, cfg)?;
        }
        if !visited.insert(state.clone()) {
            continue;
        }
        report.states += 1;
        if report.states > cfg.max_states {
            return Err(OracleError::ResourceBound {
                what: "explored states",
                limit: cfg.max_states,
            });
        }
        for t in &state.known {
            if let Term::Atom(a) = t {
                if secrets.contains(a.name.as_str()) {
                    report.leaked.insert(a.name.clone());
                }
            }
        }
        if report.leaked.len() == secrets.len() && !secrets.is_empty() {
            break;
        }
        if state
            .pos
            .iter()
            .zip(&instances)
            .all(|(&p, inst)| p == inst.events.len())
        {
            report.completed += 1;
            continue;
        }

        let known = Knowledge::new(state.known.iter().cloned(), keys);
        let pool: Vec<Term> = state.known.iter().cloned().collect();
        for (i, inst) in instances.iter().enumerate() {
            let pos = state.pos[i];
            let Some(e) = inst.events.get(pos) else {
                continue;
            };
            if e.direction != Direction::Receive {
                continue;
            }
            let pattern = apply(&e.pattern, &to_subst(&state.bindings[i]));
            for s in synthesize(&pattern, &known, &pool, cfg.candidate_cap) {
                let mut next = state.clone();
                next.pos[i] += 1;
                for (sym, t) in s {
                    if let Symbol::Var(v) = sym {
                        next.bindings[i].insert(v, t);
                    }
                }
                let live = &inst.live[pos + 1];
                next.bindings[i].retain(|v, _| live.contains(v));
                queue.push_back(next);
            }
        }
    }
    Ok(report)
}
