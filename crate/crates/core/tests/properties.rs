use std::collections::BTreeSet;

use proptest::prelude::*;

use wfcheck_core::lattice::Level;
use wfcheck_core::oracle::{closure, ClosureConfig, Knowledge};
use wfcheck_core::protocol::{parse_term, Resolution, SymbolTable};
use wfcheck_core::safe::{derive, derive_keep, SafeFunction, Selector, Subject};
use wfcheck_core::term::{atoms, normalize, substitute, vars, Atom, Substitution, Symbol};
use wfcheck_core::unify::unify;
use wfcheck_core::{parse, OracleError, Protocol, Term, TypingContext, Variable};

const DECLS: &str = "protocol Props
agents A B S
symkey kab level {A,B}
symkey kas level {A,S}
asymkey pkb / skb level {B}
fresh nonce n by A level {A,B}
fresh nonce m by B level public
";

fn protocol() -> Protocol {
    parse(DECLS).unwrap()
}

fn ctx() -> TypingContext {
    protocol().typing_context()
}

fn principal() -> impl Strategy<Value = Term> {
    prop::sample::select(vec!["A", "B", "S"]).prop_map(|n| Term::Atom(Atom::principal(n)))
}

fn key() -> impl Strategy<Value = Term> {
    prop::sample::select(vec!["kab", "kas", "pkb", "skb"]).prop_map(|n| Term::Atom(Atom::key(n)))
}

fn closed_leaf() -> BoxedStrategy<Term> {
    prop_oneof![
        principal(),
        prop::sample::select(vec!["n", "m"]).prop_map(|n| Term::Atom(Atom::nonce(n))),
        key(),
    ]
    .boxed()
}

fn open_leaf() -> BoxedStrategy<Term> {
    prop_oneof![
        3 => closed_leaf(),
        1 => prop::sample::select(vec!["X", "Y", "Z"]).prop_map(Term::var),
    ]
    .boxed()
}

fn term_from(leaf: BoxedStrategy<Term>, with_dec: bool) -> BoxedStrategy<Term> {
    leaf.prop_recursive(4, 24, 2, move |inner| {
        let mut ops = vec![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Term::pair(a, b))
                .boxed(),
            (inner.clone(), key())
                .prop_map(|(b, k)| Term::enc(b, k))
                .boxed(),
        ];
        if with_dec {
            ops.push((inner, key()).prop_map(|(b, k)| Term::dec(b, k)).boxed());
        }
        prop::strategy::Union::new(ops)
    })
    .boxed()
}

fn closed_term() -> BoxedStrategy<Term> {
    term_from(closed_leaf(), false)
}

fn open_term() -> BoxedStrategy<Term> {
    term_from(open_leaf(), true)
}

fn level() -> impl Strategy<Value = Level> {
    prop_oneof![
        1 => Just(Level::Bottom),
        4 => prop::collection::btree_set(prop::sample::select(vec!["A", "B", "S", "D"]), 0..4)
            .prop_map(Level::of),
    ]
}

fn selector() -> impl Strategy<Value = Selector> {
    prop::sample::select(Selector::ALL.to_vec())
}

fn data_atom() -> impl Strategy<Value = Atom> {
    prop::sample::select(vec![
        Atom::principal("A"),
        Atom::principal("S"),
        Atom::nonce("n"),
        Atom::nonce("m"),
        Atom::key("kab"),
        Atom::key("skb"),
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalize_is_idempotent(t in open_term()) {
        let keys = protocol().key_table();
        let once = normalize(&t, &keys);
        prop_assert_eq!(normalize(&once, &keys), once);
    }

    #[test]
    fn substitution_commutes_with_normalization(
        t in open_term(),
        images in prop::collection::vec(term_from(closed_leaf(), true), 3),
    ) {
        let keys = protocol().key_table();
        let sigma: Substitution = ["X", "Y", "Z"]
            .iter()
            .zip(images)
            .map(|(v, i)| (Symbol::Var(Variable::new(*v)), i))
            .collect();
        let direct = substitute(&t, &sigma, &keys).unwrap();
        let first = substitute(&normalize(&t, &keys), &sigma, &keys).unwrap();
        prop_assert_eq!(direct, first);
    }

    #[test]
    fn lattice_laws(a in level(), b in level(), c in level()) {
        prop_assert_eq!(a.meet(&b), b.meet(&a));
        prop_assert_eq!(a.join(&b), b.join(&a));
        prop_assert_eq!(a.meet(&b).meet(&c), a.meet(&b.meet(&c)));
        prop_assert_eq!(a.join(&b).join(&c), a.join(&b.join(&c)));
        prop_assert_eq!(a.meet(&a.join(&b)), a.clone());
        prop_assert_eq!(a.join(&a.meet(&b)), a.clone());
        prop_assert_eq!(a.geq(&b), a.meet(&b) == b);
        prop_assert_eq!(a.geq(&b), a.join(&b) == a);
        prop_assert!(Level::top().geq(&a));
        prop_assert!(a.geq(&Level::bottom()));
        if a.geq(&b) && b.geq(&c) {
            prop_assert!(a.geq(&c));
        }
        if a.geq(&b) && b.geq(&a) {
            prop_assert_eq!(&a, &b);
        }
    }

    #[test]
    fn well_built(
        sel in selector(),
        alpha in data_atom(),
        m1 in prop::collection::vec(closed_term(), 1..3),
        m2 in prop::collection::vec(closed_term(), 1..3),
    ) {
        let ctx = ctx();
        let s = Subject::Atom(alpha.clone());
        prop_assert!(sel.evaluate_set(&s, &[Term::Atom(alpha)], &ctx).unwrap().is_bottom());
        let union: Vec<Term> = m1.iter().chain(&m2).cloned().collect();
        let whole = sel.evaluate_set(&s, &union, &ctx).unwrap();
        let parts = sel
            .evaluate_set(&s, &m1, &ctx)
            .unwrap()
            .meet(&sel.evaluate_set(&s, &m2, &ctx).unwrap());
        prop_assert_eq!(whole, parts);
        let absent = Subject::Atom(Atom::nonce("absent"));
        prop_assert!(sel.evaluate_set(&absent, &union, &ctx).unwrap().is_top());
    }

    #[test]
    fn max_is_below_its_components(alpha in data_atom(), t in closed_term()) {
        let ctx = ctx();
        let s = Subject::Atom(alpha);
        let max = Selector::Max.evaluate(&s, &t, &ctx).unwrap();
        prop_assert!(Selector::Ek.evaluate(&s, &t, &ctx).unwrap().geq(&max));
        prop_assert!(Selector::N.evaluate(&s, &t, &ctx).unwrap().geq(&max));
    }

    #[test]
    fn derivation_adds_no_symbols(t in open_term(), keep in prop::sample::select(vec!["X", "Y"])) {
        let keep = Variable::new(keep);
        let removed: BTreeSet<Variable> = vars(&t).into_iter().filter(|v| *v != keep).collect();
        let d = derive(&t, &removed);
        prop_assert!(atoms(&d).is_subset(&atoms(&t)));
        prop_assert!(vars(&d).iter().all(|v| *v == keep));
        let kept = derive_keep(&t, &Subject::Var(keep.clone()));
        prop_assert_eq!(kept, d);
        let all_removed = derive_keep(&t, &Subject::Atom(Atom::nonce("n")));
        prop_assert!(vars(&all_removed).is_empty());
    }

    #[test]
    fn unifiers_are_sound(a in open_term(), b in open_term()) {
        if let Some(u) = unify(&a, &b) {
            prop_assert_eq!(u.apply(&a), u.apply(&b));
        }
    }

    #[test]
    fn unifiers_are_most_general(
        t in term_from(open_leaf(), false),
        images in prop::collection::vec(closed_term(), 3),
    ) {
        let theta: Substitution = ["X", "Y", "Z"]
            .iter()
            .zip(images)
            .map(|(v, i)| (Symbol::Var(Variable::new(*v)), i))
            .collect();
        let instance = wfcheck_core::term::apply(&t, &theta);
        let u = unify(&t, &instance);
        prop_assert!(u.is_some());
        let u = u.unwrap();
        prop_assert_eq!(u.apply(&t), instance.clone());
        // A variable-free instance forces every binding of `t`'s variables.
        for v in vars(&t) {
            let sym = Symbol::Var(v);
            prop_assert_eq!(u.get(&sym), theta.get(&sym));
        }
    }

    #[test]
    fn closure_is_monotone(ms in prop::collection::vec(closed_term(), 1..4), depth in 0usize..3) {
        let keys = protocol().key_table();
        let base = Knowledge::new(ms.iter().cloned(), &keys);
        let cfg = |d| ClosureConfig { depth: d, max_terms: 4000, compose: true };
        let zero = closure(&base, &keys, &cfg(0)).unwrap();
        prop_assert_eq!(
            zero.iter().collect::<Vec<_>>(),
            base.iter().collect::<Vec<_>>()
        );
        let small = closure(&base, &keys, &cfg(depth));
        let big = closure(&base, &keys, &cfg(depth + 1));
        match (small, big) {
            (Ok(small), Ok(big)) => {
                for t in base.iter() {
                    prop_assert!(small.contains(t));
                }
                for t in small.iter() {
                    prop_assert!(big.contains(t));
                }
            }
            (_, Err(OracleError::ResourceBound { .. })) => {}
            (small, big) => prop_assert!(false, "{:?} {:?}", small.err(), big.err()),
        }
    }

    #[test]
    fn rendered_terms_parse_back(t in open_term()) {
        let p = protocol();
        let keys = p.key_table();
        let table = SymbolTable::for_protocol(&p, Resolution::Query);
        let t = normalize(&t, &keys);
        let text = t.render_dsl();
        let back = parse_term(&text, &table, &keys, 1, 1);
        prop_assert!(back.is_ok(), "{} does not parse: {:?}", text, back.err());
        prop_assert_eq!(back.unwrap(), t);
    }
}
