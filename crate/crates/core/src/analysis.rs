//! Static bounds of the witness function and the growth check on every
//! send step of every generalized role.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::EvalError;
use crate::lattice::{Level, TypingContext};
use crate::protocol::Protocol;
use crate::roles::{
    collect_generalized_messages, extract_roles, GeneralizedMessageSet, GeneralizedRole, RoleError,
};
use crate::safe::{derive_keep, evaluate_on_origin, occurrences, SafeFunction, Selector, Subject};
use crate::term::{Sort, Term};
use crate::unify::origins;

/// Lower bound `W'(α, m)`: the meet, over the origins of `m` in `M_p^G`,
/// of the value each origin gives `α`. `⊤` when `α` does not occur in `m`.
pub fn lower_bound(
    subject: &Subject,
    m: &Term,
    set: &GeneralizedMessageSet,
    f: &dyn SafeFunction,
    ctx: &TypingContext,
) -> Result<Level, EvalError> {
    if !subject.occurs_in(m) {
        return Ok(Level::top());
    }
    let mut acc = Level::top();
    for o in origins(m, set) {
        let v = evaluate_on_origin(f, subject, m, &o.entry, &o.unifier.bindings, ctx)?;
        acc = acc.meet(&v);
    }
    Ok(acc)
}

/// Upper bound `F(α, ∂[ᾱ]m)`, used on the receiving side.
pub fn upper_bound(
    subject: &Subject,
    m: &Term,
    f: &dyn SafeFunction,
    ctx: &TypingContext,
) -> Result<Level, EvalError> {
    f.evaluate(subject, &derive_keep(m, subject), ctx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Ok,
    Violation,
    /// The right-hand side is `⊥`: nothing to protect.
    Vacuous,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Ok => "Ok",
            Verdict::Violation => "Violation",
            Verdict::Vacuous => "Vacuous",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Overall {
    Secure,
    NotProved,
}

impl std::fmt::Display for Overall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Overall::Secure => "Secure",
            Overall::NotProved => "NotProved",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StepVerdict {
    pub role: String,
    pub principal: String,
    pub step: u32,
    pub atom: String,
    #[serde(skip)]
    pub subject: Subject,
    pub received: Vec<String>,
    pub sent: String,
    /// `None` when evaluation failed; see `error`.
    pub lower: Option<Level>,
    pub rhs: Option<Level>,
    /// Declared level; `None` for variables, whose level is left out of
    /// the right-hand side.
    pub declared: Option<Level>,
    pub rhs_unknown: bool,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NotApplicable {
    pub role: String,
    pub atom: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnalysisReport {
    pub protocol: String,
    pub function: String,
    pub rows: Vec<StepVerdict>,
    pub overall: Overall,
    pub not_applicable: Vec<NotApplicable>,
    pub diagnostics: Vec<String>,
}

/// Checks `W'(α, r⁺) ⊒ ⌜α⌝ ⊓ F(α, ∂[ᾱ]R⁻)` for one subject of the last send
/// of `role`.
pub fn check_step(
    role: &GeneralizedRole,
    subject: &Subject,
    f: &dyn SafeFunction,
    ctx: &TypingContext,
    set: &GeneralizedMessageSet,
) -> Option<StepVerdict> {
    let (received, sent) = role.split_last_send()?;
    let declared = subject.level(ctx);
    let evaluated = (|| -> Result<(Level, Level), EvalError> {
        let lower = lower_bound(subject, sent, set, f, ctx)?;
        let mut up = Level::top();
        for m in &received {
            up = up.meet(&upper_bound(subject, m, f, ctx)?);
        }
        let rhs = match &declared {
            Some(d) => d.meet(&up),
            None => up,
        };
        Ok((lower, rhs))
    })();
    let mut note = None;
    for m in received.iter().copied().chain(std::iter::once(sent)) {
        let shadowed = occurrences(subject, &derive_keep(m, subject), ctx)
            .map(|occ| occ.iter().any(|o| o.shadowed))
            .unwrap_or(false);
        if shadowed {
            note = Some(format!(
                "a non-protective key encloses the protective key of {subject} in {m}"
            ));
            break;
        }
    }
    let (lower, rhs, verdict, error) = match evaluated {
        Ok((lower, rhs)) => {
            let verdict = if rhs.is_bottom() {
                Verdict::Vacuous
            } else if lower.geq(&rhs) {
                Verdict::Ok
            } else {
                Verdict::Violation
            };
            (Some(lower), Some(rhs), verdict, None)
        }
        Err(e) => (None, None, Verdict::Violation, Some(e.to_string())),
    };
    Some(StepVerdict {
        role: role.name(),
        principal: role.principal.clone(),
        step: role.events.last().map_or(0, |e| e.step),
        atom: subject.to_string(),
        subject: subject.clone(),
        received: received.iter().map(|m| m.render()).collect(),
        sent: sent.render(),
        lower,
        rhs,
        rhs_unknown: declared.is_none(),
        declared,
        verdict,
        note,
        error,
    })
}

/// Subjects of a role: atoms and variables of `r⁺`, then those only in
/// `R⁻`, in first-occurrence order. Principal identities are skipped;
/// symbols seen only as keys are returned separately.
pub fn role_subjects(role: &GeneralizedRole) -> (Vec<Subject>, Vec<Subject>) {
    let Some((received, sent)) = role.split_last_send() else {
        return (Vec::new(), Vec::new());
    };
    let mut all: Vec<Subject> = Vec::new();
    for m in std::iter::once(sent).chain(received.iter().copied()) {
        m.walk(&mut |t| {
            if let Some(s) = Subject::of(t) {
                if !all.contains(&s) {
                    all.push(s);
                }
            }
        });
    }
    let mut subjects = Vec::new();
    let mut key_only = Vec::new();
    for s in all {
        if matches!(&s, Subject::Atom(a) if a.sort == Sort::Principal) {
            continue;
        }
        let as_data = std::iter::once(sent)
            .chain(received.iter().copied())
            .any(|m| s.occurs_in(m));
        if as_data {
            subjects.push(s);
        } else {
            key_only.push(s);
        }
    }
    (subjects, key_only)
}

/// Runs the growth check over every role that ends in a send.
pub fn analyze(
    p: &Protocol,
    f: &dyn SafeFunction,
    ctx: &TypingContext,
) -> Result<AnalysisReport, RoleError> {
    let roles = extract_roles(p)?;
    let set = collect_generalized_messages(&roles);
    Ok(analyze_roles(&p.name, &roles, &set, f, ctx))
}

pub fn analyze_roles(
    name: &str,
    roles: &[GeneralizedRole],
    set: &GeneralizedMessageSet,
    f: &dyn SafeFunction,
    ctx: &TypingContext,
) -> AnalysisReport {
    let mut rows = Vec::new();
    let mut not_applicable = Vec::new();
    let mut diagnostics = Vec::new();
    for role in roles.iter().filter(|r| r.ends_in_send()) {
        let (subjects, key_only) = role_subjects(role);
        for s in key_only {
            not_applicable.push(NotApplicable {
                role: role.name(),
                atom: s.to_string(),
                reason: "occurs only in key position".into(),
            });
        }
        for s in subjects {
            if let Some(row) = check_step(role, &s, f, ctx, set) {
                if let Some(e) = &row.error {
                    diagnostics.push(format!("{} {}: {e}", row.role, row.atom));
                }
                rows.push(row);
            }
        }
    }
    let secure = rows
        .iter()
        .all(|r| matches!(r.verdict, Verdict::Ok | Verdict::Vacuous));
    AnalysisReport {
        protocol: name.to_string(),
        function: f.name(),
        rows,
        overall: if secure {
            Overall::Secure
        } else {
            Overall::NotProved
        },
        not_applicable,
        diagnostics,
    }
}

/// Convenience for the built-in functions.
pub fn analyze_with(
    p: &Protocol,
    sel: Selector,
    ctx: &TypingContext,
) -> Result<AnalysisReport, RoleError> {
    analyze(p, &sel, ctx)
}

fn level_cell(l: &Option<Level>) -> String {
    l.as_ref().map_or("-".to_string(), Level::to_string)
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let header = ["#", "Role", "α", "R⁻", "r⁺", "lower", "rhs", "Verdict"];
        let mut cells: Vec<[String; 8]> = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            let rhs = match (&r.rhs, r.rhs_unknown) {
                (Some(l), true) => format!("⌜{}⌝ ⊓ {l}", r.atom),
                (l, _) => level_cell(l),
            };
            cells.push([
                (i + 1).to_string(),
                r.role.clone(),
                r.atom.clone(),
                if r.received.is_empty() {
                    "ε".to_string()
                } else {
                    r.received.join(", ")
                },
                r.sent.clone(),
                level_cell(&r.lower),
                rhs,
                r.verdict.to_string(),
            ]);
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |out: &mut String, row: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                s.push_str(c);
                if i + 1 < row.len() {
                    s.extend(std::iter::repeat_n(' ', w - c.chars().count()));
                }
            }
            let _ = writeln!(out, "{}", s.trim_end());
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "protocol {}  function F_{}",
            self.protocol, self.function
        );
        let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        line(&mut out, &head);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule);
        for row in &cells {
            line(&mut out, row);
        }
        for r in &self.rows {
            if let Some(n) = &r.note {
                let _ = writeln!(out, "note: {} {}: {n}", r.role, r.atom);
            }
        }
        for n in &self.not_applicable {
            let _ = writeln!(out, "not applicable: {} {}: {}", n.role, n.atom, n.reason);
        }
        for d in &self.diagnostics {
            let _ = writeln!(out, "error: {d}");
        }
        let _ = writeln!(out, "overall: {}", self.overall);
        out
    }
}
