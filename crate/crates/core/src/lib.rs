//! Static secrecy analysis of cryptographic protocols with witness
//! functions.

pub mod analysis;
pub mod error;
pub mod lattice;
pub mod oracle;
pub mod protocol;
pub mod roles;
pub mod safe;
pub mod term;
pub mod unify;

pub use analysis::{analyze, AnalysisReport, Overall, StepVerdict, Verdict};
pub use error::{EvalError, OracleError, ParseError, TermError};
pub use lattice::{Level, TypingContext};
pub use protocol::{parse, validate, Protocol};
pub use safe::{SafeFunction, Selector, Subject};
pub use term::{Atom, KeyTable, Sort, Term, Variable};
