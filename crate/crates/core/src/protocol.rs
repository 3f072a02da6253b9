//! Protocol description files.
//!
//! ```text
//! protocol <name>
//! agents <id> <id> ...
//! symkey <k> level {<id>,...}|public
//! asymkey <pk> / <sk> level {<id>,...}|public
//! fresh nonce|key <x> by <agent> level {<id>,...}|public
//! knows <agent> : <atom>, ...
//! msg <n> <A> -> <B> : <term>
//! secret <atom>, ...
//! ```
//!
//! Terms: identifiers are atoms, `,` (or `.`) pairs right-nested,
//! `{t1, t2}k` encrypts, `dec(t, k)` decrypts and is cancelled on reading.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::ParseError;
use crate::lattice::{Level, TypingContext, INTRUDER, INTRUDER_KEY, INTRUDER_NONCE};
use crate::term::{normalize, Atom, KeyTable, Session, Sort, Term, Variable};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeyDecl {
    Symmetric {
        name: String,
        level: Level,
    },
    /// `public` encrypts, `private` decrypts; the level is that of the
    /// private half, the public half is known to everyone.
    Asymmetric {
        public: String,
        private: String,
        level: Level,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreshDecl {
    pub atom: Atom,
    pub generator: String,
    pub level: Level,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowsDecl {
    pub agent: String,
    pub atoms: Vec<Atom>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub index: u32,
    pub sender: String,
    pub receiver: String,
    pub payload: Term,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Protocol {
    pub name: String,
    pub agents: Vec<String>,
    pub keys: Vec<KeyDecl>,
    pub fresh: Vec<FreshDecl>,
    pub knows: Vec<KnowsDecl>,
    pub steps: Vec<Step>,
    pub secrets: Vec<Atom>,
}

impl Protocol {
    pub fn fresh_decl(&self, atom: &Atom) -> Option<&FreshDecl> {
        self.fresh.iter().find(|f| f.atom.name == atom.name)
    }

    pub fn is_fresh(&self, atom: &Atom) -> bool {
        self.fresh_decl(atom).is_some()
    }

    pub fn generator_of(&self, atom: &Atom) -> Option<&str> {
        self.fresh_decl(atom).map(|f| f.generator.as_str())
    }

    pub fn key_table(&self) -> KeyTable {
        let mut keys = KeyTable::new();
        for k in &self.keys {
            if let KeyDecl::Asymmetric {
                public, private, ..
            } = k
            {
                keys.add_pair(public, private);
            }
        }
        keys
    }

    /// Name → atom for every declared symbol.
    pub fn symbols(&self) -> BTreeMap<String, Atom> {
        let mut table = BTreeMap::new();
        for a in &self.agents {
            table.insert(a.clone(), Atom::principal(a));
        }
        for k in &self.keys {
            match k {
                KeyDecl::Symmetric { name, .. } => {
                    table.insert(name.clone(), Atom::key(name));
                }
                KeyDecl::Asymmetric {
                    public, private, ..
                } => {
                    table.insert(public.clone(), Atom::key(public));
                    table.insert(private.clone(), Atom::key(private));
                }
            }
        }
        for f in &self.fresh {
            table.insert(f.atom.name.clone(), f.atom.clone());
        }
        table
    }

    /// Levels, key inverses, and `K(I)`: the intruder's own atoms, every
    /// agent identity, public keys, and anything listed in `knows I`.
    pub fn typing_context(&self) -> TypingContext {
        let mut ctx = TypingContext::new();
        ctx.keys = self.key_table();
        ctx.add_intruder_defaults();
        for k in &self.keys {
            match k {
                KeyDecl::Symmetric { name, level } => ctx.declare(name, level.clone()),
                KeyDecl::Asymmetric {
                    public,
                    private,
                    level,
                } => {
                    ctx.declare(public, Level::Bottom);
                    ctx.declare(private, level.clone());
                    ctx.intruder_knowledge.insert(Atom::key(public));
                }
            }
        }
        for f in &self.fresh {
            ctx.declare(&f.atom.name, f.level.clone());
        }
        for a in &self.agents {
            ctx.intruder_knowledge.insert(Atom::principal(a));
        }
        for k in self.knows.iter().filter(|k| k.agent == INTRUDER) {
            ctx.intruder_knowledge.extend(k.atoms.iter().cloned());
        }
        ctx
    }

    /// Atoms `agent` holds before the run, fresh values excluded. Explicit
    /// `knows` lines replace the default of all identities plus the keys
    /// whose level names the agent.
    pub fn initial_knowledge(&self, agent: &str) -> BTreeSet<Atom> {
        let explicit: Vec<&KnowsDecl> = self.knows.iter().filter(|k| k.agent == agent).collect();
        if !explicit.is_empty() {
            return explicit
                .iter()
                .flat_map(|k| k.atoms.iter().cloned())
                .collect();
        }
        let mut known: BTreeSet<Atom> = self.agents.iter().map(Atom::principal).collect();
        let party = |level: &Level| match level {
            Level::Bottom => true,
            Level::Principals(s) => s.contains(agent),
        };
        for k in &self.keys {
            match k {
                KeyDecl::Symmetric { name, level } => {
                    if party(level) {
                        known.insert(Atom::key(name));
                    }
                }
                KeyDecl::Asymmetric {
                    public,
                    private,
                    level,
                } => {
                    known.insert(Atom::key(public));
                    if party(level) {
                        known.insert(Atom::key(private));
                    }
                }
            }
        }
        known
    }

    /// Concrete messages of one honest run, fresh values tagged with the
    /// run number.
    pub fn honest_messages(&self, run: u32) -> Vec<Term> {
        self.steps
            .iter()
            .map(|s| {
                s.payload.map_leaves(&mut |leaf| match leaf {
                    Term::Atom(a) if self.is_fresh(a) => {
                        Term::Atom(a.clone().with_session(Session::Run(run)))
                    }
                    other => other.clone(),
                })
            })
            .collect()
    }

    /// Canonical protocol file text. `parse(render(p)) == p`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol {}", self.name);
        let _ = writeln!(out, "agents {}", self.agents.join(" "));
        for k in &self.keys {
            match k {
                KeyDecl::Symmetric { name, level } => {
                    let _ = writeln!(out, "symkey {name} level {}", render_level(level));
                }
                KeyDecl::Asymmetric {
                    public,
                    private,
                    level,
                } => {
                    let _ = writeln!(
                        out,
                        "asymkey {public} / {private} level {}",
                        render_level(level)
                    );
                }
            }
        }
        for f in &self.fresh {
            let kind = if f.atom.sort == Sort::Key {
                "key"
            } else {
                "nonce"
            };
            let _ = writeln!(
                out,
                "fresh {kind} {} by {} level {}",
                f.atom.name,
                f.generator,
                render_level(&f.level)
            );
        }
        for k in &self.knows {
            let names: Vec<String> = k.atoms.iter().map(|a| a.name.clone()).collect();
            let _ = writeln!(out, "knows {} : {}", k.agent, names.join(", "));
        }
        for s in &self.steps {
            let _ = writeln!(
                out,
                "msg {} {} -> {} : {}",
                s.index,
                s.sender,
                s.receiver,
                s.payload.render_dsl()
            );
        }
        if !self.secrets.is_empty() {
            let names: Vec<String> = self.secrets.iter().map(|a| a.name.clone()).collect();
            let _ = writeln!(out, "secret {}", names.join(", "));
        }
        out
    }
}

fn render_level(level: &Level) -> String {
    match level {
        Level::Bottom => "public".to_string(),
        Level::Principals(s) => {
            let names: Vec<&str> = s.iter().map(String::as_str).collect();
            format!("{{{}}}", names.join(","))
        }
    }
}

// ---------------------------------------------------------------------------
// Term syntax

/// How unknown identifiers in a term are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    /// Protocol files: every identifier must be declared.
    Strict,
    /// Command-line queries: undeclared identifiers are variables, and the
    /// intruder's atoms are in scope.
    Query,
}

/// Resolves identifiers for the term parser.
pub struct SymbolTable {
    symbols: BTreeMap<String, Atom>,
    fresh: BTreeSet<String>,
    mode: Resolution,
}

impl SymbolTable {
    pub fn for_protocol(p: &Protocol, mode: Resolution) -> Self {
        let mut symbols = p.symbols();
        if mode == Resolution::Query {
            symbols.insert(INTRUDER.into(), Atom::principal(INTRUDER));
            symbols.insert(INTRUDER_KEY.into(), Atom::key(INTRUDER_KEY));
            symbols.insert(INTRUDER_NONCE.into(), Atom::nonce(INTRUDER_NONCE));
        }
        let fresh = p.fresh.iter().map(|f| f.atom.name.clone()).collect();
        SymbolTable {
            symbols,
            fresh,
            mode,
        }
    }

    fn resolve(
        &self,
        name: &str,
        session: Option<Session>,
        line: usize,
        column: usize,
    ) -> Result<Term, ParseError> {
        let with_session = |atom: Atom| -> Result<Term, ParseError> {
            match session {
                None => Ok(Term::Atom(atom)),
                Some(s) if self.fresh.contains(&atom.name) => Ok(Term::Atom(atom.with_session(s))),
                Some(_) => Err(ParseError::Syntax {
                    line,
                    column,
                    message: format!("`{name}` is not a fresh value and takes no session index"),
                }),
            }
        };
        if let Some(atom) = self.symbols.get(name) {
            return with_session(atom.clone());
        }
        if let Some((base, tag)) = name.rsplit_once('_') {
            if let (Some(atom), Ok(tag)) = (self.symbols.get(base), tag.parse::<u32>()) {
                return with_session(atom.clone().with_tag(tag));
            }
        }
        match self.mode {
            Resolution::Query if session.is_none() => Ok(Term::Var(Variable::new(name))),
            _ => Err(ParseError::UndeclaredSymbol {
                line,
                column,
                name: name.to_string(),
            }),
        }
    }
}

/// Parses a term. `line` and `column` locate `text` for diagnostics.
pub fn parse_term(
    text: &str,
    table: &SymbolTable,
    keys: &KeyTable,
    line: usize,
    column: usize,
) -> Result<Term, ParseError> {
    let mut p = TermParser {
        chars: text.chars().collect(),
        pos: 0,
        line,
        column,
        table,
    };
    let t = p.seq()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.error(format!("unexpected `{}`", p.chars[p.pos])));
    }
    crate::term::check_key_positions(&t).map_err(|e| ParseError::Syntax {
        line,
        column,
        message: e.to_string(),
    })?;
    Ok(normalize(&t, keys))
}

struct TermParser<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
    table: &'a SymbolTable,
}

impl TermParser<'_> {
    fn error(&self, message: String) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            column: self.column + self.pos,
            message,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(x) => Err(self.error(format!("expected `{c}`, found `{x}`"))),
            None => Err(self.error(format!("expected `{c}`, found end of input"))),
        }
    }

    fn seq_items(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut items = vec![self.item()?];
        while matches!(self.peek(), Some(',') | Some('.')) {
            self.pos += 1;
            items.push(self.item()?);
        }
        Ok(items)
    }

    fn seq(&mut self) -> Result<Term, ParseError> {
        let items = self.seq_items()?;
        Ok(Term::seq(items))
    }

    fn item(&mut self) -> Result<Term, ParseError> {
        match self.peek() {
            Some('{') => {
                self.pos += 1;
                let body = self.seq()?;
                self.expect('}')?;
                let key = self.key()?;
                Ok(Term::Enc(Box::new(body), Box::new(key)))
            }
            Some('(') => {
                self.pos += 1;
                let t = self.seq()?;
                self.expect(')')?;
                Ok(t)
            }
            Some('ε') => {
                self.pos += 1;
                Ok(Term::Empty)
            }
            Some(c) if is_ident_start(c) => {
                let start = self.pos;
                let (name, session) = self.ident()?;
                if name == "dec" && self.peek() == Some('(') {
                    self.pos += 1;
                    let mut items = self.seq_items()?;
                    self.expect(')')?;
                    if items.len() < 2 {
                        return Err(self.error("dec needs a body and a key".into()));
                    }
                    let key = items.pop().expect("at least two items");
                    return Ok(Term::dec(Term::seq(items), key));
                }
                self.table
                    .resolve(&name, session, self.line, self.column + start)
            }
            Some(c) => Err(self.error(format!("unexpected `{c}`"))),
            None => Err(self.error("unexpected end of term".into())),
        }
    }

    fn key(&mut self) -> Result<Term, ParseError> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let t = self.seq()?;
                self.expect(')')?;
                Ok(t)
            }
            Some(c) if is_ident_start(c) => {
                let start = self.pos;
                let (name, session) = self.ident()?;
                self.table
                    .resolve(&name, session, self.line, self.column + start)
            }
            _ => Err(self.error("expected an encryption key".into())),
        }
    }

    fn ident(&mut self) -> Result<(String, Option<Session>), ParseError> {
        let start = self.pos;
        while self.pos < self.chars.len() && is_ident_char(self.chars[self.pos]) {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        let mut session = None;
        if self.chars.get(self.pos) == Some(&'^') {
            self.pos += 1;
            let s = self.pos;
            while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            let suffix: String = self.chars[s..self.pos].iter().collect();
            session = Some(match suffix.as_str() {
                "i" => Session::Symbolic,
                n => Session::Run(
                    n.parse()
                        .map_err(|_| self.error(format!("bad session index `^{n}`")))?,
                ),
            });
        }
        Ok((name, session))
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

// ---------------------------------------------------------------------------
// Protocol file syntax

struct Line<'a> {
    number: usize,
    text: &'a str,
    /// Byte offset of `text` in the raw line, for columns.
    offset: usize,
}

impl<'a> Line<'a> {
    fn words(&self) -> Vec<(usize, &'a str)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in self.text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    out.push((s, &self.text[s..i]));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            out.push((s, &self.text[s..]));
        }
        out
    }

    fn col(&self, byte: usize) -> usize {
        self.offset + byte + 1
    }

    fn syntax(&self, byte: usize, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.number,
            column: self.col(byte),
            message: message.into(),
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_char)
}

fn parse_level(line: &Line, byte: usize, text: &str) -> Result<Level, ParseError> {
    let text = text.trim();
    if text == "public" {
        return Ok(Level::Bottom);
    }
    let inner = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| {
            line.syntax(
                byte,
                format!("expected `{{..}}` or `public`, found `{text}`"),
            )
        })?;
    let mut names = BTreeSet::new();
    for name in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if !is_identifier(name) {
            return Err(line.syntax(byte, format!("bad principal name `{name}` in level")));
        }
        names.insert(name.to_string());
    }
    Ok(Level::Principals(names))
}

/// Parses a protocol file.
pub fn parse(text: &str) -> Result<Protocol, ParseError> {
    let mut name: Option<String> = None;
    let mut p = Protocol {
        name: String::new(),
        agents: Vec::new(),
        keys: Vec::new(),
        fresh: Vec::new(),
        knows: Vec::new(),
        steps: Vec::new(),
        secrets: Vec::new(),
    };
    let mut declared: BTreeSet<String> = [INTRUDER, INTRUDER_KEY, INTRUDER_NONCE]
        .into_iter()
        .map(String::from)
        .collect();
    // Lines referring to symbols are resolved once every declaration is in.
    let mut deferred: Vec<Line> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let trimmed_start = content.len() - content.trim_start().len();
        let line = Line {
            number: i + 1,
            text: content.trim(),
            offset: trimmed_start,
        };
        if line.text.is_empty() {
            continue;
        }
        let words = line.words();
        let (_, keyword) = words[0];
        let declare = |declared: &mut BTreeSet<String>, byte: usize, id: &str| {
            if !is_identifier(id) {
                return Err(line.syntax(byte, format!("`{id}` is not an identifier")));
            }
            if !declared.insert(id.to_string()) {
                return Err(ParseError::DuplicateDeclaration {
                    line: line.number,
                    column: line.col(byte),
                    name: id.to_string(),
                });
            }
            Ok(())
        };
        match keyword {
            "protocol" => {
                if words.len() != 2 {
                    return Err(line.syntax(0, "expected `protocol <name>`"));
                }
                if name.is_some() {
                    return Err(ParseError::DuplicateDeclaration {
                        line: line.number,
                        column: line.col(0),
                        name: "protocol".into(),
                    });
                }
                name = Some(words[1].1.to_string());
            }
            "agents" => {
                if words.len() < 2 {
                    return Err(line.syntax(0, "expected at least one agent"));
                }
                for &(b, id) in &words[1..] {
                    declare(&mut declared, b, id)?;
                    p.agents.push(id.to_string());
                }
            }
            "symkey" => {
                if words.len() < 4 || words[2].1 != "level" {
                    return Err(line.syntax(0, "expected `symkey <k> level <level>`"));
                }
                declare(&mut declared, words[1].0, words[1].1)?;
                let level_at = words[3].0;
                let level = parse_level(&line, level_at, &line.text[level_at..])?;
                p.keys.push(KeyDecl::Symmetric {
                    name: words[1].1.to_string(),
                    level,
                });
            }
            "asymkey" => {
                if words.len() < 6 || words[2].1 != "/" || words[4].1 != "level" {
                    return Err(line.syntax(0, "expected `asymkey <pk> / <sk> level <level>`"));
                }
                declare(&mut declared, words[1].0, words[1].1)?;
                declare(&mut declared, words[3].0, words[3].1)?;
                let level_at = words[5].0;
                let level = parse_level(&line, level_at, &line.text[level_at..])?;
                p.keys.push(KeyDecl::Asymmetric {
                    public: words[1].1.to_string(),
                    private: words[3].1.to_string(),
                    level,
                });
            }
            "fresh" => {
                if words.len() < 7 || words[3].1 != "by" || words[5].1 != "level" {
                    return Err(
                        line.syntax(0, "expected `fresh nonce|key <x> by <agent> level <level>`")
                    );
                }
                let sort = match words[1].1 {
                    "nonce" => Sort::Nonce,
                    "key" => Sort::Key,
                    other => {
                        return Err(line.syntax(words[1].0, format!("unknown fresh kind `{other}`")))
                    }
                };
                declare(&mut declared, words[2].0, words[2].1)?;
                let level_at = words[6].0;
                let level = parse_level(&line, level_at, &line.text[level_at..])?;
                p.fresh.push(FreshDecl {
                    atom: Atom::new(words[2].1, sort),
                    generator: words[4].1.to_string(),
                    level,
                });
                deferred.push(line);
            }
            "knows" | "msg" | "secret" => deferred.push(line),
            other => return Err(line.syntax(0, format!("unknown statement `{other}`"))),
        }
    }
    p.name = name.ok_or(ParseError::Syntax {
        line: 1,
        column: 1,
        message: "missing `protocol <name>` line".into(),
    })?;

    let table = SymbolTable::for_protocol(&p, Resolution::Strict);
    let keys = p.key_table();
    let agents: BTreeSet<&str> = p.agents.iter().map(String::as_str).collect();
    let symbols = p.symbols();
    let mut steps = Vec::new();
    let mut knows = Vec::new();
    let mut secrets = Vec::new();

    for line in &deferred {
        let words = line.words();
        let undeclared = |byte: usize, name: &str| ParseError::UndeclaredSymbol {
            line: line.number,
            column: line.col(byte),
            name: name.to_string(),
        };
        match words[0].1 {
            "fresh" => {
                let (b, generator) = words[4];
                if !agents.contains(generator) {
                    return Err(undeclared(b, generator));
                }
            }
            "knows" => {
                let colon = line
                    .text
                    .find(':')
                    .ok_or_else(|| line.syntax(0, "expected `knows <agent> : <atoms>`"))?;
                let agent = line.text[5..colon].trim();
                if agent != INTRUDER && !agents.contains(agent) {
                    return Err(undeclared(5, agent));
                }
                let mut atoms = Vec::new();
                let mut at = colon + 1;
                for item in line.text[colon + 1..].split(',') {
                    let lead = item.len() - item.trim_start().len();
                    let id = item.trim();
                    let atom = symbols
                        .get(id)
                        .cloned()
                        .or_else(|| match id {
                            INTRUDER => Some(Atom::principal(INTRUDER)),
                            INTRUDER_KEY => Some(Atom::key(INTRUDER_KEY)),
                            INTRUDER_NONCE => Some(Atom::nonce(INTRUDER_NONCE)),
                            _ => None,
                        })
                        .ok_or_else(|| undeclared(at + lead, id))?;
                    atoms.push(atom);
                    at += item.len() + 1;
                }
                knows.push(KnowsDecl {
                    agent: agent.to_string(),
                    atoms,
                });
            }
            "secret" => {
                let mut at = 6;
                for item in line.text[6..].split(',') {
                    let lead = item.len() - item.trim_start().len();
                    let id = item.trim();
                    let atom = symbols
                        .get(id)
                        .cloned()
                        .ok_or_else(|| undeclared(at + lead, id))?;
                    if secrets.contains(&atom) {
                        return Err(ParseError::DuplicateDeclaration {
                            line: line.number,
                            column: line.col(at + lead),
                            name: id.to_string(),
                        });
                    }
                    secrets.push(atom);
                    at += item.len() + 1;
                }
            }
            "msg" => {
                if words.len() < 6 || words[3].1 != "->" || !words[5].1.starts_with(':') {
                    return Err(line.syntax(0, "expected `msg <n> <A> -> <B> : <term>`"));
                }
                let index: u32 = words[1]
                    .1
                    .parse()
                    .map_err(|_| line.syntax(words[1].0, "step index must be a number"))?;
                let (sb, sender) = words[2];
                let (rb, receiver) = words[4];
                if !agents.contains(sender) {
                    return Err(undeclared(sb, sender));
                }
                if !agents.contains(receiver) {
                    return Err(undeclared(rb, receiver));
                }
                if sender == receiver {
                    return Err(ParseError::InvalidStep {
                        line: line.number,
                        column: line.col(sb),
                        message: format!("sender and receiver are both `{sender}`"),
                    });
                }
                if let Some(prev) = steps.last().map(|s: &Step| s.index) {
                    if index <= prev {
                        return Err(ParseError::InvalidStep {
                            line: line.number,
                            column: line.col(words[1].0),
                            message: format!("step {index} does not follow step {prev}"),
                        });
                    }
                }
                let term_at = words[5].0 + 1;
                let payload = parse_term(
                    &line.text[term_at..],
                    &table,
                    &keys,
                    line.number,
                    line.col(term_at),
                )?;
                steps.push(Step {
                    index,
                    sender: sender.to_string(),
                    receiver: receiver.to_string(),
                    payload,
                });
            }
            _ => unreachable!("only deferred statements reach here"),
        }
    }
    p.steps = steps;
    p.knows = knows;
    p.secrets = secrets;
    Ok(p)
}

/// Reads `level <atom> <level>` and `knows I : <atoms>` lines that
/// override a protocol's typing context.
pub fn apply_context_overrides(
    text: &str,
    p: &Protocol,
    ctx: &mut TypingContext,
) -> Result<(), ParseError> {
    let symbols = p.symbols();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let line = Line {
            number: i + 1,
            text: content.trim(),
            offset: content.len() - content.trim_start().len(),
        };
        if line.text.is_empty() {
            continue;
        }
        let words = line.words();
        match words[0].1 {
            "level" if words.len() >= 3 => {
                let (b, name) = words[1];
                if !symbols.contains_key(name) {
                    return Err(ParseError::UndeclaredSymbol {
                        line: line.number,
                        column: line.col(b),
                        name: name.into(),
                    });
                }
                let level = parse_level(&line, words[2].0, &line.text[words[2].0..])?;
                ctx.declare(name, level);
            }
            "knows" => {
                let colon = line
                    .text
                    .find(':')
                    .ok_or_else(|| line.syntax(0, "expected `knows I : <atoms>`"))?;
                if line.text[5..colon].trim() != INTRUDER {
                    return Err(line.syntax(5, "context files may only extend `knows I`"));
                }
                for id in line.text[colon + 1..].split(',').map(str::trim) {
                    let atom = symbols
                        .get(id)
                        .cloned()
                        .ok_or(ParseError::UndeclaredSymbol {
                            line: line.number,
                            column: line.col(colon + 1),
                            name: id.into(),
                        })?;
                    ctx.intruder_knowledge.insert(atom);
                }
            }
            other => return Err(line.syntax(0, format!("unknown context statement `{other}`"))),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub step: Option<u32>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.step {
            Some(s) => write!(f, "{sev}: step {s}: {}", self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

/// Checks generation order of fresh values, executability of every send,
/// and that secrets carry a level above `⊥`. Returns no diagnostics for a
/// well-formed protocol.
pub fn validate(p: &Protocol, ctx: &TypingContext) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let error = |step, message| Diagnostic {
        severity: Severity::Error,
        step,
        message,
    };
    let warning = |step, message| Diagnostic {
        severity: Severity::Warning,
        step,
        message,
    };

    for f in &p.fresh {
        match p
            .steps
            .iter()
            .find(|s| s.payload.contains_atom(&f.atom))
        {
            None => out.push(warning(
                None,
                format!("fresh value `{}` is never sent", f.atom.name),
            )),
            Some(s) if s.sender != f.generator => out.push(error(
                Some(s.index),
                format!(
                    "fresh value `{}` first appears in a message from `{}`, not from its generator `{}`",
                    f.atom.name, s.sender, f.generator
                ),
            )),
            Some(_) => {}
        }
    }

    for s in &p.steps {
        let mut missing = BTreeSet::new();
        s.payload.walk(&mut |t| {
            if let Term::Enc(_, k) | Term::Dec(_, k) = t {
                if let Term::Atom(key) = &**k {
                    if ctx.inverse_level(key).is_none() {
                        missing.insert(ctx.keys.inverse(key).name);
                    }
                }
            }
        });
        for name in missing {
            out.push(error(
                Some(s.index),
                format!("no security level declared for key `{name}`"),
            ));
        }
    }

    for agent in &p.agents {
        if let Err(e) = crate::roles::agent_trace(p, agent) {
            out.push(error(Some(e.step), e.to_string()));
        }
    }

    for secret in &p.secrets {
        match ctx.level_of(secret) {
            None => out.push(error(
                None,
                format!("secret `{}` has no declared level", secret.name),
            )),
            Some(Level::Bottom) => {
                out.push(warning(None, format!("secret `{}` is public", secret.name)))
            }
            Some(_) => {}
        }
    }
    out
}
