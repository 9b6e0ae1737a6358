//! Line-based EL axiom format.
//!
//! ```text
//! axiom   := "subClassOf(" concept "," concept ")"
//!          | "equivalentClasses(" concept "," concept ")"
//!          | "disjointWith(" concept "," concept ")"
//! concept := NAME | "top" | "bottom" | "nominal(" NAME ")"
//!          | "and(" concept "," concept ")" | "some(" NAME "," concept ")"
//! ```
//!
//! `#` starts a comment; blank lines are skipped. Whitespace between tokens is
//! ignored. `disjointWith(C,D)` is desugared to `subClassOf(and(C,D),bottom)`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub const DEFAULT_MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ConceptExpr {
    Atomic(String),
    Top,
    Bottom,
    Nominal(String),
    Intersection(Box<ConceptExpr>, Box<ConceptExpr>),
    Existential(String, Box<ConceptExpr>),
}

impl ConceptExpr {
    pub fn atomic(name: impl Into<String>) -> Self {
        ConceptExpr::Atomic(name.into())
    }

    pub fn and(left: ConceptExpr, right: ConceptExpr) -> Self {
        ConceptExpr::Intersection(Box::new(left), Box::new(right))
    }

    pub fn some(role: impl Into<String>, filler: ConceptExpr) -> Self {
        ConceptExpr::Existential(role.into(), Box::new(filler))
    }

    /// Atomic names, `top`, and nominals each stand for a single class.
    pub fn is_atomic(&self) -> bool {
        matches!(
            self,
            ConceptExpr::Atomic(_) | ConceptExpr::Top | ConceptExpr::Nominal(_)
        )
    }

    /// Number of nodes in the expression tree.
    pub fn size(&self) -> usize {
        match self {
            ConceptExpr::Atomic(_)
            | ConceptExpr::Top
            | ConceptExpr::Bottom
            | ConceptExpr::Nominal(_) => 1,
            ConceptExpr::Intersection(l, r) => 1 + l.size() + r.size(),
            ConceptExpr::Existential(_, f) => 1 + f.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ConceptExpr::Intersection(l, r) => 1 + l.depth().max(r.depth()),
            ConceptExpr::Existential(_, f) => 1 + f.depth(),
            _ => 1,
        }
    }

    fn collect_names(&self, names: &mut EntityNames) {
        match self {
            ConceptExpr::Atomic(n) => {
                names.classes.insert(n.clone());
            }
            ConceptExpr::Nominal(n) => {
                names.individuals.insert(n.clone());
            }
            ConceptExpr::Top | ConceptExpr::Bottom => {}
            ConceptExpr::Intersection(l, r) => {
                l.collect_names(names);
                r.collect_names(names);
            }
            ConceptExpr::Existential(role, f) => {
                names.relations.insert(role.clone());
                f.collect_names(names);
            }
        }
    }
}

/// Prints the canonical form: no whitespace, keywords lowercase.
impl fmt::Display for ConceptExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConceptExpr::Atomic(n) => f.write_str(n),
            ConceptExpr::Top => f.write_str("top"),
            ConceptExpr::Bottom => f.write_str("bottom"),
            ConceptExpr::Nominal(n) => write!(f, "nominal({n})"),
            ConceptExpr::Intersection(l, r) => write!(f, "and({l},{r})"),
            ConceptExpr::Existential(role, filler) => write!(f, "some({role},{filler})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RawAxiom {
    SubClassOf(ConceptExpr, ConceptExpr),
    EquivalentClasses(ConceptExpr, ConceptExpr),
}

impl fmt::Display for RawAxiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawAxiom::SubClassOf(a, b) => write!(f, "subClassOf({a},{b})"),
            RawAxiom::EquivalentClasses(a, b) => write!(f, "equivalentClasses({a},{b})"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OntologyStats {
    pub axiom_count: usize,
    pub class_count: usize,
    pub relation_count: usize,
    pub individual_count: usize,
}

#[derive(Default)]
struct EntityNames {
    classes: BTreeSet<String>,
    relations: BTreeSet<String>,
    individuals: BTreeSet<String>,
}

impl OntologyStats {
    pub fn from_axioms(axioms: &[RawAxiom]) -> Self {
        let mut names = EntityNames::default();
        for ax in axioms {
            let (a, b) = match ax {
                RawAxiom::SubClassOf(a, b) | RawAxiom::EquivalentClasses(a, b) => (a, b),
            };
            a.collect_names(&mut names);
            b.collect_names(&mut names);
        }
        OntologyStats {
            axiom_count: axioms.len(),
            class_count: names.classes.len(),
            relation_count: names.relations.len(),
            individual_count: names.individuals.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedEnd { expected: &'static str },
    Unexpected { found: String, expected: &'static str },
    UnknownAxiom(String),
    TooDeep { limit: usize },
    TrailingInput(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnexpectedEnd { expected } => {
                write!(f, "unexpected end of input, expected {expected}")
            }
            ParseErrorKind::Unexpected { found, expected } => {
                write!(f, "unexpected `{found}`, expected {expected}")
            }
            ParseErrorKind::UnknownAxiom(kw) => write!(
                f,
                "unknown axiom `{kw}` (expected subClassOf, equivalentClasses or disjointWith)"
            ),
            ParseErrorKind::TooDeep { limit } => {
                write!(f, "expression nesting exceeds the limit of {limit}")
            }
            ParseErrorKind::TrailingInput(t) => write!(f, "trailing input starting at `{t}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    Name(&'a str),
    Open,
    Close,
    Comma,
}

#[derive(Debug, Clone)]
struct Token<'a> {
    tok: Tok<'a>,
    /// 1-based character column.
    column: usize,
}

fn is_name_char(c: char) -> bool {
    !(c.is_whitespace() || matches!(c, '(' | ')' | ',' | '#'))
}

fn tokenize(text: &str) -> (Vec<Token<'_>>, usize) {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut column = 0;
    let mut end_column = 1;
    while let Some((start, c)) = chars.next() {
        column += 1;
        end_column = column + 1;
        let tok = match c {
            '#' => {
                end_column = column;
                break;
            }
            '(' => Tok::Open,
            ')' => Tok::Close,
            ',' => Tok::Comma,
            c if c.is_whitespace() => continue,
            _ => {
                let col = column;
                let mut end = start + c.len_utf8();
                while let Some(&(i, n)) = chars.peek() {
                    if !is_name_char(n) {
                        break;
                    }
                    end = i + n.len_utf8();
                    column += 1;
                    chars.next();
                }
                end_column = column + 1;
                tokens.push(Token {
                    tok: Tok::Name(&text[start..end]),
                    column: col,
                });
                continue;
            }
        };
        tokens.push(Token { tok, column });
    }
    (tokens, end_column)
}

/// Recursive-descent parser over one line of text.
#[derive(Debug, Clone, Copy)]
pub struct Parser {
    max_depth: usize,
}

impl Default for Parser {
    fn default() -> Self {
        Parser {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

struct Cursor<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
    end_column: usize,
    line: usize,
    max_depth: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize, max_depth: usize) -> Self {
        let (tokens, end_column) = tokenize(text);
        Cursor {
            tokens,
            pos: 0,
            end_column,
            line,
            max_depth,
        }
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        let column = self
            .tokens
            .get(self.pos)
            .map(|t| t.column)
            .unwrap_or(self.end_column);
        ParseError {
            line: self.line,
            column,
            kind,
        }
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        match self.tokens.get(self.pos) {
            None => self.error_here(ParseErrorKind::UnexpectedEnd { expected }),
            Some(t) => {
                let found = match t.tok {
                    Tok::Name(n) => n.to_string(),
                    Tok::Open => "(".into(),
                    Tok::Close => ")".into(),
                    Tok::Comma => ",".into(),
                };
                self.error_here(ParseErrorKind::Unexpected { found, expected })
            }
        }
    }

    fn peek(&self) -> Option<&Tok<'a>> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn expect(&mut self, want: Tok<'static>, expected: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn name(&mut self, expected: &'static str) -> Result<&'a str, ParseError> {
        match self.peek() {
            Some(Tok::Name(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.unexpected(expected)),
        }
    }

    fn concept(&mut self, depth: usize) -> Result<ConceptExpr, ParseError> {
        if depth > self.max_depth {
            return Err(self.error_here(ParseErrorKind::TooDeep {
                limit: self.max_depth,
            }));
        }
        let name = self.name("a concept")?;
        let constructor = self.peek() == Some(&Tok::Open);
        match (name, constructor) {
            ("top", false) => Ok(ConceptExpr::Top),
            ("bottom", false) => Ok(ConceptExpr::Bottom),
            ("nominal", true) => {
                self.pos += 1;
                let ind = self.name("an individual name")?;
                self.expect(Tok::Close, "`)`")?;
                Ok(ConceptExpr::Nominal(ind.to_string()))
            }
            ("and", true) => {
                self.pos += 1;
                let l = self.concept(depth + 1)?;
                self.expect(Tok::Comma, "`,`")?;
                let r = self.concept(depth + 1)?;
                self.expect(Tok::Close, "`)`")?;
                Ok(ConceptExpr::and(l, r))
            }
            ("some", true) => {
                self.pos += 1;
                let role = self.role_name()?;
                self.expect(Tok::Comma, "`,`")?;
                let filler = self.concept(depth + 1)?;
                self.expect(Tok::Close, "`)`")?;
                Ok(ConceptExpr::some(role, filler))
            }
            (_, true) => Err(self.unexpected("`,` or `)` after a class name")),
            (n, false) => Ok(ConceptExpr::Atomic(n.to_string())),
        }
    }

    fn role_name(&mut self) -> Result<&'a str, ParseError> {
        let start = self.pos;
        let role = self.name("a relation name")?;
        if self.peek() == Some(&Tok::Open) {
            // roles are atomic in EL
            self.pos = start;
            return Err(self.error_here(ParseErrorKind::Unexpected {
                found: format!("{role}("),
                expected: "an atomic relation name",
            }));
        }
        Ok(role)
    }

    fn axiom(&mut self) -> Result<RawAxiom, ParseError> {
        let start = self.pos;
        let kw = self.name("an axiom keyword")?;
        if !matches!(kw, "subClassOf" | "equivalentClasses" | "disjointWith") {
            self.pos = start;
            return Err(self.error_here(ParseErrorKind::UnknownAxiom(kw.to_string())));
        }
        self.expect(Tok::Open, "`(`")?;
        let a = self.concept(1)?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.concept(1)?;
        self.expect(Tok::Close, "`)`")?;
        Ok(match kw {
            "subClassOf" => RawAxiom::SubClassOf(a, b),
            "equivalentClasses" => RawAxiom::EquivalentClasses(a, b),
            _ => RawAxiom::SubClassOf(ConceptExpr::and(a, b), ConceptExpr::Bottom),
        })
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.tokens.get(self.pos) {
            None => Ok(()),
            Some(t) => Err(ParseError {
                line: self.line,
                column: t.column,
                kind: ParseErrorKind::TrailingInput(match t.tok {
                    Tok::Name(n) => n.to_string(),
                    Tok::Open => "(".into(),
                    Tok::Close => ")".into(),
                    Tok::Comma => ",".into(),
                }),
            }),
        }
    }

    fn is_blank(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Parser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_max_depth(max_depth: usize) -> Self {
        Parser { max_depth }
    }

    pub fn parse_concept(&self, text: &str) -> Result<ConceptExpr, ParseError> {
        let mut cur = Cursor::new(text, 1, self.max_depth);
        let c = cur.concept(1)?;
        cur.finish()?;
        Ok(c)
    }

    /// Parses a single axiom line. Returns `Ok(None)` for blank and comment lines.
    pub fn parse_axiom_line(&self, text: &str, line: usize) -> Result<Option<RawAxiom>, ParseError> {
        let mut cur = Cursor::new(text, line, self.max_depth);
        if cur.is_blank() {
            return Ok(None);
        }
        let ax = cur.axiom()?;
        cur.finish()?;
        Ok(Some(ax))
    }

    pub fn parse_ontology<I, S>(&self, lines: I) -> Result<(Vec<RawAxiom>, OntologyStats), ParseError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut axioms = Vec::new();
        for (i, line) in lines.into_iter().enumerate() {
            if let Some(ax) = self.parse_axiom_line(line.as_ref(), i + 1)? {
                axioms.push(ax);
            }
        }
        let stats = OntologyStats::from_axioms(&axioms);
        Ok((axioms, stats))
    }
}

pub fn parse_concept(text: &str) -> Result<ConceptExpr, ParseError> {
    Parser::default().parse_concept(text)
}

pub fn parse_ontology<I, S>(lines: I) -> Result<(Vec<RawAxiom>, OntologyStats), ParseError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    Parser::default().parse_ontology(lines)
}

/// Parses a whole file's contents.
pub fn parse_str(text: &str) -> Result<(Vec<RawAxiom>, OntologyStats), ParseError> {
    parse_ontology(text.lines())
}

/// Whether `name` can be printed as an atomic class or relation name.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(is_name_char)
}
