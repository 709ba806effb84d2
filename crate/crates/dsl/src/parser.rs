//! Tokenizer and recursive-descent parser. Errors are collected with
//! positions and the parser resynchronizes at the next statement or section,
//! so one document reports as many problems as possible in one pass.

use crate::model::*;
use crate::{DiagnosticSeverity, ParseDiagnostic, SourceDocument};

pub const VERSION_HEADER: &str = "trust-dsl 1";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LBrace,
    RBrace,
    Semi,
    LParen,
    RParen,
    Amp,
    Pipe,
    Bang,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    Eq,
    Arrow,
    Word(String),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Semi => "`;`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Bang => "`!`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Word(w) => format!("`{w}`"),
        }
    }
}

struct Lexed {
    tok: Tok,
    pos: Pos,
}

fn is_word_break(c: char) -> bool {
    c.is_whitespace() || matches!(c, '{' | '}' | ';' | '(' | ')' | '#' | '&' | '|' | '!' | '<' | '>' | '=')
}

fn tokenize(text: &str) -> Vec<Lexed> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1usize;
    let mut col = 1usize;

    macro_rules! push {
        ($tok:expr, $pos:expr) => {
            out.push(Lexed {
                tok: $tok,
                pos: $pos,
            })
        };
    }

    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '{' => {
                chars.next();
                col += 1;
                push!(Tok::LBrace, pos);
            }
            '}' => {
                chars.next();
                col += 1;
                push!(Tok::RBrace, pos);
            }
            ';' => {
                chars.next();
                col += 1;
                push!(Tok::Semi, pos);
            }
            '(' => {
                chars.next();
                col += 1;
                push!(Tok::LParen, pos);
            }
            ')' => {
                chars.next();
                col += 1;
                push!(Tok::RParen, pos);
            }
            '&' => {
                chars.next();
                col += 1;
                push!(Tok::Amp, pos);
            }
            '|' => {
                chars.next();
                col += 1;
                push!(Tok::Pipe, pos);
            }
            '!' => {
                chars.next();
                col += 1;
                push!(Tok::Bang, pos);
            }
            '<' | '>' | '=' => {
                chars.next();
                col += 1;
                let doubled = chars.peek() == Some(&'=');
                if doubled {
                    chars.next();
                    col += 1;
                }
                push!(
                    match (c, doubled) {
                        ('<', true) => Tok::Le,
                        ('<', false) => Tok::Lt,
                        ('>', true) => Tok::Ge,
                        ('>', false) => Tok::Gt,
                        ('=', true) => Tok::EqEq,
                        ('=', false) => Tok::Eq,
                        _ => unreachable!(),
                    },
                    pos
                );
            }
            _ => {
                // Word; `-` only terminates it when starting `->`.
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if is_word_break(c) {
                        break;
                    }
                    if c == '-' {
                        let mut lookahead = chars.clone();
                        lookahead.next();
                        if lookahead.peek() == Some(&'>') {
                            break;
                        }
                    }
                    word.push(c);
                    chars.next();
                    col += 1;
                }
                if word.is_empty() {
                    // A lone `-` starting `->`.
                    chars.next();
                    col += 1;
                    if chars.peek() == Some(&'>') {
                        chars.next();
                        col += 1;
                        push!(Tok::Arrow, pos);
                    }
                    continue;
                }
                push!(Tok::Word(word), pos);
            }
        }
    }
    out
}

pub struct ParseResult {
    pub model: Option<Model>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

struct Parser<'a> {
    origin: &'a str,
    toks: Vec<Lexed>,
    at: usize,
    diags: Vec<ParseDiagnostic>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|l| &l.tok)
    }

    fn pos(&self) -> Pos {
        self.toks
            .get(self.at)
            .or_else(|| self.toks.last())
            .map(|l| l.pos)
            .unwrap_or_default()
    }

    fn next(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.at).map(|l| l.tok.clone());
        if tok.is_some() {
            self.at += 1;
        }
        tok
    }

    fn error(&mut self, pos: Pos, message: impl Into<String>) {
        self.diags.push(ParseDiagnostic {
            origin: self.origin.to_string(),
            line: pos.line,
            col: pos.col,
            severity: DiagnosticSeverity::Error,
            message: message.into(),
        });
    }

    fn expect(&mut self, expected: &Tok, what: &str) -> bool {
        let pos = self.pos();
        match self.peek() {
            Some(tok) if tok == expected => {
                self.next();
                true
            }
            Some(tok) => {
                let found = tok.describe();
                self.error(pos, format!("expected {what}, found {found}"));
                false
            }
            None => {
                self.error(pos, format!("expected {what}, found end of input"));
                false
            }
        }
    }

    fn word(&mut self, what: &str) -> Option<String> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.next();
                Some(w)
            }
            Some(tok) => {
                let found = tok.describe();
                self.error(pos, format!("expected {what}, found {found}"));
                None
            }
            None => {
                self.error(pos, format!("expected {what}, found end of input"));
                None
            }
        }
    }

    /// Words until `;`, consuming the `;`.
    fn words_until_semi(&mut self, what: &str) -> Vec<String> {
        let mut words = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Word(w)) => {
                    words.push(w.clone());
                    self.next();
                }
                Some(Tok::Semi) => {
                    self.next();
                    break;
                }
                _ => {
                    let pos = self.pos();
                    self.error(pos, format!("expected {what} or `;`"));
                    self.sync_statement();
                    break;
                }
            }
        }
        words
    }

    /// Skip to just past the next `;`, or stop before `}`.
    fn sync_statement(&mut self) {
        loop {
            match self.peek() {
                None | Some(Tok::RBrace) => break,
                Some(Tok::Semi) => {
                    self.next();
                    break;
                }
                _ => {
                    self.next();
                }
            }
        }
    }

    /// Skip a malformed section body (past the matching `}`).
    fn sync_section(&mut self) {
        let mut depth = 0usize;
        loop {
            match self.next() {
                None => break,
                Some(Tok::LBrace) => depth += 1,
                Some(Tok::RBrace) => {
                    if depth <= 1 {
                        break;
                    }
                    depth -= 1;
                }
                _ => {}
            }
        }
    }

    fn parse_value(&mut self) -> Option<ValueDecl> {
        let pos = self.pos();
        let word = self.word("a value (`hex:<digits>` or `str:<text>`)")?;
        if let Some(rest) = word.strip_prefix("hex:") {
            match hex::decode(rest) {
                Ok(bytes) => Some(ValueDecl::Hex(bytes)),
                Err(_) => {
                    self.error(pos, format!("invalid hex payload `{rest}`"));
                    None
                }
            }
        } else if let Some(rest) = word.strip_prefix("str:") {
            Some(ValueDecl::Str(rest.to_string()))
        } else {
            self.error(
                pos,
                format!("value `{word}` must start with `hex:` or `str:`"),
            );
            None
        }
    }

    fn parse_lattice(&mut self, pos: Pos) -> Option<LatticeDecl> {
        if !self.expect(&Tok::LBrace, "`{` opening the lattice section") {
            self.sync_section();
            return None;
        }
        let mut decl = LatticeDecl {
            origin: self.origin.to_string(),
            pos,
            levels: Vec::new(),
            orders: Vec::new(),
            bottom: None,
            top: None,
        };
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "level" => {
                        decl.levels.extend(self.words_until_semi("a level name"));
                    }
                    "order" => {
                        let Some(lo) = self.word("the lower level") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Lt, "`<`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(hi) = self.word("the upper level") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        decl.orders.push((lo, hi));
                    }
                    "bottom" => {
                        decl.bottom = self.word("the bottom level");
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "top" => {
                        decl.top = self.word("the top level");
                        self.expect(&Tok::Semi, "`;`");
                    }
                    other => {
                        self.error(key_pos, format!("unknown lattice key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected a lattice key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated lattice section");
                    break;
                }
            }
        }
        Some(decl)
    }

    fn parse_element(&mut self, pos: Pos) -> Option<ElementDecl> {
        let id = self.word("the element id")?;
        if !self.expect(&Tok::LBrace, "`{` opening the element section") {
            self.sync_section();
            return None;
        }
        let mut decl = ElementDecl {
            origin: self.origin.to_string(),
            pos,
            id,
            attestable: true,
            capabilities: Vec::new(),
            slots: Vec::new(),
            children: Vec::new(),
        };
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "attestable" => {
                        match self.word("`true` or `false`").as_deref() {
                            Some("true") => decl.attestable = true,
                            Some("false") => decl.attestable = false,
                            Some(other) => {
                                self.error(
                                    key_pos,
                                    format!("attestable must be true or false, found `{other}`"),
                                );
                            }
                            None => {}
                        }
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "capabilities" => {
                        decl.capabilities
                            .extend(self.words_until_semi("a mechanism name"));
                    }
                    "slot" => {
                        let Some(name) = self.word("the slot name") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Eq, "`=`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(value) = self.parse_value() else {
                            self.sync_statement();
                            continue;
                        };
                        let mut persistence = PersistenceDecl::Persistent;
                        if let Some(Tok::Word(w)) = self.peek() {
                            persistence = match w.as_str() {
                                "persistent" => PersistenceDecl::Persistent,
                                "restart" => PersistenceDecl::Restart,
                                "volatile" => PersistenceDecl::Volatile,
                                other => {
                                    let msg =
                                        format!("unknown persistence class `{other}`");
                                    let pos = self.pos();
                                    self.error(pos, msg);
                                    PersistenceDecl::Persistent
                                }
                            };
                            self.next();
                        }
                        self.expect(&Tok::Semi, "`;`");
                        decl.slots.push(SlotDecl {
                            name,
                            value,
                            persistence,
                        });
                    }
                    "children" => {
                        decl.children.extend(self.words_until_semi("a child id"));
                    }
                    other => {
                        self.error(key_pos, format!("unknown element key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected an element key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated element section");
                    break;
                }
            }
        }
        Some(decl)
    }

    fn parse_context(&mut self, context: &mut ContextDecl) {
        if !self.expect(&Tok::LBrace, "`{` opening the context section") {
            self.sync_section();
            return;
        }
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "expect" => {
                        let Some(element) = self.word("the element id") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::LBrace, "`{`") {
                            self.sync_statement();
                            continue;
                        }
                        let mut entries = Vec::new();
                        loop {
                            match self.peek() {
                                Some(Tok::RBrace) => {
                                    self.next();
                                    break;
                                }
                                Some(Tok::Word(_)) => {
                                    let Some(name) = self.word("the register name") else {
                                        break;
                                    };
                                    if !self.expect(&Tok::Eq, "`=`") {
                                        self.sync_statement();
                                        continue;
                                    }
                                    let Some(value) = self.parse_value() else {
                                        self.sync_statement();
                                        continue;
                                    };
                                    self.expect(&Tok::Semi, "`;`");
                                    entries.push((name, value));
                                }
                                _ => {
                                    let pos = self.pos();
                                    self.error(pos, "expected a register entry or `}`");
                                    self.sync_statement();
                                    break;
                                }
                            }
                        }
                        context.expects.push(ExpectDecl {
                            pos: key_pos,
                            element,
                            entries,
                        });
                    }
                    "key" => {
                        let Some(key_ref) = self.word("the key reference") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Arrow, "`->`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(element) = self.word("the element id") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        context.keys.push((key_ref, element));
                    }
                    "known" => {
                        context.known.extend(self.words_until_semi("an element id"));
                    }
                    "meta" => {
                        let Some(meta_key) = self.word("the metadata key") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Eq, "`=`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(value) = self.word("the metadata value") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        context.metas.push((meta_key, value));
                    }
                    other => {
                        self.error(key_pos, format!("unknown context key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected a context key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated context section");
                    break;
                }
            }
        }
    }

    /// expr := or; or := and (`|` and)*; and := unary (`&` unary)*;
    /// unary := `!` unary | `(` expr `)` | atom-word
    fn parse_expr(&mut self) -> Option<ExprDecl> {
        let mut terms = vec![self.parse_and()?];
        while self.peek() == Some(&Tok::Pipe) {
            self.next();
            terms.push(self.parse_and()?);
        }
        Some(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            ExprDecl::Or(terms)
        })
    }

    fn parse_and(&mut self) -> Option<ExprDecl> {
        let mut terms = vec![self.parse_unary()?];
        while self.peek() == Some(&Tok::Amp) {
            self.next();
            terms.push(self.parse_unary()?);
        }
        Some(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            ExprDecl::And(terms)
        })
    }

    fn parse_unary(&mut self) -> Option<ExprDecl> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Bang) => {
                self.next();
                Some(ExprDecl::Not(Box::new(self.parse_unary()?)))
            }
            Some(Tok::LParen) => {
                self.next();
                let inner = self.parse_expr()?;
                self.expect(&Tok::RParen, "`)`");
                Some(inner)
            }
            Some(Tok::Word(w)) => {
                let name = w.clone();
                self.next();
                Some(ExprDecl::Atom { name, pos })
            }
            _ => {
                self.error(pos, "expected an atom, `!`, or `(`");
                None
            }
        }
    }

    fn parse_verify_policy(&mut self, pos: Pos) -> Option<VerifyPolicyDecl> {
        let name = self.word("the policy name")?;
        if !self.expect(&Tok::LBrace, "`{` opening the policy section") {
            self.sync_section();
            return None;
        }
        let mut decl = VerifyPolicyDecl {
            origin: self.origin.to_string(),
            pos,
            name,
            classes: Vec::new(),
            guards: Vec::new(),
            cases: Vec::new(),
            default: None,
        };
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "class" => {
                        for label in self.words_until_semi("a class label") {
                            decl.classes.push((label, false));
                        }
                    }
                    "error_class" => {
                        if let Some(label) = self.word("the error class label") {
                            decl.classes.push((label, true));
                        }
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "guard" => {
                        let Some(gname) = self.word("the guard name") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Eq, "`=`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(kw) = self.word("`ctx`") else {
                            self.sync_statement();
                            continue;
                        };
                        if kw != "ctx" {
                            self.error(key_pos, "guards have the form `guard name = ctx key value;`");
                            self.sync_statement();
                            continue;
                        }
                        let Some(gkey) = self.word("the context key") else {
                            self.sync_statement();
                            continue;
                        };
                        let Some(gvalue) = self.word("the expected value") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        decl.guards.push(GuardDecl {
                            pos: key_pos,
                            name: gname,
                            key: gkey,
                            value: gvalue,
                        });
                    }
                    "case" => {
                        let Some(expr) = self.parse_expr() else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Arrow, "`->`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(target) = self.word("the target class") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        decl.cases.push(CaseDecl {
                            pos: key_pos,
                            expr,
                            target,
                        });
                    }
                    "default" => {
                        decl.default = self.word("the default class");
                        self.expect(&Tok::Semi, "`;`");
                    }
                    other => {
                        self.error(key_pos, format!("unknown verify_policy key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected a policy key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated verify_policy section");
                    break;
                }
            }
        }
        Some(decl)
    }

    fn parse_decide_policy(&mut self, pos: Pos) -> Option<DecidePolicyDecl> {
        let name = self.word("the policy name")?;
        if !self.expect(&Tok::LBrace, "`{` opening the policy section") {
            self.sync_section();
            return None;
        }
        let mut decl = DecidePolicyDecl {
            origin: self.origin.to_string(),
            pos,
            name,
            rules: Vec::new(),
            defaults: Vec::new(),
        };
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "rule" => {
                        let Some(class) = self.word("the result class") else {
                            self.sync_statement();
                            continue;
                        };
                        let mut guard = None;
                        if self.peek() == Some(&Tok::Word("when".into())) {
                            self.next();
                            let Some(kind) = self.word("a guard") else {
                                self.sync_statement();
                                continue;
                            };
                            guard = match kind.as_str() {
                                "measurement_null" => Some(GuardSpecDecl::MeasurementNull),
                                "measurement_present" => Some(GuardSpecDecl::MeasurementPresent),
                                "ctx" => {
                                    let Some(gkey) = self.word("the context key") else {
                                        self.sync_statement();
                                        continue;
                                    };
                                    if !self.expect(&Tok::Eq, "`=`") {
                                        self.sync_statement();
                                        continue;
                                    }
                                    let Some(gvalue) = self.word("the expected value") else {
                                        self.sync_statement();
                                        continue;
                                    };
                                    Some(GuardSpecDecl::CtxEquals {
                                        key: gkey,
                                        value: gvalue,
                                    })
                                }
                                other => {
                                    self.error(
                                        key_pos,
                                        format!("unknown guard `{other}` (expected measurement_null, measurement_present, or ctx)"),
                                    );
                                    self.sync_statement();
                                    continue;
                                }
                            };
                        }
                        if !self.expect(&Tok::Arrow, "`->`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(target) = self.word("the target level") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        decl.rules.push(RuleDecl {
                            pos: key_pos,
                            class,
                            guard,
                            target,
                        });
                    }
                    "default" => {
                        let Some(class) = self.word("the result class") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Arrow, "`->`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(level) = self.word("the target level") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        decl.defaults.push((class, level));
                    }
                    other => {
                        self.error(key_pos, format!("unknown decide_policy key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected a policy key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated decide_policy section");
                    break;
                }
            }
        }
        Some(decl)
    }

    fn parse_rho(&mut self, rho: &mut RhoDecl) {
        if !self.expect(&Tok::LBrace, "`{` opening the rho section") {
            self.sync_section();
            return;
        }
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "attest" => {
                        if !self.expect(&Tok::LBrace, "`{` opening the capability pattern") {
                            self.sync_statement();
                            continue;
                        }
                        let mut pattern = Vec::new();
                        loop {
                            match self.peek() {
                                Some(Tok::RBrace) => {
                                    self.next();
                                    break;
                                }
                                Some(Tok::Word(w)) => {
                                    pattern.push(w.clone());
                                    self.next();
                                }
                                _ => {
                                    let pos = self.pos();
                                    self.error(pos, "expected a capability or `}`");
                                    break;
                                }
                            }
                        }
                        if !self.expect(&Tok::Arrow, "`->`") {
                            self.sync_statement();
                            continue;
                        }
                        let mechanisms = self.words_until_semi("a mechanism");
                        rho.attests.push((pattern, mechanisms));
                    }
                    "verify" => {
                        let Some(mech) = self.word("the mechanism") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Arrow, "`->`") {
                            self.sync_statement();
                            continue;
                        }
                        let policies = self.words_until_semi("a verify policy");
                        rho.verifies.push((mech, policies));
                    }
                    "decide" => {
                        let Some(vp) = self.word("the verify policy") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Arrow, "`->`") {
                            self.sync_statement();
                            continue;
                        }
                        let policies = self.words_until_semi("a decide policy");
                        rho.decides.push((vp, policies));
                    }
                    other => {
                        self.error(key_pos, format!("unknown rho key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected a rho key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated rho section");
                    break;
                }
            }
        }
    }

    fn parse_sigma(&mut self, pos: Pos) -> Option<SigmaDecl> {
        let name = self.word("the sigma name")?;
        if !self.expect(&Tok::LBrace, "`{` opening the sigma section") {
            self.sync_section();
            return None;
        }
        let mut decl = SigmaDecl {
            origin: self.origin.to_string(),
            pos,
            name,
            class: "unclassified".into(),
            edits: Vec::new(),
        };
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "class" => {
                        if let Some(class) = self.word("idempotent, dangerous, or unclassified") {
                            if !matches!(
                                class.as_str(),
                                "idempotent" | "dangerous" | "unclassified"
                            ) {
                                self.error(key_pos, format!("unknown sigma class `{class}`"));
                            } else {
                                decl.class = class;
                            }
                        }
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "set" => {
                        let Some(slot) = self.word("the slot name") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Eq, "`=`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(value) = self.parse_value() else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        decl.edits.push(EditDecl::Set { slot, value });
                    }
                    "clear" => {
                        if let Some(slot) = self.word("the slot name") {
                            decl.edits.push(EditDecl::Clear { slot });
                        }
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "phase" => {
                        if let Some(phase) = self.word("the phase name") {
                            decl.edits.push(EditDecl::Phase { phase });
                        }
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "meta" => {
                        let Some(meta_key) = self.word("the metadata key") else {
                            self.sync_statement();
                            continue;
                        };
                        if !self.expect(&Tok::Eq, "`=`") {
                            self.sync_statement();
                            continue;
                        }
                        let Some(value) = self.word("the metadata value") else {
                            self.sync_statement();
                            continue;
                        };
                        self.expect(&Tok::Semi, "`;`");
                        decl.edits.push(EditDecl::Meta {
                            key: meta_key,
                            value,
                        });
                    }
                    other => {
                        self.error(key_pos, format!("unknown sigma key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected a sigma key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated sigma section");
                    break;
                }
            }
        }
        Some(decl)
    }

    fn parse_scenario(&mut self, pos: Pos) -> Option<ScenarioDecl> {
        let name = self.word("the scenario name")?;
        if !self.expect(&Tok::LBrace, "`{` opening the scenario section") {
            self.sync_section();
            return None;
        }
        let mut decl = ScenarioDecl {
            origin: self.origin.to_string(),
            pos,
            name,
            subject: String::new(),
            point: None,
            steps: Vec::new(),
        };
        loop {
            let key_pos = self.pos();
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Word(key)) => match key.as_str() {
                    "subject" => {
                        if let Some(subject) = self.word("the subject element") {
                            decl.subject = subject;
                        }
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "point" => {
                        decl.point = self.word("a mechanism:verify:decide point");
                        self.expect(&Tok::Semi, "`;`");
                    }
                    "step" => {
                        if let Some(step) = self.parse_step(key_pos) {
                            decl.steps.push((step, key_pos));
                        }
                    }
                    other => {
                        self.error(key_pos, format!("unknown scenario key `{other}`"));
                        self.sync_statement();
                    }
                },
                Some(tok) => {
                    let found = tok.describe();
                    self.error(key_pos, format!("expected a scenario key, found {found}"));
                    self.sync_statement();
                }
                None => {
                    self.error(key_pos, "unterminated scenario section");
                    break;
                }
            }
        }
        if decl.subject.is_empty() {
            self.error(pos, format!("scenario `{}` has no subject", decl.name));
        }
        Some(decl)
    }

    fn parse_step(&mut self, key_pos: Pos) -> Option<StepDecl> {
        let kind = self.word("a step kind")?;
        let step = match kind.as_str() {
            "power_cycle" => StepDecl::PowerCycle,
            "restart" => StepDecl::Restart,
            "apply" => {
                let sigma = self.word("the sigma name")?;
                StepDecl::Apply { sigma }
            }
            // Sugar for the built-in transitions.
            "power_on" | "power_off" => StepDecl::Apply { sigma: kind },
            "tamper" => {
                let slot = self.word("the slot name")?;
                if !self.expect(&Tok::Eq, "`=`") {
                    self.sync_statement();
                    return None;
                }
                let value = self.parse_value()?;
                StepDecl::Tamper { slot, value }
            }
            "attest" => {
                let point = match self.peek() {
                    Some(Tok::Word(w)) => {
                        let w = w.clone();
                        self.next();
                        Some(w)
                    }
                    _ => None,
                };
                StepDecl::Attest { point }
            }
            "assert" => {
                let what = self.word("`level`, `atom`, `meet`, or `phases`")?;
                match what.as_str() {
                    "level" => {
                        let cmp = match self.next() {
                            Some(Tok::EqEq) => "==",
                            Some(Tok::Le) => "<=",
                            Some(Tok::Ge) => ">=",
                            Some(Tok::Lt) => "<",
                            Some(Tok::Gt) => ">",
                            _ => {
                                self.error(key_pos, "expected a comparison (==, <=, >=, <, >)");
                                self.sync_statement();
                                return None;
                            }
                        };
                        let level = self.word("the level")?;
                        StepDecl::AssertLevel {
                            cmp: cmp.into(),
                            level,
                        }
                    }
                    "atom" => {
                        let atom = self.word("the atom")?;
                        if !self.expect(&Tok::EqEq, "`==`") {
                            self.sync_statement();
                            return None;
                        }
                        let value = self.word("`true` or `false`")?;
                        let expected = match value.as_str() {
                            "true" => true,
                            "false" => false,
                            other => {
                                self.error(
                                    key_pos,
                                    format!("expected true or false, found `{other}`"),
                                );
                                self.sync_statement();
                                return None;
                            }
                        };
                        StepDecl::AssertAtom { atom, expected }
                    }
                    "meet" => {
                        let a = self.word("the first level")?;
                        let b = self.word("the second level")?;
                        if !self.expect(&Tok::EqEq, "`==`") {
                            self.sync_statement();
                            return None;
                        }
                        let expect = self.word("the expected level")?;
                        StepDecl::AssertMeet { a, b, expect }
                    }
                    "phases" => {
                        let floor = self.word("the floor level")?;
                        if !self.expect(&Tok::Le, "`<=`") {
                            self.sync_statement();
                            return None;
                        }
                        let boot = self.word("the boot phase")?;
                        if !self.expect(&Tok::Lt, "`<`") {
                            self.sync_statement();
                            return None;
                        }
                        let run = self.word("the run phase")?;
                        if !self.expect(&Tok::Ge, "`>=`") {
                            self.sync_statement();
                            return None;
                        }
                        let shutdown = self.word("the shutdown phase")?;
                        StepDecl::AssertPhases {
                            floor,
                            boot,
                            run,
                            shutdown,
                        }
                    }
                    other => {
                        self.error(key_pos, format!("unknown assertion `{other}`"));
                        self.sync_statement();
                        return None;
                    }
                }
            }
            other => {
                self.error(key_pos, format!("unknown step `{other}`"));
                self.sync_statement();
                return None;
            }
        };
        self.expect(&Tok::Semi, "`;`");
        Some(step)
    }
}

/// Parse one document. Any error severity yields no model.
pub fn parse(doc: &SourceDocument) -> ParseResult {
    let mut diagnostics = Vec::new();

    // The version header is the first significant line.
    let header = doc
        .text
        .lines()
        .enumerate()
        .find(|(_, line)| {
            let trimmed = line.trim();
            !trimmed.is_empty() && !trimmed.starts_with('#')
        });
    let body_start = match header {
        Some((i, line)) if line.trim() == VERSION_HEADER => i + 1,
        Some((i, line)) => {
            diagnostics.push(ParseDiagnostic {
                origin: doc.origin.clone(),
                line: i + 1,
                col: 1,
                severity: DiagnosticSeverity::Error,
                message: format!(
                    "expected version header `{VERSION_HEADER}`, found `{}`",
                    line.trim()
                ),
            });
            return ParseResult {
                model: None,
                diagnostics,
            };
        }
        None => {
            diagnostics.push(ParseDiagnostic {
                origin: doc.origin.clone(),
                line: 1,
                col: 1,
                severity: DiagnosticSeverity::Error,
                message: format!("empty document; expected version header `{VERSION_HEADER}`"),
            });
            return ParseResult {
                model: None,
                diagnostics,
            };
        }
    };
    let body: String = {
        // Blank out the header line so token positions match the file.
        let mut lines: Vec<&str> = doc.text.lines().collect();
        for line in lines.iter_mut().take(body_start) {
            *line = "";
        }
        lines.join("\n")
    };

    let mut parser = Parser {
        origin: &doc.origin,
        toks: tokenize(&body),
        at: 0,
        diags: Vec::new(),
    };
    let mut model = Model::default();
    loop {
        let pos = parser.pos();
        match parser.next() {
            None => break,
            Some(Tok::Word(section)) => match section.as_str() {
                "lattice" => {
                    if let Some(decl) = parser.parse_lattice(pos) {
                        if model.lattice.is_some() {
                            parser.error(pos, "duplicate lattice section");
                        } else {
                            model.lattice = Some(decl);
                        }
                    }
                }
                "element" => {
                    if let Some(decl) = parser.parse_element(pos) {
                        if model.elements.iter().any(|e| e.id == decl.id) {
                            parser.error(pos, format!("duplicate element `{}`", decl.id));
                        } else {
                            model.elements.push(decl);
                        }
                    }
                }
                "context" => parser.parse_context(&mut model.context),
                "verify_policy" => {
                    if let Some(decl) = parser.parse_verify_policy(pos) {
                        if model.verify_policies.iter().any(|p| p.name == decl.name) {
                            parser.error(pos, format!("duplicate verify_policy `{}`", decl.name));
                        } else {
                            model.verify_policies.push(decl);
                        }
                    }
                }
                "decide_policy" => {
                    if let Some(decl) = parser.parse_decide_policy(pos) {
                        if model.decide_policies.iter().any(|p| p.name == decl.name) {
                            parser.error(pos, format!("duplicate decide_policy `{}`", decl.name));
                        } else {
                            model.decide_policies.push(decl);
                        }
                    }
                }
                "rho" => parser.parse_rho(&mut model.rho),
                "sigma" => {
                    if let Some(decl) = parser.parse_sigma(pos) {
                        if model.sigmas.iter().any(|s| s.name == decl.name) {
                            parser.error(pos, format!("duplicate sigma `{}`", decl.name));
                        } else {
                            model.sigmas.push(decl);
                        }
                    }
                }
                "scenario" => {
                    if let Some(decl) = parser.parse_scenario(pos) {
                        if model.scenarios.iter().any(|s| s.name == decl.name) {
                            parser.error(pos, format!("duplicate scenario `{}`", decl.name));
                        } else {
                            model.scenarios.push(decl);
                        }
                    }
                }
                other => {
                    parser.error(pos, format!("unknown section `{other}`"));
                    parser.sync_section();
                }
            },
            Some(tok) => {
                let found = tok.describe();
                parser.error(pos, format!("expected a section name, found {found}"));
            }
        }
    }

    diagnostics.extend(parser.diags);
    let has_errors = diagnostics
        .iter()
        .any(|d| d.severity == DiagnosticSeverity::Error);
    ParseResult {
        model: if has_errors { None } else { Some(model) },
        diagnostics,
    }
}
