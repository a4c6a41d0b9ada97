use super::ast::*;
use super::LangError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const SYMBOLS: &[&str] = &[
    "->", "==", "!=", "&&", "||", "{", "}", "(", ")", ";", ",", "=", "*", "@", "!", ":",
];

pub(crate) fn lex(text: &str) -> Result<Vec<Token>, LangError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            out.push(Token {
                tok: Tok::Ident(word),
                line,
                col,
            });
            col += i - start;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let sym = SYMBOLS.iter().find(|s| rest.starts_with(**s));
        match sym {
            Some(s) => {
                out.push(Token {
                    tok: Tok::Sym(s),
                    line,
                    col,
                });
                i += s.len();
                col += s.len();
            }
            None => {
                return Err(LangError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

pub(crate) struct Cursor {
    toks: Vec<Token>,
    pos: usize,
}

impl Cursor {
    pub fn new(toks: Vec<Token>) -> Self {
        Cursor { toks, pos: 0 }
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    pub fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    pub fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn err<T>(&self, msg: impl Into<String>) -> Result<T, LangError> {
        let (line, col) = self.here();
        Err(LangError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    pub fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    pub fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    pub fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn eat_kw(&mut self, s: &str) -> bool {
        if self.is_kw(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, s: &str) -> Result<(), LangError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    pub fn expect_kw(&mut self, s: &str) -> Result<(), LangError> {
        if self.eat_kw(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    pub fn ident(&mut self) -> Result<String, LangError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", describe(&t))),
        }
    }

    pub fn ident_list(&mut self) -> Result<Vec<String>, LangError> {
        let mut out = vec![self.ident()?];
        while self.eat_sym(",") {
            out.push(self.ident()?);
        }
        Ok(out)
    }
}

pub(crate) fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

const RESERVED: &[&str] = &[
    "struct", "shared", "proc", "local", "data", "angel", "atomic", "choose", "or", "loop",
    "while", "if", "else", "skip", "enter", "exit", "assume", "assert", "havoc", "malloc",
    "begin_atomic", "end_atomic", "in",
];

/// Parse a program in the concurrent core language.
pub fn parse_program(text: &str) -> Result<Program, LangError> {
    let mut p = ProgParser {
        cur: Cursor::new(lex(text)?),
        record: None,
        shared: Vec::new(),
        shared_data: Vec::new(),
        scope: Scope::default(),
    };
    p.program()
}

#[derive(Default)]
struct Scope {
    locals: Vec<String>,
    data: Vec<String>,
    angels: Vec<String>,
}

struct ProgParser {
    cur: Cursor,
    record: Option<String>,
    shared: Vec<String>,
    shared_data: Vec<String>,
    scope: Scope,
}

impl ProgParser {
    fn program(&mut self) -> Result<Program, LangError> {
        let mut procs: Vec<Procedure> = Vec::new();
        loop {
            if matches!(self.cur.peek(), Tok::Eof) {
                break;
            }
            if self.cur.eat_kw("struct") {
                self.struct_decl()?;
            } else if self.cur.eat_kw("shared") {
                let data = self.cur.eat_kw("data");
                let (line, col) = self.cur.here();
                if self.cur.is_kw("angel") {
                    self.cur.bump();
                    let names = self.cur.ident_list()?;
                    return Err(LangError::SharedAngel {
                        name: names[0].clone(),
                    });
                }
                for n in self.cur.ident_list()? {
                    self.check_fresh(&n, line, col)?;
                    if data {
                        self.shared_data.push(n);
                    } else {
                        self.shared.push(n);
                    }
                }
                self.cur.expect_sym(";")?;
            } else if self.cur.is_kw("angel") {
                self.cur.bump();
                let names = self.cur.ident_list()?;
                return Err(LangError::SharedAngel {
                    name: names[0].clone(),
                });
            } else if self.cur.eat_kw("proc") {
                let name = self.cur.ident()?;
                if procs.iter().any(|p| p.name == name) {
                    return self.cur.err(format!("duplicate procedure `{name}`"));
                }
                procs.push(self.procedure(name)?);
            } else {
                return self.cur.err(format!(
                    "expected `struct`, `shared` or `proc`, found {}",
                    describe(self.cur.peek())
                ));
            }
        }
        let prog = Program {
            record: self.record.clone().unwrap_or_else(|| "Node".to_string()),
            shared: self.shared.clone(),
            shared_data: self.shared_data.clone(),
            procs,
        };
        super::validate(&prog)?;
        Ok(prog)
    }

    fn struct_decl(&mut self) -> Result<(), LangError> {
        let name = self.cur.ident()?;
        self.cur.expect_sym("{")?;
        let mut fields = Vec::new();
        while !self.cur.is_sym("}") {
            let f = self.cur.ident()?;
            self.cur.expect_sym(";")?;
            fields.push(f);
        }
        self.cur.expect_sym("}")?;
        fields.sort();
        if fields != ["data", "next"] {
            return self
                .cur
                .err("record must declare exactly the selectors `data` and `next`");
        }
        if self.record.is_some() {
            return self.cur.err("only one record type is supported");
        }
        self.record = Some(name);
        Ok(())
    }

    fn check_fresh(&self, n: &str, line: usize, col: usize) -> Result<(), LangError> {
        if RESERVED.contains(&n) {
            return Err(LangError::Syntax {
                line,
                col,
                msg: format!("`{n}` is a reserved word"),
            });
        }
        let taken = self.shared.iter().any(|x| x == n)
            || self.shared_data.iter().any(|x| x == n)
            || self.scope.locals.iter().any(|x| x == n)
            || self.scope.data.iter().any(|x| x == n)
            || self.scope.angels.iter().any(|x| x == n);
        if taken {
            return Err(LangError::Syntax {
                line,
                col,
                msg: format!("variable `{n}` declared twice"),
            });
        }
        Ok(())
    }

    fn procedure(&mut self, name: String) -> Result<Procedure, LangError> {
        self.scope = Scope::default();
        self.cur.expect_sym("{")?;
        loop {
            let (line, col) = self.cur.here();
            let which = if self.cur.is_kw("local") {
                0
            } else if self.cur.is_kw("data") && !matches!(self.cur.peek_at(1), Tok::Sym("=") | Tok::Sym("->")) {
                1
            } else if self.cur.is_kw("angel") {
                2
            } else {
                break;
            };
            self.cur.bump();
            for n in self.cur.ident_list()? {
                self.check_fresh(&n, line, col)?;
                match which {
                    0 => self.scope.locals.push(n),
                    1 => self.scope.data.push(n),
                    _ => self.scope.angels.push(n),
                }
            }
            self.cur.expect_sym(";")?;
        }
        let body = if self.cur.is_sym("}") {
            Stmt::skip()
        } else {
            self.stmts()?
        };
        self.cur.expect_sym("}")?;
        let scope = std::mem::take(&mut self.scope);
        Ok(Procedure {
            name,
            locals: scope.locals,
            data: scope.data,
            angels: scope.angels,
            body,
        })
    }

    fn kind(&self, v: &str) -> Option<VarKind> {
        if self.scope.locals.iter().any(|x| x == v) {
            Some(VarKind::LocalPtr)
        } else if self.scope.data.iter().any(|x| x == v) {
            Some(VarKind::LocalData)
        } else if self.scope.angels.iter().any(|x| x == v) {
            Some(VarKind::Angel)
        } else if self.shared.iter().any(|x| x == v) {
            Some(VarKind::SharedPtr)
        } else if self.shared_data.iter().any(|x| x == v) {
            Some(VarKind::SharedData)
        } else {
            None
        }
    }

    fn var_of(&mut self, want: &[VarKind], what: &str) -> Result<String, LangError> {
        let (line, col) = self.cur.here();
        let name = self.cur.ident()?;
        match self.kind(&name) {
            None => Err(LangError::Undeclared { line, col, name }),
            Some(k) if want.contains(&k) => Ok(name),
            Some(k) => Err(LangError::KindMismatch {
                line,
                col,
                name,
                found: kind_name(k),
                expected: what.to_string(),
            }),
        }
    }

    fn ptr(&mut self) -> Result<String, LangError> {
        self.var_of(&[VarKind::LocalPtr, VarKind::SharedPtr], "a pointer variable")
    }

    fn data(&mut self) -> Result<String, LangError> {
        self.var_of(&[VarKind::LocalData, VarKind::SharedData], "a data variable")
    }

    fn angel(&mut self) -> Result<String, LangError> {
        self.var_of(&[VarKind::Angel], "an angel")
    }

    /// One or more statements, folded right-nested.
    fn stmts(&mut self) -> Result<Stmt, LangError> {
        let mut items = vec![self.stmt()?];
        while !self.cur.is_sym("}") && !matches!(self.cur.peek(), Tok::Eof) {
            items.push(self.stmt()?);
        }
        Ok(Stmt::seq_all(items))
    }

    fn block(&mut self, what: &str) -> Result<Stmt, LangError> {
        self.cur.expect_sym("{")?;
        if self.cur.is_sym("}") {
            return self.cur.err(format!("empty {what} body"));
        }
        let s = self.stmts()?;
        self.cur.expect_sym("}")?;
        Ok(s)
    }

    fn stmt(&mut self) -> Result<Stmt, LangError> {
        if self.cur.is_sym("{") {
            return self.block("block");
        }
        if self.cur.eat_kw("atomic") {
            return Ok(Stmt::atomic(self.block("atomic")?));
        }
        if self.cur.eat_kw("choose") {
            let mut branches = vec![self.block("choose")?];
            while self.cur.eat_kw("or") {
                branches.push(self.block("or")?);
            }
            if branches.len() < 2 {
                return self.cur.err("`choose` needs at least one `or` branch");
            }
            let mut acc = branches.pop().unwrap();
            while let Some(b) = branches.pop() {
                acc = Stmt::choice(b, acc);
            }
            return Ok(acc);
        }
        if self.cur.eat_kw("loop") {
            return Ok(Stmt::looped(self.block("loop")?));
        }
        if self.cur.eat_kw("while") {
            self.cur.expect_sym("(")?;
            let c = self.cond()?;
            self.cur.expect_sym(")")?;
            let body = self.block("while")?;
            let (pos, neg) = branch_assumes(&c);
            return Ok(Stmt::seq(
                Stmt::looped(Stmt::seq(Stmt::Com(pos), body)),
                Stmt::Com(neg),
            ));
        }
        if self.cur.eat_kw("if") {
            self.cur.expect_sym("(")?;
            let c = self.cond()?;
            self.cur.expect_sym(")")?;
            let then = self.block("if")?;
            let (pos, neg) = branch_assumes(&c);
            let els = if self.cur.eat_kw("else") {
                Stmt::seq(Stmt::Com(neg), self.block("else")?)
            } else {
                Stmt::Com(neg)
            };
            return Ok(Stmt::choice(Stmt::seq(Stmt::Com(pos), then), els));
        }
        let c = self.command()?;
        self.cur.expect_sym(";")?;
        Ok(Stmt::Com(c))
    }

    fn command(&mut self) -> Result<Command, LangError> {
        if self.cur.eat_kw("skip") {
            return Ok(Command::Skip);
        }
        if self.cur.eat_kw("begin_atomic") {
            return Ok(Command::BeginAtomic);
        }
        if self.cur.eat_kw("end_atomic") {
            return Ok(Command::EndAtomic);
        }
        if self.cur.eat_kw("enter") {
            let f = self.cur.ident()?;
            self.cur.expect_sym("(")?;
            let (mut ps, mut us) = (Vec::new(), Vec::new());
            if !self.cur.is_sym(")") {
                loop {
                    let (line, col) = self.cur.here();
                    let a = self.cur.ident()?;
                    match self.kind(&a) {
                        Some(k) if k.is_pointer() => {
                            if !us.is_empty() {
                                return Err(LangError::Syntax {
                                    line,
                                    col,
                                    msg: "pointer arguments must precede data arguments".into(),
                                });
                            }
                            ps.push(a)
                        }
                        Some(k) if k.is_data() => us.push(a),
                        Some(k) => {
                            return Err(LangError::KindMismatch {
                                line,
                                col,
                                name: a,
                                found: kind_name(k),
                                expected: "a pointer or data variable".into(),
                            })
                        }
                        None => return Err(LangError::Undeclared { line, col, name: a }),
                    }
                    if !self.cur.eat_sym(",") {
                        break;
                    }
                }
            }
            self.cur.expect_sym(")")?;
            return Ok(Command::Enter(f, ps, us));
        }
        if self.cur.eat_kw("exit") {
            return Ok(Command::Exit(self.cur.ident()?));
        }
        if self.cur.eat_kw("assume") {
            self.cur.expect_sym("(")?;
            let c = if self.cur.eat_sym("*") {
                Command::AssumePred("*".into(), vec![])
            } else if matches!(self.cur.peek(), Tok::Ident(n) if self.kind(n).is_none())
                && matches!(self.cur.peek_at(1), Tok::Sym("("))
            {
                let name = self.cur.ident()?;
                self.cur.expect_sym("(")?;
                let mut args = Vec::new();
                if !self.cur.is_sym(")") {
                    args.push(self.data()?);
                    while self.cur.eat_sym(",") {
                        args.push(self.data()?);
                    }
                }
                self.cur.expect_sym(")")?;
                Command::AssumePred(name, args)
            } else {
                match self.cond()? {
                    Cond::PtrEq(p, q) => Command::AssumeEq(p, q),
                    Cond::PtrNeq(p, q) => Command::AssumeNeq(p, q),
                    c => Command::AssumeCond(c),
                }
            };
            self.cur.expect_sym(")")?;
            return Ok(c);
        }
        if self.cur.eat_kw("assert") {
            self.cur.expect_sym("(")?;
            let c = self.cond()?;
            self.cur.expect_sym(")")?;
            return Ok(Command::Assert(c));
        }
        if self.cur.eat_kw("havoc") {
            self.cur.expect_sym("(")?;
            let p = self.ptr()?;
            self.cur.expect_sym(")")?;
            return Ok(Command::Havoc(p));
        }
        if self.cur.eat_sym("@") {
            self.cur.expect_kw("inv")?;
            return self.annotation();
        }
        // assignments
        let (line, col) = self.cur.here();
        let lhs = self.cur.ident()?;
        let Some(lk) = self.kind(&lhs) else {
            return Err(LangError::Undeclared {
                line,
                col,
                name: lhs,
            });
        };
        if self.cur.eat_sym("->") {
            if !lk.is_pointer() {
                return Err(LangError::KindMismatch {
                    line,
                    col,
                    name: lhs,
                    found: kind_name(lk),
                    expected: "a pointer variable".into(),
                });
            }
            let sel = self.cur.ident()?;
            self.cur.expect_sym("=")?;
            return match sel.as_str() {
                "next" => Ok(Command::PtrStore(lhs, self.ptr()?)),
                "data" => Ok(Command::DataStore(lhs, self.data()?)),
                _ => self.cur.err(format!("unknown selector `{sel}`")),
            };
        }
        self.cur.expect_sym("=")?;
        if lk.is_pointer() {
            if self.cur.eat_kw("malloc") {
                return Ok(Command::Malloc(lhs));
            }
            let q = self.ptr()?;
            if self.cur.eat_sym("->") {
                let sel = self.cur.ident()?;
                if sel != "next" {
                    return self.cur.err(format!(
                        "selector `{sel}` does not yield a pointer; expected `next`"
                    ));
                }
                return Ok(Command::PtrLoad(lhs, q));
            }
            return Ok(Command::PtrAssign(lhs, q));
        }
        if !lk.is_data() {
            return Err(LangError::KindMismatch {
                line,
                col,
                name: lhs,
                found: kind_name(lk),
                expected: "a pointer or data variable".into(),
            });
        }
        let (l2, c2) = self.cur.here();
        let rhs = self.cur.ident()?;
        match self.kind(&rhs) {
            Some(k) if k.is_pointer() => {
                if self.cur.eat_sym("->") {
                    let sel = self.cur.ident()?;
                    if sel != "data" {
                        return self.cur.err(format!(
                            "selector `{sel}` does not yield data; expected `data`"
                        ));
                    }
                    Ok(Command::DataLoad(lhs, rhs))
                } else {
                    Err(LangError::KindMismatch {
                        line: l2,
                        col: c2,
                        name: rhs,
                        found: kind_name(k),
                        expected: "a data variable".into(),
                    })
                }
            }
            Some(k) if k.is_data() => Ok(Command::DataOp(lhs, "id".into(), vec![rhs])),
            Some(k) => Err(LangError::KindMismatch {
                line: l2,
                col: c2,
                name: rhs,
                found: kind_name(k),
                expected: "a data variable".into(),
            }),
            None => {
                let mut args = Vec::new();
                if self.cur.eat_sym("(") {
                    if !self.cur.is_sym(")") {
                        args.push(self.data()?);
                        while self.cur.eat_sym(",") {
                            args.push(self.data()?);
                        }
                    }
                    self.cur.expect_sym(")")?;
                }
                Ok(Command::DataOp(lhs, rhs, args))
            }
        }
    }

    fn annotation(&mut self) -> Result<Command, LangError> {
        if self.cur.eat_kw("angel") {
            return Ok(Command::InvAngel(self.angel()?));
        }
        if self.cur.is_kw("active") && matches!(self.cur.peek_at(1), Tok::Sym("(")) {
            self.cur.bump();
            self.cur.expect_sym("(")?;
            let (line, col) = self.cur.here();
            let x = self.cur.ident()?;
            self.cur.expect_sym(")")?;
            return match self.kind(&x) {
                Some(VarKind::Angel) => Ok(Command::InvActiveAngel(x)),
                Some(k) if k.is_pointer() => Ok(Command::InvActivePtr(x)),
                Some(k) => Err(LangError::KindMismatch {
                    line,
                    col,
                    name: x,
                    found: kind_name(k),
                    expected: "a pointer or angel".into(),
                }),
                None => Err(LangError::Undeclared { line, col, name: x }),
            };
        }
        let p = self.ptr()?;
        if self.cur.eat_sym("==") {
            return Ok(Command::InvEq(p, self.ptr()?));
        }
        if self.cur.eat_kw("in") {
            return Ok(Command::InvMember(p, self.angel()?));
        }
        self.cur.err("expected `==` or `in` in annotation")
    }

    fn cond(&mut self) -> Result<Cond, LangError> {
        let mut c = self.cond_and()?;
        while self.cur.eat_sym("||") {
            c = Cond::or(c, self.cond_and()?);
        }
        Ok(c)
    }

    fn cond_and(&mut self) -> Result<Cond, LangError> {
        let mut c = self.cond_unary()?;
        while self.cur.eat_sym("&&") {
            c = Cond::and(c, self.cond_unary()?);
        }
        Ok(c)
    }

    fn cond_unary(&mut self) -> Result<Cond, LangError> {
        if self.cur.eat_sym("!") {
            return Ok(Cond::not(self.cond_unary()?));
        }
        if self.cur.eat_sym("(") {
            let c = self.cond()?;
            self.cur.expect_sym(")")?;
            return Ok(c);
        }
        if self.cur.is_kw("true") && self.kind("true").is_none() {
            self.cur.bump();
            return Ok(Cond::True);
        }
        let (line, col) = self.cur.here();
        let a = self.cur.ident()?;
        match self.kind(&a) {
            Some(k) if k.is_pointer() => {
                let eq = if self.cur.eat_sym("==") {
                    true
                } else if self.cur.eat_sym("!=") {
                    false
                } else {
                    return self.cur.err("expected `==` or `!=` after pointer");
                };
                let b = self.ptr()?;
                Ok(if eq { Cond::PtrEq(a, b) } else { Cond::PtrNeq(a, b) })
            }
            Some(k) if k.is_data() => Ok(Cond::Data(a)),
            Some(k) => Err(LangError::KindMismatch {
                line,
                col,
                name: a,
                found: kind_name(k),
                expected: "a pointer or data variable".into(),
            }),
            None => Err(LangError::Undeclared { line, col, name: a }),
        }
    }
}

/// Assumptions for the two outcomes of a branch condition. Pointer
/// (in)equalities become real assumptions; anything else is nondeterministic.
fn branch_assumes(c: &Cond) -> (Command, Command) {
    match c {
        Cond::PtrEq(p, q) => (
            Command::AssumeEq(p.clone(), q.clone()),
            Command::AssumeNeq(p.clone(), q.clone()),
        ),
        Cond::PtrNeq(p, q) => (
            Command::AssumeNeq(p.clone(), q.clone()),
            Command::AssumeEq(p.clone(), q.clone()),
        ),
        _ => (
            Command::AssumePred("*".into(), vec![]),
            Command::AssumePred("*".into(), vec![]),
        ),
    }
}

pub(crate) fn kind_name(k: VarKind) -> &'static str {
    match k {
        VarKind::SharedPtr => "a shared pointer",
        VarKind::SharedData => "a shared data variable",
        VarKind::LocalPtr => "a local pointer",
        VarKind::LocalData => "a local data variable",
        VarKind::Angel => "an angel",
    }
}
