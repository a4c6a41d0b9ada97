use std::fmt::{self, Write};

use super::ast::*;

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::True => write!(f, "true"),
            Cond::PtrEq(p, q) => write!(f, "{p} == {q}"),
            Cond::PtrNeq(p, q) => write!(f, "{p} != {q}"),
            Cond::Data(u) => write!(f, "{u}"),
            Cond::Not(c) => match **c {
                Cond::Data(_) | Cond::True | Cond::Not(_) => write!(f, "!{c}"),
                _ => write!(f, "!({c})"),
            },
            Cond::And(a, b) => {
                paren_if(f, a, matches!(**a, Cond::Or(..)))?;
                write!(f, " && ")?;
                paren_if(f, b, matches!(**b, Cond::Or(..) | Cond::And(..)))
            }
            Cond::Or(a, b) => {
                write!(f, "{a} || ")?;
                paren_if(f, b, matches!(**b, Cond::Or(..)))
            }
        }
    }
}

fn paren_if(f: &mut fmt::Formatter<'_>, c: &Cond, p: bool) -> fmt::Result {
    if p {
        write!(f, "({c})")
    } else {
        write!(f, "{c}")
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Command::*;
        match self {
            Skip => write!(f, "skip"),
            PtrAssign(p, q) => write!(f, "{p} = {q}"),
            PtrLoad(p, q) => write!(f, "{p} = {q}->next"),
            PtrStore(p, q) => write!(f, "{p}->next = {q}"),
            DataLoad(u, q) => write!(f, "{u} = {q}->data"),
            DataStore(p, u) => write!(f, "{p}->data = {u}"),
            DataOp(u, op, args) if op == "id" && args.len() == 1 => write!(f, "{u} = {}", args[0]),
            DataOp(u, op, args) if args.is_empty() => write!(f, "{u} = {op}"),
            DataOp(u, op, args) => write!(f, "{u} = {op}({})", args.join(", ")),
            Malloc(p) => write!(f, "{p} = malloc"),
            AssumeEq(p, q) => write!(f, "assume({p} == {q})"),
            AssumeNeq(p, q) => write!(f, "assume({p} != {q})"),
            AssumePred(name, _) if name == "*" => write!(f, "assume(*)"),
            AssumePred(name, args) => write!(f, "assume({name}({}))", args.join(", ")),
            BeginAtomic => write!(f, "begin_atomic"),
            EndAtomic => write!(f, "end_atomic"),
            Enter(func, ps, us) => {
                let args: Vec<&str> = ps.iter().chain(us.iter()).map(|s| s.as_str()).collect();
                write!(f, "enter {func}({})", args.join(", "))
            }
            Exit(func) => write!(f, "exit {func}"),
            InvAngel(r) => write!(f, "@inv angel {r}"),
            InvEq(p, q) => write!(f, "@inv {p} == {q}"),
            InvMember(p, r) => write!(f, "@inv {p} in {r}"),
            InvActivePtr(x) | InvActiveAngel(x) => write!(f, "@inv active({x})"),
            Assert(c) => write!(f, "assert({c})"),
            AssumeCond(c) => write!(f, "assume({c})"),
            Havoc(p) => write!(f, "havoc({p})"),
        }
    }
}

struct Printer<'a> {
    out: String,
    declared: &'a dyn Fn(&str) -> bool,
}

impl Printer<'_> {
    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn command(&self, c: &Command) -> String {
        match c {
            // a zero-argument op whose name is also a variable needs explicit parens
            Command::DataOp(u, op, args) if args.is_empty() && (self.declared)(op) => {
                format!("{u} = {op}()")
            }
            _ => c.to_string(),
        }
    }

    fn stmts(&mut self, s: &Stmt, indent: usize) {
        let mut cur = s;
        loop {
            if cur.as_atomic().is_some() {
                self.single(cur, indent);
                return;
            }
            match cur {
                Stmt::Seq(a, b) => {
                    self.single(a, indent);
                    cur = b;
                }
                _ => {
                    self.single(cur, indent);
                    return;
                }
            }
        }
    }

    fn single(&mut self, s: &Stmt, indent: usize) {
        if let Some(body) = s.as_atomic() {
            self.line(indent, "atomic {");
            self.stmts(body, indent + 1);
            self.line(indent, "}");
            return;
        }
        match s {
            Stmt::Seq(..) => {
                self.line(indent, "{");
                self.stmts(s, indent + 1);
                self.line(indent, "}");
            }
            Stmt::Choice(a, b) => {
                self.line(indent, "choose {");
                self.stmts(a, indent + 1);
                let mut rest = &**b;
                while let Stmt::Choice(x, y) = rest {
                    self.line(indent, "} or {");
                    self.stmts(x, indent + 1);
                    rest = y;
                }
                self.line(indent, "} or {");
                self.stmts(rest, indent + 1);
                self.line(indent, "}");
            }
            Stmt::Loop(a) => {
                self.line(indent, "loop {");
                self.stmts(a, indent + 1);
                self.line(indent, "}");
            }
            Stmt::Com(c) => {
                let text = format!("{};", self.command(c));
                self.line(indent, &text);
            }
        }
    }
}

/// Render a program in the concrete syntax accepted by the parser.
pub fn pretty_print(prog: &Program) -> String {
    let mut head = String::new();
    let _ = writeln!(head, "struct {} {{ data; next; }}", prog.record);
    if !prog.shared.is_empty() {
        let _ = writeln!(head, "shared {};", prog.shared.join(", "));
    }
    if !prog.shared_data.is_empty() {
        let _ = writeln!(head, "shared data {};", prog.shared_data.join(", "));
    }
    let mut out = head;
    for p in &prog.procs {
        let declared = |n: &str| prog.kind_of(p, n).is_some();
        let mut pr = Printer {
            out: String::new(),
            declared: &declared,
        };
        pr.line(0, "");
        pr.line(0, &format!("proc {} {{", p.name));
        if !p.locals.is_empty() {
            pr.line(1, &format!("local {};", p.locals.join(", ")));
        }
        if !p.data.is_empty() {
            pr.line(1, &format!("data {};", p.data.join(", ")));
        }
        if !p.angels.is_empty() {
            pr.line(1, &format!("angel {};", p.angels.join(", ")));
        }
        pr.stmts(&p.body, 1);
        pr.line(0, "}");
        out.push_str(&pr.out);
    }
    out
}

/// Render a single statement (no declarations); used in reports.
pub fn print_stmt(s: &Stmt) -> String {
    let declared = |_: &str| false;
    let mut pr = Printer {
        out: String::new(),
        declared: &declared,
    };
    pr.stmts(s, 0);
    pr.out
}
