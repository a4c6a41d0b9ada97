use std::fmt;

pub type Var = String;

/// Boolean conditions used by `assume`, `assert`, and the instrumented vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Cond {
    True,
    PtrEq(Var, Var),
    PtrNeq(Var, Var),
    /// Truthiness of a data variable.
    Data(Var),
    Not(Box<Cond>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

impl Cond {
    pub fn not(c: Cond) -> Cond {
        Cond::Not(Box::new(c))
    }

    pub fn and(a: Cond, b: Cond) -> Cond {
        Cond::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Cond, b: Cond) -> Cond {
        Cond::Or(Box::new(a), Box::new(b))
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        match self {
            Cond::True => {}
            Cond::PtrEq(p, q) | Cond::PtrNeq(p, q) => {
                out.push(p.clone());
                out.push(q.clone());
            }
            Cond::Data(u) => out.push(u.clone()),
            Cond::Not(c) => c.vars(out),
            Cond::And(a, b) | Cond::Or(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    Skip,
    /// `p = q`
    PtrAssign(Var, Var),
    /// `p = q->next`
    PtrLoad(Var, Var),
    /// `p->next = q`
    PtrStore(Var, Var),
    /// `u = q->data`
    DataLoad(Var, Var),
    /// `p->data = u`
    DataStore(Var, Var),
    /// `u = op(args)`
    DataOp(Var, String, Vec<Var>),
    Malloc(Var),
    AssumeEq(Var, Var),
    AssumeNeq(Var, Var),
    /// Uninterpreted predicate; `*` is the nondeterministic one.
    AssumePred(String, Vec<Var>),
    BeginAtomic,
    EndAtomic,
    /// `enter f(pointer args..., data args...)`
    Enter(String, Vec<Var>, Vec<Var>),
    Exit(String),
    InvAngel(Var),
    InvEq(Var, Var),
    /// `@inv p in r`
    InvMember(Var, Var),
    InvActivePtr(Var),
    InvActiveAngel(Var),
    Assert(Cond),
    AssumeCond(Cond),
    Havoc(Var),
}

impl Command {
    pub fn is_annotation(&self) -> bool {
        matches!(
            self,
            Command::InvAngel(_)
                | Command::InvEq(..)
                | Command::InvMember(..)
                | Command::InvActivePtr(_)
                | Command::InvActiveAngel(_)
        )
    }

    pub fn is_atomic_marker(&self) -> bool {
        matches!(self, Command::BeginAtomic | Command::EndAtomic)
    }

    /// Pointer, data and angel variables mentioned by the command.
    pub fn vars(&self) -> Vec<Var> {
        use Command::*;
        let mut out = Vec::new();
        match self {
            Skip | BeginAtomic | EndAtomic | Exit(_) => {}
            PtrAssign(a, b) | PtrLoad(a, b) | PtrStore(a, b) | DataLoad(a, b) | DataStore(a, b)
            | AssumeEq(a, b) | AssumeNeq(a, b) | InvEq(a, b) | InvMember(a, b) => {
                out.push(a.clone());
                out.push(b.clone());
            }
            DataOp(u, _, args) => {
                out.push(u.clone());
                out.extend(args.iter().cloned());
            }
            AssumePred(_, args) => out.extend(args.iter().cloned()),
            Enter(_, ps, us) => {
                out.extend(ps.iter().cloned());
                out.extend(us.iter().cloned());
            }
            Malloc(p) | InvAngel(p) | InvActivePtr(p) | InvActiveAngel(p) | Havoc(p) => {
                out.push(p.clone())
            }
            Assert(c) | AssumeCond(c) => c.vars(&mut out),
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Stmt {
    Seq(Box<Stmt>, Box<Stmt>),
    Choice(Box<Stmt>, Box<Stmt>),
    Loop(Box<Stmt>),
    Com(Command),
}

impl Stmt {
    pub fn seq(a: Stmt, b: Stmt) -> Stmt {
        Stmt::Seq(Box::new(a), Box::new(b))
    }

    pub fn choice(a: Stmt, b: Stmt) -> Stmt {
        Stmt::Choice(Box::new(a), Box::new(b))
    }

    pub fn looped(a: Stmt) -> Stmt {
        Stmt::Loop(Box::new(a))
    }

    pub fn skip() -> Stmt {
        Stmt::Com(Command::Skip)
    }

    /// Right-nested sequence of the given statements; `skip` when empty.
    pub fn seq_all(mut items: Vec<Stmt>) -> Stmt {
        let mut acc = match items.pop() {
            Some(s) => s,
            None => return Stmt::skip(),
        };
        while let Some(s) = items.pop() {
            acc = Stmt::seq(s, acc);
        }
        acc
    }

    /// `beginAtomic; body; endAtomic` in the shape the parser produces.
    pub fn atomic(body: Stmt) -> Stmt {
        Stmt::seq(
            Stmt::Com(Command::BeginAtomic),
            Stmt::seq(body, Stmt::Com(Command::EndAtomic)),
        )
    }

    /// Body of an atomic block if the statement has the block shape.
    pub fn as_atomic(&self) -> Option<&Stmt> {
        if let Stmt::Seq(a, rest) = self {
            if let (Stmt::Com(Command::BeginAtomic), Stmt::Seq(body, end)) = (&**a, &**rest) {
                if **end == Stmt::Com(Command::EndAtomic) {
                    return Some(body);
                }
            }
        }
        None
    }

    pub fn commands(&self) -> Vec<&Command> {
        let mut out = Vec::new();
        self.collect_commands(&mut out);
        out
    }

    fn collect_commands<'a>(&'a self, out: &mut Vec<&'a Command>) {
        match self {
            Stmt::Seq(a, b) | Stmt::Choice(a, b) => {
                a.collect_commands(out);
                b.collect_commands(out);
            }
            Stmt::Loop(a) => a.collect_commands(out),
            Stmt::Com(c) => out.push(c),
        }
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        match self {
            Stmt::Seq(a, b) | Stmt::Choice(a, b) => 1 + a.size() + b.size(),
            Stmt::Loop(a) => 1 + a.size(),
            Stmt::Com(_) => 1,
        }
    }

    pub fn map_commands(&self, f: &mut impl FnMut(&Command) -> Stmt) -> Stmt {
        match self {
            Stmt::Seq(a, b) => Stmt::seq(a.map_commands(f), b.map_commands(f)),
            Stmt::Choice(a, b) => Stmt::choice(a.map_commands(f), b.map_commands(f)),
            Stmt::Loop(a) => Stmt::looped(a.map_commands(f)),
            Stmt::Com(c) => f(c),
        }
    }

    pub fn at(&self, path: &[u32]) -> Option<&Stmt> {
        let Some((&first, rest)) = path.split_first() else {
            return Some(self);
        };
        match (self, first) {
            (Stmt::Seq(a, _), 0) | (Stmt::Choice(a, _), 0) | (Stmt::Loop(a), 0) => a.at(rest),
            (Stmt::Seq(_, b), 1) | (Stmt::Choice(_, b), 1) => b.at(rest),
            _ => None,
        }
    }

    pub fn at_mut(&mut self, path: &[u32]) -> Option<&mut Stmt> {
        let Some((&first, rest)) = path.split_first() else {
            return Some(self);
        };
        match (self, first) {
            (Stmt::Seq(a, _), 0) | (Stmt::Choice(a, _), 0) | (Stmt::Loop(a), 0) => a.at_mut(rest),
            (Stmt::Seq(_, b), 1) | (Stmt::Choice(_, b), 1) => b.at_mut(rest),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Procedure {
    pub name: String,
    pub locals: Vec<Var>,
    pub data: Vec<Var>,
    pub angels: Vec<Var>,
    pub body: Stmt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarKind {
    SharedPtr,
    SharedData,
    LocalPtr,
    LocalData,
    Angel,
}

impl VarKind {
    pub fn is_pointer(self) -> bool {
        matches!(self, VarKind::SharedPtr | VarKind::LocalPtr)
    }

    pub fn is_data(self) -> bool {
        matches!(self, VarKind::SharedData | VarKind::LocalData)
    }

    pub fn is_shared(self) -> bool {
        matches!(self, VarKind::SharedPtr | VarKind::SharedData)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub record: String,
    pub shared: Vec<Var>,
    pub shared_data: Vec<Var>,
    pub procs: Vec<Procedure>,
}

impl Program {
    pub fn proc(&self, name: &str) -> Option<&Procedure> {
        self.procs.iter().find(|p| p.name == name)
    }

    pub fn kind_of(&self, proc: &Procedure, v: &str) -> Option<VarKind> {
        if proc.locals.iter().any(|x| x == v) {
            Some(VarKind::LocalPtr)
        } else if proc.data.iter().any(|x| x == v) {
            Some(VarKind::LocalData)
        } else if proc.angels.iter().any(|x| x == v) {
            Some(VarKind::Angel)
        } else if self.shared.iter().any(|x| x == v) {
            Some(VarKind::SharedPtr)
        } else if self.shared_data.iter().any(|x| x == v) {
            Some(VarKind::SharedData)
        } else {
            None
        }
    }

    pub fn size(&self) -> usize {
        self.procs.iter().map(|p| p.body.size()).sum()
    }

    /// Drop every invariant annotation, keeping the executable skeleton.
    pub fn erase_annotations(&self) -> Program {
        let mut out = self.clone();
        for p in &mut out.procs {
            p.body = erase(&p.body).unwrap_or_else(Stmt::skip);
            p.angels.clear();
        }
        out
    }
}

fn erase(s: &Stmt) -> Option<Stmt> {
    match s {
        Stmt::Com(c) if c.is_annotation() => None,
        Stmt::Com(c) => Some(Stmt::Com(c.clone())),
        Stmt::Seq(a, b) => match (erase(a), erase(b)) {
            (Some(a), Some(b)) => Some(Stmt::seq(a, b)),
            (x, None) | (None, x) => x,
        },
        Stmt::Choice(a, b) => Some(Stmt::choice(
            erase(a).unwrap_or_else(Stmt::skip),
            erase(b).unwrap_or_else(Stmt::skip),
        )),
        Stmt::Loop(a) => Some(Stmt::looped(erase(a).unwrap_or_else(Stmt::skip))),
    }
}

/// Stable identifier of a statement: procedure name plus child-index path.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProgramPoint {
    pub proc: String,
    pub path: Vec<u32>,
}

impl ProgramPoint {
    pub fn new(proc: &str, path: Vec<u32>) -> Self {
        ProgramPoint {
            proc: proc.to_string(),
            path,
        }
    }
}

impl fmt::Display for ProgramPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.proc)?;
        if self.path.is_empty() {
            return write!(f, "^");
        }
        let parts: Vec<String> = self.path.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}
