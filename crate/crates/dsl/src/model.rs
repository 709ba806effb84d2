//! The declaration-level model: plain data mirroring the document structure,
//! with source positions for diagnostics. Structural equality of two models
//! is canonical-render equality; the position fields are bookkeeping.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Model {
    pub lattice: Option<LatticeDecl>,
    pub elements: Vec<ElementDecl>,
    pub context: ContextDecl,
    pub verify_policies: Vec<VerifyPolicyDecl>,
    pub decide_policies: Vec<DecidePolicyDecl>,
    pub rho: RhoDecl,
    pub sigmas: Vec<SigmaDecl>,
    pub scenarios: Vec<ScenarioDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeDecl {
    pub origin: String,
    pub pos: Pos,
    pub levels: Vec<String>,
    pub orders: Vec<(String, String)>,
    pub bottom: Option<String>,
    pub top: Option<String>,
}

/// A slot or expectation value: raw bytes or a UTF-8 string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueDecl {
    Hex(Vec<u8>),
    Str(String),
}

impl ValueDecl {
    pub fn bytes(&self) -> Vec<u8> {
        match self {
            ValueDecl::Hex(bytes) => bytes.clone(),
            ValueDecl::Str(s) => s.as_bytes().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersistenceDecl {
    Persistent,
    Restart,
    Volatile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotDecl {
    pub name: String,
    pub value: ValueDecl,
    pub persistence: PersistenceDecl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementDecl {
    pub origin: String,
    pub pos: Pos,
    pub id: String,
    pub attestable: bool,
    pub capabilities: Vec<String>,
    pub slots: Vec<SlotDecl>,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectDecl {
    pub pos: Pos,
    pub element: String,
    pub entries: Vec<(String, ValueDecl)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextDecl {
    pub expects: Vec<ExpectDecl>,
    /// (key reference, element it identifies)
    pub keys: Vec<(String, String)>,
    pub known: Vec<String>,
    pub metas: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprDecl {
    Atom { name: String, pos: Pos },
    Not(Box<ExprDecl>),
    And(Vec<ExprDecl>),
    Or(Vec<ExprDecl>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseDecl {
    pub pos: Pos,
    pub expr: ExprDecl,
    pub target: String,
}

/// A named context-guard atom declared inside a verify policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardDecl {
    pub pos: Pos,
    pub name: String,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyPolicyDecl {
    pub origin: String,
    pub pos: Pos,
    pub name: String,
    /// (label, is_error)
    pub classes: Vec<(String, bool)>,
    pub guards: Vec<GuardDecl>,
    pub cases: Vec<CaseDecl>,
    pub default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardSpecDecl {
    CtxEquals { key: String, value: String },
    MeasurementNull,
    MeasurementPresent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleDecl {
    pub pos: Pos,
    pub class: String,
    pub guard: Option<GuardSpecDecl>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecidePolicyDecl {
    pub origin: String,
    pub pos: Pos,
    pub name: String,
    pub rules: Vec<RuleDecl>,
    /// Per-class defaults: (class, level).
    pub defaults: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RhoDecl {
    /// (capability pattern, admitted mechanisms)
    pub attests: Vec<(Vec<String>, Vec<String>)>,
    /// (mechanism, admitted verify policies)
    pub verifies: Vec<(String, Vec<String>)>,
    /// (verify policy, admitted decide policies)
    pub decides: Vec<(String, Vec<String>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditDecl {
    Set { slot: String, value: ValueDecl },
    Clear { slot: String },
    Phase { phase: String },
    Meta { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigmaDecl {
    pub origin: String,
    pub pos: Pos,
    pub name: String,
    /// idempotent | dangerous | unclassified
    pub class: String,
    pub edits: Vec<EditDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepDecl {
    Apply { sigma: String },
    PowerCycle,
    Restart,
    Tamper { slot: String, value: ValueDecl },
    Attest { point: Option<String> },
    AssertLevel { cmp: String, level: String },
    AssertAtom { atom: String, expected: bool },
    AssertMeet { a: String, b: String, expect: String },
    AssertPhases {
        floor: String,
        boot: String,
        run: String,
        shutdown: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioDecl {
    pub origin: String,
    pub pos: Pos,
    pub name: String,
    pub subject: String,
    pub point: Option<String>,
    pub steps: Vec<(StepDecl, Pos)>,
}
