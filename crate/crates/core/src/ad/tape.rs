//! Scalar Wengert tape for reverse-mode differentiation.
//!
//! A recording is opened with [`record`]; every arithmetic operation on a
//! non-constant [`Var`] inside the closure appends one node to the active
//! tape. Constants never touch the tape, and operations whose operands are
//! all constants fold to constants. Recordings nest: an inner [`record`]
//! call pushes a fresh tape that is popped when the closure returns.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::str::FromStr;

use super::AdError;

pub(crate) const NONE: u32 = u32::MAX;

/// Elementary operations that may appear on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementaryOp {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Ln,
    Exp,
    Sqrt,
    Pow,
    Abs,
    Min,
    Max,
}

impl ElementaryOp {
    pub fn name(self) -> &'static str {
        match self {
            ElementaryOp::Input => "input",
            ElementaryOp::Const => "const",
            ElementaryOp::Add => "add",
            ElementaryOp::Sub => "sub",
            ElementaryOp::Mul => "mul",
            ElementaryOp::Div => "div",
            ElementaryOp::Neg => "neg",
            ElementaryOp::Ln => "ln",
            ElementaryOp::Exp => "exp",
            ElementaryOp::Sqrt => "sqrt",
            ElementaryOp::Pow => "pow",
            ElementaryOp::Abs => "abs",
            ElementaryOp::Min => "min",
            ElementaryOp::Max => "max",
        }
    }
}

impl fmt::Display for ElementaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementaryOp {
    type Err = AdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "add" => ElementaryOp::Add,
            "sub" => ElementaryOp::Sub,
            "mul" => ElementaryOp::Mul,
            "div" => ElementaryOp::Div,
            "neg" => ElementaryOp::Neg,
            "ln" | "log" => ElementaryOp::Ln,
            "exp" => ElementaryOp::Exp,
            "sqrt" => ElementaryOp::Sqrt,
            "pow" => ElementaryOp::Pow,
            "abs" => ElementaryOp::Abs,
            "min" => ElementaryOp::Min,
            "max" => ElementaryOp::Max,
            other => return Err(AdError::Unsupported(other.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Node {
    pub op: ElementaryOp,
    pub parents: [u32; 2],
    pub partials: [f64; 2],
    pub value: f64,
}

struct Recorder {
    id: u32,
    nodes: Vec<Node>,
    error: Option<AdError>,
}

thread_local! {
    static STACK: RefCell<Vec<Recorder>> = const { RefCell::new(Vec::new()) };
    static NEXT_ID: Cell<u32> = const { Cell::new(1) };
    static SPARE: RefCell<Vec<Vec<Node>>> = const { RefCell::new(Vec::new()) };
}

/// An active scalar: either a constant or a node on the current tape.
#[derive(Clone, Copy)]
pub struct Var {
    pub(crate) v: f64,
    pub(crate) idx: u32,
    pub(crate) tape: u32,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_const() {
            write!(f, "Var({})", self.v)
        } else {
            write!(f, "Var({} @{})", self.v, self.idx)
        }
    }
}

impl Var {
    #[inline]
    pub fn constant(v: f64) -> Var {
        Var { v, idx: NONE, tape: 0 }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.v
    }

    #[inline]
    pub fn is_const(self) -> bool {
        self.idx == NONE
    }

    /// Node index on the recording tape, or `None` for constants.
    pub fn node(self) -> Option<usize> {
        (!self.is_const()).then_some(self.idx as usize)
    }

    /// Applies an operation by name. Used by dynamic front ends; unknown or
    /// non-differentiable names are rejected.
    pub fn apply(op: &str, args: &[Var], exponent: Option<f64>) -> Result<Var, AdError> {
        let op: ElementaryOp = op.parse()?;
        let arity = match op {
            ElementaryOp::Add
            | ElementaryOp::Sub
            | ElementaryOp::Mul
            | ElementaryOp::Div
            | ElementaryOp::Min
            | ElementaryOp::Max => 2,
            ElementaryOp::Input | ElementaryOp::Const => return Err(AdError::Unsupported(op.name().to_string())),
            _ => 1,
        };
        if args.len() != arity {
            return Err(AdError::Arity { op: op.name(), expected: arity, got: args.len() });
        }
        let a = args[0];
        Ok(match op {
            ElementaryOp::Add => a + args[1],
            ElementaryOp::Sub => a - args[1],
            ElementaryOp::Mul => a * args[1],
            ElementaryOp::Div => a / args[1],
            ElementaryOp::Min => a.min(args[1]),
            ElementaryOp::Max => a.max(args[1]),
            ElementaryOp::Neg => -a,
            ElementaryOp::Ln => a.ln(),
            ElementaryOp::Exp => a.exp(),
            ElementaryOp::Sqrt => a.sqrt(),
            ElementaryOp::Abs => a.abs(),
            ElementaryOp::Pow => {
                let c = exponent.ok_or(AdError::Arity { op: "pow", expected: 2, got: 1 })?;
                a.powf(c)
            }
            ElementaryOp::Input | ElementaryOp::Const => unreachable!(),
        })
    }

    pub fn ln(self) -> Var {
        if self.v <= 0.0 {
            flag_domain(ElementaryOp::Ln, self);
        }
        unary(self, ElementaryOp::Ln, self.v.ln(), 1.0 / self.v)
    }

    pub fn exp(self) -> Var {
        let e = self.v.exp();
        unary(self, ElementaryOp::Exp, e, e)
    }

    pub fn sqrt(self) -> Var {
        if self.v < 0.0 {
            flag_domain(ElementaryOp::Sqrt, self);
        }
        let s = self.v.sqrt();
        unary(self, ElementaryOp::Sqrt, s, 0.5 / s)
    }

    /// `self^c` for a constant exponent.
    pub fn powf(self, c: f64) -> Var {
        if c == 1.0 {
            return self;
        }
        if self.v < 0.0 && c.fract() != 0.0 {
            flag_domain(ElementaryOp::Pow, self);
        }
        let value = self.v.powf(c);
        unary(self, ElementaryOp::Pow, value, c * self.v.powf(c - 1.0))
    }

    /// Absolute value; the partial at zero is zero.
    pub fn abs(self) -> Var {
        let d = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        unary(self, ElementaryOp::Abs, self.v.abs(), d)
    }

    /// Maximum; on an exact tie the full partial goes to `self`.
    pub fn max(self, other: Var) -> Var {
        if self.v >= other.v {
            binary(self, other, ElementaryOp::Max, self.v, 1.0, 0.0)
        } else {
            binary(self, other, ElementaryOp::Max, other.v, 0.0, 1.0)
        }
    }

    /// Minimum; on an exact tie the full partial goes to `self`.
    pub fn min(self, other: Var) -> Var {
        if self.v <= other.v {
            binary(self, other, ElementaryOp::Min, self.v, 1.0, 0.0)
        } else {
            binary(self, other, ElementaryOp::Min, other.v, 0.0, 1.0)
        }
    }

    /// Branch selection on a non-differentiated predicate.
    #[inline]
    pub fn select(cond: bool, a: Var, b: Var) -> Var {
        if cond {
            a
        } else {
            b
        }
    }
}

fn flag_domain(op: ElementaryOp, x: Var) {
    STACK.with(|s| {
        if let Some(rec) = s.borrow_mut().last_mut() {
            if rec.error.is_none() {
                rec.error = Some(AdError::Domain { op: op.name(), node: rec.nodes.len(), value: x.v });
            }
        }
    });
}

#[inline]
fn push(op: ElementaryOp, parents: [u32; 2], partials: [f64; 2], value: f64, tape: u32) -> Var {
    STACK.with(|s| {
        let mut s = s.borrow_mut();
        let rec = s.last_mut().expect("tape operation on an active variable outside of a recording");
        debug_assert_eq!(rec.id, tape, "variable used across tapes");
        let idx = rec.nodes.len() as u32;
        rec.nodes.push(Node { op, parents, partials, value });
        Var { v: value, idx, tape: rec.id }
    })
}

#[inline]
fn unary(x: Var, op: ElementaryOp, value: f64, d: f64) -> Var {
    if x.is_const() {
        return Var::constant(value);
    }
    push(op, [x.idx, NONE], [d, 0.0], value, x.tape)
}

#[inline]
fn binary(a: Var, b: Var, op: ElementaryOp, value: f64, da: f64, db: f64) -> Var {
    match (a.is_const(), b.is_const()) {
        (true, true) => Var::constant(value),
        (false, true) => push(op, [a.idx, NONE], [da, 0.0], value, a.tape),
        (true, false) => push(op, [b.idx, NONE], [db, 0.0], value, b.tape),
        (false, false) => push(op, [a.idx, b.idx], [da, db], value, a.tape),
    }
}

impl std::ops::Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, rhs: Var) -> Var {
        if rhs.is_const() && rhs.v == 0.0 {
            return self;
        }
        if self.is_const() && self.v == 0.0 {
            return rhs;
        }
        binary(self, rhs, ElementaryOp::Add, self.v + rhs.v, 1.0, 1.0)
    }
}

impl std::ops::Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, rhs: Var) -> Var {
        if rhs.is_const() && rhs.v == 0.0 {
            return self;
        }
        if self.is_const() && self.v == 0.0 {
            return -rhs;
        }
        binary(self, rhs, ElementaryOp::Sub, self.v - rhs.v, 1.0, -1.0)
    }
}

impl std::ops::Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, rhs: Var) -> Var {
        if self.is_const() {
            if self.v == 0.0 {
                return Var::constant(0.0);
            }
            if self.v == 1.0 {
                return rhs;
            }
        }
        if rhs.is_const() {
            if rhs.v == 0.0 {
                return Var::constant(0.0);
            }
            if rhs.v == 1.0 {
                return self;
            }
        }
        binary(self, rhs, ElementaryOp::Mul, self.v * rhs.v, rhs.v, self.v)
    }
}

impl std::ops::Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, rhs: Var) -> Var {
        if rhs.is_const() && rhs.v == 1.0 {
            return self;
        }
        if self.is_const() && self.v == 0.0 && rhs.v != 0.0 {
            return Var::constant(0.0);
        }
        let inv = 1.0 / rhs.v;
        let q = self.v * inv;
        binary(self, rhs, ElementaryOp::Div, self.v / rhs.v, inv, -q * inv)
    }
}

impl std::ops::Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        unary(self, ElementaryOp::Neg, -self.v, -1.0)
    }
}

macro_rules! scalar_rhs {
    ($tr:ident, $f:ident) => {
        impl std::ops::$tr<f64> for Var {
            type Output = Var;
            #[inline]
            fn $f(self, rhs: f64) -> Var {
                std::ops::$tr::$f(self, Var::constant(rhs))
            }
        }
    };
}
scalar_rhs!(Add, add);
scalar_rhs!(Sub, sub);
scalar_rhs!(Mul, mul);
scalar_rhs!(Div, div);

macro_rules! assign_op {
    ($tr:ident, $f:ident, $op:tt) => {
        impl std::ops::$tr for Var {
            #[inline]
            fn $f(&mut self, rhs: Var) {
                *self = *self $op rhs;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl std::iter::Sum for Var {
    fn sum<I: Iterator<Item = Var>>(iter: I) -> Var {
        iter.fold(Var::constant(0.0), |a, b| a + b)
    }
}

/// A finished recording: topologically ordered nodes, the first
/// `input_count` of which are the independent variables.
#[derive(Clone, Debug)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    input_count: usize,
    output_ids: Vec<u32>,
}

struct Guard;

impl Drop for Guard {
    fn drop(&mut self) {
        // Only reached on unwind; the normal path pops explicitly.
        STACK.with(|s| {
            s.borrow_mut().pop();
        });
    }
}

/// Records `f` evaluated at `inputs`.
///
/// Returns the finished tape and the output values, which are exactly the
/// values computed by `f`.
pub fn record<E, F>(inputs: &[f64], f: F) -> Result<(Tape, Vec<f64>), E>
where
    F: FnOnce(&[Var]) -> Result<Vec<Var>, E>,
    E: From<AdError>,
{
    let buffer = SPARE.with(|s| s.borrow_mut().pop()).unwrap_or_default();
    record_into(buffer, inputs, f)
}

fn record_into<E, F>(mut buffer: Vec<Node>, inputs: &[f64], f: F) -> Result<(Tape, Vec<f64>), E>
where
    F: FnOnce(&[Var]) -> Result<Vec<Var>, E>,
    E: From<AdError>,
{
    buffer.clear();
    let id = NEXT_ID.with(|n| {
        let id = n.get();
        n.set(id.wrapping_add(1).max(1));
        id
    });
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, &v)| Var { v, idx: i as u32, tape: id }).collect();
    buffer.extend(inputs.iter().map(|&v| Node {
        op: ElementaryOp::Input,
        parents: [NONE, NONE],
        partials: [0.0, 0.0],
        value: v,
    }));
    STACK.with(|s| s.borrow_mut().push(Recorder { id, nodes: buffer, error: None }));
    let guard = Guard;
    let result = f(&vars);
    std::mem::forget(guard);
    let mut rec = STACK.with(|s| s.borrow_mut().pop()).expect("recording stack underflow");
    let outputs = match result {
        Ok(o) => o,
        Err(e) => {
            recycle(rec.nodes);
            return Err(e);
        }
    };
    if let Some(err) = rec.error.take() {
        recycle(rec.nodes);
        return Err(err.into());
    }
    let mut output_ids = Vec::with_capacity(outputs.len());
    let mut values = Vec::with_capacity(outputs.len());
    for o in &outputs {
        values.push(o.v);
        if o.is_const() || o.tape != id {
            output_ids.push(rec.nodes.len() as u32);
            rec.nodes.push(Node { op: ElementaryOp::Const, parents: [NONE, NONE], partials: [0.0, 0.0], value: o.v });
        } else {
            output_ids.push(o.idx);
        }
    }
    Ok((Tape { nodes: rec.nodes, input_count: inputs.len(), output_ids }, values))
}

fn recycle(mut nodes: Vec<Node>) {
    nodes.clear();
    SPARE.with(|s| {
        let mut s = s.borrow_mut();
        if s.len() < 4 {
            s.push(nodes);
        }
    });
}

impl Tape {
    /// Re-records into this tape's storage, reusing its allocation.
    pub fn rerecord<E, F>(&mut self, inputs: &[f64], f: F) -> Result<Vec<f64>, E>
    where
        F: FnOnce(&[Var]) -> Result<Vec<Var>, E>,
        E: From<AdError>,
    {
        let buffer = std::mem::take(&mut self.nodes);
        let (tape, values) = record_into(buffer, inputs, f)?;
        *self = tape;
        Ok(values)
    }

    pub fn input_count(&self) -> usize {
        self.input_count
    }

    pub fn output_count(&self) -> usize {
        self.output_ids.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn output_ids(&self) -> &[u32] {
        &self.output_ids
    }

    /// Recorded output values.
    pub fn output_values(&self) -> Vec<f64> {
        self.output_ids.iter().map(|&i| self.nodes[i as usize].value).collect()
    }

    pub fn op(&self, node: usize) -> ElementaryOp {
        self.nodes[node].op
    }

    /// Number of nodes that are not inputs or constants.
    pub fn operation_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, ElementaryOp::Input | ElementaryOp::Const)).count()
    }

    /// Vector-Jacobian product `Jᵀe`.
    pub fn backward(&self, seed: &[f64]) -> Result<Vec<f64>, AdError> {
        let mut adjoint = AdjointVector::default();
        self.backward_into(seed, &mut adjoint)?;
        Ok(adjoint.gradient(self.input_count).to_vec())
    }

    /// Backward pass into a caller-owned adjoint buffer. Several passes may
    /// share one immutable tape as long as each uses its own buffer.
    pub fn backward_into(&self, seed: &[f64], adjoint: &mut AdjointVector) -> Result<(), AdError> {
        if seed.len() != self.output_ids.len() {
            return Err(AdError::SeedDimension { expected: self.output_ids.len(), got: seed.len() });
        }
        adjoint.reset(self.nodes.len());
        for (&o, &e) in self.output_ids.iter().zip(seed) {
            adjoint.values[o as usize] += e;
        }
        self.sweep(adjoint);
        Ok(())
    }

    /// Backward pass seeded on a sparse set of `(output index, weight)` pairs.
    pub fn backward_sparse_into(&self, seed: &[(usize, f64)], adjoint: &mut AdjointVector) -> Result<(), AdError> {
        adjoint.reset(self.nodes.len());
        for &(k, e) in seed {
            let o = *self
                .output_ids
                .get(k)
                .ok_or(AdError::SeedDimension { expected: self.output_ids.len(), got: k + 1 })?;
            adjoint.values[o as usize] += e;
        }
        self.sweep(adjoint);
        Ok(())
    }

    fn sweep(&self, adjoint: &mut AdjointVector) {
        let adj = &mut adjoint.values;
        for i in (self.input_count..self.nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            let [p0, p1] = node.parents;
            if p0 != NONE {
                adj[p0 as usize] += a * node.partials[0];
            }
            if p1 != NONE {
                adj[p1 as usize] += a * node.partials[1];
            }
        }
    }
}

/// Per-node adjoint accumulator for one backward pass.
#[derive(Clone, Debug, Default)]
pub struct AdjointVector {
    pub(crate) values: Vec<f64>,
}

impl AdjointVector {
    fn reset(&mut self, n: usize) {
        self.values.clear();
        self.values.resize(n, 0.0);
    }

    /// Adjoints of the independent variables, i.e. `Jᵀe` after a pass.
    pub fn gradient(&self, input_count: usize) -> &[f64] {
        &self.values[..input_count]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
