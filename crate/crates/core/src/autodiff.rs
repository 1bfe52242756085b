//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! Elementary operations record a node with up to two parents and the local
//! partial derivatives. Batched network evaluations are recorded as opaque
//! [`Block`]s: a block owns whatever cache it needs and maps output adjoints
//! back to input adjoints, writing parameter gradients into a flat buffer.
//!
//! A [`Var`] whose `tape` is `None` is a constant; operations on constants
//! never touch a tape.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    da: f64,
    db: f64,
}

/// A batched operation with a hand-written backward pass.
pub trait Block {
    /// Maps output adjoints to input adjoints (same order as the recorded
    /// inputs). Parameter gradients are accumulated into `param_grad`.
    fn backward(&self, out_adj: &[f64], param_grad: &mut [f64]) -> Vec<f64>;
}

struct BlockEntry {
    first_out: u32,
    n_out: u32,
    inputs: Vec<u32>,
    block: Box<dyn Block>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    blocks: RefCell<Vec<BlockEntry>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(NONE, 0.0, NONE, 0.0);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    fn push(&self, a: u32, da: f64, b: u32, db: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        nodes.push(Node { a, b, da, db });
        idx as u32
    }

    /// Records a custom block. Returns one variable per output value.
    pub fn block(&self, inputs: &[Var<'_>], outputs: &[f64], block: Box<dyn Block>) -> Vec<Var<'_>> {
        assert!(!outputs.is_empty(), "a block needs at least one output");
        let inputs: Vec<u32> = inputs
            .iter()
            .map(|v| match v.tape {
                Some(t) => {
                    debug_assert!(std::ptr::eq(t, self), "input recorded on another tape");
                    v.idx
                }
                None => NONE,
            })
            .collect();
        let first_out = self.len() as u32;
        let vars: Vec<Var<'_>> = outputs.iter().map(|&v| self.var(v)).collect();
        self.blocks.borrow_mut().push(BlockEntry {
            first_out,
            n_out: outputs.len() as u32,
            inputs,
            block,
        });
        vars
    }

    /// Back-propagates from `output`. Parameter gradients of recorded blocks
    /// are added to `param_grad`.
    pub fn gradient(&self, output: Var<'_>, param_grad: &mut [f64]) -> Adjoints {
        let nodes = self.nodes.borrow();
        let blocks = self.blocks.borrow();
        let mut adj = vec![0.0; nodes.len()];
        if output.idx == NONE {
            return Adjoints(adj);
        }
        adj[output.idx as usize] = 1.0;
        let mut next_block = blocks.len();
        for i in (0..=output.idx as usize).rev() {
            let g = adj[i];
            let node = nodes[i];
            if g != 0.0 {
                if node.a != NONE {
                    adj[node.a as usize] += g * node.da;
                }
                if node.b != NONE {
                    adj[node.b as usize] += g * node.db;
                }
            }
            while next_block > 0 && blocks[next_block - 1].first_out as usize >= i {
                let entry = &blocks[next_block - 1];
                next_block -= 1;
                if entry.first_out as usize > output.idx as usize {
                    continue;
                }
                let start = entry.first_out as usize;
                let out_adj = &adj[start..start + entry.n_out as usize];
                if out_adj.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let in_adj = entry.block.backward(out_adj, param_grad);
                debug_assert_eq!(in_adj.len(), entry.inputs.len());
                for (&inp, g) in entry.inputs.iter().zip(in_adj) {
                    if inp != NONE {
                        adj[inp as usize] += g;
                    }
                }
            }
        }
        Adjoints(adj)
    }
}

/// Adjoint values for every node of a tape.
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.idx == NONE {
            0.0
        } else {
            self.0.get(v.idx as usize).copied().unwrap_or(0.0)
        }
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.val)
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val: value,
        }
    }

    pub fn value(self) -> f64 {
        self.val
    }

    pub fn is_constant(self) -> bool {
        self.tape.is_none()
    }

    /// Same value, no gradient path.
    pub fn detach(self) -> Self {
        Var::constant(self.val)
    }

    /// Records a unary function with value `val` and derivative `d`.
    pub fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push(self.idx, d, NONE, 0.0),
                val,
            },
        }
    }

    /// Records a binary function with value `val` and partials `da`, `db`.
    pub fn binary(a: Self, b: Self, val: f64, da: f64, db: f64) -> Self {
        match (a.tape, b.tape) {
            (None, None) => Var::constant(val),
            (Some(t), None) => Var {
                tape: Some(t),
                idx: t.push(a.idx, da, NONE, 0.0),
                val,
            },
            (None, Some(t)) => Var {
                tape: Some(t),
                idx: t.push(b.idx, db, NONE, 0.0),
                val,
            },
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(a.idx, da, b.idx, db),
                val,
            },
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.val;
        let val = self.val * inv;
        Var::binary(self, rhs, val, inv, -val * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}
