//! Scalar abstraction plus a small reverse-mode tape.
//!
//! Geometry code (skinning, normals, marker simulation, fit energies) is
//! written once against [`Real`] and evaluated either with plain `f64` or with
//! [`Var`], which records every operation on a thread-local tape so the
//! gradient of any output can be pulled back in one sweep.
//!
//! The tape is per thread and not re-entrant: [`with_tape`] clears it on entry
//! and every `Var` created inside belongs to that scope.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + std::fmt::Debug
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
}

/// A tape-tracked scalar. Constants carry no tape slot.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

impl Var {
    /// Registers a new independent variable on the current tape.
    pub fn input(val: f64) -> Var {
        Var { idx: push(Node { parents: [NONE, NONE], partials: [0.0, 0.0] }), val }
    }

    pub fn is_constant(&self) -> bool {
        self.idx == NONE
    }

    fn unary(val: f64, a: Var, da: f64) -> Var {
        if a.idx == NONE {
            return Var { idx: NONE, val };
        }
        Var { idx: push(Node { parents: [a.idx, NONE], partials: [da, 0.0] }), val }
    }

    fn binary(val: f64, a: Var, da: f64, b: Var, db: f64) -> Var {
        match (a.idx == NONE, b.idx == NONE) {
            (true, true) => Var { idx: NONE, val },
            (false, true) => Var::unary(val, a, da),
            (true, false) => Var::unary(val, b, db),
            (false, false) => Var { idx: push(Node { parents: [a.idx, b.idx], partials: [da, db] }), val },
        }
    }
}

fn push(node: Node) -> u32 {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.push(node);
        (t.len() - 1) as u32
    })
}

/// Runs `f` on a fresh tape.
pub fn with_tape<R>(f: impl FnOnce() -> R) -> R {
    TAPE.with(|t| t.borrow_mut().clear());
    let out = f();
    TAPE.with(|t| t.borrow_mut().clear());
    out
}

/// Gradient of `output` with respect to `inputs`, in input order.
pub fn gradient(output: Var, inputs: &[Var]) -> Vec<f64> {
    let mut grads = vec![0.0; inputs.len()];
    if output.idx == NONE {
        return grads;
    }
    let adjoint = TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0; output.idx as usize + 1];
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = t[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p as usize] += a * node.partials[k];
                }
            }
        }
        adj
    });
    for (g, v) in grads.iter_mut().zip(inputs) {
        if v.idx != NONE && (v.idx as usize) < adjoint.len() {
            *g = adjoint[v.idx as usize];
        }
    }
    grads
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::binary(self.val + o.val, self, 1.0, o, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::binary(self.val - o.val, self, 1.0, o, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::binary(self.val * o.val, self, o.val, o, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let inv = 1.0 / o.val;
        Var::binary(self.val * inv, self, inv, o, -self.val * inv * inv)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        Var::unary(-self.val, self, -1.0)
    }
}

impl Real for Var {
    #[inline]
    fn cst(v: f64) -> Self {
        Var { idx: NONE, val: v }
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        Var::unary(s, self, 0.5 / s)
    }
    fn sin(self) -> Self {
        Var::unary(self.val.sin(), self, self.val.cos())
    }
    fn cos(self) -> Self {
        Var::unary(self.val.cos(), self, -self.val.sin())
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Var::unary(self.val * k, self, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<T: Real>(x: T, y: T) -> T {
        (x * x * y + (x / y).sin()).sqrt() - y.cos().scale(3.0) + T::cst(2.0)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x0, y0) = (1.3, 0.7);
        let g = with_tape(|| {
            let (x, y) = (Var::input(x0), Var::input(y0));
            let f = poly(x, y);
            assert!((f.value() - poly(x0, y0)).abs() < 1e-15);
            gradient(f, &[x, y])
        });
        let h = 1e-6;
        let gx = (poly(x0 + h, y0) - poly(x0 - h, y0)) / (2.0 * h);
        let gy = (poly(x0, y0 + h) - poly(x0, y0 - h)) / (2.0 * h);
        assert!((g[0] - gx).abs() < 1e-8);
        assert!((g[1] - gy).abs() < 1e-8);
    }

    #[test]
    fn constants_do_not_touch_tape() {
        with_tape(|| {
            let c = Var::cst(2.0) * Var::cst(3.0);
            assert!(c.is_constant());
            let x = Var::input(1.0);
            let y = x * c;
            assert_eq!(gradient(y, &[x]), vec![6.0]);
        });
    }

    #[test]
    fn reused_variable_accumulates() {
        let g = with_tape(|| {
            let x = Var::input(3.0);
            let y = x * x + x;
            gradient(y, &[x])
        });
        assert_eq!(g, vec![7.0]);
    }
}
