//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every backward rule is itself written in terms of [`Var`] operations, so
//! requesting `create_graph` yields gradients that can be differentiated
//! again. The gradient penalty relies on this. The one exception is the fused
//! instance norm, whose input gradient is returned as a constant.

mod ops;
pub mod check;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::tensor::Tensor;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Restores the previous recording mode when dropped.
pub struct GradModeGuard {
    prev: bool,
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

pub fn set_grad_enabled(enabled: bool) -> GradModeGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(enabled));
    GradModeGuard { prev }
}

/// Disables graph recording until the guard is dropped.
pub fn no_grad() -> GradModeGuard {
    set_grad_enabled(false)
}

type BackwardFn = Box<dyn Fn(&Var, &[Var], &[bool]) -> Vec<Option<Var>>>;

struct Node {
    parents: Vec<Var>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    node: Option<Node>,
}

/// A tensor participating in the autodiff graph.
#[derive(Clone)]
pub struct Var(Rc<Inner>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    pub fn leaf(value: Tensor, requires_grad: bool) -> Var {
        Var(Rc::new(Inner {
            id: next_id(),
            value,
            requires_grad,
            node: None,
        }))
    }

    pub fn constant(value: Tensor) -> Var {
        Var::leaf(value, false)
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Tensor::scalar(v))
    }

    pub(crate) fn from_op(
        value: Tensor,
        parents: Vec<Var>,
        backward: impl Fn(&Var, &[Var], &[bool]) -> Vec<Option<Var>> + 'static,
    ) -> Var {
        let requires_grad = grad_enabled() && parents.iter().any(Var::requires_grad);
        let node = requires_grad.then(|| Node {
            parents,
            backward: Box::new(backward),
        });
        Var(Rc::new(Inner {
            id: next_id(),
            value,
            requires_grad,
            node,
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Var, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((v, child)) = stack.pop() {
        let parents = v.0.node.as_ref().map(|n| n.parents.as_slice()).unwrap_or(&[]);
        if child < parents.len() {
            let p = parents[child].clone();
            stack.push((v, child + 1));
            if p.requires_grad() && visited.insert(p.id()) {
                stack.push((p, 0));
            }
        } else {
            order.push(v);
        }
    }
    order
}

/// Gradients of `output` (seeded with ones) with respect to `wrt`.
///
/// Entries are `None` when an input does not influence the output. With
/// `create_graph`, the returned variables carry their own graph.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Option<Var>> {
    grad_seeded(output, Tensor::ones(output.shape()), wrt, create_graph)
}

pub fn grad_seeded(
    output: &Var,
    seed: Tensor,
    wrt: &[&Var],
    create_graph: bool,
) -> Vec<Option<Var>> {
    assert_eq!(seed.shape(), output.shape(), "seed shape mismatch");
    if !output.requires_grad() {
        return vec![None; wrt.len()];
    }
    let wanted: HashSet<u64> = wrt.iter().map(|v| v.id()).collect();
    let mut found: HashMap<u64, Var> = HashMap::new();
    let _mode = set_grad_enabled(create_graph);
    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.id(), Var::constant(seed));
    for v in topo_order(output).into_iter().rev() {
        let Some(g) = grads.remove(&v.id()) else {
            continue;
        };
        if wanted.contains(&v.id()) {
            found.insert(v.id(), g.clone());
        }
        let Some(node) = v.0.node.as_ref() else {
            continue;
        };
        let needs: Vec<bool> = node.parents.iter().map(Var::requires_grad).collect();
        let parent_grads = (node.backward)(&g, &node.parents, &needs);
        for ((p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
            let (Some(pg), true) = (pg, *need) else {
                continue;
            };
            debug_assert_eq!(pg.shape(), p.shape(), "gradient shape mismatch");
            let acc = match grads.remove(&p.id()) {
                Some(prev) => prev.add(&pg),
                None => pg,
            };
            grads.insert(p.id(), acc);
        }
    }
    wrt.iter().map(|v| found.remove(&v.id())).collect()
}

/// First-order gradients as plain tensors, zero-filled where unreached.
pub fn backward(output: &Var, wrt: &[&Var]) -> Vec<Tensor> {
    grad(output, wrt, false)
        .into_iter()
        .zip(wrt)
        .map(|(g, v)| {
            g.map(|g| g.value().clone())
                .unwrap_or_else(|| Tensor::zeros(v.shape()))
        })
        .collect()
}
