use ndarray::ArrayD;
use std::rc::Rc;

/// Dynamic-dimension `f64` array, the only tensor type the tape knows.
pub type Arr = ArrayD<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Maps the gradient at a node to the gradients of its parents, in parent
/// order. The mask says which parents need a gradient at all; closures may
/// return `None` for the rest (convolutions skip their input-gradient pass
/// that way when the input is a plain data leaf).
pub(crate) type BackFn = Box<dyn Fn(&Arr, &[bool]) -> Vec<Option<Arr>>>;

struct Node {
    value: Rc<Arr>,
    parents: Vec<Var>,
    back: Option<BackFn>,
    needs_grad: bool,
}

/// A linear record of one forward computation.
///
/// Tapes are cheap to create and are dropped after each forward/backward
/// pass; values are reference-counted so leasing a parameter in costs one
/// pointer copy.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape that records values but no backward closures. Forward-only
    /// passes (evaluation, feature extraction) use this to skip the
    /// bookkeeping.
    pub fn no_grad() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    pub fn value_rc(&self, v: Var) -> Rc<Arr> {
        Rc::clone(&self.nodes[v.0].value)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "scalar() called on a node with {} elements", a.len());
        *a.iter().next().unwrap()
    }

    /// Data leaf: receives no gradient of its own.
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.nodes.push(Node { value: Rc::new(value), parents: Vec::new(), back: None, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Gradient-bearing leaf (parameters lease in through this).
    pub fn leaf_rc(&mut self, value: Rc<Arr>) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), back: None, needs_grad: self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Arr, parents: Vec<Var>, back: BackFn) -> Var {
        let needs = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        if !needs {
            return self.leaf(value);
        }
        self.nodes.push(Node { value: Rc::new(value), parents, back: Some(back), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagate from a scalar `root`, returning the gradient table.
    ///
    /// Gradients of interior nodes are freed as soon as they have been
    /// consumed; leaves keep theirs. Pass nodes you want to inspect
    /// afterwards in `keep` — saliency extraction reads the gradient of an
    /// interior activation that way.
    pub fn backward_keeping(&self, root: Var, keep: &[Var]) -> Grads {
        assert!(self.grad_enabled, "backward on a no-grad tape");
        let root_val = self.value(root);
        assert_eq!(root_val.len(), 1, "backward root must be scalar");

        let mut table: Vec<Option<Arr>> = (0..=root.0).map(|_| None).collect();
        table[root.0] = Some(Arr::ones(root_val.raw_dim()));

        let mut mask: Vec<bool> = Vec::new();
        for i in (0..=root.0).rev() {
            if table[i].is_none() {
                continue;
            }
            let node = &self.nodes[i];
            let Some(back) = &node.back else { continue };
            let grad_out = table[i].take().unwrap();
            mask.clear();
            mask.extend(node.parents.iter().map(|p| {
                let pn = &self.nodes[p.0];
                pn.needs_grad || keep.contains(p)
            }));
            let parent_grads = back(&grad_out, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((p, pg), &needed) in node.parents.iter().zip(parent_grads).zip(&mask) {
                let Some(pg) = pg else {
                    debug_assert!(!needed, "missing gradient for a parent that needs one");
                    continue;
                };
                if !needed {
                    continue;
                }
                debug_assert_eq!(pg.raw_dim(), self.nodes[p.0].value.raw_dim());
                match &mut table[p.0] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
            if keep.contains(&Var(i)) {
                table[i] = Some(grad_out);
            }
        }
        Grads { table }
    }

    pub fn backward(&self, root: Var) -> Grads {
        self.backward_keeping(root, &[])
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient table produced by [`Tape::backward`].
pub struct Grads {
    table: Vec<Option<Arr>>,
}

impl Grads {
    /// Gradient of the backward root with respect to `v`, if it was reached
    /// and retained.
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.table.get(v.0).and_then(|g| g.as_ref())
    }
}
