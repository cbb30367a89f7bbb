use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded op. Receives the op's output value and the
/// gradient flowing into it, returns gradient contributions per input.
pub(crate) trait Backward<T: Real>: Send + Sync {
    fn backward(&self, tape: &Tape<T>, out: &Tensor<T>, grad: &Tensor<T>)
        -> Result<Vec<(Var, Tensor<T>)>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    rule: Option<Box<dyn Backward<T>>>,
}

/// Eagerly built record of one forward pass. Nodes are appended in
/// execution order, so every op's inputs precede it and a reverse sweep is
/// a valid topological order.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            rule: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn record(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var],
        rule: impl FnOnce() -> Box<dyn Backward<T>>,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let rule = if requires_grad { Some(rule()) } else { None };
        self.nodes.push(Node {
            value,
            requires_grad,
            rule,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Every leaf that requires a
    /// gradient gets an entry; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Backward(format!("loss node {} is not on this tape", loss.0)))?;
        if !node.value.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Backward(
                "loss is detached: it depends on no trainable leaf".into(),
            ));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = &node.rule else { continue };
            let Some(g) = grads[i].take() else { continue };
            for (input, contrib) in rule.backward(self, &node.value, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if contrib.shape() != self.nodes[input.0].value.shape() {
                    return Err(Error::shape(
                        "backward",
                        format!(
                            "gradient {:?} for node {} of shape {:?}",
                            contrib.shape(),
                            input.0,
                            self.nodes[input.0].value.shape()
                        ),
                    ));
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let mut map = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.rule.is_none() && node.requires_grad {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(Var(i), g);
            }
        }
        Ok(Gradients { map })
    }
}

/// Gradients of a scalar loss with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f32> {
    map: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.map.get(&v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.map.iter().map(|(v, t)| (*v, t))
    }
}
