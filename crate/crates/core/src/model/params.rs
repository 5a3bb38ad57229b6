use rand::Rng;

use crate::tensor::{init, Element, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// What a parameter is, for weight decay and probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Router,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    /// `(block, expert)` for weights private to a routed expert.
    pub routed: Option<(usize, usize)>,
}

/// Named learnable tensors in creation order.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Element> {
    info: Vec<ParamInfo>,
    values: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            info: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.info[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.info.iter().position(|i| i.name == name).map(ParamId)
    }

    pub fn push(&mut self, info: ParamInfo, value: Tensor<T>) -> ParamId {
        debug_assert!(self.find(&info.name).is_none(), "duplicate parameter {}", info.name);
        self.info.push(info);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn total_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Parameters touched by one token: everything except the routed experts
    /// beyond the `top_k` active per block.
    pub fn activated_count(&self, experts: usize, top_k: usize) -> usize {
        let routed: usize = self
            .info
            .iter()
            .zip(&self.values)
            .filter(|(i, _)| i.routed.is_some())
            .map(|(_, v)| v.numel())
            .sum();
        let dense = self.total_count() - routed;
        dense + routed * top_k / experts.max(1)
    }

    /// Count of parameters whose name contains `fragment`.
    pub fn count_matching(&self, fragment: &str) -> usize {
        self.info
            .iter()
            .zip(&self.values)
            .filter(|(i, _)| i.name.contains(fragment))
            .map(|(_, v)| v.numel())
            .sum()
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Binding {
        Binding {
            vars: self.values.iter().map(|v| g.leaf(v.clone(), trainable)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            info: self.info.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.info.iter().map(|i| i.name.as_str()).zip(&self.values)
    }
}

/// Graph variables of a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Creates parameters under a name prefix.
pub(crate) struct Builder<'a, T: Element, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    prefix: String,
    routed: Option<(usize, usize)>,
}

impl<'a, T: Element, R: Rng> Builder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
            routed: None,
        }
    }

    /// Runs `f` with `segment` appended to the prefix.
    pub fn scope<O>(&mut self, segment: &str, f: impl FnOnce(&mut Builder<'_, T, R>) -> O) -> O {
        let prefix = if self.prefix.is_empty() {
            segment.to_string()
        } else {
            format!("{}.{segment}", self.prefix)
        };
        let mut inner = Builder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
            routed: self.routed,
        };
        f(&mut inner)
    }

    /// Like [`Builder::scope`], tagging everything created inside as private to
    /// routed expert `expert` of `block`.
    pub fn routed_scope<O>(
        &mut self,
        segment: &str,
        block: usize,
        expert: usize,
        f: impl FnOnce(&mut Builder<'_, T, R>) -> O,
    ) -> O {
        let saved = self.routed.replace((block, expert));
        let out = self.scope(segment, f);
        self.routed = saved;
        out
    }

    fn push(&mut self, name: &str, kind: ParamKind, value: Tensor<T>) -> ParamId {
        let name = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.push(
            ParamInfo {
                name,
                kind,
                routed: self.routed,
            },
            value,
        )
    }

    /// Xavier-uniform matrix.
    pub fn xavier(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize, kind: ParamKind) -> ParamId {
        let v = init::xavier_uniform(shape, fan_in, fan_out, self.rng);
        self.push(name, kind, v)
    }

    /// `[in, out]` linear weight.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        self.xavier(name, &[fan_in, fan_out], fan_in, fan_out, ParamKind::Weight)
    }

    pub fn standard_normal(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let v = init::normal(shape, 1.0, self.rng);
        self.push(name, ParamKind::Weight, v)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> ParamId {
        self.push(name, kind, Tensor::full(shape.to_vec(), T::one()))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> ParamId {
        self.push(name, kind, Tensor::zeros(shape.to_vec()))
    }
}
