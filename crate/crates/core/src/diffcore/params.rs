use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter groups the freeze controller toggles as a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    VisualEncoder,
    TextEncoder,
    Projection,
    Confidence,
    Classifier,
    /// Low-rank adapter factors outside the fusion model.
    Adapter,
}

impl Group {
    pub const MODEL_GROUPS: [Group; 5] = [
        Group::VisualEncoder,
        Group::TextEncoder,
        Group::Projection,
        Group::Confidence,
        Group::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::VisualEncoder => "visual_encoder",
            Group::TextEncoder => "text_encoder",
            Group::Projection => "projection",
            Group::Confidence => "confidence",
            Group::Classifier => "classifier",
            Group::Adapter => "adapter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Group::VisualEncoder,
            Group::TextEncoder,
            Group::Projection,
            Group::Confidence,
            Group::Classifier,
            Group::Adapter,
        ]
        .into_iter()
        .find(|g| g.name() == s)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<S>,
}

/// Registry of named trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param { name, group, value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.params[id.0].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count, optionally restricted to one group.
    pub fn scalar_count(&self, group: Option<Group>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.value.len())
            .sum()
    }

    /// Snapshot of every tensor in one group, in registration order.
    pub fn snapshot(&self, group: Group) -> Vec<Tensor<S>> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.clone())
            .collect()
    }
}
