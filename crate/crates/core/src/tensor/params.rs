use std::collections::HashMap;
use std::fmt;

use super::{Real, Tensor};
use crate::error::{DamsError, Result};

/// The named parameter groups. Every parameter belongs to exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Shared token embedding table, tied with every output projection.
    Embedding,
    /// Token-level utterance / sentence encoder used for dialogues and articles.
    DialogueEncoder,
    /// Utterance reconstruction decoder, conditioned by embedding addition.
    UtteranceDecoder,
    /// Token-level encoder for short-text pieces.
    ShortTextEncoder,
    /// Sentence-level encoder over short-text [CLS] vectors.
    ShortTextHier,
    /// Summary decoder with cross attention over sentence memories.
    SummaryDecoder,
    /// Sentence-level context encoder bridging the dialogue encoder and the summary decoder.
    BridgeHier,
    /// Critic on dialogue-encoder [CLS] vectors.
    CriticEncoder,
    /// Critic on summary-decoder memories.
    CriticDecoder,
}

impl Group {
    pub const ALL: [Group; 9] = [
        Group::Embedding,
        Group::DialogueEncoder,
        Group::UtteranceDecoder,
        Group::ShortTextEncoder,
        Group::ShortTextHier,
        Group::SummaryDecoder,
        Group::BridgeHier,
        Group::CriticEncoder,
        Group::CriticDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Embedding => "embed",
            Group::DialogueEncoder => "dial_enc",
            Group::UtteranceDecoder => "dial_dec",
            Group::ShortTextEncoder => "short_enc",
            Group::ShortTextHier => "short_hier",
            Group::SummaryDecoder => "summ_dec",
            Group::BridgeHier => "bridge_hier",
            Group::CriticEncoder => "critic_enc",
            Group::CriticDecoder => "critic_dec",
        }
    }

    pub fn from_name(name: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == name)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    group: Group,
    value: Tensor,
}

/// Owns every trainable array of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, group, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: Group) -> impl Iterator<Item = ParamId> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.group == group)
            .map(|(i, _)| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.params[id.0].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Replaces a value, keeping the shape contract.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let param = &mut self.params[id.0];
        if param.value.shape() != value.shape() {
            return Err(DamsError::Usage(format!(
                "parameter {} has shape {:?}, got {:?}",
                param.name,
                param.value.shape(),
                value.shape()
            )));
        }
        param.value = value;
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn group_num_values(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }
}

/// Result of a backward pass: one gradient slot per parameter of the store.
///
/// Parameters the loss does not reach have no entry; [`Gradients::get`]
/// reports them as zero.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<Real>>>,
}

impl Gradients {
    pub fn empty(num_params: usize) -> Self {
        Gradients { grads: vec![None; num_params] }
    }

    pub fn num_params(&self) -> usize {
        self.grads.len()
    }

    /// True when the loss depends on this parameter through the tape.
    pub fn reached(&self, id: ParamId) -> bool {
        self.grads[id.0].is_some()
    }

    pub fn raw(&self, id: ParamId) -> Option<&[Real]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient as a tensor shaped like the parameter; zeros when unreached.
    pub fn get(&self, id: ParamId, store: &ParamStore) -> Tensor {
        let shape = store.get(id).shape().to_vec();
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[Real]) {
        match &mut self.grads[id.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn slots_mut(&mut self) -> impl Iterator<Item = &mut Vec<Real>> {
        self.grads.iter_mut().flatten()
    }

    /// Whether any parameter of `group` was reached.
    pub fn group_reached(&self, store: &ParamStore, group: Group) -> bool {
        store.ids_in(group).any(|id| self.reached(id))
    }

    pub fn global_norm(&self) -> Real {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<Real>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}
