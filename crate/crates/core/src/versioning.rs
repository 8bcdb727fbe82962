//! Design versioning tree: lineage of designs across generation rounds.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::blobshape::{ShapeId, PART_COUNT};

/// Children produced by one generation round.
pub const ROUND_SIZE: usize = 3;
/// Horizontal gap between the subtrees of consecutive roots.
const ROOT_GAP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("unknown parent {0}")]
    UnknownParent(ShapeId),
    #[error("shape {0} is already in the tree")]
    DuplicateId(ShapeId),
    #[error("a generation round adds exactly {ROUND_SIZE} children, got {0}")]
    ChildCount(usize),
    #[error("part index {0} out of range")]
    PartIndex(usize),
    #[error("part index {0} selected twice")]
    DuplicatePart(usize),
    #[error("edits after round 0 need at least one adjective")]
    NoAdjectives,
    #[error("root {0} must not carry an edit")]
    RootEdit(ShapeId),
    #[error("node {0} is missing its edit")]
    MissingEdit(ShapeId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditDescriptor {
    pub selected_parts: Vec<usize>,
    pub adjectives: Vec<String>,
    pub generation_round: u32,
}

impl EditDescriptor {
    pub fn validate(&self) -> Result<(), TreeError> {
        let mut seen = BTreeSet::new();
        for &p in &self.selected_parts {
            if p >= PART_COUNT {
                return Err(TreeError::PartIndex(p));
            }
            if !seen.insert(p) {
                return Err(TreeError::DuplicatePart(p));
            }
        }
        if self.generation_round > 0 && self.adjectives.is_empty() {
            return Err(TreeError::NoAdjectives);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VersionNode {
    pub shape_id: ShapeId,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub edit: Option<EditDescriptor>,
    pub depth: usize,
}

/// Forest of version nodes stored in an arena, indexed by shape id.
#[derive(Clone, Debug, Default)]
pub struct VersionTree {
    nodes: Vec<VersionNode>,
    roots: Vec<usize>,
    index: BTreeMap<ShapeId, usize>,
}

impl PartialEq for VersionTree {
    fn eq(&self, other: &Self) -> bool {
        self.to_wire() == other.to_wire()
    }
}

impl VersionTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &ShapeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn node(&self, id: &ShapeId) -> Option<&VersionNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn roots(&self) -> impl Iterator<Item = &ShapeId> {
        self.roots.iter().map(|&i| &self.nodes[i].shape_id)
    }

    pub fn children(&self, id: &ShapeId) -> Vec<&ShapeId> {
        self.node(id).map_or_else(Vec::new, |n| {
            n.children
                .iter()
                .map(|&c| &self.nodes[c].shape_id)
                .collect()
        })
    }

    pub fn parent(&self, id: &ShapeId) -> Option<&ShapeId> {
        self.node(id)
            .and_then(|n| n.parent)
            .map(|p| &self.nodes[p].shape_id)
    }

    /// All shape ids in insertion order.
    pub fn shape_ids(&self) -> impl Iterator<Item = &ShapeId> {
        self.nodes.iter().map(|n| &n.shape_id)
    }

    fn push(&mut self, node: VersionNode) -> usize {
        let i = self.nodes.len();
        self.index.insert(node.shape_id.clone(), i);
        self.nodes.push(node);
        i
    }

    /// Register `id` as a new root unless it is already in the tree.
    /// Returns whether a root was added.
    pub fn ensure_root(&mut self, id: &ShapeId) -> bool {
        if self.contains(id) {
            return false;
        }
        let i = self.push(VersionNode {
            shape_id: id.clone(),
            parent: None,
            children: Vec::new(),
            edit: None,
            depth: 0,
        });
        self.roots.push(i);
        true
    }

    /// Attach one round of children to `parent`, in the given order.
    pub fn add_generation(
        &mut self,
        parent: &ShapeId,
        children: &[ShapeId],
        edit: EditDescriptor,
    ) -> Result<(), TreeError> {
        if children.len() != ROUND_SIZE {
            return Err(TreeError::ChildCount(children.len()));
        }
        edit.validate()?;
        let &p = self
            .index
            .get(parent)
            .ok_or_else(|| TreeError::UnknownParent(parent.clone()))?;
        let mut fresh = BTreeSet::new();
        for c in children {
            if self.contains(c) || !fresh.insert(c) {
                return Err(TreeError::DuplicateId(c.clone()));
            }
        }
        let depth = self.nodes[p].depth + 1;
        for c in children {
            let i = self.push(VersionNode {
                shape_id: c.clone(),
                parent: Some(p),
                children: Vec::new(),
                edit: Some(edit.clone()),
                depth,
            });
            self.nodes[p].children.push(i);
        }
        Ok(())
    }

    /// Tidy layout: leaves on consecutive unit slots, each parent centered
    /// over its children, `y = −depth`, `z = 0`. Output follows insertion order.
    pub fn layout(&self) -> Vec<(ShapeId, [f64; 3])> {
        let mut x = vec![0.0; self.nodes.len()];
        let mut cursor = 0.0;
        for (r, &root) in self.roots.iter().enumerate() {
            if r > 0 {
                cursor += ROOT_GAP;
            }
            self.place(root, &mut cursor, &mut x);
        }
        self.nodes
            .iter()
            .zip(&x)
            .map(|(n, &xi)| (n.shape_id.clone(), [xi, -(n.depth as f64), 0.0]))
            .collect()
    }

    fn place(&self, root: usize, cursor: &mut f64, x: &mut [f64]) {
        // explicit post-order so deep lineages cannot overflow the stack
        let mut stack = vec![(root, false)];
        while let Some((i, expanded)) = stack.pop() {
            let node = &self.nodes[i];
            if node.children.is_empty() {
                x[i] = *cursor;
                *cursor += 1.0;
            } else if expanded {
                let sum: f64 = node.children.iter().map(|&c| x[c]).sum();
                x[i] = sum / node.children.len() as f64;
            } else {
                stack.push((i, true));
                for &c in node.children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
    }

    fn to_wire(&self) -> TreeWire {
        TreeWire {
            roots: self.roots.iter().map(|&r| self.node_wire(r)).collect(),
        }
    }

    fn node_wire(&self, i: usize) -> NodeWire {
        let n = &self.nodes[i];
        NodeWire {
            shape_id: n.shape_id.clone(),
            edit: n.edit.clone(),
            children: n.children.iter().map(|&c| self.node_wire(c)).collect(),
        }
    }

    fn from_wire(wire: TreeWire) -> Result<Self, TreeError> {
        let mut tree = VersionTree::new();
        for root in wire.roots {
            if root.edit.is_some() {
                return Err(TreeError::RootEdit(root.shape_id));
            }
            if !tree.ensure_root(&root.shape_id) {
                return Err(TreeError::DuplicateId(root.shape_id));
            }
            let r = tree.index[&root.shape_id];
            let mut pending: Vec<(usize, NodeWire)> =
                root.children.into_iter().rev().map(|c| (r, c)).collect();
            while let Some((parent, node)) = pending.pop() {
                if tree.contains(&node.shape_id) {
                    return Err(TreeError::DuplicateId(node.shape_id));
                }
                let edit = node
                    .edit
                    .ok_or_else(|| TreeError::MissingEdit(node.shape_id.clone()))?;
                edit.validate()?;
                let i = tree.push(VersionNode {
                    shape_id: node.shape_id,
                    parent: Some(parent),
                    children: Vec::new(),
                    edit: Some(edit),
                    depth: tree.nodes[parent].depth + 1,
                });
                tree.nodes[parent].children.push(i);
                pending.extend(node.children.into_iter().rev().map(|c| (i, c)));
            }
        }
        Ok(tree)
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct TreeWire {
    roots: Vec<NodeWire>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct NodeWire {
    shape_id: ShapeId,
    edit: Option<EditDescriptor>,
    children: Vec<NodeWire>,
}

impl Serialize for VersionTree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for VersionTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = TreeWire::deserialize(d)?;
        VersionTree::from_wire(wire).map_err(serde::de::Error::custom)
    }
}
