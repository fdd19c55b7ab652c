//! Array-backed, name-unique node collections.
//!
//! [`NodeCollection`] keeps node ids in a contiguous vector, so forward iteration is a
//! slice walk and positional access is O(1). Name lookup is a linear scan for small
//! collections and a lazily built hash index from [`INDEX_THRESHOLD`] elements on.
//!
//! [`LegacyCursor`] emulates the old list-era iterator contract on top of any
//! [`TraversalSource`]: it holds a shared handle to the collection and walks it by
//! index, so it survives reallocation of the backing storage. Inserting or removing
//! elements *before* the cursor shifts what it will see next; the cursor does not
//! compensate, but emits a diagnostic when debug checks are on.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use crate::graph::NodeId;

/// Size from which [`NodeCollection::find`] uses a hash index instead of a scan.
pub const INDEX_THRESHOLD: usize = 64;

static DEBUG_CHECKS: AtomicBool = AtomicBool::new(false);

/// Turns on cursor diagnostics in builds without debug assertions.
pub fn set_debug_checks(enabled: bool) {
    DEBUG_CHECKS.store(enabled, Ordering::Relaxed);
}

/// Cursor diagnostics run in debug builds, or when switched on at run time.
pub fn debug_checks_enabled() -> bool {
    cfg!(debug_assertions) || DEBUG_CHECKS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Edit {
    generation: u64,
    position: usize,
}

/// Ordered collection of uniquely named node ids.
#[derive(Debug, Default)]
pub struct NodeCollection {
    ids: Vec<NodeId>,
    names: Vec<String>,
    name_index: OnceLock<HashMap<String, usize>>,
    generation: u64,
    // Edits that shift existing positions (insert_at, remove, sort). Appends never
    // land before an element that is already present, so they are not recorded.
    shifting_edits: Vec<Edit>,
}

impl Clone for NodeCollection {
    fn clone(&self) -> Self {
        Self {
            ids: self.ids.clone(),
            names: self.names.clone(),
            name_index: OnceLock::new(),
            generation: 0,
            shifting_edits: Vec::new(),
        }
    }
}

impl NodeCollection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            ids: Vec::with_capacity(capacity),
            names: Vec::with_capacity(capacity),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.ids.capacity()
    }

    /// Incremented by every structural modification.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Appends `id` under `name`; returns false and changes nothing if the name is taken.
    pub fn insert(&mut self, id: NodeId, name: &str) -> bool {
        if self.find(name).is_some() {
            return false;
        }
        let position = self.ids.len();
        self.ids.push(id);
        self.names.push(name.to_string());
        if let Some(index) = self.name_index.get_mut() {
            index.insert(name.to_string(), position);
        }
        self.generation += 1;
        true
    }

    /// Inserts at `position` (clamped to the end), shifting later elements right.
    pub fn insert_at(&mut self, position: usize, id: NodeId, name: &str) -> bool {
        let position = position.min(self.len());
        if position == self.len() {
            return self.insert(id, name);
        }
        if self.find(name).is_some() {
            return false;
        }
        self.ids.insert(position, id);
        self.names.insert(position, name.to_string());
        self.record_shift(position);
        true
    }

    /// Removes the element named `name`, shifting later elements left.
    pub fn remove(&mut self, name: &str) -> Option<NodeId> {
        let position = self.position_of(name)?;
        let id = self.ids.remove(position);
        self.names.remove(position);
        self.record_shift(position);
        Some(id)
    }

    /// Reorders elements by name.
    pub fn sort_by_name(&mut self) {
        let mut pairs: Vec<(String, NodeId)> = self.names.drain(..).zip(self.ids.drain(..)).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, id) in pairs {
            self.names.push(name);
            self.ids.push(id);
        }
        self.record_shift(0);
    }

    fn record_shift(&mut self, position: usize) {
        self.generation += 1;
        self.shifting_edits.push(Edit {
            generation: self.generation,
            position,
        });
        self.name_index = OnceLock::new();
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.position_of(name).map(|i| self.ids[i])
    }

    /// Position of `name`, scanning below the index threshold.
    pub fn position_of(&self, name: &str) -> Option<usize> {
        if self.ids.len() < INDEX_THRESHOLD {
            return self.names.iter().position(|n| n == name);
        }
        let index = self.name_index.get_or_init(|| {
            self.names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect()
        });
        index.get(name).copied()
    }

    pub fn has_name_index(&self) -> bool {
        self.name_index.get().is_some()
    }

    pub fn get(&self, position: usize) -> Option<NodeId> {
        self.ids.get(position).copied()
    }

    pub fn name_at(&self, position: usize) -> Option<&str> {
        self.names.get(position).map(String::as_str)
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn iter(&self) -> std::iter::Copied<std::slice::Iter<'_, NodeId>> {
        self.ids.iter().copied()
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (NodeId, &str)> {
        self.ids.iter().copied().zip(self.names.iter().map(String::as_str))
    }

    fn edited_before(&self, since: u64, position: usize) -> Option<usize> {
        let start = self.shifting_edits.partition_point(|e| e.generation <= since);
        self.shifting_edits[start..]
            .iter()
            .find(|e| e.position < position)
            .map(|e| e.position)
    }
}

impl<'a> IntoIterator for &'a NodeCollection {
    type Item = NodeId;
    type IntoIter = std::iter::Copied<std::slice::Iter<'a, NodeId>>;

    fn into_iter(self) -> Self::IntoIter {
        self.iter()
    }
}

impl std::ops::Index<usize> for NodeCollection {
    type Output = NodeId;

    fn index(&self, position: usize) -> &NodeId {
        &self.ids[position]
    }
}

/// Backend interface for [`LegacyCursor`].
pub trait TraversalSource {
    fn item(&self, position: usize) -> Option<NodeId>;
    fn generation(&self) -> u64;
    /// Position of a shifting edit made after generation `since` that landed strictly
    /// before `position`, if any.
    fn edited_before(&self, since: u64, position: usize) -> Option<usize>;
}

/// A collection shared between its owner and any number of legacy cursors.
#[derive(Debug, Clone, Default)]
pub struct SharedCollection(Rc<RefCell<NodeCollection>>);

impl SharedCollection {
    pub fn new(collection: NodeCollection) -> Self {
        Self(Rc::new(RefCell::new(collection)))
    }

    pub fn borrow(&self) -> Ref<'_, NodeCollection> {
        self.0.borrow()
    }

    pub fn borrow_mut(&self) -> RefMut<'_, NodeCollection> {
        self.0.borrow_mut()
    }

    /// Cursor positioned before the first element.
    pub fn legacy_cursor(&self) -> LegacyCursor {
        LegacyCursor::new(Box::new(self.clone()))
    }
}

impl TraversalSource for SharedCollection {
    fn item(&self, position: usize) -> Option<NodeId> {
        self.0.borrow().get(position)
    }

    fn generation(&self) -> u64 {
        self.0.borrow().generation
    }

    fn edited_before(&self, since: u64, position: usize) -> Option<usize> {
        self.0.borrow().edited_before(since, position)
    }
}

/// Immutable snapshot backend.
impl TraversalSource for Rc<[NodeId]> {
    fn item(&self, position: usize) -> Option<NodeId> {
        self.get(position).copied()
    }

    fn generation(&self) -> u64 {
        0
    }

    fn edited_before(&self, _since: u64, _position: usize) -> Option<usize> {
        None
    }
}

/// Diagnostic raised when a collection was edited before a live cursor's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CursorWarning {
    pub cursor_position: usize,
    pub edit_position: usize,
    pub generation: u64,
}

/// Index-based forward cursor over a polymorphic backend.
///
/// After an insert or removal before the cursor the index is *not* adjusted: a removal
/// makes the cursor skip the element that shifted into its position, an insertion
/// makes it yield the element it already returned again.
pub struct LegacyCursor {
    source: Box<dyn TraversalSource>,
    position: usize,
    creation_generation: u64,
    seen_generation: u64,
    warnings: Vec<CursorWarning>,
}

impl LegacyCursor {
    pub fn new(source: Box<dyn TraversalSource>) -> Self {
        let generation = source.generation();
        Self {
            source,
            position: 0,
            creation_generation: generation,
            seen_generation: generation,
            warnings: Vec::new(),
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn creation_generation(&self) -> u64 {
        self.creation_generation
    }

    pub fn warnings(&self) -> &[CursorWarning] {
        &self.warnings
    }

    /// Returns the element at the cursor and advances, or `None` at the end.
    pub fn legacy_next(&mut self) -> Option<NodeId> {
        let generation = self.source.generation();
        if generation != self.seen_generation {
            if debug_checks_enabled() {
                if let Some(edit_position) = self.source.edited_before(self.seen_generation, self.position) {
                    let warning = CursorWarning {
                        cursor_position: self.position,
                        edit_position,
                        generation,
                    };
                    log::warn!(
                        "collection modified at position {} before legacy cursor at {}; elements may be skipped or repeated",
                        edit_position,
                        self.position
                    );
                    self.warnings.push(warning);
                }
            }
            self.seen_generation = generation;
        }
        let item = self.source.item(self.position)?;
        self.position += 1;
        Some(item)
    }
}

impl Iterator for LegacyCursor {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        self.legacy_next()
    }
}
