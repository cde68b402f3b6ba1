use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ActionIntent, SlotName, SlotSet, TimeWindow};

/// Where a slot value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Stated by the user.
    Explicit,
    /// Computed, e.g. a resolved relative date.
    Inferred,
    /// A reference to an earlier step's output.
    Bound,
}

impl Provenance {
    fn rank(self) -> u8 {
        match self {
            Provenance::Inferred => 0,
            Provenance::Explicit | Provenance::Bound => 1,
        }
    }
}

/// Slots proposed by one extraction, each with its provenance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDelta {
    pub slots: SlotSet,
    pub provenance: BTreeMap<SlotName, Provenance>,
}

impl SlotDelta {
    /// Direct values explicit, bindings bound.
    pub fn from_extraction(slots: SlotSet) -> SlotDelta {
        let provenance = SlotName::ALL
            .into_iter()
            .filter_map(|n| {
                if slots.has_direct(n) {
                    Some((n, Provenance::Explicit))
                } else if slots.bindings.contains_key(&n) {
                    Some((n, Provenance::Bound))
                } else {
                    None
                }
            })
            .collect();
        SlotDelta { slots, provenance }
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn fields(&self) -> impl Iterator<Item = SlotName> + '_ {
        self.provenance.keys().copied()
    }

    /// Replaces both window ends with computed values.
    pub fn infer_window(&mut self, window: TimeWindow) {
        self.slots.window = window;
        for (slot, value) in [(SlotName::FromDate, window.from_date), (SlotName::ToDate, window.to_date)] {
            self.slots.bindings.remove(&slot);
            match value {
                Some(_) => self.provenance.insert(slot, Provenance::Inferred),
                None => self.provenance.remove(&slot),
            };
        }
    }

    pub fn set_intent(&mut self, intent: ActionIntent) {
        self.slots.intent = Some(intent);
        self.provenance.insert(SlotName::Intent, Provenance::Explicit);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub provenance: Provenance,
    pub turn: u64,
}

/// Accumulated slots plus when and how each one was set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedSlots {
    pub slots: SlotSet,
    pub stamps: BTreeMap<SlotName, Stamp>,
}

impl TrackedSlots {
    pub fn new(slots: SlotSet, turn: u64) -> TrackedSlots {
        let delta = SlotDelta::from_extraction(slots);
        let stamps = delta.provenance.iter().map(|(n, p)| (*n, Stamp { provenance: *p, turn })).collect();
        TrackedSlots { slots: delta.slots, stamps }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("the request changed from {current} to {proposed}")]
    ConflictingIntent { current: ActionIntent, proposed: ActionIntent },
}

fn copy_slot(dst: &mut SlotSet, src: &SlotSet, slot: SlotName) {
    dst.clear(slot);
    match slot {
        SlotName::Intent => dst.intent = src.intent,
        SlotName::SignatureType => dst.signature_type = src.signature_type,
        SlotName::SignatureValue => dst.signature_value = src.signature_value.clone(),
        SlotName::FromDate => dst.window.from_date = src.window.from_date,
        SlotName::ToDate => dst.window.to_date = src.window.to_date,
        SlotName::Quantity => dst.quantity = src.quantity,
    }
    if let Some(r) = src.bindings.get(&slot) {
        dst.bindings.insert(slot, r.clone());
    }
}

/// Applies `delta`, made in `turn`, to `acc`.
///
/// A delta field replaces the accumulated one when it comes from a later
/// turn, or from the same turn with at least the same rank (explicit and
/// bound outrank inferred). Absent delta fields leave `acc` alone. An intent
/// different from an accumulated one is a conflict, never an overwrite.
pub fn merge(acc: &TrackedSlots, delta: &SlotDelta, turn: u64) -> Result<TrackedSlots, MergeError> {
    if let (Some(current), Some(proposed)) = (acc.slots.intent, delta.slots.intent) {
        if current != proposed {
            return Err(MergeError::ConflictingIntent { current, proposed });
        }
    }
    let mut out = acc.clone();
    for (slot, prov) in &delta.provenance {
        let replace = match acc.stamps.get(slot) {
            None => true,
            Some(old) => turn > old.turn || (turn == old.turn && prov.rank() >= old.provenance.rank()),
        };
        if replace {
            copy_slot(&mut out.slots, &delta.slots, *slot);
            out.stamps.insert(*slot, Stamp { provenance: *prov, turn: turn.max(acc.stamps.get(slot).map_or(0, |s| s.turn)) });
        }
    }
    Ok(out)
}
