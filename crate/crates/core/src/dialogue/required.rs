use crate::domain::{ActionIntent, SlotName, SlotSet};

/// Which slots an intent needs before it can run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Requirement {
    /// Every listed slot.
    All(Vec<SlotName>),
    /// Every slot of at least one group.
    AnyOf(Vec<Vec<SlotName>>),
}

impl Requirement {
    /// Every slot mentioned, in canonical order.
    pub fn slots(&self) -> Vec<SlotName> {
        let mut out: Vec<SlotName> = match self {
            Requirement::All(v) => v.clone(),
            Requirement::AnyOf(groups) => groups.iter().flatten().copied().collect(),
        };
        out.sort();
        out.dedup();
        out
    }
}

pub fn required_slots(intent: ActionIntent) -> Requirement {
    use SlotName::*;
    match intent {
        ActionIntent::Status | ActionIntent::Block | ActionIntent::Unblock => Requirement::All(vec![SignatureType, SignatureValue]),
        ActionIntent::Search => Requirement::AnyOf(vec![vec![SignatureType, SignatureValue], vec![FromDate], vec![ToDate], vec![Quantity]]),
    }
}

/// Required slots not yet provided (directly or through a binding).
///
/// Without an intent nothing else can be judged, so only the intent is
/// reported. For a disjunctive requirement nothing is missing once one group
/// is complete; otherwise every absent slot of every group is listed.
pub fn missing_slots(slots: &SlotSet) -> Vec<SlotName> {
    let Some(intent) = slots.intent else { return vec![SlotName::Intent] };
    let absent = |names: &[SlotName]| -> Vec<SlotName> { names.iter().copied().filter(|n| !slots.provides(*n)).collect() };
    match required_slots(intent) {
        Requirement::All(names) => absent(&names),
        Requirement::AnyOf(groups) => {
            if groups.iter().any(|g| absent(g).is_empty()) {
                Vec::new()
            } else {
                let mut out: Vec<SlotName> = groups.iter().flat_map(|g| absent(g)).collect();
                out.sort();
                out.dedup();
                out
            }
        }
    }
}
