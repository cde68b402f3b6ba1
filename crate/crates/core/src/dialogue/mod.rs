//! Dialogue state tracking: plan, extract, merge, ask for what is missing.

mod clock;
mod engine;
mod merge;
mod parse;
mod relative;
mod required;
mod state;

pub use clock::{Clock, FixedClock, SystemClock};
pub use engine::{parse_decision, Decision, Engine, EngineConfig, EngineError};
pub use merge::{merge, MergeError, Provenance, SlotDelta, Stamp, TrackedSlots};
pub use parse::{json_payload, parse_plan, parse_slots, ParseError};
pub use relative::resolve_relative;
pub use required::{missing_slots, required_slots, Requirement};
pub use state::{Awaiting, DialogState};
