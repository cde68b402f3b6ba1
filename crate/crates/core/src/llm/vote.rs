use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::to_canonical_string;

/// Majority under canonical-serialization equality; ties go to the smallest serialization.
///
/// `None` only for an empty slice.
pub fn vote<T: Serialize + Clone>(candidates: &[T]) -> Option<T> {
    let mut tally: BTreeMap<String, (usize, &T)> = BTreeMap::new();
    for c in candidates {
        let key = to_canonical_string(c).expect("candidate serializes");
        tally.entry(key).or_insert((0, c)).0 += 1;
    }
    // BTreeMap iterates keys ascending, so the first maximum is the smallest key
    let mut best: Option<(usize, &T)> = None;
    for (count, c) in tally.into_values() {
        if best.is_none_or(|(n, _)| count > n) {
            best = Some((count, c));
        }
    }
    best.map(|(_, c)| c.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionIntent, SignatureType, SlotSet};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn slots(value: &str) -> SlotSet {
        SlotSet {
            signature_type: Some(SignatureType::Ip),
            signature_value: Some(value.to_string()),
            ..SlotSet::with_intent(ActionIntent::Status)
        }
    }

    #[test]
    fn majority_and_tie_break() {
        let a = slots("1.1.1.1");
        let b = slots("2.2.2.2");
        assert_eq!(vote(&[a.clone(), a.clone(), a.clone()]), Some(a.clone()));
        assert_eq!(vote(&[a.clone(), b.clone(), a.clone()]), Some(a.clone()));
        assert_eq!(vote(&[b.clone(), b.clone(), a.clone()]), Some(b.clone()));
        // tie: the smaller canonical serialization wins, in either order
        let (small, large) = {
            let sa = to_canonical_string(&a).unwrap();
            let sb = to_canonical_string(&b).unwrap();
            if sa < sb { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) }
        };
        assert_eq!(vote(&[small.clone(), large.clone()]), Some(small.clone()));
        assert_eq!(vote(&[large, small.clone()]), Some(small));
        assert_eq!(vote::<SlotSet>(&[]), None);
    }

    proptest! {
        #[test]
        fn permutation_invariant(values in prop::collection::vec(0u8..4, 1..8), seed in any::<u64>()) {
            let cands: Vec<SlotSet> = values.iter().map(|v| slots(&format!("10.0.0.{v}"))).collect();
            let mut shuffled = cands.clone();
            shuffled.shuffle(&mut StdRng::seed_from_u64(seed));
            prop_assert_eq!(vote(&cands), vote(&shuffled));
        }
    }
}
