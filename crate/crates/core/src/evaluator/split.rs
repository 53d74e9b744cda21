use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::catalog::InteractionSequence;

/// A context (oldest first) and the item that followed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub user_id: String,
    pub context: Vec<String>,
    pub target: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalSplit {
    pub train: Vec<InteractionSequence>,
    pub valid: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
    /// Users with fewer than three interactions: kept whole in `train`.
    pub flagged: Vec<String>,
}

impl EvalSplit {
    /// One case per training sequence of length ≥ 2: its last item given the rest.
    pub fn train_cases(&self) -> Vec<EvalCase> {
        self.train
            .iter()
            .filter(|s| s.item_ids.len() >= 2)
            .map(|s| {
                let (last, context) = s.item_ids.split_last().expect("non-empty");
                EvalCase {
                    user_id: s.user_id.clone(),
                    context: context.to_vec(),
                    target: last.clone(),
                }
            })
            .collect()
    }
}

/// Last item tests, second to last validates, the rest trains.
pub fn leave_one_out(sequences: &[InteractionSequence]) -> EvalSplit {
    let mut split = EvalSplit::default();
    for s in sequences {
        let items = &s.item_ids;
        let n = items.len();
        if n < 3 {
            split.flagged.push(s.user_id.clone());
            split.train.push(s.clone());
            continue;
        }
        split.train.push(InteractionSequence {
            user_id: s.user_id.clone(),
            item_ids: items[..n - 2].to_vec(),
        });
        split.valid.push(EvalCase {
            user_id: s.user_id.clone(),
            context: items[..n - 2].to_vec(),
            target: items[n - 2].clone(),
        });
        split.test.push(EvalCase {
            user_id: s.user_id.clone(),
            context: items[..n - 1].to_vec(),
            target: items[n - 1].clone(),
        });
    }
    if !split.flagged.is_empty() {
        log::warn!("{} users with fewer than 3 interactions kept for training only", split.flagged.len());
    }
    split
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ColdStartSplit {
    pub in_set: Vec<EvalCase>,
    pub cold: Vec<EvalCase>,
}

/// Partition test cases by whether the target occurs in any training sequence.
pub fn cold_start_split(split: &EvalSplit) -> ColdStartSplit {
    let seen: HashSet<&str> = split
        .train
        .iter()
        .flat_map(|s| s.item_ids.iter().map(String::as_str))
        .collect();
    let (in_set, cold) = split.test.iter().cloned().partition(|c| seen.contains(c.target.as_str()));
    ColdStartSplit { in_set, cold }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(user: &str, items: &[&str]) -> InteractionSequence {
        InteractionSequence::new(user, items.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn four_item_example() {
        let s = leave_one_out(&[seq("u", &["i1", "i2", "i3", "i4"])]);
        assert_eq!(s.train[0].item_ids, ["i1", "i2"]);
        assert_eq!(s.valid[0].context, ["i1", "i2"]);
        assert_eq!(s.valid[0].target, "i3");
        assert_eq!(s.test[0].context, ["i1", "i2", "i3"]);
        assert_eq!(s.test[0].target, "i4");
        assert!(s.flagged.is_empty());
    }

    #[test]
    fn short_sequences_flagged() {
        let s = leave_one_out(&[seq("a", &["i1", "i2"]), seq("b", &["i1", "i2", "i3"])]);
        assert_eq!(s.flagged, ["a"]);
        assert_eq!(s.train[0].item_ids, ["i1", "i2"]);
        assert_eq!(s.valid.len(), 1);
        assert_eq!(s.test.len(), 1);
        assert_eq!(leave_one_out(&[seq("a", &["i1", "i2"]), seq("b", &["i1", "i2", "i3"])]), s);
    }

    #[test]
    fn cold_start_partitions() {
        let data = [seq("a", &["i1", "i2", "i3", "i4"]), seq("b", &["i1", "i2", "i5", "i1"])];
        let split = leave_one_out(&data);
        let cs = cold_start_split(&split);
        assert_eq!(cs.cold.iter().map(|c| c.target.as_str()).collect::<Vec<_>>(), ["i4"]);
        assert_eq!(cs.in_set.iter().map(|c| c.target.as_str()).collect::<Vec<_>>(), ["i1"]);
        assert_eq!(cs.in_set.len() + cs.cold.len(), split.test.len());
    }

    #[test]
    fn train_cases_use_last_item() {
        let split = leave_one_out(&[seq("a", &["i1", "i2", "i3", "i4", "i5"])]);
        let cases = split.train_cases();
        assert_eq!(cases[0].context, ["i1", "i2"]);
        assert_eq!(cases[0].target, "i3");
    }
}
