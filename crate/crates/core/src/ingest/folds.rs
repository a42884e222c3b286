use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::window::gap;
use super::{IngestError, Label, LabelRules, Seizure, WindowPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    /// Indices into the recording's seizure list.
    pub test_seizures: Vec<usize>,
    pub train_pre: Vec<usize>,
    pub train_inter: Vec<usize>,
    /// Windows closer to a test seizure than the exclusion distance.
    pub excluded: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

/// Seizure-wise cross-validation. Seizures are shuffled with `seed` and
/// dealt round-robin into `min(k, seizures)` folds. A fold's training set
/// drops every window within `max(margin, horizon)` seconds of one of its
/// test seizures; the remaining labeled windows are shared.
pub fn split_folds(
    plan: &WindowPlan,
    labels: &[Label],
    seizures: &[Seizure],
    rules: &LabelRules,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, IngestError> {
    if seizures.is_empty() {
        return Err(IngestError::Invalid("no seizures: folds cannot be built".into()));
    }
    if k == 0 {
        return Err(IngestError::Invalid("fold count must be at least 1".into()));
    }
    if labels.len() != plan.count() {
        return Err(IngestError::Invalid(format!(
            "{} labels for {} windows",
            labels.len(),
            plan.count()
        )));
    }
    let k = if k > seizures.len() {
        log::warn!("{} seizures: reducing fold count from {k}", seizures.len());
        seizures.len()
    } else {
        k
    };
    let mut order: Vec<usize> = (0..seizures.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let zone = rules.margin_s.max(rules.horizon_s);
    let folds = (0..k)
        .map(|f| {
            let mut test: Vec<usize> = order.iter().copied().skip(f).step_by(k).collect();
            test.sort_unstable();
            let mut fold = Fold {
                test_seizures: test,
                train_pre: Vec::new(),
                train_inter: Vec::new(),
                excluded: Vec::new(),
            };
            for (i, label) in labels.iter().enumerate() {
                let (s, e) = plan.span_s(i);
                if fold.test_seizures.iter().any(|&j| gap(s, e, &seizures[j]) < zone) {
                    fold.excluded.push(i);
                    continue;
                }
                match label {
                    Label::Preictal => fold.train_pre.push(i),
                    Label::Interictal => fold.train_inter.push(i),
                    Label::Excluded => {}
                }
            }
            fold
        })
        .collect();
    Ok(FoldPlan { k, folds })
}
