use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed;

/// Limited incremental split: train on campaigns `0..=k`, test on `k+1`.
pub fn split_incremental(dataset: &Dataset, k: usize) -> Result<(Dataset, Dataset)> {
    let order = dataset.campaign_order();
    if k + 1 >= order.len() {
        return Err(Error::SplitOutOfRange {
            k,
            campaigns: order.len(),
        });
    }
    let train: Vec<&str> = order[..=k].iter().map(String::as_str).collect();
    let test = [order[k + 1].as_str()];
    Ok((
        dataset.select_campaigns(&train)?,
        dataset.select_campaigns(&test)?,
    ))
}

/// Holds out `round(fraction · n_s)` samples of every stratum `s` (strata
/// given by `key`), chosen by a seeded shuffle. Returns `(kept, held_out)`,
/// each in original sample order.
pub fn stratified_holdout<K, F>(
    dataset: &Dataset,
    fraction: f64,
    seed_value: u64,
    tag: &str,
    key: F,
) -> Result<(Dataset, Dataset)>
where
    K: Ord,
    F: Fn(&Sample) -> K,
{
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction {fraction} must lie in [0, 1)"
        )));
    }
    let mut strata: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        strata.entry(key(s)).or_default().push(i);
    }
    let mut rng = seed::stream(seed_value, tag);
    let mut held = vec![false; dataset.len()];
    for idx in strata.values_mut() {
        idx.shuffle(&mut rng);
        let take = seed::round_half_away(fraction * idx.len() as f64) as usize;
        // never empty a stratum entirely
        let take = take.min(idx.len().saturating_sub(1));
        for &i in &idx[..take] {
            held[i] = true;
        }
    }
    let (mut kept, mut out) = (Vec::new(), Vec::new());
    for (i, s) in dataset.samples().iter().enumerate() {
        if held[i] {
            out.push(s.clone());
        } else {
            kept.push(s.clone());
        }
    }
    Ok((dataset.from_subset(kept)?, dataset.from_subset(out)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn four_campaigns() -> Dataset {
        let samples = (0..40)
            .map(|i| Sample {
                text: format!("text {i}"),
                label: i % 2,
                campaign: format!("D{}", i / 10),
                position: i as u64,
            })
            .collect();
        Dataset::new(samples, 2).unwrap()
    }

    #[test]
    fn incremental_split_trains_on_prefix() {
        let d = four_campaigns();
        let (train, test) = split_incremental(&d, 1).unwrap();
        assert_eq!(
            train.campaign_order(),
            &["D0".to_string(), "D1".to_string()]
        );
        assert_eq!(test.campaign_order(), &["D2".to_string()]);
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 10);
    }

    #[test]
    fn base_case_is_pairwise() {
        let (train, test) = split_incremental(&four_campaigns(), 0).unwrap();
        assert_eq!(train.campaign_order(), &["D0".to_string()]);
        assert_eq!(test.campaign_order(), &["D1".to_string()]);
    }

    #[test]
    fn out_of_range_k_is_an_error() {
        assert!(matches!(
            split_incremental(&four_campaigns(), 3),
            Err(Error::SplitOutOfRange { k: 3, campaigns: 4 })
        ));
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let d = four_campaigns();
        let (kept, held) =
            stratified_holdout(&d, 0.2, 1, "t", |s| (s.campaign.clone(), s.label)).unwrap();
        assert_eq!(held.len(), 8);
        assert_eq!(kept.len() + held.len(), d.len());
        for s in held.samples() {
            assert!(!kept.samples().contains(s));
        }
    }

    proptest! {
        #[test]
        fn incremental_split_never_repeats_a_campaign(k in 0usize..3) {
            let (train, test) = split_incremental(&four_campaigns(), k).unwrap();
            prop_assert_eq!(test.campaign_order().len(), 1);
            let mut all: Vec<&String> = train.campaign_order().iter().chain(test.campaign_order()).collect();
            let n = all.len();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
        }
    }
}
