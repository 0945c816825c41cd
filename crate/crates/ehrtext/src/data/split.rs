//! Leakage-safe index splits: five disjoint downstream subsets, each with
//! train/validation/test lists, and a pretraining pool made of everything
//! left over. Pretraining therefore never sees a downstream index.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCfg {
    pub n_subsets: usize,
    /// train + validation size per subset, before the val fraction is cut
    pub train_val: usize,
    pub test: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitCfg {
    /// Five subsets of 600 train+val (80/20) and 250 test each.
    fn default() -> Self {
        SplitCfg {
            n_subsets: 5,
            train_val: 600,
            test: 250,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitCfg {
    /// Default proportions scaled to the dataset: 12% of rows as train+val
    /// and 5% as test per subset, matching the 600/250-of-5000 layout and
    /// always leaving 15% as the pretraining pool.
    pub fn scaled(n_total: usize, seed: u64) -> Result<SplitCfg> {
        let cfg = SplitCfg {
            n_subsets: 5,
            train_val: n_total * 3 / 25,
            test: n_total / 20,
            val_fraction: 0.2,
            seed,
        };
        if cfg.train_val < 10 || cfg.test < 4 {
            return Err(Error::Data(format!(
                "{} pairs is too few for the scaled split; need at least 100",
                n_total
            )));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub subsets: Vec<SubsetSplit>,
    pub pretrain_pool: Vec<usize>,
}

impl SplitPlan {
    /// Exhaustive disjointness check: no index in two subsets, pool
    /// disjoint from every subset, train/val/test disjoint within a subset.
    pub fn validate(&self, n_total: usize) -> Result<()> {
        let pool: BTreeSet<usize> = self.pretrain_pool.iter().copied().collect();
        if pool.len() != self.pretrain_pool.len() {
            return Err(Error::Data("pretrain pool has duplicates".to_string()));
        }
        let mut claimed: BTreeSet<usize> = BTreeSet::new();
        for (s, sub) in self.subsets.iter().enumerate() {
            let mut within: BTreeSet<usize> = BTreeSet::new();
            for &i in sub.train.iter().chain(&sub.val).chain(&sub.test) {
                if i >= n_total {
                    return Err(Error::Data(format!(
                        "subset {s} index {i} out of range for {n_total} pairs"
                    )));
                }
                if !within.insert(i) {
                    return Err(Error::Data(format!(
                        "subset {s} repeats index {i} across train/val/test"
                    )));
                }
                if pool.contains(&i) {
                    return Err(Error::Data(format!(
                        "index {i} is in both subset {s} and the pretrain pool"
                    )));
                }
                if !claimed.insert(i) {
                    return Err(Error::Data(format!(
                        "index {i} appears in two subsets"
                    )));
                }
            }
        }
        if let Some(&i) = pool.iter().find(|&&i| i >= n_total) {
            return Err(Error::Data(format!(
                "pool index {i} out of range for {n_total} pairs"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<SplitPlan> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Shuffles all indices once, then deals each subset its train/val/test
/// slice in order; the remainder becomes the pretraining pool.
pub fn make_split_plan(n_total: usize, cfg: &SplitCfg) -> Result<SplitPlan> {
    if cfg.n_subsets == 0 || cfg.train_val == 0 || cfg.test == 0 {
        return Err(Error::Config(
            "subset count and sizes must be positive".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config(format!(
            "val fraction must be in [0, 1), got {}",
            cfg.val_fraction
        )));
    }
    let per_subset = cfg.train_val + cfg.test;
    let required = cfg.n_subsets * per_subset;
    if required > n_total {
        return Err(Error::Data(format!(
            "split needs {required} pairs ({} subsets of {per_subset}) but only {n_total} available",
            cfg.n_subsets
        )));
    }

    let mut indices: Vec<usize> = (0..n_total).collect();
    let mut r = crate::rng::stream(cfg.seed, "split");
    indices.shuffle(&mut r);

    let n_val = (cfg.train_val as f64 * cfg.val_fraction).round() as usize;
    let n_train = cfg.train_val - n_val;
    let mut cursor = 0;
    let mut subsets = Vec::with_capacity(cfg.n_subsets);
    for _ in 0..cfg.n_subsets {
        let train = indices[cursor..cursor + n_train].to_vec();
        cursor += n_train;
        let val = indices[cursor..cursor + n_val].to_vec();
        cursor += n_val;
        let test = indices[cursor..cursor + cfg.test].to_vec();
        cursor += cfg.test;
        subsets.push(SubsetSplit { train, val, test });
    }
    let plan = SplitPlan {
        subsets,
        pretrain_pool: indices[cursor..].to_vec(),
    };
    plan.validate(n_total)?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_disjoint_and_sized() {
        let plan = make_split_plan(5000, &SplitCfg::default()).unwrap();
        assert_eq!(plan.subsets.len(), 5);
        for sub in &plan.subsets {
            assert_eq!(sub.train.len(), 480);
            assert_eq!(sub.val.len(), 120);
            assert_eq!(sub.test.len(), 250);
        }
        assert_eq!(plan.pretrain_pool.len(), 5000 - 5 * 850);
        plan.validate(5000).unwrap();
        let mut all: Vec<usize> = plan.pretrain_pool.clone();
        for s in &plan.subsets {
            all.extend(s.train.iter().chain(&s.val).chain(&s.test));
        }
        all.sort_unstable();
        assert_eq!(all, (0..5000).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_plan() {
        let cfg = SplitCfg {
            seed: 12,
            ..SplitCfg::default()
        };
        let p1 = make_split_plan(5000, &cfg).unwrap();
        let p2 = make_split_plan(5000, &cfg).unwrap();
        assert_eq!(p1, p2);
        let p3 = make_split_plan(
            5000,
            &SplitCfg {
                seed: 13,
                ..SplitCfg::default()
            },
        )
        .unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn insufficient_data_errors_with_counts() {
        let err = make_split_plan(4000, &SplitCfg::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("4250"), "{msg}");
        assert!(msg.contains("4000"), "{msg}");
    }

    #[test]
    fn json_round_trip() {
        let plan = make_split_plan(900, &SplitCfg {
            n_subsets: 2,
            train_val: 100,
            test: 50,
            val_fraction: 0.2,
            seed: 3,
        })
        .unwrap();
        let back = SplitPlan::from_json(&plan.to_json().unwrap()).unwrap();
        assert_eq!(plan, back);
    }

    #[test]
    fn validate_catches_leakage() {
        let mut plan = make_split_plan(900, &SplitCfg {
            n_subsets: 2,
            train_val: 100,
            test: 50,
            val_fraction: 0.2,
            seed: 3,
        })
        .unwrap();
        let leaked = plan.subsets[0].train[0];
        plan.pretrain_pool.push(leaked);
        assert!(plan.validate(900).is_err());
    }

    #[test]
    fn scaled_matches_reference_layout() {
        let cfg = SplitCfg::scaled(5000, 3).unwrap();
        assert_eq!((cfg.n_subsets, cfg.train_val, cfg.test), (5, 600, 250));
        let cfg = SplitCfg::scaled(1000, 3).unwrap();
        assert_eq!((cfg.train_val, cfg.test), (120, 50));
        let plan = make_split_plan(1000, &cfg).unwrap();
        assert_eq!(plan.pretrain_pool.len(), 1000 - 5 * 170);
        assert!(SplitCfg::scaled(80, 3).is_err());
    }
}
