//! Dataset pipeline: dedup, domain assignment, the ID and per-API OOD
//! splits, and the leakage audit.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::corpus::sample::{
    check_specs_disjoint, DomainSpec, MethodSample, ScenarioData, SplitSet,
};
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Drop samples with duplicate content hashes, keeping first occurrences in
/// input order.
pub fn dedup(samples: Vec<MethodSample>) -> Vec<MethodSample> {
    let mut seen = HashSet::new();
    samples
        .into_iter()
        .filter(|s| seen.insert(s.hash.clone()))
        .collect()
}

/// Result of partitioning a corpus into ID pool and per-domain pools.
#[derive(Debug, Default)]
pub struct DomainAssignment {
    pub id_samples: Vec<MethodSample>,
    /// Per-domain pools, in spec order.
    pub domain_samples: Vec<Vec<MethodSample>>,
    /// Samples touching two or more domains, removed entirely.
    pub discarded: usize,
}

/// Assign each sample to the single domain its sites reference, the ID pool
/// when no domain API is used, or discard it when it spans several domains.
pub fn assign_domains(
    samples: Vec<MethodSample>,
    specs: &[DomainSpec],
) -> Result<DomainAssignment> {
    check_specs_disjoint(specs)?;
    let mut out = DomainAssignment {
        id_samples: Vec::new(),
        domain_samples: vec![Vec::new(); specs.len()],
        discarded: 0,
    };
    for mut sample in samples {
        let mut touched: Vec<usize> = Vec::new();
        for site in &sample.sites {
            if let Some(d) = specs
                .iter()
                .position(|spec| spec.contains(&site.package, &site.interface))
            {
                if !touched.contains(&d) {
                    touched.push(d);
                }
            }
        }
        match touched.len() {
            0 => {
                sample.domain = None;
                out.id_samples.push(sample);
            }
            1 => {
                let d = touched[0];
                sample.domain = Some(specs[d].name.clone());
                out.domain_samples[d].push(sample);
            }
            _ => out.discarded += 1,
        }
    }
    Ok(out)
}

/// Per-API 10% test selection for one domain.
///
/// For every concrete API (interface, method) observed in the pool, 10%
/// (rounded up, at least one) of the samples manipulating it move to test;
/// a sample selected via several APIs appears in test once. `valid` is left
/// empty; the harness carves it at fine-tuning time.
pub fn split_ood(
    domain_samples: Vec<MethodSample>,
    spec: &DomainSpec,
    test_fraction: f64,
    rng: &mut Rng,
) -> Result<SplitSet> {
    if domain_samples.is_empty() {
        return Err(Error::Data(format!("domain '{}' has no samples", spec.name)));
    }
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::Data("test_fraction must be in (0, 1)".into()));
    }
    // Samples manipulating each in-spec API, in stable input order.
    let mut by_api: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, sample) in domain_samples.iter().enumerate() {
        let mut apis: Vec<(String, String)> = Vec::new();
        for site in &sample.sites {
            if spec.contains(&site.package, &site.interface) {
                let key = (site.interface.clone(), site.method.clone());
                if !apis.contains(&key) {
                    apis.push(key);
                }
            }
        }
        for key in apis {
            by_api.entry(key).or_default().push(i);
        }
    }
    let mut in_test: HashSet<usize> = HashSet::new();
    for (_, members) in by_api.iter() {
        let quota = ((members.len() as f64) * test_fraction).ceil() as usize;
        let quota = quota.max(1).min(members.len());
        for pick in rng.sample_indices(members.len(), quota) {
            in_test.insert(members[pick]);
        }
    }
    let mut split = SplitSet::default();
    for (i, sample) in domain_samples.into_iter().enumerate() {
        if in_test.contains(&i) {
            split.test.push(sample);
        } else {
            split.train.push(sample);
        }
    }
    Ok(split)
}

/// Uniform random disjoint test/valid; the remainder is train.
pub fn split_id(
    samples: Vec<MethodSample>,
    n_test: usize,
    n_valid: usize,
    rng: &mut Rng,
) -> Result<SplitSet> {
    if n_test + n_valid >= samples.len() {
        return Err(Error::Data(format!(
            "insufficient samples: need more than {} for test={} valid={}",
            n_test + n_valid,
            n_test,
            n_valid
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    let test_idx: HashSet<usize> = order[..n_test].iter().copied().collect();
    let valid_idx: HashSet<usize> = order[n_test..n_test + n_valid].iter().copied().collect();
    let mut split = SplitSet::default();
    for (i, sample) in samples.into_iter().enumerate() {
        if test_idx.contains(&i) {
            split.test.push(sample);
        } else if valid_idx.contains(&i) {
            split.valid.push(sample);
        } else {
            split.train.push(sample);
        }
    }
    Ok(split)
}

/// Reason codes for leakage violations.
pub const REASON_DOMAIN_IN_ID: &str = "domain API in ID";
pub const REASON_MULTI_DOMAIN: &str = "multi-domain sample";
pub const REASON_CROSS_SPLIT: &str = "cross-split duplicate";

/// One detected scenario-validity violation.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub hash: String,
    pub reason: String,
}

/// Audit a scenario: no ID sample may touch a domain API, no OOD sample may
/// span two domains, and no content hash may appear in two splits.
pub fn leakage_check(scenario: &ScenarioData) -> Vec<Violation> {
    let mut violations = Vec::new();
    let specs: Vec<&DomainSpec> = scenario.ood.iter().map(|(s, _)| s).collect();

    let domains_touched = |sample: &MethodSample| -> Vec<usize> {
        let mut touched = Vec::new();
        for site in &sample.sites {
            if let Some(d) = specs
                .iter()
                .position(|spec| spec.contains(&site.package, &site.interface))
            {
                if !touched.contains(&d) {
                    touched.push(d);
                }
            }
        }
        touched
    };

    for part in [&scenario.id_split.train, &scenario.id_split.valid, &scenario.id_split.test] {
        for sample in part {
            if !domains_touched(sample).is_empty() {
                violations.push(Violation {
                    hash: sample.hash.clone(),
                    reason: REASON_DOMAIN_IN_ID.to_string(),
                });
            }
        }
    }

    for (_, split) in &scenario.ood {
        for part in [&split.train, &split.valid, &split.test] {
            for sample in part {
                if domains_touched(sample).len() >= 2 {
                    violations.push(Violation {
                        hash: sample.hash.clone(),
                        reason: REASON_MULTI_DOMAIN.to_string(),
                    });
                }
            }
        }
    }

    // Cross-split duplicates over every split in the scenario.
    let mut parts: Vec<&[MethodSample]> = vec![
        &scenario.id_split.train,
        &scenario.id_split.valid,
        &scenario.id_split.test,
    ];
    for (_, split) in &scenario.ood {
        parts.push(&split.train);
        parts.push(&split.valid);
        parts.push(&split.test);
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (split_id, part) in parts.iter().enumerate() {
        for sample in part.iter() {
            match seen.get(sample.hash.as_str()) {
                Some(&other) if other != split_id => violations.push(Violation {
                    hash: sample.hash.clone(),
                    reason: REASON_CROSS_SPLIT.to_string(),
                }),
                Some(_) => {}
                None => {
                    seen.insert(sample.hash.as_str(), split_id);
                }
            }
        }
    }
    violations
}
