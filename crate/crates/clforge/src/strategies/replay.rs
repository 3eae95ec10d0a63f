//! Replay buffer with per-experience quota rebalancing, plus the unbounded
//! cumulative variant.

use crate::corpus::MethodSample;
use crate::numcore::Rng;

/// Bounded store of past-experience samples. `capacity == usize::MAX` is the
/// cumulative (unbounded) variant.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub capacity: usize,
    items: Vec<(MethodSample, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &MethodSample> {
        self.items.iter().map(|(s, _)| s)
    }

    /// Items per experience index, in experience order.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for (_, exp) in &self.items {
            match counts.iter_mut().find(|(e, _)| e == exp) {
                Some((_, c)) => *c += 1,
                None => counts.push((*exp, 1)),
            }
        }
        counts.sort_by_key(|(e, _)| *e);
        counts
    }
}

/// Even split of `capacity` over experiences with limited availability:
/// start from floor/ceil shares and water-fill the shortfall.
fn quotas(capacity: usize, avail: &[usize]) -> Vec<usize> {
    let mut quota = vec![0usize; avail.len()];
    let mut remaining = capacity.min(avail.iter().sum());
    while remaining > 0 {
        let open: Vec<usize> =
            (0..avail.len()).filter(|&i| quota[i] < avail[i]).collect();
        if open.is_empty() {
            break;
        }
        let share = remaining / open.len();
        let extra = remaining % open.len();
        if share == 0 {
            for (rank, &i) in open.iter().enumerate() {
                if rank < extra {
                    quota[i] += 1;
                }
            }
            break;
        }
        let mut used = 0;
        for (rank, &i) in open.iter().enumerate() {
            let want = share + usize::from(rank < extra);
            let add = want.min(avail[i] - quota[i]);
            quota[i] += add;
            used += add;
        }
        remaining -= used;
        if used == 0 {
            break;
        }
    }
    quota
}

/// Rebalance at the end of an experience: every experience seen so far gets
/// an even quota; the new experience fills its slots by uniform sampling
/// without replacement, older experiences evict uniformly at random down to
/// quota. Shortfalls (small experiences) are reallocated to the others.
pub fn replay_update(
    buffer: &mut ReplayBuffer,
    experience_train: &[MethodSample],
    experience_index: usize,
    rng: &mut Rng,
) {
    if buffer.capacity == usize::MAX {
        // Cumulative: store everything.
        for s in experience_train {
            buffer.items.push((s.clone(), experience_index));
        }
        return;
    }
    let mut groups: Vec<(usize, Vec<MethodSample>)> = Vec::new();
    for (sample, exp) in buffer.items.drain(..) {
        match groups.iter_mut().find(|(e, _)| *e == exp) {
            Some((_, g)) => g.push(sample),
            None => groups.push((exp, vec![sample])),
        }
    }
    groups.push((experience_index, Vec::new()));
    groups.sort_by_key(|(e, _)| *e);

    let avail: Vec<usize> = groups
        .iter()
        .map(|(e, g)| if *e == experience_index { experience_train.len() } else { g.len() })
        .collect();
    let quota = quotas(buffer.capacity, &avail);

    for ((exp, group), q) in groups.into_iter().zip(quota) {
        if exp == experience_index {
            let mut picks = rng.sample_indices(experience_train.len(), q);
            picks.sort_unstable();
            for i in picks {
                buffer.items.push((experience_train[i].clone(), exp));
            }
        } else if group.len() > q {
            let mut keep = rng.sample_indices(group.len(), q);
            keep.sort_unstable();
            for i in keep {
                buffer.items.push((group[i].clone(), exp));
            }
        } else {
            for s in group {
                buffer.items.push((s, exp));
            }
        }
    }
    assert!(buffer.items.len() <= buffer.capacity, "replay buffer exceeded capacity");
}

/// Training view: current experience data followed by every buffered item.
pub fn replay_view(buffer: &ReplayBuffer, current_train: &[MethodSample]) -> Vec<MethodSample> {
    let mut view = current_train.to_vec();
    view.extend(buffer.samples().cloned());
    view
}
