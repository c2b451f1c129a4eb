//! Many-to-one matching of pending tasks to MEC servers.
//!
//! Preferences come from trial negotiations: a task ranks servers by its QoE
//! under the trial deal, a server ranks tasks by its revenue. The matching
//! itself is a deferred-acceptance loop: every unmatched task proposes to its
//! best untried server; a server keeps its most preferred proposals up to its
//! idle-core count, dropping least-preferred tasks while the summed trial
//! allocations exceed its available cycles; dropped tasks strike the server
//! from their lists and propose onward. Matched trial deals are committed
//! unchanged.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::bargain::{negotiate, BargainConfig, BargainError, MdView, NegotiationMeter, ServerView, TaskView};
use crate::cost::Deal;

/// One task entering the slot's matching pool, with its per-server uplink
/// rates.
#[derive(Debug, Clone)]
pub struct MatchCandidate {
    pub seq: u32,
    pub md: MdView,
    pub task: TaskView,
    pub rates: BTreeMap<u32, f64>,
}

/// Preference lists plus the cached trial deals that produced them.
#[derive(Debug, Clone, Default)]
pub struct PreferenceLists {
    /// Task seqs in ascending order.
    pub tasks: Vec<u32>,
    /// Per task: servers in descending trial-QoE order.
    pub task_lists: BTreeMap<u32, Vec<u32>>,
    /// Per server: task seqs in descending trial-revenue order.
    pub server_lists: BTreeMap<u32, Vec<u32>>,
    /// Trial deal per viable (task, server) pair.
    pub deals: BTreeMap<(u32, u32), Deal>,
}

impl PreferenceLists {
    pub fn md_value(&self, task: u32, server: u32) -> Option<f64> {
        self.deals.get(&(task, server)).map(|d| d.md_utility)
    }

    pub fn server_value(&self, server: u32, task: u32) -> Option<f64> {
        self.deals.get(&(task, server)).map(|d| d.server_utility)
    }
}

/// Runs a trial negotiation for every (pending task, server) pair and builds
/// both preference sides. Pairs without a viable deal are left off the lists.
pub fn build_preferences(
    candidates: &[MatchCandidate],
    servers: &[ServerView],
    cfg: &BargainConfig,
    meter: &mut NegotiationMeter,
) -> PreferenceLists {
    let mut prefs = PreferenceLists::default();
    for cand in candidates {
        prefs.tasks.push(cand.seq);
        prefs.task_lists.insert(cand.seq, Vec::new());
        for server in servers {
            let Some(&rate) = cand.rates.get(&server.id) else {
                continue;
            };
            match negotiate(&cand.md, server, &cand.task, rate, cfg, meter) {
                Ok(deal) => {
                    prefs.deals.insert((cand.seq, server.id), deal);
                }
                Err(
                    BargainError::NoViableTrade
                    | BargainError::InfeasibleAllocation
                    | BargainError::NoConsensus
                    | BargainError::DegenerateDiscounts
                    | BargainError::NoIdleCore,
                ) => {}
            }
        }
    }
    prefs.tasks.sort_unstable();
    for cand in candidates {
        let mut list: Vec<u32> = servers
            .iter()
            .map(|s| s.id)
            .filter(|&s| prefs.deals.contains_key(&(cand.seq, s)))
            .collect();
        list.sort_by(|&a, &b| {
            let va = prefs.md_value(cand.seq, a).unwrap();
            let vb = prefs.md_value(cand.seq, b).unwrap();
            vb.partial_cmp(&va).unwrap().then(a.cmp(&b))
        });
        prefs.task_lists.insert(cand.seq, list);
    }
    for server in servers {
        let mut list: Vec<u32> = prefs
            .tasks
            .iter()
            .copied()
            .filter(|&t| prefs.deals.contains_key(&(t, server.id)))
            .collect();
        list.sort_by(|&a, &b| {
            let va = prefs.server_value(server.id, a).unwrap();
            let vb = prefs.server_value(server.id, b).unwrap();
            vb.partial_cmp(&va).unwrap().then(a.cmp(&b))
        });
        prefs.server_lists.insert(server.id, list);
    }
    prefs
}

/// Admission limits one server applies during a matching round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingCap {
    pub server: u32,
    /// Simultaneous new admissions this slot (idle cores, or 1 for the
    /// one-to-one variant).
    pub max_admissions: u32,
    /// Cycle budget for the slot's new admissions.
    pub cycle_cap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub assignment: BTreeMap<u32, u32>,
    pub per_server: BTreeMap<u32, Vec<u32>>,
    pub unmatched: Vec<u32>,
    /// Proposals consumed; bounded by the total preference-list length.
    pub proposals: u32,
}

/// Deferred-acceptance loop over the built preferences.
pub fn run_matching(prefs: &PreferenceLists, caps: &[MatchingCap]) -> MatchOutcome {
    let cap_of: BTreeMap<u32, MatchingCap> = caps.iter().map(|c| (c.server, *c)).collect();
    let mut next_idx: BTreeMap<u32, usize> = prefs.tasks.iter().map(|&t| (t, 0)).collect();
    let mut held: BTreeMap<u32, Vec<u32>> = cap_of.keys().map(|&s| (s, Vec::new())).collect();
    let mut free: BTreeSet<u32> = prefs.tasks.iter().copied().collect();
    let mut proposals_used = 0u32;

    loop {
        // Every free task with untried servers proposes to its best one.
        let mut proposals: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        let mut proposed = Vec::new();
        for &t in &free {
            let list = &prefs.task_lists[&t];
            let idx = next_idx[&t];
            if idx < list.len() {
                proposals.entry(list[idx]).or_default().push(t);
                *next_idx.get_mut(&t).unwrap() += 1;
                proposals_used += 1;
                proposed.push(t);
            }
        }
        if proposed.is_empty() {
            break;
        }
        for t in proposed {
            free.remove(&t);
        }
        for (server, newcomers) in proposals {
            let Some(cap) = cap_of.get(&server) else {
                // Server absent from this round's capacity set rejects all.
                for t in newcomers {
                    free.insert(t);
                }
                continue;
            };
            let mut pool = held[&server].clone();
            pool.extend(newcomers);
            pool.sort_by(|&a, &b| {
                let va = prefs.server_value(server, a).unwrap();
                let vb = prefs.server_value(server, b).unwrap();
                vb.partial_cmp(&va).unwrap().then(a.cmp(&b))
            });
            let mut rejected = pool.split_off((cap.max_admissions as usize).min(pool.len()));
            let mut load: f64 = pool
                .iter()
                .map(|&t| prefs.deals[&(t, server)].allocation)
                .sum();
            while load > cap.cycle_cap * (1.0 + 1e-12) {
                let t = pool.pop().expect("load positive implies nonempty pool");
                load -= prefs.deals[&(t, server)].allocation;
                rejected.push(t);
            }
            for t in rejected {
                free.insert(t);
            }
            held.insert(server, pool);
        }
    }

    let mut outcome = MatchOutcome {
        proposals: proposals_used,
        ..Default::default()
    };
    for (&server, tasks) in &held {
        for &t in tasks {
            outcome.assignment.insert(t, server);
        }
        let mut sorted = tasks.clone();
        sorted.sort_unstable();
        outcome.per_server.insert(server, sorted);
    }
    outcome.unmatched = prefs
        .tasks
        .iter()
        .copied()
        .filter(|t| !outcome.assignment.contains_key(t))
        .collect();
    outcome
}

/// A task and a server that would both rather trade with each other than
/// stay with the produced matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockingPair {
    pub task: u32,
    pub server: u32,
}

/// Scans for a blocking pair: a task preferring server `j` over its current
/// assignment where `j` either has spare capacity for the task's trial
/// allocation or prefers the task to someone it holds (and can afford the
/// swap). Returns the first witness in deterministic order.
pub fn is_stable(
    outcome: &MatchOutcome,
    prefs: &PreferenceLists,
    caps: &[MatchingCap],
) -> Option<BlockingPair> {
    let cap_of: BTreeMap<u32, &MatchingCap> = caps.iter().map(|c| (c.server, c)).collect();
    let mut load: BTreeMap<u32, f64> = BTreeMap::new();
    for (&t, &s) in &outcome.assignment {
        *load.entry(s).or_insert(0.0) += prefs.deals[&(t, s)].allocation;
    }
    for &t in &prefs.tasks {
        let list = &prefs.task_lists[&t];
        let current_rank = outcome
            .assignment
            .get(&t)
            .and_then(|s| list.iter().position(|&x| x == *s))
            .unwrap_or(list.len());
        for &server in &list[..current_rank] {
            let Some(cap) = cap_of.get(&server) else {
                continue;
            };
            let matched = outcome.per_server.get(&server).cloned().unwrap_or_default();
            let used = load.get(&server).copied().unwrap_or(0.0);
            let need = prefs.deals[&(t, server)].allocation;
            let spare = (matched.len() as u32) < cap.max_admissions
                && used + need <= cap.cycle_cap * (1.0 + 1e-12);
            let value = prefs.server_value(server, t).unwrap();
            let swap = matched.iter().any(|&other| {
                let other_value = prefs.server_value(server, other).unwrap();
                let other_alloc = prefs.deals[&(other, server)].allocation;
                value > other_value && used - other_alloc + need <= cap.cycle_cap * (1.0 + 1e-12)
            });
            if spare || swap {
                return Some(BlockingPair { task: t, server });
            }
        }
    }
    None
}

#[derive(Debug, Error, PartialEq)]
pub enum MatchingError {
    #[error("instance too large to enumerate ({tasks} tasks x {servers} servers)")]
    InstanceTooLarge { tasks: usize, servers: usize },
}

const PARETO_TASK_CAP: usize = 6;
const PARETO_SERVER_CAP: usize = 3;

/// Exhaustively checks weak Pareto optimality of the produced matching: no
/// feasible alternative assignment may strictly improve every matched task's
/// QoE and every matched server's summed revenue simultaneously.
pub fn is_weak_pareto(
    outcome: &MatchOutcome,
    prefs: &PreferenceLists,
    caps: &[MatchingCap],
) -> Result<bool, MatchingError> {
    if prefs.tasks.len() > PARETO_TASK_CAP || caps.len() > PARETO_SERVER_CAP {
        return Err(MatchingError::InstanceTooLarge {
            tasks: prefs.tasks.len(),
            servers: caps.len(),
        });
    }
    let matched_tasks: Vec<u32> = outcome.assignment.keys().copied().collect();
    if matched_tasks.is_empty() {
        return Ok(true);
    }
    let matched_servers: Vec<u32> = outcome
        .per_server
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(&s, _)| s)
        .collect();
    let orig_task_u: BTreeMap<u32, f64> = outcome
        .assignment
        .iter()
        .map(|(&t, &s)| (t, prefs.deals[&(t, s)].md_utility))
        .collect();
    let orig_server_u: BTreeMap<u32, f64> = matched_servers
        .iter()
        .map(|&s| {
            let sum = outcome.per_server[&s]
                .iter()
                .map(|&t| prefs.deals[&(t, s)].server_utility)
                .sum();
            (s, sum)
        })
        .collect();

    // Mixed-radix product over per-task choices (unmatched or a viable server).
    let tasks = &prefs.tasks;
    let mut choice: Vec<Option<u32>> = vec![None; tasks.len()];
    fn feasible(
        assignment: &[Option<u32>],
        tasks: &[u32],
        prefs: &PreferenceLists,
        caps: &[MatchingCap],
    ) -> bool {
        for cap in caps {
            let assigned: Vec<u32> = tasks
                .iter()
                .zip(assignment)
                .filter(|(_, c)| **c == Some(cap.server))
                .map(|(&t, _)| t)
                .collect();
            if assigned.len() as u32 > cap.max_admissions {
                return false;
            }
            let load: f64 = assigned
                .iter()
                .map(|&t| prefs.deals[&(t, cap.server)].allocation)
                .sum();
            if load > cap.cycle_cap * (1.0 + 1e-12) {
                return false;
            }
        }
        true
    }
    // Iterative enumeration over 0..=caps.len() options per task.
    let options: Vec<Vec<Option<u32>>> = tasks
        .iter()
        .map(|&t| {
            let mut opts = vec![None];
            for cap in caps {
                if prefs.deals.contains_key(&(t, cap.server)) {
                    opts.push(Some(cap.server));
                }
            }
            opts
        })
        .collect();
    let mut counters = vec![0usize; tasks.len()];
    'outer: loop {
        for (i, &c) in counters.iter().enumerate() {
            choice[i] = options[i][c];
        }
        if feasible(&choice, tasks, prefs, caps) {
            let dominates = matched_tasks.iter().all(|&t| {
                let i = tasks.iter().position(|&x| x == t).unwrap();
                let alt = choice[i]
                    .map(|s| prefs.deals[&(t, s)].md_utility)
                    .unwrap_or(0.0);
                alt > orig_task_u[&t] + 1e-12
            }) && matched_servers.iter().all(|&s| {
                let alt: f64 = tasks
                    .iter()
                    .zip(&choice)
                    .filter(|(_, c)| **c == Some(s))
                    .map(|(&t, _)| prefs.deals[&(t, s)].server_utility)
                    .sum();
                alt > orig_server_u[&s] + 1e-12
            });
            if dominates {
                return Ok(false);
            }
        }
        // Advance the mixed-radix counter.
        for i in 0..counters.len() {
            counters[i] += 1;
            if counters[i] < options[i].len() {
                continue 'outer;
            }
            counters[i] = 0;
        }
        break;
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::scenario::PropulsionParams;
    use rand::Rng;

    fn fake_deal(task: u32, server: u32, md_u: f64, srv_u: f64, alloc: f64) -> ((u32, u32), Deal) {
        (
            (task, server),
            Deal {
                md: task,
                server,
                allocation: alloc,
                price: 0.5,
                md_utility: md_u,
                server_utility: srv_u,
            },
        )
    }

    /// Builds PreferenceLists directly from (task, server, md_u, srv_u, alloc)
    /// tuples, sorted the same way build_preferences sorts.
    fn prefs_from(entries: &[(u32, u32, f64, f64, f64)], servers: &[u32]) -> PreferenceLists {
        let mut prefs = PreferenceLists::default();
        let mut tasks: Vec<u32> = entries.iter().map(|e| e.0).collect();
        tasks.sort_unstable();
        tasks.dedup();
        prefs.tasks = tasks.clone();
        for &(t, s, mu, su, al) in entries {
            let (k, d) = fake_deal(t, s, mu, su, al);
            prefs.deals.insert(k, d);
        }
        for &t in &tasks {
            let mut list: Vec<u32> = servers
                .iter()
                .copied()
                .filter(|&s| prefs.deals.contains_key(&(t, s)))
                .collect();
            list.sort_by(|&a, &b| {
                let va = prefs.md_value(t, a).unwrap();
                let vb = prefs.md_value(t, b).unwrap();
                vb.partial_cmp(&va).unwrap().then(a.cmp(&b))
            });
            prefs.task_lists.insert(t, list);
        }
        for &s in servers {
            let mut list: Vec<u32> = tasks
                .iter()
                .copied()
                .filter(|&t| prefs.deals.contains_key(&(t, s)))
                .collect();
            list.sort_by(|&a, &b| {
                let va = prefs.server_value(s, a).unwrap();
                let vb = prefs.server_value(s, b).unwrap();
                vb.partial_cmp(&va).unwrap().then(a.cmp(&b))
            });
            prefs.server_lists.insert(s, list);
        }
        prefs
    }

    fn cap(server: u32, n: u32, cycles: f64) -> MatchingCap {
        MatchingCap {
            server,
            max_admissions: n,
            cycle_cap: cycles,
        }
    }

    #[test]
    fn task_list_sorts_by_trial_qoe() {
        let prefs = prefs_from(
            &[(0, 10, 0.4, 0.1, 1e9), (0, 11, 0.2, 0.3, 1e9)],
            &[10, 11],
        );
        assert_eq!(prefs.task_lists[&0], vec![10, 11]);
        assert_eq!(prefs.server_lists[&10], vec![0]);
    }

    #[test]
    fn single_viable_pair_matches() {
        let prefs = prefs_from(&[(0, 10, 0.4, 0.1, 1e9)], &[10]);
        let outcome = run_matching(&prefs, &[cap(10, 1, 2e9)]);
        assert_eq!(outcome.assignment[&0], 10);
        assert!(outcome.unmatched.is_empty());
    }

    #[test]
    fn server_keeps_preferred_task_under_core_pressure() {
        // Two proposals, one idle core: kept task has the higher revenue;
        // the other re-proposes to the second server.
        let prefs = prefs_from(
            &[
                (0, 10, 0.4, 0.1, 1e9),
                (1, 10, 0.5, 0.3, 1e9),
                (0, 11, 0.1, 0.2, 1e9),
            ],
            &[10, 11],
        );
        let outcome = run_matching(&prefs, &[cap(10, 1, 10e9), cap(11, 1, 10e9)]);
        assert_eq!(outcome.assignment[&1], 10, "higher V_{{j,K}} wins the core");
        assert_eq!(outcome.assignment[&0], 11, "rejected task falls through");
    }

    #[test]
    fn exhausted_lists_leave_task_unmatched() {
        let prefs = prefs_from(
            &[(0, 10, 0.4, 0.3, 1e9), (1, 10, 0.5, 0.4, 1e9)],
            &[10],
        );
        let outcome = run_matching(&prefs, &[cap(10, 1, 10e9)]);
        assert_eq!(outcome.assignment.len(), 1);
        assert_eq!(outcome.unmatched, vec![0]);
    }

    #[test]
    fn cycle_cap_drops_least_preferred_until_feasible() {
        // Three proposals fit the cores but not the cycles; the two most
        // preferred by the server stay.
        let prefs = prefs_from(
            &[
                (0, 10, 0.4, 0.9, 4e9),
                (1, 10, 0.4, 0.8, 4e9),
                (2, 10, 0.4, 0.7, 4e9),
            ],
            &[10],
        );
        let outcome = run_matching(&prefs, &[cap(10, 3, 8e9)]);
        assert_eq!(outcome.per_server[&10], vec![0, 1]);
        assert_eq!(outcome.unmatched, vec![2]);
    }

    #[test]
    fn proposal_count_is_bounded() {
        let prefs = prefs_from(
            &[
                (0, 10, 0.4, 0.9, 1e9),
                (0, 11, 0.3, 0.9, 1e9),
                (1, 10, 0.5, 0.8, 1e9),
                (1, 11, 0.2, 0.7, 1e9),
            ],
            &[10, 11],
        );
        let outcome = run_matching(&prefs, &[cap(10, 1, 9e9), cap(11, 1, 9e9)]);
        assert!(outcome.proposals <= 4);
        assert_eq!(outcome.assignment.len(), 2);
    }

    #[test]
    fn worst_assignment_is_unstable_with_witness() {
        let prefs = prefs_from(
            &[
                (0, 10, 0.4, 0.2, 1e9),
                (0, 11, 0.1, 0.1, 1e9),
                (1, 10, 0.3, 0.3, 1e9),
                (1, 11, 0.2, 0.4, 1e9),
            ],
            &[10, 11],
        );
        // Force each task onto its worst server while capacity is spare.
        let mut outcome = MatchOutcome::default();
        outcome.assignment.insert(0, 11);
        outcome.assignment.insert(1, 11);
        outcome.per_server.insert(10, vec![]);
        outcome.per_server.insert(11, vec![0, 1]);
        let caps = [cap(10, 2, 10e9), cap(11, 2, 10e9)];
        let witness = is_stable(&outcome, &prefs, &caps).expect("must find a blocking pair");
        assert_eq!(witness, BlockingPair { task: 0, server: 10 });
    }

    #[test]
    fn empty_matching_with_empty_preferences_is_stable() {
        let prefs = PreferenceLists::default();
        let outcome = run_matching(&prefs, &[cap(10, 1, 1e9)]);
        assert!(is_stable(&outcome, &prefs, &[cap(10, 1, 1e9)]).is_none());
        assert!(is_weak_pareto(&outcome, &prefs, &[cap(10, 1, 1e9)]).unwrap());
    }

    #[test]
    fn da_outcomes_are_stable_on_random_instances() {
        // Exhaustive blocking-pair scan over seeded random instances.
        let mut rng = stream(31, "test/match", 0, 0);
        for _ in 0..300 {
            let n_tasks = rng.gen_range(1..=8u32);
            let servers = [10u32, 11, 12];
            let mut entries = Vec::new();
            for t in 0..n_tasks {
                for &s in &servers {
                    if rng.gen::<f64>() < 0.8 {
                        entries.push((
                            t,
                            s,
                            rng.gen::<f64>(),
                            rng.gen::<f64>(),
                            (1.0 + rng.gen::<f64>() * 9.0) * 1e9,
                        ));
                    }
                }
            }
            if entries.is_empty() {
                continue;
            }
            let prefs = prefs_from(&entries, &servers);
            // Per-core capped allocations: admissions alone bound the load.
            let caps = [
                cap(10, rng.gen_range(1..=3), 30e9),
                cap(11, rng.gen_range(1..=3), 30e9),
                cap(12, rng.gen_range(1..=3), 30e9),
            ];
            let outcome = run_matching(&prefs, &caps);
            assert!(
                is_stable(&outcome, &prefs, &caps).is_none(),
                "blocking pair in {entries:?}"
            );
        }
    }

    #[test]
    fn one_task_instances_are_weak_pareto() {
        let prefs = prefs_from(&[(0, 10, 0.4, 0.1, 1e9), (0, 11, 0.6, 0.2, 1e9)], &[10, 11]);
        let caps = [cap(10, 1, 10e9), cap(11, 1, 10e9)];
        let outcome = run_matching(&prefs, &caps);
        assert!(is_weak_pareto(&outcome, &prefs, &caps).unwrap());
    }

    #[test]
    fn perturbed_matching_is_evaluated_against_enumeration() {
        // Swapping two tasks against their preferences: the checker must
        // find the dominating alternative (the natural assignment).
        let prefs = prefs_from(
            &[
                (0, 10, 0.9, 0.9, 1e9),
                (0, 11, 0.1, 0.1, 1e9),
                (1, 10, 0.1, 0.1, 1e9),
                (1, 11, 0.9, 0.9, 1e9),
            ],
            &[10, 11],
        );
        let caps = [cap(10, 1, 10e9), cap(11, 1, 10e9)];
        let mut swapped = MatchOutcome::default();
        swapped.assignment.insert(0, 11);
        swapped.assignment.insert(1, 10);
        swapped.per_server.insert(10, vec![1]);
        swapped.per_server.insert(11, vec![0]);
        assert!(!is_weak_pareto(&swapped, &prefs, &caps).unwrap());
        let natural = run_matching(&prefs, &caps);
        assert!(is_weak_pareto(&natural, &prefs, &caps).unwrap());
    }

    #[test]
    fn oversized_instances_are_rejected() {
        let entries: Vec<_> = (0..7u32).map(|t| (t, 10u32, 0.5, 0.5, 1e9)).collect();
        let prefs = prefs_from(&entries, &[10]);
        let caps = [cap(10, 7, 100e9)];
        let outcome = run_matching(&prefs, &caps);
        assert_eq!(
            is_weak_pareto(&outcome, &prefs, &caps).unwrap_err(),
            MatchingError::InstanceTooLarge {
                tasks: 7,
                servers: 1
            }
        );
    }

    #[test]
    fn trial_negotiations_feed_real_preferences() {
        // 3 tasks x 2 servers cross-checked against an exhaustive
        // recomputation of all six trial negotiations.
        let rotor = PropulsionParams {
            blade: 79.86,
            induced: 88.63,
            induced_speed4: 263.7,
            parasite: 0.00925,
            tip_speed: 120.0,
        };
        let servers = vec![
            ServerView {
                id: 0,
                weight: 0.5,
                per_core_capacity: 30e9,
                price_cap: 1.0,
                energy_cap: 1000.0,
                capacitance: 1e-28,
                idle_cores: 4,
                available_cycles: 120e9,
                aerial: None,
                slot_duration: 0.1,
            },
            ServerView {
                id: 1,
                weight: 0.5,
                per_core_capacity: 15e9,
                price_cap: 1.0,
                energy_cap: 500.0,
                capacitance: 1e-28,
                idle_cores: 2,
                available_cycles: 30e9,
                aerial: Some((5.0, rotor)),
                slot_duration: 0.1,
            },
        ];
        let cfg = BargainConfig::default();
        let mut rng = stream(41, "test/prefs", 0, 0);
        let candidates: Vec<MatchCandidate> = (0..3)
            .map(|seq| {
                let mut rates = BTreeMap::new();
                rates.insert(0, (5.0 + rng.gen::<f64>() * 10.0) * 1e6);
                rates.insert(1, (5.0 + rng.gen::<f64>() * 10.0) * 1e6);
                MatchCandidate {
                    seq,
                    md: MdView {
                        id: seq,
                        transmit_power: 0.05,
                        weight: 0.5,
                        energy_cap: 10.0,
                        budget: 5.0,
                    },
                    task: TaskView {
                        size_bits: (1.0 + rng.gen::<f64>() * 4.0) * 1e6,
                        cycles: (1.0 + rng.gen::<f64>() * 4.0) * 1e9,
                        deadline: 1.0 + rng.gen::<f64>() * 4.0,
                    },
                    rates,
                }
            })
            .collect();
        let mut meter = NegotiationMeter::default();
        let prefs = build_preferences(&candidates, &servers, &cfg, &mut meter);
        assert_eq!(meter.calls, 6);

        for cand in &candidates {
            for server in &servers {
                let mut m2 = NegotiationMeter::default();
                let redo = negotiate(
                    &cand.md,
                    server,
                    &cand.task,
                    cand.rates[&server.id],
                    &cfg,
                    &mut m2,
                );
                match (redo, prefs.deals.get(&(cand.seq, server.id))) {
                    (Ok(a), Some(b)) => {
                        assert_eq!(a.allocation, b.allocation);
                        assert_eq!(a.price, b.price);
                    }
                    (Err(_), None) => {}
                    (a, b) => panic!("trial mismatch: {a:?} vs {b:?}"),
                }
            }
            // List order must match a descending re-sort of the recomputed values.
            let list = &prefs.task_lists[&cand.seq];
            for w in list.windows(2) {
                let va = prefs.md_value(cand.seq, w[0]).unwrap();
                let vb = prefs.md_value(cand.seq, w[1]).unwrap();
                assert!(va > vb || (va == vb && w[0] < w[1]));
            }
        }
    }
}
