//! Alternating-offers price negotiation between one MD and one MEC server.
//!
//! A trade is negotiated over the price surplus: the gap between the lowest
//! unit price the server accepts (its revenue break-even) and the highest the
//! device tolerates. The surplus is split by the unique perfect partition of
//! the alternating-offers game, whose discount factors come from the
//! transmission and computation delay ratios. Given a price, the device's
//! preferred allocation maximizes its QoE over the feasible box; iterating
//! price and allocation updates until both utilities are positive yields the
//! deal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{
    edge_delay, md_qoe_edge, satisfaction, server_energy, server_revenue, upload_energy, Deal,
    CYCLES_PER_GHZ,
};
use crate::scenario::PropulsionParams;

/// Cap applied to a delay-dominant device's price ceiling, currency/GHz.
pub const PRICE_CEILING_SENTINEL: f64 = 1e12;

/// Relative tolerance of the one-dimensional allocation search.
pub const ALLOCATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BargainConfig {
    /// Bargaining horizon: number of alternating offers modeled.
    pub horizon: u32,
    /// Iteration cap of the negotiation loop.
    pub max_iterations: u32,
}

impl Default for BargainConfig {
    fn default() -> Self {
        BargainConfig {
            horizon: 2,
            max_iterations: 100,
        }
    }
}

/// Device-side inputs to a negotiation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdView {
    pub id: u32,
    pub transmit_power: f64,
    pub weight: f64,
    pub energy_cap: f64,
    pub budget: f64,
}

/// Task as seen at decision time; `deadline` is the remaining deadline after
/// any queueing since generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskView {
    pub size_bits: f64,
    pub cycles: f64,
    pub deadline: f64,
}

/// Server-side inputs: static parameters plus the capacity snapshot the
/// negotiation runs against.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerView {
    pub id: u32,
    pub weight: f64,
    pub per_core_capacity: f64,
    pub price_cap: f64,
    pub energy_cap: f64,
    pub capacitance: f64,
    pub idle_cores: u32,
    pub available_cycles: f64,
    /// Flight speed and rotor constants for an aerial server.
    pub aerial: Option<(f64, PropulsionParams)>,
    pub slot_duration: f64,
}

impl ServerView {
    /// Cycles a single task may be allocated: one idle core's capability.
    /// Tasks are atomic and execute on one core, so a deal never spans cores.
    pub fn negotiable_cycles(&self) -> f64 {
        if self.idle_cores >= 1 {
            self.per_core_capacity
        } else {
            0.0
        }
    }

    fn task_energy(&self, cycles: f64, allocation: f64) -> f64 {
        server_energy(
            cycles,
            allocation,
            self.capacitance,
            self.aerial.as_ref().map(|(v, p)| (*v, p)),
            self.slot_duration,
        )
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BargainError {
    #[error("no viable trade: price surplus empty")]
    NoViableTrade,
    #[error("degenerate discounts: both parties fully patient")]
    DegenerateDiscounts,
    #[error("no allocation satisfies deadline, budget, and capacity")]
    InfeasibleAllocation,
    #[error("no consensus within the iteration cap")]
    NoConsensus,
    #[error("server has no idle core")]
    NoIdleCore,
}

/// Price window of a viable trade, currency/GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceSurplus {
    pub floor: f64,
    pub ceiling: f64,
}

impl PriceSurplus {
    pub fn surplus(&self) -> f64 {
        self.ceiling - self.floor
    }
}

/// Counts negotiation work for complexity accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NegotiationMeter {
    pub calls: u64,
    pub iterations: u64,
}

/// Price floor (server break-even) and ceiling (device tolerance) at the
/// given allocation. Errors with `NoViableTrade` when the window is empty or
/// the ceiling is negative.
pub fn price_bounds(
    md: &MdView,
    server: &ServerView,
    task: &TaskView,
    allocation: f64,
    rate: f64,
) -> Result<PriceSurplus, BargainError> {
    if server.weight <= 0.0 {
        return Err(BargainError::NoViableTrade);
    }
    let energy = server.task_energy(task.cycles, allocation);
    let floor = (1.0 - server.weight) * energy * server.price_cap * server.per_core_capacity
        / (server.weight * server.energy_cap * allocation);

    let delay = edge_delay(task.size_bits, rate, task.cycles, allocation);
    let ceiling = if md.weight >= 1.0 {
        PRICE_CEILING_SENTINEL
    } else {
        let sat = satisfaction(task.deadline, delay);
        let upload_term = md.transmit_power * task.size_bits / (rate * task.deadline);
        let raw = (md.weight * sat / (1.0 - md.weight) - upload_term) * md.budget
            / (allocation / CYCLES_PER_GHZ);
        raw.min(PRICE_CEILING_SENTINEL)
    };

    if ceiling < 0.0 || ceiling - floor <= 0.0 {
        return Err(BargainError::NoViableTrade);
    }
    Ok(PriceSurplus { floor, ceiling })
}

/// The unique perfect partition of the alternating-offers game when the
/// first-indexed party proposes: `(own share, opponent share)`.
pub fn rubinstein_partition(
    lambda_own: f64,
    lambda_other: f64,
    horizon: u32,
) -> Result<(f64, f64), BargainError> {
    let k = horizon.div_ceil(2) as i32;
    let x = lambda_own * lambda_other;
    let denom = 1.0 - x;
    if denom.abs() < 1e-15 {
        return Err(BargainError::DegenerateDiscounts);
    }
    let xk = x.powi(k);
    let own = lambda_own - (1.0 - lambda_own) * (1.0 - xk) / denom;
    let other = (1.0 - lambda_own) * (2.0 - x - xk) / denom;
    Ok((own, other))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposer {
    Md,
    Server,
}

/// Device-side surplus shares under either proposer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionPair {
    /// Device share when the device proposes.
    pub md_proposing: f64,
    /// Device share when the server proposes.
    pub server_proposing: f64,
}

/// Price offered this round: the ceiling minus the device's surplus share,
/// clamped into the viable window.
pub fn optimal_price(bounds: &PriceSurplus, partitions: PartitionPair, proposer: Proposer) -> f64 {
    let share = match proposer {
        Proposer::Md => partitions.md_proposing,
        Proposer::Server => partitions.server_proposing,
    };
    (bounds.ceiling - bounds.surplus() * share).clamp(bounds.floor, bounds.ceiling)
}

fn qoe_at(md: &MdView, task: &TaskView, rate: f64, allocation: f64, price: f64) -> f64 {
    let delay = edge_delay(task.size_bits, rate, task.cycles, allocation);
    let energy = upload_energy(md.transmit_power, task.size_bits, rate);
    let payment = allocation / CYCLES_PER_GHZ * price;
    md_qoe_edge(
        md.weight,
        task.deadline,
        delay,
        energy,
        md.energy_cap,
        payment,
        md.budget,
    )
}

fn revenue_at(server: &ServerView, task: &TaskView, allocation: f64, price: f64) -> f64 {
    server_revenue(
        server.weight,
        allocation,
        price,
        server.per_core_capacity,
        server.price_cap,
        server.task_energy(task.cycles, allocation),
        server.energy_cap,
    )
}

/// Golden-section maximizer over `[lo, hi]`; the bracketed function is
/// unimodal (QoE is concave in the allocation on the feasible interval).
fn golden_max(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > ALLOCATION_TOL * b.abs().max(1e-9) {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    // Boundary maximizers must come out exact, so compare the endpoints too.
    *[lo, mid, hi]
        .iter()
        .max_by(|&&p, &&q| f(p).partial_cmp(&f(q)).unwrap())
        .unwrap()
}

/// QoE-maximizing allocation at the given price, over allocations that meet
/// the deadline, the budget, and the single-core capability.
pub fn optimal_allocation(
    md: &MdView,
    server: &ServerView,
    task: &TaskView,
    price: f64,
    rate: f64,
) -> Result<f64, BargainError> {
    let slack = task.deadline - task.size_bits / rate;
    if slack <= 0.0 {
        return Err(BargainError::InfeasibleAllocation);
    }
    let lower = task.cycles / slack;
    let budget_cycles = if price > 0.0 {
        md.budget / price * CYCLES_PER_GHZ
    } else {
        f64::INFINITY
    };
    let upper = server.negotiable_cycles().min(budget_cycles);
    if lower > upper {
        return Err(BargainError::InfeasibleAllocation);
    }
    Ok(golden_max(lower, upper, |f| qoe_at(md, task, rate, f, price)))
}

/// Runs the negotiation loop: price update from the current partition, then
/// allocation update at the offered price, until both utilities are positive
/// (and the payment fits the budget) or the iteration cap is hit. The party
/// with positive utility proposes next; when neither is positive the device
/// opens.
pub fn negotiate(
    md: &MdView,
    server: &ServerView,
    task: &TaskView,
    rate: f64,
    cfg: &BargainConfig,
    meter: &mut NegotiationMeter,
) -> Result<Deal, BargainError> {
    meter.calls += 1;
    if server.idle_cores == 0 || server.negotiable_cycles() <= 0.0 {
        return Err(BargainError::NoIdleCore);
    }
    if rate <= 0.0 {
        return Err(BargainError::NoViableTrade);
    }
    let mut allocation = server.negotiable_cycles();
    let mut proposer = Proposer::Md;
    for _ in 0..cfg.max_iterations {
        meter.iterations += 1;
        let bounds = price_bounds(md, server, task, allocation, rate)?;
        let lambda_md = (1.0 - task.size_bits / (rate * task.deadline)).clamp(0.0, 1.0);
        let lambda_srv = (1.0 - task.cycles / (allocation * task.deadline)).clamp(0.0, 1.0);
        let (md_proposing, _) = rubinstein_partition(lambda_md, lambda_srv, cfg.horizon)?;
        let (_, server_proposing) = rubinstein_partition(lambda_srv, lambda_md, cfg.horizon)?;
        let price = optimal_price(
            &bounds,
            PartitionPair {
                md_proposing,
                server_proposing,
            },
            proposer,
        );
        let md_utility = qoe_at(md, task, rate, allocation, price);
        let server_utility = revenue_at(server, task, allocation, price);
        let payment = allocation / CYCLES_PER_GHZ * price;
        if md_utility > 0.0 && server_utility > 0.0 && payment <= md.budget * (1.0 + 1e-12) {
            return Ok(Deal {
                md: md.id,
                server: server.id,
                allocation,
                price,
                md_utility,
                server_utility,
            });
        }
        proposer = match (md_utility > 0.0, server_utility > 0.0) {
            (true, false) => Proposer::Md,
            (false, true) => Proposer::Server,
            _ => Proposer::Md,
        };
        allocation = optimal_allocation(md, server, task, price, rate)?;
    }
    Err(BargainError::NoConsensus)
}
