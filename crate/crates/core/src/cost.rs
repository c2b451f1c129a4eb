//! Delay, energy, and utility accounting.
//!
//! Utilities normalize satisfaction against energy and payment costs: device
//! QoE weighs log-shaped completion satisfaction against energy and payment,
//! server revenue weighs the priced allocation against energy spent. Prices
//! are quoted per GHz, so payments convert allocations to GHz.

use serde::Serialize;

use crate::scenario::PropulsionParams;

pub const CYCLES_PER_GHZ: f64 = 1e9;

/// Completion delay of a task run on a local core, s.
pub fn local_delay(cycles: f64, cpu: f64) -> f64 {
    cycles / cpu
}

/// Energy drawn by a local execution, J.
pub fn local_energy(cycles: f64, cpu: f64, capacitance: f64) -> f64 {
    capacitance * cpu * cpu * cycles
}

/// Upload plus remote computation delay, s.
pub fn edge_delay(size_bits: f64, rate: f64, cycles: f64, allocation: f64) -> f64 {
    size_bits / rate + cycles / allocation
}

/// Radio energy spent uploading the task, J.
pub fn upload_energy(tx_power: f64, size_bits: f64, rate: f64) -> f64 {
    tx_power * size_bits / rate
}

/// Rotary-wing propulsion power in straight-and-level flight at `speed`:
/// blade profile + induced + parasite components, W.
pub fn propulsion_power(speed: f64, p: &PropulsionParams) -> f64 {
    let v2 = speed * speed;
    let blade = p.blade * (1.0 + 3.0 * v2 / (p.tip_speed * p.tip_speed));
    let induced = p.induced * induced_base(speed, p).sqrt();
    let parasite = p.parasite * v2 * speed;
    blade + induced + parasite
}

/// sqrt(eta3 + v^4/4) - v^2/2, computed without cancellation.
fn induced_base(speed: f64, p: &PropulsionParams) -> f64 {
    let v2 = speed * speed;
    p.induced_speed4 / ((p.induced_speed4 + v2 * v2 / 4.0).sqrt() + v2 / 2.0)
}

/// Analytic d/dv of [`propulsion_power`].
pub fn propulsion_power_derivative(speed: f64, p: &PropulsionParams) -> f64 {
    let v2 = speed * speed;
    let blade = 6.0 * p.blade * speed / (p.tip_speed * p.tip_speed);
    let s = (p.induced_speed4 + v2 * v2 / 4.0).sqrt();
    let base = induced_base(speed, p);
    let induced = p.induced * (v2 * speed / (2.0 * s) - speed) / (2.0 * base.sqrt());
    let parasite = 3.0 * p.parasite * v2;
    blade + induced + parasite
}

/// Energy a server spends serving one task: CPU dynamic energy, plus one
/// slot of propulsion for an aerial server flying at `speed`, J.
pub fn server_energy(
    cycles: f64,
    allocation: f64,
    capacitance: f64,
    aerial: Option<(f64, &PropulsionParams)>,
    slot_duration: f64,
) -> f64 {
    let compute = capacitance * allocation * allocation * cycles;
    match aerial {
        None => compute,
        Some((speed, p)) => compute + propulsion_power(speed, p) * slot_duration,
    }
}

/// Normalized completion satisfaction: log(1 + tau - D) / log(1 + tau),
/// clamped to zero once the deadline is missed.
pub fn satisfaction(deadline: f64, delay: f64) -> f64 {
    (1.0 + (deadline - delay).max(0.0)).ln() / (1.0 + deadline).ln()
}

/// Device QoE for a local execution.
pub fn md_qoe_local(weight: f64, deadline: f64, delay: f64, energy: f64, energy_cap: f64) -> f64 {
    weight * satisfaction(deadline, delay) - (1.0 - weight) * energy / energy_cap
}

/// Device QoE for an edge execution (upload energy plus payment).
pub fn md_qoe_edge(
    weight: f64,
    deadline: f64,
    delay: f64,
    energy: f64,
    energy_cap: f64,
    payment: f64,
    budget: f64,
) -> f64 {
    weight * satisfaction(deadline, delay)
        - (1.0 - weight) * (energy / energy_cap + payment / budget)
}

/// Server revenue from one deal: normalized priced allocation minus
/// normalized energy cost.
pub fn server_revenue(
    weight: f64,
    allocation: f64,
    price: f64,
    capacity_norm: f64,
    price_cap: f64,
    energy: f64,
    energy_cap: f64,
) -> f64 {
    weight * (allocation * price) / (capacity_norm * price_cap)
        - (1.0 - weight) * energy / energy_cap
}

/// Execution target of a decided task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OffloadTarget {
    Local,
    Server(u32),
}

/// An agreed (allocation, unit price) pair between one MD and one server,
/// with both parties' utilities at agreement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deal {
    pub md: u32,
    pub server: u32,
    /// Allocated computing resources, cycles/s.
    pub allocation: f64,
    /// Unit price, currency per GHz.
    pub price: f64,
    pub md_utility: f64,
    pub server_utility: f64,
}

impl Deal {
    pub fn payment(&self) -> f64 {
        self.allocation / CYCLES_PER_GHZ * self.price
    }
}

/// One committed offloading decision inside a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDecision {
    pub owner: u32,
    pub task_seq: u32,
    pub target: OffloadTarget,
    pub md_utility: f64,
    pub server_utility: f64,
}

/// Slot system utility: sum of device and server utilities over the slot's
/// decided tasks. Local decisions carry no server-side term.
pub fn system_utility_slot(decisions: &[SlotDecision]) -> f64 {
    decisions
        .iter()
        .map(|d| d.md_utility + d.server_utility)
        .sum()
}
