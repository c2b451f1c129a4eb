//! Per-epoch UAV position planning by successive convex approximation.
//!
//! At an epoch boundary each UAV maximizes the trajectory-dependent part of
//! the slot utility over its next position: served tasks' satisfaction and
//! upload-energy terms through the expected uplink rate, minus weighted
//! propulsion energy. The rate is non-concave in the position, so each
//! iteration maximizes a tight concave lower bound built from the first-order
//! expansion of the rate in the squared distance at the current local point;
//! propulsion is evaluated exactly. Iterates stay inside the intersection of
//! the per-epoch displacement disk and the destination-reachability disk, so
//! every accepted position is kinematically feasible.

use thiserror::Error;

use crate::cost::{propulsion_power, propulsion_power_derivative};
use crate::scenario::{PropulsionParams, Vec2};

/// Log argument below which the satisfaction term switches to its linear
/// extension, keeping the objective finite and increasing in the rate.
const MIN_LOG_ARG: f64 = 1e-9;

/// Smallest surrogate rate used in delay terms, bits/s.
const MIN_RATE: f64 = 1e-9;

/// One task served by the UAV this epoch, with the channel constants frozen
/// at the epoch-start geometry.
#[derive(Debug, Clone, Copy)]
pub struct ServedTask {
    pub md_position: Vec2,
    pub size_bits: f64,
    /// Remaining deadline at decision time, s.
    pub deadline: f64,
    /// Computation delay under the committed allocation, s.
    pub compute_delay: f64,
    /// Satisfaction coefficient: weight / (1 + deadline).
    pub sat_coeff: f64,
    /// Upload-energy coefficient: (1 - weight) * tx_power / energy_cap.
    pub upload_coeff: f64,
    /// tx_power * anchored_gain / noise_power; rate = B log2(1 + snr/d^beta).
    pub snr_const: f64,
    pub bandwidth: f64,
    pub pathloss: f64,
}

/// One UAV's epoch subproblem.
#[derive(Debug, Clone)]
pub struct EpochProblem {
    pub altitude: f64,
    pub current_position: Vec2,
    pub destination: Vec2,
    /// Displacement allowed per epoch move, m.
    pub step_radius: f64,
    /// Epoch moves still available, including the one being planned.
    pub moves_remaining: u32,
    pub epoch_seconds: f64,
    pub propulsion: PropulsionParams,
    /// Summed propulsion cost weight over served tasks, times slot length.
    pub propulsion_weight: f64,
    pub tasks: Vec<ServedTask>,
}

impl EpochProblem {
    fn reach_radius(&self) -> f64 {
        self.step_radius * f64::from(self.moves_remaining.saturating_sub(1))
    }

    /// Straight-line fallback: advance toward the destination at the uniform
    /// pace that lands exactly on it at the final epoch.
    pub fn pacing_target(&self) -> Vec2 {
        let to_dest = self.destination - self.current_position;
        self.current_position + to_dest * (1.0 / f64::from(self.moves_remaining.max(1)))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("epoch feasible set is empty (step {step:.3} m, reach {reach:.3} m, gap {gap:.3} m)")]
    InfeasibleEpoch { step: f64, reach: f64, gap: f64 },
}

/// Expected uplink rate at position `q` under the frozen channel anchor.
pub fn true_rate(q: Vec2, task: &ServedTask, altitude: f64) -> f64 {
    let z = (q - task.md_position).norm_sq();
    let dist = (altitude * altitude + z).sqrt();
    task.bandwidth * (1.0 + task.snr_const * dist.powf(-task.pathloss)).log2()
}

/// Concave lower bound of the expected rate: first-order expansion in the
/// squared horizontal distance at `base`. Tight at `base`, below the true
/// rate everywhere.
pub fn surrogate_rate(q: Vec2, base: Vec2, task: &ServedTask, altitude: f64) -> f64 {
    let z = (q - task.md_position).norm_sq();
    let z_hat = (base - task.md_position).norm_sq();
    let d2_hat = altitude * altitude + z_hat;
    let snr_hat = task.snr_const * d2_hat.powf(-task.pathloss / 2.0);
    let r_hat = task.bandwidth * (1.0 + snr_hat).log2();
    let slope = task.bandwidth * task.pathloss * (snr_hat / (1.0 + snr_hat))
        / (2.0 * std::f64::consts::LN_2 * d2_hat);
    r_hat - slope * (z - z_hat)
}

/// Linearized auxiliary bound for the induced-power reformulation, plus the
/// feasibility residual of the auxiliary constraint at implied speed
/// `|q - q_prev| / epoch_seconds`. The bound under-estimates `phi^2 + v^2`
/// everywhere and is exact at the expansion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiSurrogate {
    pub bound: f64,
    pub residual: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn surrogate_phi(
    phi: f64,
    q: Vec2,
    phi_base: f64,
    q_base: Vec2,
    q_prev: Vec2,
    epoch_seconds: f64,
    rotor: &PropulsionParams,
) -> PhiSurrogate {
    let dd = epoch_seconds * epoch_seconds;
    let base_disp = q_base - q_prev;
    let bound = phi_base * phi_base
        + 2.0 * phi_base * (phi - phi_base)
        + (base_disp.norm_sq() + 2.0 * base_disp.dot(q - q_base)) / dd;
    let speed = (q - q_prev).norm() / epoch_seconds;
    let residual = rotor.induced_speed4 / (speed * speed) - bound;
    PhiSurrogate { bound, residual }
}

/// Per-task utility term at rate `r`: satisfaction minus upload energy,
/// monotone increasing in `r`.
fn task_term(task: &ServedTask, rate: f64) -> f64 {
    let r = rate.max(MIN_RATE);
    let arg = 1.0 + task.deadline - task.size_bits / r - task.compute_delay;
    let sat = if arg >= MIN_LOG_ARG {
        arg.ln()
    } else {
        MIN_LOG_ARG.ln() + (arg - MIN_LOG_ARG) / MIN_LOG_ARG
    };
    task.sat_coeff * sat - task.upload_coeff * task.size_bits / r
}

/// d(task_term)/d(rate), non-negative.
fn task_term_slope(task: &ServedTask, rate: f64) -> f64 {
    if rate <= MIN_RATE {
        return 0.0;
    }
    let arg = 1.0 + task.deadline - task.size_bits / rate - task.compute_delay;
    let dsat = if arg >= MIN_LOG_ARG { 1.0 / arg } else { 1.0 / MIN_LOG_ARG };
    (task.size_bits / (rate * rate)) * (task.sat_coeff * dsat + task.upload_coeff)
}

fn objective_by<F: Fn(Vec2, &ServedTask) -> f64>(problem: &EpochProblem, q: Vec2, rate: F) -> f64 {
    let speed = (q - problem.current_position).norm() / problem.epoch_seconds;
    let mut total = -problem.propulsion_weight * propulsion_power(speed, &problem.propulsion);
    for task in &problem.tasks {
        total += task_term(task, rate(q, task));
    }
    total
}

/// Exact epoch objective (true rate, exact propulsion).
pub fn true_objective(problem: &EpochProblem, q: Vec2) -> f64 {
    objective_by(problem, q, |q, t| true_rate(q, t, problem.altitude))
}

/// Surrogate epoch objective at local point `base`.
pub fn surrogate_objective(problem: &EpochProblem, base: Vec2, q: Vec2) -> f64 {
    objective_by(problem, q, |q, t| surrogate_rate(q, base, t, problem.altitude))
}

fn surrogate_gradient(problem: &EpochProblem, base: Vec2, q: Vec2) -> Vec2 {
    let mut grad = Vec2::ZERO;
    for task in &problem.tasks {
        let z_hat = (base - task.md_position).norm_sq();
        let d2_hat = problem.altitude * problem.altitude + z_hat;
        let snr_hat = task.snr_const * d2_hat.powf(-task.pathloss / 2.0);
        let rate_slope = task.bandwidth * task.pathloss * (snr_hat / (1.0 + snr_hat))
            / (2.0 * std::f64::consts::LN_2 * d2_hat);
        let r = surrogate_rate(q, base, task, problem.altitude);
        let dterm = task_term_slope(task, r);
        grad = grad + (q - task.md_position) * (-2.0 * rate_slope * dterm);
    }
    let disp = q - problem.current_position;
    let dist = disp.norm();
    if dist > 1e-12 {
        let speed = dist / problem.epoch_seconds;
        let dpdv = propulsion_power_derivative(speed, &problem.propulsion);
        grad = grad + disp * (-problem.propulsion_weight * dpdv / (dist * problem.epoch_seconds));
    }
    grad
}

fn clip_to_disk(q: Vec2, center: Vec2, radius: f64) -> Vec2 {
    let d = q.dist(center);
    if d <= radius || d == 0.0 {
        q
    } else {
        center + (q - center) * (radius / d)
    }
}

fn in_disk(q: Vec2, center: Vec2, radius: f64) -> bool {
    q.dist(center) <= radius + 1e-9
}

/// Exact Euclidean projection onto the intersection of two disks. The
/// projection is the point itself, a single-disk projection, or one of the
/// boundary-circle intersection points.
fn project(q: Vec2, c1: Vec2, r1: f64, c2: Vec2, r2: f64) -> Option<Vec2> {
    let d = c1.dist(c2);
    if d > r1 + r2 + 1e-9 {
        return None;
    }
    if in_disk(q, c1, r1) && in_disk(q, c2, r2) {
        return Some(q);
    }
    let mut best: Option<Vec2> = None;
    let mut consider = |p: Vec2| {
        if in_disk(p, c1, r1) && in_disk(p, c2, r2) {
            match best {
                Some(b) if q.dist(b) <= q.dist(p) => {}
                _ => best = Some(p),
            }
        }
    };
    consider(clip_to_disk(q, c1, r1));
    consider(clip_to_disk(q, c2, r2));
    if d > (r1 - r2).abs() && d > 1e-12 {
        let a = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
        let h = (r1 * r1 - a * a).max(0.0).sqrt();
        let dir = (c2 - c1) * (1.0 / d);
        let mid = c1 + dir * a;
        let perp = Vec2::new(dir.y, -dir.x) * h;
        consider(mid + perp);
        consider(mid - perp);
    }
    best
}

/// Projected gradient ascent with a backtracking line search in gradient
/// direction, restarted from several seeds.
fn ascend(problem: &EpochProblem, base: Vec2, start: Vec2) -> Option<(Vec2, f64)> {
    let (c1, r1) = (problem.current_position, problem.step_radius);
    let (c2, r2) = (problem.destination, problem.reach_radius());
    let mut x = project(start, c1, r1, c2, r2)?;
    let mut value = surrogate_objective(problem, base, x);
    let step_cap = problem.step_radius.max(1e-3) * 2.0;
    let mut step = problem.step_radius.max(1e-3) * 0.5;
    for _ in 0..400 {
        let grad = surrogate_gradient(problem, base, x);
        let norm = grad.norm();
        if norm < 1e-16 {
            break;
        }
        let dir = grad * (1.0 / norm);
        let mut improved = false;
        let mut s = step;
        for _ in 0..60 {
            let cand = match project(x + dir * s, c1, r1, c2, r2) {
                Some(c) => c,
                None => break,
            };
            let cv = surrogate_objective(problem, base, cand);
            if cv > value + 1e-15 {
                x = cand;
                value = cv;
                step = (s * 1.5).min(step_cap);
                improved = true;
                break;
            }
            s *= 0.5;
            if s < 1e-7 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    Some((x, value))
}

/// Maximizes the surrogate objective at local point `base` over the epoch's
/// feasible disk intersection, seeding the ascent from the local point, the
/// pacing point, and each served device's projected position.
pub fn solve_epoch_subproblem(
    problem: &EpochProblem,
    base: Vec2,
) -> Result<(Vec2, f64), TrajectoryError> {
    let (c1, r1) = (problem.current_position, problem.step_radius);
    let (c2, r2) = (problem.destination, problem.reach_radius());
    let gap = c1.dist(c2);
    if gap > r1 + r2 + 1e-9 {
        return Err(TrajectoryError::InfeasibleEpoch {
            step: r1,
            reach: r2,
            gap,
        });
    }
    let mut starts = vec![base, problem.current_position, problem.pacing_target()];
    for task in &problem.tasks {
        starts.push(task.md_position);
    }
    let mut best: Option<(Vec2, f64)> = None;
    for start in starts {
        if let Some((q, v)) = ascend(problem, base, start) {
            match best {
                Some((_, bv)) if bv >= v => {}
                _ => best = Some((q, v)),
            }
        }
    }
    best.ok_or(TrajectoryError::InfeasibleEpoch {
        step: r1,
        reach: r2,
        gap,
    })
}

/// SCA trace for one UAV: exact objective per iterate plus the final
/// position.
#[derive(Debug, Clone)]
pub struct ScaReport {
    pub position: Vec2,
    /// Exact objective at the initial point and after each iteration.
    pub objectives: Vec<f64>,
    pub iterations: u32,
    pub converged: bool,
}

/// Runs the SCA loop from the current position: build the rate surrogate at
/// the local point, maximize it over the feasible set, move the local point,
/// and stop once the exact objective changes by at most `epsilon`. Serving
/// zero tasks degenerates to the straight-line pacing move.
pub fn optimize_trajectory(
    problem: &EpochProblem,
    epsilon: f64,
    max_iterations: u32,
) -> Result<ScaReport, TrajectoryError> {
    if problem.tasks.is_empty() {
        return Ok(ScaReport {
            position: problem.pacing_target(),
            objectives: vec![0.0],
            iterations: 1,
            converged: true,
        });
    }
    let mut local = problem.current_position;
    let mut objective = true_objective(problem, local);
    let mut objectives = vec![objective];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let (next, _) = solve_epoch_subproblem(problem, local)?;
        let next_objective = true_objective(problem, next);
        objectives.push(next_objective);
        local = next;
        let delta = (next_objective - objective).abs();
        objective = next_objective;
        if delta <= epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "trajectory SCA hit the iteration cap ({max_iterations}); returning best iterate"
        );
    }
    Ok(ScaReport {
        position: local,
        objectives,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn rotor() -> PropulsionParams {
        PropulsionParams {
            blade: 79.86,
            induced: 88.63,
            induced_speed4: 263.7,
            parasite: 0.00925,
            tip_speed: 120.0,
        }
    }

    fn served(md: Vec2) -> ServedTask {
        ServedTask {
            md_position: md,
            size_bits: 3e6,
            deadline: 4.0,
            compute_delay: 0.3,
            sat_coeff: 0.5 / 5.0,
            upload_coeff: 0.5 * 0.1 / 10.0,
            snr_const: 0.1 * 1e-4 / 3.98e-15,
            bandwidth: 1e6,
            pathloss: 2.2,
        }
    }

    fn problem(tasks: Vec<ServedTask>, weight: f64) -> EpochProblem {
        EpochProblem {
            altitude: 100.0,
            current_position: Vec2::new(100.0, 100.0),
            destination: Vec2::new(500.0, 0.0),
            step_radius: 25.0,
            moves_remaining: 40,
            epoch_seconds: 1.0,
            propulsion: rotor(),
            propulsion_weight: weight,
            tasks,
        }
    }

    #[test]
    fn surrogate_rate_tight_at_base() {
        let t = served(Vec2::new(180.0, 40.0));
        let base = Vec2::new(120.0, 90.0);
        let s = surrogate_rate(base, base, &t, 100.0);
        let r = true_rate(base, &t, 100.0);
        assert!((s - r).abs() <= 1e-9 * r.abs(), "{s} vs {r}");
    }

    #[test]
    fn surrogate_rate_is_global_lower_bound() {
        // Sampling oracle over random (q, base) pairs.
        let mut rng = stream(51, "test/rate-bound", 0, 0);
        let t = served(Vec2::new(250.0, 250.0));
        for _ in 0..10_000 {
            let q = Vec2::new(rng.gen::<f64>() * 500.0, rng.gen::<f64>() * 500.0);
            let base = Vec2::new(rng.gen::<f64>() * 500.0, rng.gen::<f64>() * 500.0);
            let s = surrogate_rate(q, base, &t, 100.0);
            let r = true_rate(q, &t, 100.0);
            assert!(s <= r + 1e-9 * r.abs().max(1.0), "s {s} > r {r}");
        }
    }

    #[test]
    fn surrogate_rate_decreases_away_from_md() {
        let md = Vec2::new(100.0, 100.0);
        let t = served(md);
        let base = md;
        let near = surrogate_rate(md, base, &t, 100.0);
        let far = surrogate_rate(md + Vec2::new(10.0, 0.0), base, &t, 100.0);
        assert!(far < near);
    }

    #[test]
    fn phi_surrogate_tight_and_bounding() {
        let rotor = rotor();
        let q_prev = Vec2::new(10.0, 0.0);
        let q_base = Vec2::new(20.0, 5.0);
        let phi_base = 3.0;
        // Exact at the expansion point.
        let at_base = surrogate_phi(phi_base, q_base, phi_base, q_base, q_prev, 1.0, &rotor);
        let v_base = (q_base - q_prev).norm();
        let exact = phi_base * phi_base + v_base * v_base;
        assert!((at_base.bound - exact).abs() <= 1e-9 * exact);
        // Global lower bound on random points.
        let mut rng = stream(53, "test/phi-bound", 0, 0);
        for _ in 0..10_000 {
            let phi = rng.gen::<f64>() * 20.0;
            let q = Vec2::new(rng.gen::<f64>() * 50.0, rng.gen::<f64>() * 50.0);
            let s = surrogate_phi(phi, q, phi_base, q_base, q_prev, 1.0, &rotor);
            let v = (q - q_prev).norm() / 1.0;
            assert!(s.bound <= phi * phi + v * v + 1e-9);
        }
    }

    #[test]
    fn phi_residual_blows_up_at_hover() {
        let rotor = rotor();
        let q_prev = Vec2::new(10.0, 0.0);
        let q_base = Vec2::new(20.0, 0.0);
        let near_hover = surrogate_phi(
            2.0,
            q_prev + Vec2::new(1e-9, 0.0),
            2.0,
            q_base,
            q_prev,
            1.0,
            &rotor,
        );
        assert!(near_hover.residual > 1e12, "hover must flag infeasible");
    }

    #[test]
    fn subproblem_moves_over_the_md() {
        // One stationary MD beneath a generous box, negligible propulsion
        // weight: the optimum approaches the point above the MD.
        let md = Vec2::new(110.0, 95.0);
        let mut p = problem(vec![served(md)], 0.0);
        p.step_radius = 80.0;
        let (q, _) = solve_epoch_subproblem(&p, p.current_position).unwrap();
        assert!(q.dist(md) < 1.0, "optimum {q:?} should sit over {md:?}");
    }

    #[test]
    fn binding_step_lands_on_the_radial_projection() {
        // MD beyond reach: optimum sits on the step-disk boundary toward it.
        let md = Vec2::new(400.0, 100.0);
        let p = problem(vec![served(md)], 0.0);
        let (q, _) = solve_epoch_subproblem(&p, p.current_position).unwrap();
        let to_md = md - p.current_position;
        let boundary = p.current_position + to_md * (p.step_radius / to_md.norm());
        assert!(q.dist(boundary) < 1e-3, "{q:?} vs {boundary:?}");
    }

    #[test]
    fn sca_monotone_and_terminating() {
        let tasks = vec![
            served(Vec2::new(140.0, 80.0)),
            served(Vec2::new(60.0, 150.0)),
            served(Vec2::new(120.0, 140.0)),
        ];
        let p = problem(tasks, 3.0 * 0.5 / 500.0 * 0.1);
        let report = optimize_trajectory(&p, 1e-3, 50).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 20, "took {} iters", report.iterations);
        for w in report.objectives.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "descent step: {:?}", report.objectives);
        }
    }

    #[test]
    fn infinite_epsilon_stops_after_one_iteration() {
        let p = problem(vec![served(Vec2::new(140.0, 80.0))], 1e-4);
        let report = optimize_trajectory(&p, f64::INFINITY, 50).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
    }

    #[test]
    fn zero_tasks_paces_toward_destination() {
        let mut p = problem(vec![], 1e-4);
        p.current_position = Vec2::new(480.0, 0.0);
        p.moves_remaining = 2;
        let report = optimize_trajectory(&p, 1e-3, 50).unwrap();
        assert!((report.position.x - 490.0).abs() < 1e-9);
        // Final move lands exactly on the destination.
        p.current_position = report.position;
        p.moves_remaining = 1;
        let last = optimize_trajectory(&p, 1e-3, 50).unwrap();
        assert!(last.position.dist(p.destination) < 1e-9);
    }

    #[test]
    fn empty_feasible_set_is_detected() {
        let mut p = problem(vec![served(Vec2::new(140.0, 80.0))], 1e-4);
        p.current_position = Vec2::new(0.0, 0.0);
        p.moves_remaining = 2; // reach radius 25 around (500, 0): gap 475 > 50
        let err = solve_epoch_subproblem(&p, p.current_position).unwrap_err();
        assert!(matches!(err, TrajectoryError::InfeasibleEpoch { .. }));
    }

    #[test]
    fn subproblem_matches_grid_oracle() {
        // 200x200 grid plus two zoom refinements, projected into the
        // feasible set, as an independent maximizer.
        let mut rng = stream(57, "test/grid", 0, 0);
        for case in 0..10 {
            let n = rng.gen_range(1..=3);
            let tasks: Vec<ServedTask> = (0..n)
                .map(|_| {
                    let md = Vec2::new(
                        60.0 + rng.gen::<f64>() * 180.0,
                        40.0 + rng.gen::<f64>() * 180.0,
                    );
                    let mut t = served(md);
                    t.size_bits = (1.0 + rng.gen::<f64>() * 4.0) * 1e6;
                    t.deadline = 1.0 + rng.gen::<f64>() * 4.0;
                    t.sat_coeff = 0.5 / (1.0 + t.deadline);
                    t
                })
                .collect();
            let p = problem(tasks, f64::from(n) * 0.5 / 500.0 * 0.1);
            let base = p.current_position;
            let (q_solver, v_solver) = solve_epoch_subproblem(&p, base).unwrap();

            let r1 = p.step_radius;
            fn scan(
                p: &EpochProblem,
                base: Vec2,
                center: Vec2,
                half: f64,
                steps: u32,
                best: &mut (Vec2, f64),
            ) {
                let (c1, r1) = (p.current_position, p.step_radius);
                let (c2, r2) = (p.destination, p.reach_radius());
                for i in 0..=steps {
                    for j in 0..=steps {
                        let q = Vec2::new(
                            center.x - half + 2.0 * half * f64::from(i) / f64::from(steps),
                            center.y - half + 2.0 * half * f64::from(j) / f64::from(steps),
                        );
                        if let Some(qp) = project(q, c1, r1, c2, r2) {
                            let v = surrogate_objective(p, base, qp);
                            if v > best.1 {
                                *best = (qp, v);
                            }
                        }
                    }
                }
            }
            let mut best = (base, f64::NEG_INFINITY);
            scan(&p, base, p.current_position, r1, 200, &mut best);
            scan(&p, base, best.0, r1 * 0.02, 40, &mut best);
            scan(&p, base, best.0, r1 * 0.001, 40, &mut best);
            let (best_q, best_v) = best;
            assert!(
                v_solver >= best_v - 1e-3,
                "case {case}: solver {v_solver} below grid {best_v}"
            );
            assert!(
                q_solver.dist(best_q) < 1.0 || (v_solver - best_v).abs() < 1e-6,
                "case {case}: solver {q_solver:?} vs grid {best_q:?}"
            );
        }
    }
}
