//! Receding-horizon trajectory planner.
//!
//! Minimizes tracking error, potential-field exposure, input effort, and
//! input rate over a prediction horizon, subject to actuator box and rate
//! bounds and a constant-input tail beyond the control horizon. Solved by
//! a sequential quadratic scheme: roll out the nonlinear vehicle model
//! under the incumbent control sequence, linearize the dynamics along the
//! rollout, expand the field to first order with a positive diagonal
//! curvature proxy, and solve the resulting strictly convex QP over the
//! control moves. Steps are accepted only when the true nonlinear cost
//! does not increase, so the per-iteration cost trace is non-increasing.
//!
//! The field term makes the true problem nonconvex; a rollout headed
//! straight at a symmetric obstacle sits on a stationary ridge where the
//! lateral gradient vanishes. The solver therefore also runs the scheme
//! from two fixed steering probes (left and right ramps) whenever objects
//! are present and keeps the cheapest result.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    state_derivative, continuous_jacobians, ControlInput, VehicleParams, VehicleState,
};
use crate::entropy::{EntropyLevel, EntropyReport};
use crate::field::{
    field_curvature_diag, field_gradient, total_field, FieldParams, PerceivedObjectState,
    RoadModel,
};
use crate::qp::{self, ConstrainedQp};

/// Smallest curvature admitted into the field's quadratic proxy; keeps the
/// QP strictly convex where the true field curvature is zero or negative.
const CURVATURE_FLOOR: f64 = 1e-6;
/// SQP terminates once the largest control change, scaled by the actuator
/// range, falls below this.
const STEP_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Prediction horizon N_p (steps).
    pub prediction_horizon: usize,
    /// Control horizon N_c (steps), N_c <= N_p.
    pub control_horizon: usize,
    /// Output weight diag(Q) over [Y, u].
    pub track_weight: [f64; 2],
    /// Input weight diag(R) over [F_xT, delta_f].
    pub effort_weight: [f64; 2],
    /// Input-rate weight diag(S).
    pub rate_weight: [f64; 2],
    /// Longitudinal force bounds (N).
    pub force_bounds: (f64, f64),
    /// Steering bounds (rad).
    pub steer_bounds: (f64, f64),
    /// Per-step force rate bounds (N).
    pub force_rate_bounds: (f64, f64),
    /// Per-step steering rate bounds (rad).
    pub steer_rate_bounds: (f64, f64),
    pub sqp_iterations: usize,
    pub qp_tolerance: f64,
    /// Iteration budget per QP subproblem; bounds worst-case latency.
    pub qp_iteration_cap: usize,
    /// Planner model step (s).
    pub dt: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            prediction_horizon: 30,
            control_horizon: 10,
            track_weight: [2.0, 0.5],
            effort_weight: [1e-7, 5.0],
            rate_weight: [1e-6, 50.0],
            force_bounds: (-7000.0, 4000.0),
            steer_bounds: (-0.4, 0.4),
            force_rate_bounds: (-2000.0, 2000.0),
            steer_rate_bounds: (-0.02, 0.02),
            sqp_iterations: 3,
            qp_tolerance: 1e-5,
            qp_iteration_cap: 500,
            dt: 0.033,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.control_horizon == 0 || self.control_horizon > self.prediction_horizon {
            return Err(PlannerError::InvalidConfig(
                "control horizon must satisfy 1 <= N_c <= N_p",
            ));
        }
        if self.force_bounds.0 >= self.force_bounds.1
            || self.steer_bounds.0 >= self.steer_bounds.1
            || self.force_rate_bounds.0 >= self.force_rate_bounds.1
            || self.steer_rate_bounds.0 >= self.steer_rate_bounds.1
        {
            return Err(PlannerError::InvalidConfig("bounds must be ordered"));
        }
        if self.force_rate_bounds.0 > 0.0 || self.force_rate_bounds.1 < 0.0
            || self.steer_rate_bounds.0 > 0.0 || self.steer_rate_bounds.1 < 0.0
        {
            return Err(PlannerError::InvalidConfig(
                "rate bounds must allow holding the previous input",
            ));
        }
        let pd = self
            .effort_weight
            .iter()
            .zip(&self.rate_weight)
            .all(|(r, s)| *r >= 0.0 && *s >= 0.0 && r + s > 0.0);
        if !pd || self.track_weight.iter().any(|q| *q < 0.0) {
            return Err(PlannerError::InvalidConfig(
                "weights must be non-negative with R + S positive definite",
            ));
        }
        if self.dt <= 0.0 {
            return Err(PlannerError::InvalidConfig("dt must be positive"));
        }
        if self.sqp_iterations == 0 {
            return Err(PlannerError::InvalidConfig("sqp iteration cap must be >= 1"));
        }
        if self.qp_iteration_cap < 10 {
            return Err(PlannerError::InvalidConfig("qp iteration cap must be >= 10"));
        }
        Ok(())
    }

    fn channel_range(&self) -> [f64; 2] {
        [
            self.force_bounds.1 - self.force_bounds.0,
            self.steer_bounds.1 - self.steer_bounds.0,
        ]
    }
}

/// Lane-center lateral target and desired speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub lateral: f64,
    pub speed: f64,
}

/// Which perception channels the planner consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanningPolicy {
    /// Baseline: category only, uncertainty discarded.
    MpcYolo,
    /// Uncertainty-aware: category plus entropy level.
    Puadm,
}

/// Ground-truth world pose of a tracked object; perception contributes only
/// the categorical and uncertainty channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Map a filtered perception report onto the object state the planner's
/// field will use under the given policy.
pub fn effective_object_state(
    report: &EntropyReport,
    pose: &ObjectPose,
    policy: PlanningPolicy,
) -> PerceivedObjectState {
    PerceivedObjectState {
        id: pose.id,
        category: report.winning_label,
        x: pose.x,
        y: pose.y,
        heading: pose.heading,
        level: match policy {
            PlanningPolicy::MpcYolo => EntropyLevel::Low,
            PlanningPolicy::Puadm => report.level,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub tracking: f64,
    pub field: f64,
    pub effort: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// Optimized control moves, length N_c; the first entry is actuated.
    pub controls: Vec<ControlInput>,
    /// Predicted states x(t+1) ... x(t+N_p) under the returned controls,
    /// with the input held constant beyond the control horizon.
    pub predicted_states: Vec<VehicleState>,
    /// Predicted outputs [Y, u] per predicted state.
    pub predicted_outputs: Vec<[f64; 2]>,
    pub cost: CostBreakdown,
    /// True nonlinear cost after each accepted SQP iterate (first entry is
    /// the start sequence). Non-increasing.
    pub cost_trace: Vec<f64>,
    pub solve_ms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Warm start for the next cycle: drop the actuated move, repeat the last.
pub fn shift_warm_start(prev: &PlanResult) -> Vec<ControlInput> {
    let mut seq: Vec<ControlInput> = prev.controls.iter().skip(1).copied().collect();
    if let Some(&last) = prev.controls.last() {
        seq.push(last);
    }
    seq
}

pub struct Planner {
    pub config: PlannerConfig,
    pub vehicle: VehicleParams,
    pub field: FieldParams,
    pub road: RoadModel,
}

impl Planner {
    pub fn new(
        config: PlannerConfig,
        vehicle: VehicleParams,
        field: FieldParams,
        road: RoadModel,
    ) -> Result<Self, PlannerError> {
        config.validate()?;
        Ok(Self {
            config,
            vehicle,
            field,
            road,
        })
    }

    /// Clamp a sequence into the feasible set: each move within the box and
    /// within rate reach of its predecessor. Applied after every QP step so
    /// returned inputs satisfy the bounds exactly. Values the QP left within
    /// its own tolerance of a bound snap onto it, so saturated solutions
    /// ride the bound exactly.
    fn project_feasible(&self, seq: &mut [ControlInput], prev: ControlInput) {
        let cfg = &self.config;
        let range = cfg.channel_range();
        // The snap window tracks the QP tolerance so near-active bounds from
        // an inexact subproblem land on the bound itself.
        let width = (10.0 * cfg.qp_tolerance).max(1e-7);
        let snap = [width * range[0], width * range[1]];
        let sticky = |v: f64, lo: f64, hi: f64, tol: f64| {
            if v >= hi - tol {
                hi
            } else if v <= lo + tol {
                lo
            } else {
                v
            }
        };
        let mut last = ControlInput::new(
            prev.force.clamp(cfg.force_bounds.0, cfg.force_bounds.1),
            prev.steer.clamp(cfg.steer_bounds.0, cfg.steer_bounds.1),
        );
        for w in seq.iter_mut() {
            let f_lo = cfg.force_bounds.0.max(last.force + cfg.force_rate_bounds.0);
            let f_hi = cfg.force_bounds.1.min(last.force + cfg.force_rate_bounds.1);
            let s_lo = cfg.steer_bounds.0.max(last.steer + cfg.steer_rate_bounds.0);
            let s_hi = cfg.steer_bounds.1.min(last.steer + cfg.steer_rate_bounds.1);
            w.force = sticky(w.force, f_lo, f_hi, snap[0]);
            w.steer = sticky(w.steer, s_lo, s_hi, snap[1]);
            last = *w;
        }
    }

    /// Forward-Euler rollout of the nonlinear model with the tail input
    /// held; returns states x(t+1)..x(t+N_p).
    fn rollout(
        &self,
        current: &VehicleState,
        seq: &[ControlInput],
    ) -> Option<Vec<VehicleState>> {
        let mut states = Vec::with_capacity(self.config.prediction_horizon);
        let mut x = *current;
        for k in 0..self.config.prediction_horizon {
            let w = seq[k.min(seq.len() - 1)];
            let f = state_derivative(&x, &w, &self.vehicle).ok()?;
            x = VehicleState::from_vector(&(x.to_vector() + f * self.config.dt));
            states.push(x);
        }
        Some(states)
    }

    /// True nonlinear cost of a control sequence (the planner's own model
    /// and field, no approximations).
    pub fn trajectory_cost(
        &self,
        current: &VehicleState,
        objects: &[PerceivedObjectState],
        reference: &Reference,
        prev_input: ControlInput,
        seq: &[ControlInput],
    ) -> Option<CostBreakdown> {
        let states = self.rollout(current, seq)?;
        Some(self.cost_of_rollout(&states, objects, reference, prev_input, seq))
    }

    fn cost_of_rollout(
        &self,
        states: &[VehicleState],
        objects: &[PerceivedObjectState],
        reference: &Reference,
        prev_input: ControlInput,
        seq: &[ControlInput],
    ) -> CostBreakdown {
        let cfg = &self.config;
        let mut tracking = 0.0;
        let mut field = 0.0;
        for s in states {
            let ey = s.y - reference.lateral;
            let eu = s.u - reference.speed;
            tracking += cfg.track_weight[0] * ey * ey + cfg.track_weight[1] * eu * eu;
            field += total_field(s.x, s.y, objects, &self.road, &self.field);
        }
        let mut effort = 0.0;
        let mut rate = 0.0;
        let mut last = prev_input;
        for w in seq {
            effort += cfg.effort_weight[0] * w.force * w.force
                + cfg.effort_weight[1] * w.steer * w.steer;
            let df = w.force - last.force;
            let ds = w.steer - last.steer;
            rate += cfg.rate_weight[0] * df * df + cfg.rate_weight[1] * ds * ds;
            last = *w;
        }
        CostBreakdown {
            total: tracking + field + effort + rate,
            tracking,
            field,
            effort,
            rate,
        }
    }

    /// Quadratic model of the cost around `seq` in the stacked control
    /// perturbation, plus the stacked [I; D] constraint system.
    fn build_qp(
        &self,
        current: &VehicleState,
        objects: &[PerceivedObjectState],
        reference: &Reference,
        prev_input: ControlInput,
        seq: &[ControlInput],
        states: &[VehicleState],
    ) -> ConstrainedQp {
        let cfg = &self.config;
        let nc = cfg.control_horizon;
        let n = 2 * nc;
        let np = cfg.prediction_horizon;

        let mut hessian = DMatrix::<f64>::zeros(n, n);
        let mut gradient = DVector::<f64>::zeros(n);

        // Sensitivity of the state at step k+1 to each control move.
        let mut sens = nalgebra::Matrix6xX::<f64>::zeros(n);
        let mut x = *current;
        for k in 0..np {
            let j = k.min(nc - 1);
            let w = seq[j];
            let (a, b) = continuous_jacobians(&x, &w, &self.vehicle)
                .expect("rollout already validated this operating point");
            let a_d = SMatrix::<f64, 6, 6>::identity() + a * cfg.dt;
            let b_d = b * cfg.dt;
            sens = a_d * sens;
            for row in 0..6 {
                for col in 0..2 {
                    sens[(row, 2 * j + col)] += b_d[(row, col)];
                }
            }
            x = states[k];

            // Tracking term: rows (Y, u) of the sensitivity.
            let mut t = DMatrix::<f64>::zeros(2, n);
            t.row_mut(0).copy_from(&sens.row(5));
            t.row_mut(1).copy_from(&sens.row(0));
            let e = DVector::from_vec(vec![x.y - reference.lateral, x.u - reference.speed]);
            let q = DMatrix::from_diagonal(&DVector::from_vec(vec![
                cfg.track_weight[0],
                cfg.track_weight[1],
            ]));
            hessian += 2.0 * t.transpose() * &q * &t;
            gradient += 2.0 * t.transpose() * &q * &e;

            // Field term: first order plus clamped diagonal curvature.
            let mut p = DMatrix::<f64>::zeros(2, n);
            p.row_mut(0).copy_from(&sens.row(4));
            p.row_mut(1).copy_from(&sens.row(5));
            let (gx, gy) = field_gradient(x.x, x.y, objects, &self.road, &self.field);
            let (cx, cy) = field_curvature_diag(x.x, x.y, objects, &self.road, &self.field);
            let curv = DMatrix::from_diagonal(&DVector::from_vec(vec![
                cx.max(CURVATURE_FLOOR),
                cy.max(CURVATURE_FLOOR),
            ]));
            hessian += p.transpose() * &curv * &p;
            gradient += p.transpose() * DVector::from_vec(vec![gx, gy]);
        }

        // Effort and rate terms are exactly quadratic in the moves.
        for j in 0..nc {
            for c in 0..2 {
                hessian[(2 * j + c, 2 * j + c)] += 2.0 * cfg.effort_weight[c];
            }
            gradient[2 * j] += 2.0 * cfg.effort_weight[0] * seq[j].force;
            gradient[2 * j + 1] += 2.0 * cfg.effort_weight[1] * seq[j].steer;
        }
        let mut last = prev_input;
        for j in 0..nc {
            let diff = [seq[j].force - last.force, seq[j].steer - last.steer];
            for c in 0..2 {
                let s = cfg.rate_weight[c];
                hessian[(2 * j + c, 2 * j + c)] += 2.0 * s;
                gradient[2 * j + c] += 2.0 * s * diff[c];
                if j > 0 {
                    hessian[(2 * (j - 1) + c, 2 * (j - 1) + c)] += 2.0 * s;
                    hessian[(2 * j + c, 2 * (j - 1) + c)] -= 2.0 * s;
                    hessian[(2 * (j - 1) + c, 2 * j + c)] -= 2.0 * s;
                    gradient[2 * (j - 1) + c] -= 2.0 * s * diff[c];
                }
            }
            last = seq[j];
        }

        // Constraints: box on each move, then rate differences.
        let mut constraints = DMatrix::<f64>::zeros(2 * n, n);
        let mut lower = DVector::<f64>::zeros(2 * n);
        let mut upper = DVector::<f64>::zeros(2 * n);
        let box_lo = [cfg.force_bounds.0, cfg.steer_bounds.0];
        let box_hi = [cfg.force_bounds.1, cfg.steer_bounds.1];
        let rate_lo = [cfg.force_rate_bounds.0, cfg.steer_rate_bounds.0];
        let rate_hi = [cfg.force_rate_bounds.1, cfg.steer_rate_bounds.1];
        for j in 0..nc {
            let w = [seq[j].force, seq[j].steer];
            for c in 0..2 {
                let i = 2 * j + c;
                constraints[(i, i)] = 1.0;
                lower[i] = box_lo[c] - w[c];
                upper[i] = box_hi[c] - w[c];
            }
        }
        let mut last = prev_input;
        for j in 0..nc {
            let diff = [seq[j].force - last.force, seq[j].steer - last.steer];
            for c in 0..2 {
                let i = n + 2 * j + c;
                constraints[(i, 2 * j + c)] = 1.0;
                if j > 0 {
                    constraints[(i, 2 * (j - 1) + c)] = -1.0;
                }
                lower[i] = rate_lo[c] - diff[c];
                upper[i] = rate_hi[c] - diff[c];
            }
            last = seq[j];
        }

        ConstrainedQp {
            hessian,
            gradient,
            constraints,
            lower,
            upper,
        }
    }

    fn run_sqp(
        &self,
        current: &VehicleState,
        objects: &[PerceivedObjectState],
        reference: &Reference,
        prev_input: ControlInput,
        start: Vec<ControlInput>,
        trace: &mut Vec<f64>,
    ) -> (Vec<ControlInput>, CostBreakdown, usize, bool) {
        let cfg = &self.config;
        let range = cfg.channel_range();
        let mut seq = start;
        self.project_feasible(&mut seq, prev_input);
        let mut states = self
            .rollout(current, &seq)
            .expect("feasible start must roll out from a valid state");
        let mut cost = self.cost_of_rollout(&states, objects, reference, prev_input, &seq);
        trace.push(cost.total);

        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..cfg.sqp_iterations {
            iterations += 1;
            let qp = self.build_qp(current, objects, reference, prev_input, &seq, &states);
            let n = qp.gradient.len();
            let sol = qp::solve(&qp, &DVector::zeros(n), cfg.qp_tolerance, cfg.qp_iteration_cap);

            let mut candidate = seq.clone();
            let mut step_scaled = 0.0f64;
            for j in 0..cfg.control_horizon {
                candidate[j].force += sol.x[2 * j];
                candidate[j].steer += sol.x[2 * j + 1];
            }
            self.project_feasible(&mut candidate, prev_input);
            for j in 0..cfg.control_horizon {
                step_scaled = step_scaled
                    .max((candidate[j].force - seq[j].force).abs() / range[0])
                    .max((candidate[j].steer - seq[j].steer).abs() / range[1]);
            }

            let candidate_states = match self.rollout(current, &candidate) {
                Some(s) => s,
                None => break,
            };
            let candidate_cost =
                self.cost_of_rollout(&candidate_states, objects, reference, prev_input, &candidate);
            if candidate_cost.total <= cost.total {
                seq = candidate;
                states = candidate_states;
                cost = candidate_cost;
                trace.push(cost.total);
            } else {
                break;
            }
            if step_scaled < STEP_TOLERANCE {
                converged = true;
                break;
            }
        }
        (seq, cost, iterations, converged)
    }

    /// Fixed steering ramp used to probe both evasion directions.
    fn steering_probe(&self, prev_input: ControlInput, direction: f64) -> Vec<ControlInput> {
        let cfg = &self.config;
        let step = if direction >= 0.0 {
            cfg.steer_rate_bounds.1
        } else {
            cfg.steer_rate_bounds.0
        };
        let mut seq = Vec::with_capacity(cfg.control_horizon);
        let mut w = prev_input;
        for _ in 0..cfg.control_horizon {
            w.steer += step;
            // Bleed the force toward zero within its rate window.
            w.force += (-w.force)
                .clamp(cfg.force_rate_bounds.0, cfg.force_rate_bounds.1);
            seq.push(w);
        }
        seq
    }

    /// Solve one planning cycle. `warm_start` is the previous solution
    /// shifted one step; absent, the solver cold-starts from zero inputs.
    pub fn solve(
        &self,
        current: &VehicleState,
        objects: &[PerceivedObjectState],
        reference: &Reference,
        prev_input: ControlInput,
        warm_start: Option<&[ControlInput]>,
    ) -> PlanResult {
        let begin = Instant::now();
        let cfg = &self.config;
        let nc = cfg.control_horizon;

        let base: Vec<ControlInput> = match warm_start {
            Some(seq) if !seq.is_empty() => {
                let mut s: Vec<ControlInput> = seq.to_vec();
                s.resize(nc, *seq.last().unwrap());
                s
            }
            _ => vec![ControlInput::default(); nc],
        };

        let mut starts = vec![base];
        if !objects.is_empty() {
            starts.push(self.steering_probe(prev_input, 1.0));
            starts.push(self.steering_probe(prev_input, -1.0));
        }

        let mut best: Option<(Vec<ControlInput>, CostBreakdown, usize, bool, Vec<f64>)> = None;
        for start in starts {
            let mut trace = Vec::new();
            let (seq, cost, iterations, converged) =
                self.run_sqp(current, objects, reference, prev_input, start, &mut trace);
            let better = match &best {
                None => true,
                Some((_, c, ..)) => cost.total < c.total,
            };
            if better {
                best = Some((seq, cost, iterations, converged, trace));
            }
        }
        let (controls, cost, iterations, converged, cost_trace) =
            best.expect("at least one start is always evaluated");

        let predicted_states = self
            .rollout(current, &controls)
            .expect("winning sequence already rolled out");
        let predicted_outputs = predicted_states.iter().map(|s| [s.y, s.u]).collect();
        PlanResult {
            controls,
            predicted_states,
            predicted_outputs,
            cost,
            cost_trace,
            solve_ms: begin.elapsed().as_secs_f64() * 1e3,
            iterations,
            converged,
        }
    }
}
