//! 3-DOF single-track vehicle model.
//!
//! Longitudinal, lateral, and yaw dynamics with linear tire forces, plus
//! planar kinematics. The simulated plant integrates the nonlinear model
//! with classical RK4; the planner consumes a forward-Euler linearization
//! around an operating point. The two integrators differ on purpose: the
//! planner's model is an approximation of the plant, as it would be on a
//! real vehicle.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateVector = SVector<f64, 6>;
pub type StateMatrix = SMatrix<f64, 6, 6>;
pub type InputMatrix = SMatrix<f64, 6, 2>;
pub type OutputMatrix = SMatrix<f64, 2, 6>;

/// Slip angles lose meaning as longitudinal speed approaches zero; the
/// model rejects states below this floor (scenario speeds are ~15 m/s).
pub const VELOCITY_FLOOR: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("longitudinal velocity {0} at or below the {VELOCITY_FLOOR} m/s model floor")]
    VelocityFloor(f64),
    #[error("non-finite state")]
    NonFiniteState,
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Vehicle state: body-frame velocities (u, v), yaw rate r, and world-frame
/// pose (phi, x, y). The heading is stored unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal velocity (m/s).
    pub u: f64,
    /// Lateral velocity (m/s).
    pub v: f64,
    /// Yaw rate (rad/s).
    pub r: f64,
    /// Heading (rad), unwrapped.
    pub phi: f64,
    /// World X (m).
    pub x: f64,
    /// World Y (m).
    pub y: f64,
}

impl VehicleState {
    pub fn to_vector(&self) -> StateVector {
        StateVector::from([self.u, self.v, self.r, self.phi, self.x, self.y])
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            u: v[0],
            v: v[1],
            r: v[2],
            phi: v[3],
            x: v[4],
            y: v[5],
        }
    }

    fn check(&self) -> Result<(), DynamicsError> {
        let vec = self.to_vector();
        if vec.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::NonFiniteState);
        }
        if self.u <= VELOCITY_FLOOR {
            return Err(DynamicsError::VelocityFloor(self.u));
        }
        Ok(())
    }
}

/// Control input: total longitudinal tire force and front steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// F_xT (N).
    pub force: f64,
    /// delta_f (rad).
    pub steer: f64,
}

impl ControlInput {
    pub fn new(force: f64, steer: f64) -> Self {
        Self { force, steer }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Yaw inertia I_z (kg m^2).
    pub yaw_inertia: f64,
    /// CG to front axle l_f (m).
    pub front_axle: f64,
    /// CG to rear axle l_r (m).
    pub rear_axle: f64,
    /// Front cornering stiffness (N/rad).
    pub cornering_front: f64,
    /// Rear cornering stiffness (N/rad).
    pub cornering_rear: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1860.0,
            yaw_inertia: 3438.5,
            front_axle: 1.18,
            rear_axle: 1.77,
            cornering_front: 90_000.0,
            cornering_rear: 90_000.0,
        }
    }
}

/// Time derivative of the state under the nonlinear model.
///
/// Tire forces use the standard linear convention F_y = C_alpha * alpha with
/// alpha_f = delta - (v + l_f r)/u and alpha_r = -(v - l_r r)/u.
pub fn state_derivative(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Result<StateVector, DynamicsError> {
    state.check()?;
    let VehicleState { u, v, r, phi, .. } = *state;
    let alpha_f = input.steer - (v + params.front_axle * r) / u;
    let alpha_r = -(v - params.rear_axle * r) / u;
    let f_yf = params.cornering_front * alpha_f;
    let f_yr = params.cornering_rear * alpha_r;

    let (sin_phi, cos_phi) = phi.sin_cos();
    Ok(StateVector::from([
        input.force / params.mass + v * r,
        (f_yf + f_yr) / params.mass - u * r,
        (f_yf * params.front_axle - f_yr * params.rear_axle) / params.yaw_inertia,
        r,
        u * cos_phi - v * sin_phi,
        u * sin_phi + v * cos_phi,
    ]))
}

/// One classical RK4 step of the nonlinear model.
pub fn integrate_step(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState, DynamicsError> {
    if dt <= 0.0 {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let x0 = state.to_vector();
    let k1 = state_derivative(state, input, params)?;
    let k2 = state_derivative(
        &VehicleState::from_vector(&(x0 + k1 * (dt / 2.0))),
        input,
        params,
    )?;
    let k3 = state_derivative(
        &VehicleState::from_vector(&(x0 + k2 * (dt / 2.0))),
        input,
        params,
    )?;
    let k4 = state_derivative(&VehicleState::from_vector(&(x0 + k3 * dt)), input, params)?;
    let next = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    Ok(VehicleState::from_vector(&next))
}

/// Analytic Jacobians of the continuous dynamics at an operating point.
pub fn continuous_jacobians(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Result<(StateMatrix, InputMatrix), DynamicsError> {
    state.check()?;
    let VehicleState { u, v, r, phi, .. } = *state;
    let _ = input;
    let m = params.mass;
    let iz = params.yaw_inertia;
    let lf = params.front_axle;
    let lr = params.rear_axle;
    let cf = params.cornering_front;
    let cr = params.cornering_rear;
    let u2 = u * u;
    let (sin_phi, cos_phi) = phi.sin_cos();

    let mut a = StateMatrix::zeros();
    // du_dot / d(v, r)
    a[(0, 1)] = r;
    a[(0, 2)] = v;
    // dv_dot / d(u, v, r)
    a[(1, 0)] = (cf * (v + lf * r) + cr * (v - lr * r)) / (m * u2) - r;
    a[(1, 1)] = -(cf + cr) / (m * u);
    a[(1, 2)] = (-cf * lf + cr * lr) / (m * u) - u;
    // dr_dot / d(u, v, r)
    a[(2, 0)] = (cf * lf * (v + lf * r) - cr * lr * (v - lr * r)) / (iz * u2);
    a[(2, 1)] = (-cf * lf + cr * lr) / (iz * u);
    a[(2, 2)] = -(cf * lf * lf + cr * lr * lr) / (iz * u);
    // dphi_dot / dr
    a[(3, 2)] = 1.0;
    // dX_dot, dY_dot
    a[(4, 0)] = cos_phi;
    a[(4, 1)] = -sin_phi;
    a[(4, 3)] = -u * sin_phi - v * cos_phi;
    a[(5, 0)] = sin_phi;
    a[(5, 1)] = cos_phi;
    a[(5, 3)] = u * cos_phi - v * sin_phi;

    let mut b = InputMatrix::zeros();
    b[(0, 0)] = 1.0 / m;
    b[(1, 1)] = cf / m;
    b[(2, 1)] = cf * lf / iz;

    Ok((a, b))
}

/// Forward-Euler discretization of the linearized model about an operating
/// point, with the affine remainder retained so the prediction is exact at
/// the point itself. Outputs select [Y, u].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLinearModel {
    pub a_d: StateMatrix,
    pub b_d: InputMatrix,
    pub c_d: OutputMatrix,
    pub op_state: VehicleState,
    pub op_input: ControlInput,
    /// Euler successor of the operating point.
    pub op_next: StateVector,
    pub dt: f64,
}

impl DiscreteLinearModel {
    /// Predicted next state for a (state, input) pair near the operating
    /// point.
    pub fn predict(&self, state: &VehicleState, input: &ControlInput) -> StateVector {
        let dx = state.to_vector() - self.op_state.to_vector();
        let du = SVector::<f64, 2>::new(
            input.force - self.op_input.force,
            input.steer - self.op_input.steer,
        );
        self.op_next + self.a_d * dx + self.b_d * du
    }

    pub fn output(state: &VehicleState) -> [f64; 2] {
        [state.y, state.u]
    }
}

pub fn output_matrix() -> OutputMatrix {
    let mut c = OutputMatrix::zeros();
    c[(0, 5)] = 1.0; // Y
    c[(1, 0)] = 1.0; // u
    c
}

pub fn linearize_discretize(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<DiscreteLinearModel, DynamicsError> {
    if dt <= 0.0 {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let (a, b) = continuous_jacobians(state, input, params)?;
    let f0 = state_derivative(state, input, params)?;
    Ok(DiscreteLinearModel {
        a_d: StateMatrix::identity() + a * dt,
        b_d: b * dt,
        c_d: output_matrix(),
        op_state: *state,
        op_input: *input,
        op_next: state.to_vector() + f0 * dt,
        dt,
    })
}
