//! Artificial potential fields over the road plane.
//!
//! Each perceived object contributes a rotated anisotropic exponential bump
//! whose characteristic lengths grow with the object's uncertainty level;
//! road boundaries contribute a one-sided quadratic wall. The planner
//! consumes the summed field and its spatial derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::EntropyLevel;

/// Detector category order; index positions match the per-category score
/// vectors produced by the perception ensemble.
pub const CATEGORY_NAMES: [&str; 11] = [
    "car",
    "bus",
    "truck",
    "train",
    "bike",
    "motor",
    "person",
    "rider",
    "traffic sign",
    "traffic light",
    "traffic cone",
];

pub const PERSON: usize = 6;
pub const TRAFFIC_CONE: usize = 10;

/// Step used for finite-difference field derivatives when the shape
/// exponent makes the analytic form unavailable.
const FD_STEP: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("category parameter {0} must be positive")]
    NonPositiveParam(&'static str),
    #[error("person characteristic lengths must dominate category {0}")]
    PersonNotDominant(usize),
    #[error("safety margins must be non-negative")]
    NegativeMargin,
    #[error("road model invalid: {0}")]
    InvalidRoad(&'static str),
}

/// Per-category field shape: intensity `a_c`, shape exponent `b_c`, and
/// characteristic length/width `L_x`, `L_y` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryFieldParams {
    pub intensity: f64,
    pub shape: f64,
    pub length: f64,
    pub width: f64,
}

/// Extra clearance added on top of the pedestrian field at the warning
/// level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyMargins {
    pub u_x: f64,
    pub u_y: f64,
}

impl Default for SafetyMargins {
    fn default() -> Self {
        Self { u_x: 8.0, u_y: 1.0 }
    }
}

/// Field parameters for the whole category set plus the safety margins.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    categories: Vec<CategoryFieldParams>,
    person: usize,
    pub margins: SafetyMargins,
}

impl Default for FieldParams {
    fn default() -> Self {
        // Pedestrian and traffic-cone extents are the published demo values;
        // the remaining categories are interpolated between them and only
        // matter outside the shipped scenarios. Intensities order the hazard
        // classes: vulnerable road users highest, static furniture lowest.
        let p = |intensity: f64, length: f64, width: f64| CategoryFieldParams {
            intensity,
            shape: 1.0,
            length,
            width,
        };
        let categories = vec![
            p(35.0, 12.0, 1.2), // car
            p(38.0, 13.0, 1.4), // bus
            p(38.0, 13.0, 1.4), // truck
            p(40.0, 14.0, 1.4), // train
            p(40.0, 13.0, 1.2), // bike
            p(40.0, 13.0, 1.2), // motor
            p(50.0, 15.0, 1.5), // person
            p(45.0, 14.0, 1.4), // rider
            p(1.5, 8.0, 0.5),   // traffic sign
            p(1.5, 8.0, 0.5),   // traffic light
            p(1.5, 8.0, 0.5),   // traffic cone
        ];
        Self::new(categories, PERSON, SafetyMargins::default()).unwrap()
    }
}

impl FieldParams {
    pub fn new(
        categories: Vec<CategoryFieldParams>,
        person: usize,
        margins: SafetyMargins,
    ) -> Result<Self, FieldError> {
        if margins.u_x < 0.0 || margins.u_y < 0.0 {
            return Err(FieldError::NegativeMargin);
        }
        let person_params = categories
            .get(person)
            .copied()
            .ok_or(FieldError::PersonNotDominant(person))?;
        for (i, c) in categories.iter().enumerate() {
            if c.intensity <= 0.0 {
                return Err(FieldError::NonPositiveParam("intensity"));
            }
            if c.shape <= 0.0 {
                return Err(FieldError::NonPositiveParam("shape"));
            }
            if c.length <= 0.0 || c.width <= 0.0 {
                return Err(FieldError::NonPositiveParam("length/width"));
            }
            if c.length > person_params.length || c.width > person_params.width {
                return Err(FieldError::PersonNotDominant(i));
            }
        }
        Ok(Self {
            categories,
            person,
            margins,
        })
    }

    /// Unknown categories fall back to pedestrian parameters, the most
    /// conservative choice.
    pub fn category(&self, c: usize) -> &CategoryFieldParams {
        self.categories.get(c).unwrap_or(&self.categories[self.person])
    }

    pub fn person(&self) -> &CategoryFieldParams {
        &self.categories[self.person]
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    /// Field shape actually applied at an uncertainty level: the object's
    /// own class at `Low`, the pedestrian standard at `Medium` and `High`.
    fn effective(&self, c: usize, level: EntropyLevel) -> &CategoryFieldParams {
        match level {
            EntropyLevel::Low => self.category(c),
            _ => self.person(),
        }
    }
}

/// One object as the planner sees it: ground-truth pose plus the filtered
/// category and uncertainty level from perception.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceivedObjectState {
    pub id: u64,
    pub category: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub level: EntropyLevel,
}

/// Straight road along +X with two lateral boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadModel {
    pub y_right: f64,
    pub y_left: f64,
    /// Boundary wall intensity a_q (cost / m^2).
    pub intensity: f64,
    /// Distance D_a below which the wall engages (m).
    pub safety_distance: f64,
    pub lane_width: f64,
    pub lane_center_y: f64,
}

impl Default for RoadModel {
    fn default() -> Self {
        // Ego lane centered at Y = 0 with one adjacent lane to the left for
        // evasion.
        Self {
            y_right: -1.75,
            y_left: 5.25,
            intensity: 10.0,
            safety_distance: 1.0,
            lane_width: 3.5,
            lane_center_y: 0.0,
        }
    }
}

impl RoadModel {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.y_right >= self.y_left {
            return Err(FieldError::InvalidRoad("y_right must be below y_left"));
        }
        if self.safety_distance <= 0.0 {
            return Err(FieldError::InvalidRoad("safety distance must be positive"));
        }
        if self.intensity <= 0.0 {
            return Err(FieldError::InvalidRoad("intensity must be positive"));
        }
        Ok(())
    }
}

/// Characteristic-length expansion (E_x, E_y) for an uncertainty level:
/// zero at `Low`, up to the pedestrian extent at `Medium`, plus the safety
/// margins at `High`.
pub fn uncertainty_expansion(
    category: usize,
    level: EntropyLevel,
    params: &FieldParams,
) -> (f64, f64) {
    let own = params.category(category);
    let person = params.person();
    match level {
        EntropyLevel::Low => (0.0, 0.0),
        EntropyLevel::Medium => (person.length - own.length, person.width - own.width),
        EntropyLevel::High => (
            person.length - own.length + params.margins.u_x,
            person.width - own.width + params.margins.u_y,
        ),
    }
}

/// Characteristic lengths (lambda_x, lambda_y) after uncertainty expansion.
pub fn characteristic_lengths(
    category: usize,
    level: EntropyLevel,
    params: &FieldParams,
) -> (f64, f64) {
    let own = params.category(category);
    let (ex, ey) = uncertainty_expansion(category, level, params);
    (own.length + ex, own.width + ey)
}

/// Object-frame quadratic argument of the field exponent.
fn exponent_base(x: f64, y: f64, obj: &PerceivedObjectState, lx: f64, ly: f64) -> f64 {
    let (sin, cos) = obj.heading.sin_cos();
    let dx = x - obj.x;
    let dy = y - obj.y;
    let qx = dx * cos + dy * sin;
    let qy = -dx * sin + dy * cos;
    qx * qx / (2.0 * lx * lx) + qy * qy / (2.0 * ly * ly)
}

/// Potential contributed by one object at world point (x, y). Strictly
/// positive, maximal (= effective intensity) at the object center.
pub fn object_field(x: f64, y: f64, obj: &PerceivedObjectState, params: &FieldParams) -> f64 {
    let eff = params.effective(obj.category, obj.level);
    let (lx, ly) = characteristic_lengths(obj.category, obj.level, params);
    let base = exponent_base(x, y, obj, lx, ly);
    eff.intensity * (-base.powf(eff.shape)).exp()
}

/// Road-boundary potential: quadratic wall engaging within the safety
/// distance of either boundary, zero elsewhere. Continuous with continuous
/// first derivative at the engagement distance.
pub fn road_field(_x: f64, y: f64, road: &RoadModel) -> f64 {
    let s = (y - road.y_right).min(road.y_left - y);
    if s <= road.safety_distance {
        let gap = s - road.safety_distance;
        road.intensity * gap * gap
    } else {
        0.0
    }
}

/// Total potential: sum of all object fields plus the road field.
pub fn total_field(
    x: f64,
    y: f64,
    objects: &[PerceivedObjectState],
    road: &RoadModel,
    params: &FieldParams,
) -> f64 {
    objects
        .iter()
        .map(|o| object_field(x, y, o, params))
        .sum::<f64>()
        + road_field(x, y, road)
}

fn object_gradient(x: f64, y: f64, obj: &PerceivedObjectState, params: &FieldParams) -> (f64, f64) {
    let eff = params.effective(obj.category, obj.level);
    if (eff.shape - 1.0).abs() < 1e-12 {
        let (lx, ly) = characteristic_lengths(obj.category, obj.level, params);
        let (sin, cos) = obj.heading.sin_cos();
        let dx = x - obj.x;
        let dy = y - obj.y;
        let qx = dx * cos + dy * sin;
        let qy = -dx * sin + dy * cos;
        let value = object_field(x, y, obj, params);
        let dqx = qx / (lx * lx);
        let dqy = qy / (ly * ly);
        (
            -value * (dqx * cos - dqy * sin),
            -value * (dqx * sin + dqy * cos),
        )
    } else {
        let f = |px: f64, py: f64| object_field(px, py, obj, params);
        (
            (f(x + FD_STEP, y) - f(x - FD_STEP, y)) / (2.0 * FD_STEP),
            (f(x, y + FD_STEP) - f(x, y - FD_STEP)) / (2.0 * FD_STEP),
        )
    }
}

fn road_gradient(y: f64, road: &RoadModel) -> f64 {
    let from_right = y - road.y_right;
    let from_left = road.y_left - y;
    let s = from_right.min(from_left);
    if s > road.safety_distance {
        return 0.0;
    }
    let slope = 2.0 * road.intensity * (s - road.safety_distance);
    // Ties at the equidistant midline resolve to the right boundary.
    if from_right <= from_left {
        slope
    } else {
        -slope
    }
}

/// Spatial gradient of the total field, analytic wherever the shape
/// exponent is 1 and central-difference otherwise.
pub fn field_gradient(
    x: f64,
    y: f64,
    objects: &[PerceivedObjectState],
    road: &RoadModel,
    params: &FieldParams,
) -> (f64, f64) {
    let mut gx = 0.0;
    let mut gy = 0.0;
    for obj in objects {
        let (ox, oy) = object_gradient(x, y, obj, params);
        gx += ox;
        gy += oy;
    }
    (gx, gy + road_gradient(y, road))
}

/// Pure second partial derivatives (d2/dX2, d2/dY2) of the total field;
/// the planner clamps these into a positive curvature proxy.
pub fn field_curvature_diag(
    x: f64,
    y: f64,
    objects: &[PerceivedObjectState],
    road: &RoadModel,
    params: &FieldParams,
) -> (f64, f64) {
    let mut cx = 0.0;
    let mut cy = 0.0;
    for obj in objects {
        let eff = params.effective(obj.category, obj.level);
        if (eff.shape - 1.0).abs() < 1e-12 {
            let (lx, ly) = characteristic_lengths(obj.category, obj.level, params);
            let (sin, cos) = obj.heading.sin_cos();
            let dx = x - obj.x;
            let dy = y - obj.y;
            let qx = dx * cos + dy * sin;
            let qy = -dx * sin + dy * cos;
            let value = object_field(x, y, obj, params);
            let bx = -(qx / (lx * lx) * cos - qy / (ly * ly) * sin);
            let by = -(qx / (lx * lx) * sin + qy / (ly * ly) * cos);
            let bxx = -(cos * cos / (lx * lx) + sin * sin / (ly * ly));
            let byy = -(sin * sin / (lx * lx) + cos * cos / (ly * ly));
            cx += value * (bx * bx + bxx);
            cy += value * (by * by + byy);
        } else {
            let f = |px: f64, py: f64| object_field(px, py, obj, params);
            let center = f(x, y);
            cx += (f(x + FD_STEP, y) - 2.0 * center + f(x - FD_STEP, y)) / (FD_STEP * FD_STEP);
            cy += (f(x, y + FD_STEP) - 2.0 * center + f(x, y - FD_STEP)) / (FD_STEP * FD_STEP);
        }
    }
    let s = (y - road.y_right).min(road.y_left - y);
    if s <= road.safety_distance {
        cy += 2.0 * road.intensity;
    }
    (cx, cy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(category: usize, x: f64, y: f64, heading: f64, level: EntropyLevel) -> PerceivedObjectState {
        PerceivedObjectState {
            id: 0,
            category,
            x,
            y,
            heading,
            level,
        }
    }

    #[test]
    fn expansion_levels_for_cone() {
        let p = FieldParams::default();
        assert_eq!(
            uncertainty_expansion(TRAFFIC_CONE, EntropyLevel::Low, &p),
            (0.0, 0.0)
        );
        assert_eq!(
            uncertainty_expansion(TRAFFIC_CONE, EntropyLevel::Medium, &p),
            (7.0, 1.0)
        );
        assert_eq!(
            uncertainty_expansion(TRAFFIC_CONE, EntropyLevel::High, &p),
            (15.0, 2.0)
        );
    }

    #[test]
    fn expansion_person_level_zero() {
        let p = FieldParams::default();
        assert_eq!(uncertainty_expansion(PERSON, EntropyLevel::Low, &p), (0.0, 0.0));
        assert_eq!(
            uncertainty_expansion(PERSON, EntropyLevel::Medium, &p),
            (0.0, 0.0)
        );
    }

    #[test]
    fn characteristic_lengths_table() {
        let p = FieldParams::default();
        assert_eq!(
            characteristic_lengths(TRAFFIC_CONE, EntropyLevel::Low, &p),
            (8.0, 0.5)
        );
        assert_eq!(
            characteristic_lengths(TRAFFIC_CONE, EntropyLevel::Medium, &p),
            (15.0, 1.5)
        );
        assert_eq!(
            characteristic_lengths(TRAFFIC_CONE, EntropyLevel::High, &p),
            (23.0, 2.5)
        );
    }

    #[test]
    fn unknown_category_maps_to_person() {
        let p = FieldParams::default();
        assert_eq!(
            characteristic_lengths(99, EntropyLevel::Low, &p),
            (15.0, 1.5)
        );
        assert_eq!(
            characteristic_lengths(99, EntropyLevel::High, &p),
            (23.0, 2.5)
        );
    }

    #[test]
    fn field_at_center_equals_intensity() {
        let p = FieldParams::default();
        let o = obj(PERSON, 30.0, -1.0, 0.0, EntropyLevel::Low);
        let v = object_field(30.0, -1.0, &o, &p);
        assert!((v - 50.0).abs() < 1e-12);
    }

    #[test]
    fn field_one_characteristic_length_ahead() {
        let p = FieldParams::default();
        let o = obj(PERSON, 0.0, 0.0, 0.0, EntropyLevel::Low);
        let v = object_field(15.0, 0.0, &o, &p);
        assert!((v - 50.0 * (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rotated_heading_swaps_axes() {
        let p = FieldParams::default();
        let straight = obj(PERSON, 0.0, 0.0, 0.0, EntropyLevel::Low);
        let rotated = obj(PERSON, 0.0, 0.0, std::f64::consts::FRAC_PI_2, EntropyLevel::Low);
        let v_straight = object_field(15.0, 0.0, &straight, &p);
        let v_rotated = object_field(0.0, 15.0, &rotated, &p);
        assert!((v_straight - v_rotated).abs() < 1e-12);
    }

    #[test]
    fn rotation_equivariance() {
        let p = FieldParams::default();
        let base = obj(TRAFFIC_CONE, 2.0, -1.0, 0.3, EntropyLevel::Low);
        let query = (5.0, 1.5);
        let v0 = object_field(query.0, query.1, &base, &p);
        // Rotate both the query point and the heading about the object center.
        let rot = 1.1f64;
        let (sin, cos) = rot.sin_cos();
        let dx = query.0 - base.x;
        let dy = query.1 - base.y;
        let rotated_query = (base.x + dx * cos - dy * sin, base.y + dx * sin + dy * cos);
        let mut rotated_obj = base;
        rotated_obj.heading += rot;
        let v1 = object_field(rotated_query.0, rotated_query.1, &rotated_obj, &p);
        assert!((v0 - v1).abs() < 1e-12);
    }

    #[test]
    fn level_one_cone_equals_level_zero_person() {
        let p = FieldParams::default();
        let cone = obj(TRAFFIC_CONE, 10.0, -1.0, 0.2, EntropyLevel::Medium);
        let person = obj(PERSON, 10.0, -1.0, 0.2, EntropyLevel::Low);
        for (x, y) in [(0.0, 0.0), (10.0, -1.0), (12.0, 1.0), (-3.0, 2.0)] {
            let vc = object_field(x, y, &cone, &p);
            let vp = object_field(x, y, &person, &p);
            assert!((vc - vp).abs() < 1e-12, "mismatch at ({x}, {y})");
        }
    }

    #[test]
    fn field_monotone_in_level_off_center() {
        let p = FieldParams::default();
        for &(x, y) in &[(5.0, 0.5), (20.0, -2.0), (35.0, 1.0), (28.0, -0.5)] {
            let mut prev = 0.0;
            for level in [EntropyLevel::Low, EntropyLevel::Medium, EntropyLevel::High] {
                let v = object_field(x, y, &obj(TRAFFIC_CONE, 30.0, -1.0, 0.0, level), &p);
                assert!(v >= prev, "level inflation must not shrink the field");
                prev = v;
            }
        }
    }

    #[test]
    fn road_field_zero_at_lane_center() {
        let road = RoadModel::default();
        assert_eq!(road_field(0.0, 0.0, &road), 0.0);
        assert_eq!(road_field(100.0, 3.5, &road), 0.0);
    }

    #[test]
    fn road_field_on_boundary() {
        let road = RoadModel::default();
        let expected = road.intensity * road.safety_distance * road.safety_distance;
        assert!((road_field(0.0, road.y_right, &road) - expected).abs() < 1e-12);
        assert!((road_field(0.0, road.y_left, &road) - expected).abs() < 1e-12);
    }

    #[test]
    fn road_field_smooth_at_engagement_distance() {
        let road = RoadModel::default();
        let y = road.y_right + road.safety_distance;
        assert_eq!(road_field(0.0, y, &road), 0.0);
        assert_eq!(road_gradient(y, &road), 0.0);
    }

    #[test]
    fn total_field_additive() {
        let p = FieldParams::default();
        let road = RoadModel::default();
        let o = obj(PERSON, 10.0, -1.0, 0.0, EntropyLevel::Low);
        assert_eq!(total_field(0.0, 0.0, &[], &road, &p), 0.0);
        let single = total_field(5.0, 0.0, &[o], &road, &p);
        assert!((single - object_field(5.0, 0.0, &o, &p)).abs() < 1e-15);
        let double = total_field(5.0, 0.0, &[o, o], &road, &p);
        assert!((double - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_center_and_far_away() {
        let p = FieldParams::default();
        let road = RoadModel::default();
        let o = obj(PERSON, 10.0, 0.0, 0.0, EntropyLevel::Low);
        let (gx, gy) = field_gradient(10.0, 0.0, &[o], &road, &p);
        assert!(gx.abs() < 1e-12 && gy.abs() < 1e-12);
        let (gx, gy) = field_gradient(500.0, 0.0, &[o], &road, &p);
        assert!(gx.abs() < 1e-9 && gy.abs() < 1e-9);
    }

    fn fd_gradient(
        x: f64,
        y: f64,
        objects: &[PerceivedObjectState],
        road: &RoadModel,
        p: &FieldParams,
    ) -> (f64, f64) {
        let h = 1e-5;
        (
            (total_field(x + h, y, objects, road, p) - total_field(x - h, y, objects, road, p))
                / (2.0 * h),
            (total_field(x, y + h, objects, road, p) - total_field(x, y - h, objects, road, p))
                / (2.0 * h),
        )
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let p = FieldParams::default();
        let road = RoadModel::default();
        let objects = [
            obj(PERSON, 12.0, -1.0, 0.1, EntropyLevel::High),
            obj(TRAFFIC_CONE, 25.0, 1.0, -0.4, EntropyLevel::Low),
        ];
        // Deterministic low-discrepancy sweep over the active region.
        for i in 0..200 {
            let t = i as f64;
            let x = -5.0 + 40.0 * ((t * 0.618_033_988_749_895) % 1.0);
            let y = -1.7 + 6.8 * ((t * 0.754_877_666_246_693) % 1.0);
            let (ax, ay) = field_gradient(x, y, &objects, &road, &p);
            let (fx, fy) = fd_gradient(x, y, &objects, &road, &p);
            let scale = (ax * ax + ay * ay).sqrt().max(1e-6);
            let err = ((ax - fx).powi(2) + (ay - fy).powi(2)).sqrt() / scale;
            assert!(err < 1e-4, "gradient mismatch {err} at ({x}, {y})");
        }
    }

    #[test]
    fn nonunit_shape_uses_finite_difference_path() {
        let mut categories = vec![
            CategoryFieldParams {
                intensity: 10.0,
                shape: 2.0,
                length: 5.0,
                width: 1.0,
            };
            2
        ];
        categories[1].length = 6.0;
        categories[1].width = 1.5;
        let p = FieldParams::new(categories, 1, SafetyMargins::default()).unwrap();
        let o = obj(0, 0.0, 0.0, 0.0, EntropyLevel::Low);
        let road = RoadModel::default();
        let (ax, ay) = field_gradient(2.0, 0.5, &[o], &road, &p);
        let (fx, fy) = fd_gradient(2.0, 0.5, &[o], &road, &p);
        assert!((ax - fx).abs() < 1e-5 && (ay - fy).abs() < 1e-5);
    }

    #[test]
    fn curvature_diag_matches_second_differences() {
        let p = FieldParams::default();
        let road = RoadModel::default();
        let objects = [obj(PERSON, 8.0, -0.5, 0.25, EntropyLevel::High)];
        let h = 1e-4;
        for &(x, y) in &[(6.0, 0.0), (8.0, -0.5), (10.0, 1.0), (0.0, -1.2)] {
            let (cx, cy) = field_curvature_diag(x, y, &objects, &road, &p);
            let f = |px: f64, py: f64| total_field(px, py, &objects, &road, &p);
            let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
            let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
            assert!((cx - fxx).abs() < 1e-3 * cx.abs().max(1.0));
            assert!((cy - fyy).abs() < 1e-3 * cy.abs().max(1.0));
        }
    }

    #[test]
    fn params_validation_rejects_dominated_person() {
        let mut categories = vec![
            CategoryFieldParams {
                intensity: 1.0,
                shape: 1.0,
                length: 20.0,
                width: 1.0,
            },
            CategoryFieldParams {
                intensity: 1.0,
                shape: 1.0,
                length: 15.0,
                width: 1.5,
            },
        ];
        assert_eq!(
            FieldParams::new(categories.clone(), 1, SafetyMargins::default()).unwrap_err(),
            FieldError::PersonNotDominant(0)
        );
        categories[0].length = 10.0;
        assert!(FieldParams::new(categories, 1, SafetyMargins::default()).is_ok());
    }
}
