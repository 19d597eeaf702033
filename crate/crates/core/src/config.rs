//! Scenario configuration.
//!
//! One human-editable TOML file with `scenario`, `vehicle`, `field`,
//! `planner`, and `case` blocks. Every key has a shipped default matching
//! the demonstration parameters, so an empty file is a valid config.
//! Command-line overrides are dotted paths applied on top of the file
//! before deserialization.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleParams;
use crate::entropy::EntropyConfig;
use crate::field::{CategoryFieldParams, FieldParams, RoadModel, SafetyMargins, CATEGORY_NAMES};
use crate::planner::PlannerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid override '{0}': expected key=value")]
    MalformedOverride(String),
    #[error("override path '{0}' does not address a config location")]
    BadOverridePath(String),
    #[error("field table has no '{0}' category")]
    MissingCategory(&'static str),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioBlock {
    /// Ego cruise speed v_e (m/s).
    pub ego_speed: f64,
    /// Whether the worker is present at all.
    pub worker: bool,
    /// Worker forward speed v_p (m/s).
    pub worker_speed: f64,
    /// Initial longitudinal gap x_0 (m).
    pub worker_ahead: f64,
    /// Worker offset to the right of the lane center y_0 (m).
    pub worker_offset: f64,
    /// Simulation duration cap (s).
    pub duration: f64,
    pub seed: u64,
    /// "synthetic" or a path to a recorded detections JSONL stream.
    pub perception: String,
    /// Ensemble size T.
    pub ensemble_size: usize,
    /// Category count C.
    pub categories: usize,
    /// Clustering affinity threshold theta_aff.
    pub affinity_threshold: f64,
    /// Entropy penalty factor f_p.
    pub penalty_factor: f64,
    /// Entropy level threshold theta_lm (nats).
    pub theta_low_medium: f64,
    /// Entropy level threshold theta_mh (nats).
    pub theta_medium_high: f64,
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        Self {
            ego_speed: 15.0,
            worker: true,
            worker_speed: 1.0,
            worker_ahead: 30.0,
            worker_offset: 1.0,
            duration: 10.0,
            seed: 42,
            perception: "synthetic".into(),
            ensemble_size: 5,
            categories: 11,
            affinity_threshold: 0.95,
            penalty_factor: 0.1,
            theta_low_medium: 1.2,
            theta_medium_high: 1.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleBlock {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub front_axle: f64,
    pub rear_axle: f64,
    pub cornering_front: f64,
    pub cornering_rear: f64,
}

impl Default for VehicleBlock {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self {
            mass: p.mass,
            yaw_inertia: p.yaw_inertia,
            front_axle: p.front_axle,
            rear_axle: p.rear_axle,
            cornering_front: p.cornering_front,
            cornering_rear: p.cornering_rear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub name: String,
    pub intensity: f64,
    pub shape: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldBlock {
    /// Safety margin U_x (m).
    pub margin_x: f64,
    /// Safety margin U_y (m).
    pub margin_y: f64,
    /// Road wall intensity a_q (cost/m^2).
    pub road_intensity: f64,
    /// Road wall engagement distance D_a (m).
    pub road_safety_distance: f64,
    pub lane_width: f64,
    pub boundary_right: f64,
    pub boundary_left: f64,
    pub lane_center: f64,
    /// Per-category field shapes, in detector category order.
    pub category: Vec<CategoryEntry>,
}

impl Default for FieldBlock {
    fn default() -> Self {
        let params = FieldParams::default();
        let road = RoadModel::default();
        let category = CATEGORY_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let c = params.category(i);
                CategoryEntry {
                    name: (*name).into(),
                    intensity: c.intensity,
                    shape: c.shape,
                    length: c.length,
                    width: c.width,
                }
            })
            .collect();
        Self {
            margin_x: params.margins.u_x,
            margin_y: params.margins.u_y,
            road_intensity: road.intensity,
            road_safety_distance: road.safety_distance,
            lane_width: road.lane_width,
            boundary_right: road.y_right,
            boundary_left: road.y_left,
            lane_center: road.lane_center_y,
            category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerBlock {
    pub prediction_horizon: usize,
    pub control_horizon: usize,
    /// Output weight diag(Q) over [Y, u].
    pub track_weight: [f64; 2],
    /// Input weight diag(R) over [F_xT, delta_f].
    pub effort_weight: [f64; 2],
    /// Input-rate weight diag(S).
    pub rate_weight: [f64; 2],
    pub force_min: f64,
    pub force_max: f64,
    pub steer_min: f64,
    pub steer_max: f64,
    pub force_rate: f64,
    pub steer_rate: f64,
    pub sqp_iterations: usize,
    pub qp_tolerance: f64,
    pub qp_iteration_cap: usize,
    /// Simulation and planner step (s).
    pub dt: f64,
}

impl Default for PlannerBlock {
    fn default() -> Self {
        let p = PlannerConfig::default();
        Self {
            prediction_horizon: p.prediction_horizon,
            control_horizon: p.control_horizon,
            track_weight: p.track_weight,
            effort_weight: p.effort_weight,
            rate_weight: p.rate_weight,
            force_min: p.force_bounds.0,
            force_max: p.force_bounds.1,
            steer_min: p.steer_bounds.0,
            steer_max: p.steer_bounds.1,
            force_rate: p.force_rate_bounds.1,
            steer_rate: p.steer_rate_bounds.1,
            sqp_iterations: p.sqp_iterations,
            qp_tolerance: p.qp_tolerance,
            qp_iteration_cap: p.qp_iteration_cap,
            dt: p.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseBlock {
    /// Gap (m) at which the case-1 label flips person -> cone.
    pub flip_gap_case1: f64,
    /// Gap (m) at which the case-2 label flips cone -> person.
    pub flip_gap_case2: f64,
    /// EMA coefficient of the track filter.
    pub filter_alpha: f64,
    /// Majority window (frames) of the label latch.
    pub label_window: usize,
    /// Half-width of the per-frame uniform score jitter.
    pub score_jitter: f64,
}

impl Default for CaseBlock {
    fn default() -> Self {
        Self {
            flip_gap_case1: 20.0,
            flip_gap_case2: 3.0,
            filter_alpha: 0.3,
            label_window: 5,
            score_jitter: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub scenario: ScenarioBlock,
    pub vehicle: VehicleBlock,
    pub field: FieldBlock,
    pub planner: PlannerBlock,
    pub case: CaseBlock,
}

impl Config {
    /// Parse a TOML document and apply `key=value` overrides on top.
    ///
    /// The document is merged over the serialized defaults so override
    /// paths can address any key, including entries of the default
    /// category table.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: toml::Value = Config::default()
            .to_toml()
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .expect("default config serializes");
        let file: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(ConfigError::Parse)?;
        merge(&mut value, file);
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: Config = value.try_into().map_err(ConfigError::Parse)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, overrides)
    }

    /// Defaults plus overrides, no file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml("", overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.scenario.ego_speed <= 0.0 || self.scenario.duration <= 0.0 {
            return bad("scenario speeds and duration must be positive");
        }
        if self.scenario.worker && self.scenario.worker_ahead <= 0.0 {
            return bad("worker must start ahead of the ego vehicle");
        }
        self.entropy_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.field_params()?;
        self.road_model()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.planner_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let v = self.vehicle_params();
        if [v.mass, v.yaw_inertia, v.front_axle, v.rear_axle, v.cornering_front, v.cornering_rear]
            .iter()
            .any(|p| *p <= 0.0)
        {
            return bad("vehicle parameters must be positive");
        }
        let c = &self.case;
        if !(0.0 < c.filter_alpha && c.filter_alpha <= 1.0) {
            return bad("filter alpha must be in (0, 1]");
        }
        if c.label_window == 0 {
            return bad("label window must be at least one frame");
        }
        if c.score_jitter < 0.0 || c.score_jitter >= 0.05 {
            return bad("score jitter must be in [0, 0.05)");
        }
        Ok(())
    }

    pub fn entropy_config(&self) -> EntropyConfig {
        EntropyConfig {
            ensemble_size: self.scenario.ensemble_size,
            categories: self.scenario.categories,
            penalty_factor: self.scenario.penalty_factor,
            theta_low_medium: self.scenario.theta_low_medium,
            theta_medium_high: self.scenario.theta_medium_high,
        }
    }

    pub fn field_params(&self) -> Result<FieldParams, ConfigError> {
        let person = self
            .field
            .category
            .iter()
            .position(|c| c.name == "person")
            .ok_or(ConfigError::MissingCategory("person"))?;
        let categories = self
            .field
            .category
            .iter()
            .map(|c| CategoryFieldParams {
                intensity: c.intensity,
                shape: c.shape,
                length: c.length,
                width: c.width,
            })
            .collect();
        FieldParams::new(
            categories,
            person,
            SafetyMargins {
                u_x: self.field.margin_x,
                u_y: self.field.margin_y,
            },
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn road_model(&self) -> RoadModel {
        RoadModel {
            y_right: self.field.boundary_right,
            y_left: self.field.boundary_left,
            intensity: self.field.road_intensity,
            safety_distance: self.field.road_safety_distance,
            lane_width: self.field.lane_width,
            lane_center_y: self.field.lane_center,
        }
    }

    pub fn vehicle_params(&self) -> VehicleParams {
        VehicleParams {
            mass: self.vehicle.mass,
            yaw_inertia: self.vehicle.yaw_inertia,
            front_axle: self.vehicle.front_axle,
            rear_axle: self.vehicle.rear_axle,
            cornering_front: self.vehicle.cornering_front,
            cornering_rear: self.vehicle.cornering_rear,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        let p = &self.planner;
        PlannerConfig {
            prediction_horizon: p.prediction_horizon,
            control_horizon: p.control_horizon,
            track_weight: p.track_weight,
            effort_weight: p.effort_weight,
            rate_weight: p.rate_weight,
            force_bounds: (p.force_min, p.force_max),
            steer_bounds: (p.steer_min, p.steer_max),
            force_rate_bounds: (-p.force_rate, p.force_rate),
            steer_rate_bounds: (-p.steer_rate, p.steer_rate),
            sqp_iterations: p.sqp_iterations,
            qp_tolerance: p.qp_tolerance,
            qp_iteration_cap: p.qp_iteration_cap,
            dt: p.dt,
        }
    }

    /// Index of the named category in the field table.
    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.field.category.iter().position(|c| c.name == name)
    }
}

/// Tables merge key by key; arrays and scalars replace.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base), toml::Value::Table(overlay)) => {
            for (key, value) in overlay {
                match base.get_mut(&key) {
                    Some(slot) => merge(slot, value),
                    None => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Apply one `path.to.key=value` override to a TOML tree. The value is
/// parsed as TOML when possible and treated as a bare string otherwise.
fn apply_override(root: &mut toml::Value, item: &str) -> Result<(), ConfigError> {
    let (path, raw_value) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(item.into()))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(ConfigError::MalformedOverride(item.into()));
    }
    let parsed: toml::Value = match format!("v = {raw_value}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw_value.trim().to_string()),
    };

    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(index) = segment.parse::<usize>() {
            let arr = node
                .as_array_mut()
                .ok_or_else(|| ConfigError::BadOverridePath(path.into()))?;
            if index >= arr.len() {
                return Err(ConfigError::BadOverridePath(path.into()));
            }
            if last {
                arr[index] = parsed;
                return Ok(());
            }
            node = &mut arr[index];
        } else {
            let table = node
                .as_table_mut()
                .ok_or_else(|| ConfigError::BadOverridePath(path.into()))?;
            if last {
                table.insert((*segment).into(), parsed);
                return Ok(());
            }
            node = table
                .entry(*segment)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
    }
    unreachable!("loop returns on the last segment");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{PERSON, TRAFFIC_CONE};

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = Config::from_toml("", &[]).unwrap();
        assert_eq!(cfg, Config::default());
        // Headline demonstration parameters.
        assert_eq!(cfg.scenario.ego_speed, 15.0);
        assert_eq!(cfg.scenario.worker_speed, 1.0);
        assert_eq!(cfg.scenario.worker_ahead, 30.0);
        assert_eq!(cfg.scenario.worker_offset, 1.0);
        assert_eq!(cfg.scenario.ensemble_size, 5);
        assert_eq!(cfg.scenario.categories, 11);
        assert_eq!(cfg.scenario.affinity_threshold, 0.95);
        assert_eq!(cfg.scenario.penalty_factor, 0.1);
        assert_eq!(cfg.scenario.theta_low_medium, 1.2);
        assert_eq!(cfg.scenario.theta_medium_high, 1.6);
        assert_eq!(cfg.vehicle.mass, 1860.0);
        assert_eq!(cfg.vehicle.yaw_inertia, 3438.5);
        assert_eq!(cfg.vehicle.front_axle, 1.18);
        assert_eq!(cfg.vehicle.rear_axle, 1.77);
        assert_eq!(cfg.vehicle.cornering_front, 90000.0);
        assert_eq!(cfg.field.lane_width, 3.5);
        assert_eq!(cfg.field.margin_x, 8.0);
        assert_eq!(cfg.field.margin_y, 1.0);
        assert_eq!(cfg.planner.dt, 0.033);
        let person = &cfg.field.category[PERSON];
        assert_eq!((person.length, person.width), (15.0, 1.5));
        let cone = &cfg.field.category[TRAFFIC_CONE];
        assert_eq!((cone.length, cone.width), (8.0, 0.5));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = Config::default();
        let text = cfg.to_toml();
        let parsed = Config::from_toml(&text, &[]).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn file_keys_override_defaults() {
        let cfg = Config::from_toml("[scenario]\nego_speed = 20.0\n", &[]).unwrap();
        assert_eq!(cfg.scenario.ego_speed, 20.0);
        assert_eq!(cfg.scenario.worker_speed, 1.0);
    }

    #[test]
    fn set_overrides_apply_after_file() {
        let cfg = Config::from_toml(
            "[scenario]\nego_speed = 20.0\n",
            &["scenario.ego_speed=25.0".into(), "planner.sqp_iterations=5".into()],
        )
        .unwrap();
        assert_eq!(cfg.scenario.ego_speed, 25.0);
        assert_eq!(cfg.planner.sqp_iterations, 5);
    }

    #[test]
    fn override_into_category_array() {
        let cfg = Config::from_toml(
            "",
            &[format!("field.category.{TRAFFIC_CONE}.intensity=9.5")],
        )
        .unwrap();
        assert_eq!(cfg.field.category[TRAFFIC_CONE].intensity, 9.5);
    }

    #[test]
    fn override_array_value() {
        let cfg = Config::from_toml("", &["planner.track_weight=[4.0, 1.0]".into()]).unwrap();
        assert_eq!(cfg.planner.track_weight, [4.0, 1.0]);
    }

    #[test]
    fn override_string_without_quotes() {
        let cfg = Config::from_toml("", &["scenario.perception=stream.jsonl".into()]).unwrap();
        assert_eq!(cfg.scenario.perception, "stream.jsonl");
    }

    #[test]
    fn malformed_override_rejected() {
        assert!(matches!(
            Config::from_toml("", &["scenario.ego_speed".into()]),
            Err(ConfigError::MalformedOverride(_))
        ));
        assert!(matches!(
            Config::from_toml("", &["field.category.99.intensity=1".into()]),
            Err(ConfigError::BadOverridePath(_))
        ));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[scenario]\nego_speed = -1.0\n", &[]).is_err());
        assert!(Config::from_toml("[scenario]\ntheta_low_medium = 2.0\n", &[]).is_err());
        assert!(Config::from_toml("[planner]\ncontrol_horizon = 99\n", &[]).is_err());
        assert!(Config::from_toml("[case]\nfilter_alpha = 0.0\n", &[]).is_err());
        // Person characteristic lengths must dominate every category.
        assert!(Config::from_toml(
            "",
            &[format!("field.category.{PERSON}.length=7.0")]
        )
        .is_err());
    }

    #[test]
    fn bad_toml_reports_parse_error() {
        assert!(matches!(
            Config::from_toml("[scenario\n", &[]),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            Config::from_toml("[scenario]\nego_speed = \"fast\"\n", &[]),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn conversions_match_module_defaults() {
        let cfg = Config::default();
        assert_eq!(cfg.entropy_config(), EntropyConfig::default());
        assert_eq!(cfg.vehicle_params(), VehicleParams::default());
        assert_eq!(cfg.planner_config(), PlannerConfig::default());
        assert_eq!(cfg.road_model(), RoadModel::default());
        assert_eq!(cfg.field_params().unwrap(), FieldParams::default());
        assert_eq!(cfg.category_index("person"), Some(PERSON));
        assert_eq!(cfg.category_index("traffic cone"), Some(TRAFFIC_CONE));
    }
}
