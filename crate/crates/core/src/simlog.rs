//! Closed-loop telemetry.
//!
//! Each record holds the plant state at time `t = k * dt` together with the
//! input applied over the following step and the planner/perception
//! telemetry of that cycle. The CSV projection has a fixed column order;
//! floats are written in shortest round-trip form so a parsed file
//! reproduces the in-memory values bit for bit.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlInput, VehicleState};
use crate::entropy::EntropyReport;
use crate::planner::{CostBreakdown, PlanningPolicy};

pub const CSV_HEADER: &str =
    "t,X,Y,u,v,r,phi,FxT,delta_f,E_pe_star,level,lambda_x,lambda_y,cost_total,cost_field,solve_ms";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing header; expected '{CSV_HEADER}'")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One control cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub t: f64,
    pub ego: VehicleState,
    pub input: ControlInput,
    /// Worker ground-truth position, when present.
    pub worker: Option<[f64; 2]>,
    /// Filtered perception report for the tracked object, when perceived.
    pub report: Option<EntropyReport>,
    /// Policy-effective field extents (lambda_x, lambda_y); zero without an
    /// object.
    pub lambda: [f64; 2],
    pub cost: CostBreakdown,
    pub solve_ms: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub dt: f64,
    pub policy: PlanningPolicy,
    pub case_id: Option<u8>,
    pub steps: Vec<SimStep>,
}

impl SimLog {
    pub fn write_csv<W: Write>(&self, writer: &mut W) -> Result<(), CsvError> {
        writeln!(writer, "{CSV_HEADER}")?;
        for s in &self.steps {
            let (e_star, level) = match &s.report {
                Some(r) => (r.e_pe_star, r.level.as_index()),
                None => (0.0, 0),
            };
            writeln!(
                writer,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.ego.x,
                s.ego.y,
                s.ego.u,
                s.ego.v,
                s.ego.r,
                s.ego.phi,
                s.input.force,
                s.input.steer,
                e_star,
                level,
                s.lambda[0],
                s.lambda[1],
                s.cost.total,
                s.cost.field,
                s.solve_ms,
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("csv is ascii")
    }
}

/// Parsed CSV row; the projection of a [`SimStep`] that survives the trip
/// through a file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub phi: f64,
    pub force: f64,
    pub steer: f64,
    pub e_pe_star: f64,
    pub level: u8,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub cost_total: f64,
    pub cost_field: f64,
    pub solve_ms: f64,
}

/// Parse a SimLog CSV document (header required).
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        _ => return Err(CsvError::MissingHeader),
    }
    let mut rows = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let number = index + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 16 {
            return Err(CsvError::Malformed {
                line: number,
                message: format!("expected 16 columns, got {}", fields.len()),
            });
        }
        let f = |i: usize| -> Result<f64, CsvError> {
            let v: f64 = fields[i].trim().parse().map_err(|_| CsvError::Malformed {
                line: number,
                message: format!("column {} is not a number: '{}'", i + 1, fields[i]),
            })?;
            if v.is_nan() {
                return Err(CsvError::Malformed {
                    line: number,
                    message: format!("column {} is NaN", i + 1),
                });
            }
            Ok(v)
        };
        let level: u8 = fields[10].trim().parse().map_err(|_| CsvError::Malformed {
            line: number,
            message: format!("level column is not an integer: '{}'", fields[10]),
        })?;
        if level > 2 {
            return Err(CsvError::Malformed {
                line: number,
                message: format!("level {level} outside 0..=2"),
            });
        }
        rows.push(CsvRow {
            t: f(0)?,
            x: f(1)?,
            y: f(2)?,
            u: f(3)?,
            v: f(4)?,
            r: f(5)?,
            phi: f(6)?,
            force: f(7)?,
            steer: f(8)?,
            e_pe_star: f(9)?,
            level,
            lambda_x: f(11)?,
            lambda_y: f(12)?,
            cost_total: f(13)?,
            cost_field: f(14)?,
            solve_ms: f(15)?,
        });
    }
    Ok(rows)
}

/// Scalar safety metrics of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    /// False when the run ended before the ego reached the worker.
    pub complete: bool,
    /// Lateral center distance (m) at the step the ego first reaches the
    /// worker's longitudinal position.
    pub pass_distance: Option<f64>,
    pub peak_abs_y: f64,
    /// Time (s) of the first step with |Y| > 0.2 m.
    pub evasion_onset: Option<f64>,
    /// True when longitudinal gap < 2 m and lateral gap < 1 m coincide.
    pub collision: bool,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
}

/// Derive the outcome metrics from a log.
pub fn compute_outcome(log: &SimLog) -> CaseOutcome {
    let mut pass_distance = None;
    let mut collision = false;
    let mut peak_abs_y = 0.0f64;
    let mut evasion_onset = None;
    let mut solve_sum = 0.0;
    let mut solve_max = 0.0f64;
    for s in &log.steps {
        peak_abs_y = peak_abs_y.max(s.ego.y.abs());
        if evasion_onset.is_none() && s.ego.y.abs() > 0.2 {
            evasion_onset = Some(s.t);
        }
        solve_sum += s.solve_ms;
        solve_max = solve_max.max(s.solve_ms);
        if let Some(worker) = s.worker {
            if pass_distance.is_none() && s.ego.x >= worker[0] {
                pass_distance = Some((s.ego.y - worker[1]).abs());
            }
            if (s.ego.x - worker[0]).abs() < 2.0 && (s.ego.y - worker[1]).abs() < 1.0 {
                collision = true;
            }
        }
    }
    CaseOutcome {
        complete: pass_distance.is_some(),
        pass_distance,
        peak_abs_y,
        evasion_onset,
        collision,
        mean_solve_ms: if log.steps.is_empty() {
            0.0
        } else {
            solve_sum / log.steps.len() as f64
        },
        max_solve_ms: solve_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::EntropyLevel;

    fn step(t: f64, x: f64, y: f64, worker: Option<[f64; 2]>) -> SimStep {
        SimStep {
            t,
            ego: VehicleState {
                u: 15.0,
                v: 0.0,
                r: 0.0,
                phi: 0.0,
                x,
                y,
            },
            input: ControlInput::new(12.5, -0.01),
            worker,
            report: Some(EntropyReport {
                e_pe: 1.88,
                e_pe_star: 2.068,
                level: EntropyLevel::High,
                winning_label: 6,
                confidence: 0.55,
                d: 4,
            }),
            lambda: [23.0, 2.5],
            cost: CostBreakdown {
                total: 10.0,
                tracking: 1.0,
                field: 8.0,
                effort: 0.5,
                rate: 0.5,
            },
            solve_ms: 1.25,
            converged: true,
        }
    }

    fn log(steps: Vec<SimStep>) -> SimLog {
        SimLog {
            dt: 0.033,
            policy: PlanningPolicy::Puadm,
            case_id: Some(2),
            steps,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let log = log(vec![
            step(0.0, 0.0, 0.0, Some([30.033, -1.0])),
            step(0.033, 0.495, 1e-17, Some([30.066, -1.0])),
        ]);
        let text = log.to_csv_string();
        let rows = parse_csv(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].t, 0.0);
        assert_eq!(rows[1].x, 0.495);
        assert_eq!(rows[1].y, 1e-17);
        assert_eq!(rows[0].e_pe_star, 2.068);
        assert_eq!(rows[0].level, 2);
        assert_eq!(rows[0].lambda_x, 23.0);
        assert_eq!(rows[0].solve_ms, 1.25);
    }

    #[test]
    fn csv_header_is_fixed() {
        let text = log(vec![]).to_csv_string();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(parse_csv("nonsense\n1,2,3\n").is_err());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let good = log(vec![step(0.0, 0.0, 0.0, None)]).to_csv_string();
        let bad = format!("{good}1,2,3\n");
        match parse_csv(&bad) {
            Err(CsvError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed, got {other:?}"),
        }
        let bad_value = good.replace("1.25", "fast");
        assert!(parse_csv(&bad_value).is_err());
    }

    #[test]
    fn outcome_straight_pass() {
        // Worker 1 m to the right, ego never deviates: pass distance 1.
        let mut steps = Vec::new();
        for k in 0..100 {
            let t = k as f64 * 0.033;
            let x = 15.0 * t;
            steps.push(step(t, x, 0.0, Some([30.0 + t, -1.0])));
        }
        let outcome = compute_outcome(&log(steps));
        assert!(outcome.complete);
        assert!((outcome.pass_distance.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(outcome.evasion_onset, None);
        assert!(!outcome.collision);
        assert!((outcome.mean_solve_ms - 1.25).abs() < 1e-12);
        assert_eq!(outcome.max_solve_ms, 1.25);
    }

    #[test]
    fn outcome_peak_and_onset() {
        let steps = vec![
            step(0.0, 0.0, 0.0, None),
            step(0.033, 0.5, 0.19, None),
            step(0.066, 1.0, 0.21, None),
            step(0.099, 1.5, 3.5, None),
            step(0.132, 2.0, 1.0, None),
        ];
        let outcome = compute_outcome(&log(steps));
        assert!(!outcome.complete);
        assert_eq!(outcome.peak_abs_y, 3.5);
        assert_eq!(outcome.evasion_onset, Some(0.066));
    }

    #[test]
    fn outcome_collision_flag() {
        // Gaps (1.5 m, 0.5 m) at one step -> collision.
        let steps = vec![step(0.0, 28.5, -0.5, Some([30.0, -1.0]))];
        let outcome = compute_outcome(&log(steps));
        assert!(outcome.collision);
        // Lateral gap exactly 1.0 does not trigger the flag.
        let steps = vec![step(0.0, 28.5, 0.0, Some([30.0, -1.0]))];
        assert!(!compute_outcome(&log(steps)).collision);
    }

    #[test]
    fn outcome_json_shape() {
        let outcome = compute_outcome(&log(vec![step(0.0, 31.0, 1.5, Some([30.0, -1.0]))]));
        let json = serde_json::to_string(&outcome).unwrap();
        for key in [
            "complete",
            "pass_distance",
            "peak_abs_y",
            "evasion_onset",
            "collision",
            "mean_solve_ms",
            "max_solve_ms",
        ] {
            assert!(json.contains(key), "missing {key}");
        }
    }
}
