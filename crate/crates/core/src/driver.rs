//! The adaptive loops (AFEM and GOAFEM), per-iteration convergence records,
//! and reference-value extrapolation.

use std::time::Instant;

use thiserror::Error;

use crate::estimator::{self, EstimatorError, IndicatorField};
use crate::fem::{self, DiscreteSolution, FemError, Solver};
use crate::marking::{self, GoafemMarks, GoalDoerfler, MarkError, Tails};
use crate::mesh::{Lineage, MarkSet, Mesh, MeshError};
use crate::problem::{builtin_problem, ProblemError, ProblemName, ProblemSpec, Side};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid run configuration: {0}")]
    BadConfig(String),
    #[error("strategy `{0}` is not valid for this entry point")]
    WrongStrategy(Strategy),
    #[error("too few records for extrapolation ({0} < 4)")]
    TooFewRecords(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Mark(#[from] MarkError),
}

/// Marking strategy of a run. `Maximum`/`Doerfler` drive the plain adaptive
/// loop; the remaining four drive the goal-oriented loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Maximum,
    Doerfler,
    GoafemMaximum,
    Ms,
    Fpz,
    Bet,
}

impl Strategy {
    pub fn is_goal_oriented(self) -> bool {
        !matches!(self, Strategy::Maximum | Strategy::Doerfler)
    }

    fn uses_doerfler(self) -> bool {
        matches!(
            self,
            Strategy::Doerfler | Strategy::Ms | Strategy::Fpz | Strategy::Bet
        )
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Strategy, String> {
        match s {
            "maximum" => Ok(Strategy::Maximum),
            "doerfler" => Ok(Strategy::Doerfler),
            "goafem_maximum" => Ok(Strategy::GoafemMaximum),
            "ms" => Ok(Strategy::Ms),
            "fpz" => Ok(Strategy::Fpz),
            "bet" => Ok(Strategy::Bet),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Maximum => "maximum",
            Strategy::Doerfler => "doerfler",
            Strategy::GoafemMaximum => "goafem_maximum",
            Strategy::Ms => "ms",
            Strategy::Fpz => "fpz",
            Strategy::Bet => "bet",
        };
        f.write_str(s)
    }
}

/// Configuration of one adaptive run.
///
/// `theta` is the maximum-criterion parameter; Dörfler-based strategies use
/// the bulk parameter `1 - theta` to align the two conventions (uniform
/// refinement sits at `theta = 0` for the maximum criterion and at bulk
/// parameter 1 for Dörfler).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemName,
    pub degree: usize,
    pub strategy: Strategy,
    pub theta: f64,
    pub c_min: f64,
    pub max_dofs: usize,
    pub max_iters: usize,
}

impl RunConfig {
    pub fn new(problem: ProblemName, degree: usize, strategy: Strategy) -> RunConfig {
        RunConfig {
            problem,
            degree,
            strategy,
            theta: 0.5,
            c_min: 1.0,
            max_dofs: 50_000,
            max_iters: 60,
        }
    }

    pub fn doerfler_theta(&self) -> f64 {
        1.0 - self.theta
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(DriverError::BadConfig(format!(
                "theta must lie in (0, 1], got {}",
                self.theta
            )));
        }
        if self.strategy.uses_doerfler() && self.theta >= 1.0 {
            return Err(DriverError::BadConfig(
                "theta = 1 leaves no bulk fraction for a Dörfler strategy".into(),
            ));
        }
        if !self.c_min.is_finite() || self.c_min <= 0.0 {
            return Err(DriverError::BadConfig(format!(
                "c_min must be positive, got {}",
                self.c_min
            )));
        }
        if !matches!(self.degree, 1 | 2) {
            return Err(DriverError::BadConfig(format!(
                "degree must be 1 or 2, got {}",
                self.degree
            )));
        }
        if self.max_iters == 0 {
            return Err(DriverError::BadConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Scalars recorded for one adaptive iteration. All estimator quantities
/// are squared totals.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRecord {
    pub iter: usize,
    pub n_triangles: usize,
    pub n_edges: usize,
    pub n_dofs: usize,
    pub eta_sq: f64,
    pub eta_star_sq: f64,
    pub rho_sq: f64,
    pub rho_star_sq: f64,
    pub osc_sq: f64,
    pub osc_star_sq: f64,
    pub energy_uu: f64,
    pub energy_dual: f64,
    pub goal: f64,
    pub n_marked: usize,
    pub seconds: f64,
}

/// Everything an observer may want to inspect about one completed
/// iteration, before the mesh is refined. `marks` is `None` exactly for
/// the final record of a run.
pub struct IterationView<'a> {
    pub record: &'a AdaptiveRecord,
    pub mesh: &'a Mesh,
    pub spec: &'a ProblemSpec,
    pub primal: &'a DiscreteSolution,
    pub dual: &'a DiscreteSolution,
    pub eta: &'a IndicatorField,
    pub eta_star: &'a IndicatorField,
    /// Tails of the current mesh (always computed; marking needs them for
    /// the maximum strategies and the audits need them everywhere).
    pub tails: &'a Tails,
    pub marks: Option<&'a MarkSet>,
    /// Disaggregated goal-oriented marking output when the strategy is
    /// `GoafemMaximum`.
    pub goafem_marks: Option<&'a GoafemMarks>,
    /// Previous mesh, its primal solution, and the lineage to this mesh.
    pub previous: Option<(&'a Mesh, &'a DiscreteSolution, &'a Lineage)>,
}

/// Runs the adaptive loop, calling `observe` once per iteration. Returns
/// one record per visited mesh including the final one.
pub fn run_adaptive(
    config: &RunConfig,
    mut observe: impl FnMut(&IterationView<'_>),
) -> Result<Vec<AdaptiveRecord>, DriverError> {
    config.validate()?;
    let (mut mesh, spec) = builtin_problem(config.problem);
    let p = config.degree;
    let dual_is_primal = spec.dual_is_primal();
    let mut records = Vec::new();
    let mut previous: Option<(Mesh, DiscreteSolution, Lineage)> = None;

    for iter in 0..=config.max_iters {
        let started = Instant::now();
        let system = fem::assemble_system(&mesh, &spec, p)?;
        let solver = Solver::new(&system.matrix)?;
        let x_primal = solver.solve(&system.matrix, &system.rhs_primal)?;
        let primal = DiscreteSolution::from_free(&mesh, &system.dofs, Side::Primal, &x_primal)?;
        let (x_dual, dual) = if dual_is_primal {
            let mut d = primal.clone();
            d.side = Side::Dual;
            (x_primal.clone(), d)
        } else {
            let x = solver.solve(&system.matrix, &system.rhs_dual)?;
            let d = DiscreteSolution::from_free(&mesh, &system.dofs, Side::Dual, &x)?;
            (x, d)
        };

        let eta = estimator::edge_indicators(&mesh, &spec, &primal, Side::Primal)?;
        let eta_star = if dual_is_primal {
            IndicatorField::from_squares(Side::Dual, eta.squares().to_vec())
        } else {
            estimator::edge_indicators(&mesh, &spec, &dual, Side::Dual)?
        };
        let rho = estimator::data_resolution(&mesh, &spec, Side::Primal, p);
        let osc = estimator::oscillation(&mesh, &spec, Side::Primal, p);
        let (rho_star_sq, osc_star_sq) = if dual_is_primal {
            (rho.total_sq(), osc.total_sq())
        } else {
            (
                estimator::data_resolution(&mesh, &spec, Side::Dual, p).total_sq(),
                estimator::oscillation(&mesh, &spec, Side::Dual, p).total_sq(),
            )
        };

        let energy = |x: &[f64]| {
            let mut kx = vec![0.0; x.len()];
            system.matrix.matvec(x, &mut kx);
            x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>()
        };
        let energy_uu = energy(&x_primal);
        let energy_dual = if dual_is_primal {
            energy_uu
        } else {
            energy(&x_dual)
        };
        let goal = fem::evaluate_goal(&mesh, &spec, &primal)?;

        let tails = Tails::compute(&mesh)?;
        let stop = system.dofs.n_free >= config.max_dofs || iter == config.max_iters;
        let (marks, goafem_marks): (Option<MarkSet>, Option<GoafemMarks>) = if stop {
            (None, None)
        } else {
            match config.strategy {
                Strategy::Maximum => {
                    (Some(marking::mark_maximum(&tails, &eta, config.theta)?), None)
                }
                Strategy::Doerfler => (
                    Some(marking::mark_doerfler(&eta, config.doerfler_theta())),
                    None,
                ),
                Strategy::GoafemMaximum => {
                    let out = marking::mark_goafem_maximum(
                        &tails,
                        &eta,
                        &eta_star,
                        config.theta,
                        config.c_min,
                    )?;
                    (Some(out.marks.clone()), Some(out))
                }
                Strategy::Ms | Strategy::Fpz | Strategy::Bet => {
                    let variant = match config.strategy {
                        Strategy::Ms => GoalDoerfler::Ms,
                        Strategy::Fpz => GoalDoerfler::Fpz,
                        _ => GoalDoerfler::Bet,
                    };
                    (
                        Some(marking::mark_goal_doerfler(
                            &eta,
                            &eta_star,
                            config.doerfler_theta(),
                            variant,
                        )),
                        None,
                    )
                }
            }
        };

        let record = AdaptiveRecord {
            iter,
            n_triangles: mesh.n_triangles(),
            n_edges: mesh.n_edges(),
            n_dofs: system.dofs.n_free,
            eta_sq: eta.total_sq(),
            eta_star_sq: eta_star.total_sq(),
            rho_sq: rho.total_sq(),
            rho_star_sq,
            osc_sq: osc.total_sq(),
            osc_star_sq,
            energy_uu,
            energy_dual,
            goal,
            n_marked: marks.as_ref().map_or(0, MarkSet::len),
            seconds: started.elapsed().as_secs_f64(),
        };

        observe(&IterationView {
            record: &record,
            mesh: &mesh,
            spec: &spec,
            primal: &primal,
            dual: &dual,
            eta: &eta,
            eta_star: &eta_star,
            tails: &tails,
            marks: marks.as_ref(),
            goafem_marks: goafem_marks.as_ref(),
            previous: previous
                .as_ref()
                .map(|(m, u, l)| (m, u, l)),
        });
        records.push(record);

        match marks {
            None => break,
            Some(marks) => {
                let (fine, lineage) = mesh.refine(&marks)?;
                previous = Some((mesh, primal, lineage));
                mesh = fine;
            }
        }
    }
    Ok(records)
}

/// The plain adaptive loop; `strategy` must be `Maximum` or `Doerfler`.
pub fn run_afem(config: &RunConfig) -> Result<Vec<AdaptiveRecord>, DriverError> {
    if config.strategy.is_goal_oriented() {
        return Err(DriverError::WrongStrategy(config.strategy));
    }
    run_adaptive(config, |_| {})
}

/// The goal-oriented loop; `strategy` must be one of the four
/// goal-oriented strategies.
pub fn run_goafem(config: &RunConfig) -> Result<Vec<AdaptiveRecord>, DriverError> {
    if !config.strategy.is_goal_oriented() {
        return Err(DriverError::WrongStrategy(config.strategy));
    }
    run_adaptive(config, |_| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordField {
    /// `a(u_l, u_l)`
    EnergySq,
    /// `G(u_l)`
    Goal,
}

/// Result of the limit extrapolation. `non_monotone` flags input that does
/// not approach its limit from one side within tolerance; the value is
/// then simply the last record's value.
#[derive(Debug, Clone, Copy)]
pub struct Extrapolation {
    pub value: f64,
    pub rate: f64,
    pub non_monotone: bool,
}

/// Extrapolates the limit of a convergent record quantity by fitting
/// `v_l = v_inf - c * N_l^(-r)` over the last `min(8, L/2)` records, with
/// `r` seeded by `rate_hint` and refined by a one-dimensional search.
pub fn extrapolate_reference(
    records: &[AdaptiveRecord],
    field: RecordField,
    rate_hint: f64,
) -> Result<Extrapolation, DriverError> {
    let l = records.len();
    if l < 4 {
        return Err(DriverError::TooFewRecords(l));
    }
    // At least 4 points are needed to pin the rate alongside the limit and
    // amplitude; beyond that, use the last min(8, L/2) records.
    let window = (l / 2).clamp(4, 8).min(l);
    let recs = &records[l - window..];
    let values: Vec<f64> = recs
        .iter()
        .map(|r| match field {
            RecordField::EnergySq => r.energy_uu,
            RecordField::Goal => r.goal,
        })
        .collect();
    let dofs: Vec<f64> = recs.iter().map(|r| (r.n_dofs.max(1)) as f64).collect();

    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let direction = values[values.len() - 1] - values[0];
    let tol = 1e-9 * spread.abs().max(1e-300);
    let monotone = values
        .windows(2)
        .all(|w| (w[1] - w[0]) * direction.signum() >= -tol);
    if !monotone || spread == 0.0 {
        return Ok(Extrapolation {
            value: *values.last().unwrap(),
            rate: rate_hint,
            non_monotone: !monotone,
        });
    }

    // Least squares for fixed rate r: v = a - c * N^(-r).
    let sse_fit = |r: f64| -> (f64, f64, f64) {
        let xs: Vec<f64> = dofs.iter().map(|&n| n.powf(-r)).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let mv = values.iter().sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxv = 0.0;
        for (x, v) in xs.iter().zip(&values) {
            sxx += (x - mx) * (x - mx);
            sxv += (x - mx) * (v - mv);
        }
        let slope = if sxx > 0.0 { sxv / sxx } else { 0.0 };
        let a = mv - slope * mx;
        let sse: f64 = xs
            .iter()
            .zip(&values)
            .map(|(x, v)| {
                let fit = a + slope * x;
                (v - fit) * (v - fit)
            })
            .sum();
        (sse, a, slope)
    };

    // Golden-section search on log(r).
    let hint = rate_hint.abs().max(1e-3);
    let (mut lo, mut hi) = ((hint / 8.0).ln(), (hint * 8.0).ln());
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut m1 = hi - phi * (hi - lo);
    let mut m2 = lo + phi * (hi - lo);
    let mut f1 = sse_fit(m1.exp()).0;
    let mut f2 = sse_fit(m2.exp()).0;
    for _ in 0..200 {
        if f1 <= f2 {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - phi * (hi - lo);
            f1 = sse_fit(m1.exp()).0;
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + phi * (hi - lo);
            f2 = sse_fit(m2.exp()).0;
        }
    }
    let rate = (0.5 * (lo + hi)).exp();
    let (_, a, _) = sse_fit(rate);
    Ok(Extrapolation {
        value: a,
        rate,
        non_monotone: false,
    })
}

/// Least-squares slope of `log10(y)` against `log10(x)`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.log10(), y.log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    sxy / sxx
}

/// Slope of `log10(value)` vs `log10(n_triangles)` over the final decade
/// of triangle counts.
pub fn final_decade_slope(records: &[AdaptiveRecord], value: impl Fn(&AdaptiveRecord) -> f64) -> f64 {
    let max_tris = records.iter().map(|r| r.n_triangles).max().unwrap_or(1) as f64;
    let cutoff = max_tris / 10.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.n_triangles as f64 >= cutoff)
        .map(|r| (r.n_triangles as f64, value(r)))
        .unzip();
    fit_loglog_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_zshape_run_produces_one_record_per_mesh() {
        let mut config = RunConfig::new(ProblemName::ZShape, 1, Strategy::Maximum);
        config.max_iters = 5;
        let records = run_afem(&config).unwrap();
        assert_eq!(records.len(), 6);
        for w in records.windows(2) {
            assert!(w[1].n_triangles > w[0].n_triangles);
            assert!(w[0].n_marked > 0);
        }
        assert_eq!(records.last().unwrap().n_marked, 0);
        for r in &records {
            assert!(r.eta_sq >= 0.0 && r.rho_sq >= 0.0 && r.osc_sq >= 0.0);
        }
    }

    #[test]
    fn wrong_strategy_entry_points_are_rejected() {
        let config = RunConfig::new(ProblemName::ZShape, 1, Strategy::Bet);
        assert!(matches!(
            run_afem(&config),
            Err(DriverError::WrongStrategy(_))
        ));
        let config = RunConfig::new(ProblemName::GoalSquare, 1, Strategy::Maximum);
        assert!(matches!(
            run_goafem(&config),
            Err(DriverError::WrongStrategy(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut config = RunConfig::new(ProblemName::ZShape, 1, Strategy::Maximum);
        config.theta = 1.5;
        assert!(config.validate().is_err());
        config.theta = 0.5;
        config.degree = 3;
        assert!(config.validate().is_err());
        config.degree = 2;
        config.c_min = 0.0;
        assert!(config.validate().is_err());
        config.c_min = 1.0;
        assert!(config.validate().is_ok());
        // theta = 1 is fine for the maximum criterion but not for Dörfler
        config.theta = 1.0;
        assert!(config.validate().is_ok());
        config.strategy = Strategy::Doerfler;
        assert!(config.validate().is_err());
    }

    #[test]
    fn energies_are_monotone_along_short_runs() {
        for strategy in [Strategy::Maximum, Strategy::Doerfler] {
            let mut config = RunConfig::new(ProblemName::ZShape, 1, strategy);
            config.max_iters = 8;
            let records = run_afem(&config).unwrap();
            for w in records.windows(2) {
                assert!(
                    w[1].energy_uu >= w[0].energy_uu - 1e-12 * w[1].energy_uu.abs(),
                    "a(u,u) must not decrease"
                );
            }
        }
    }

    #[test]
    fn goafem_runs_record_both_sides() {
        let mut config = RunConfig::new(ProblemName::GoalSquare, 1, Strategy::GoafemMaximum);
        config.max_iters = 6;
        // The benchmark is point-symmetric, so the estimator *totals* of the
        // two sides agree; the per-edge fields must still differ.
        let mut fields_differ = false;
        let records = run_adaptive(&config, |view| {
            if view.record.iter > 0 && view.eta.squares() != view.eta_star.squares() {
                fields_differ = true;
            }
        })
        .unwrap();
        assert_eq!(records.len(), 7);
        for r in &records {
            assert!(r.eta_star_sq > 0.0);
        }
        assert!(fields_differ, "primal and dual indicator fields coincide");
    }

    #[test]
    fn extrapolation_recovers_exact_model() {
        let mk = |n: usize, v: f64| AdaptiveRecord {
            iter: 0,
            n_triangles: n,
            n_edges: n,
            n_dofs: n,
            eta_sq: 0.0,
            eta_star_sq: 0.0,
            rho_sq: 0.0,
            rho_star_sq: 0.0,
            osc_sq: 0.0,
            osc_star_sq: 0.0,
            energy_uu: v,
            energy_dual: v,
            goal: v,
            n_marked: 0,
            seconds: 0.0,
        };
        let records: Vec<AdaptiveRecord> = [10, 20, 40, 80, 160]
            .iter()
            .map(|&n| mk(n, 7.0 - 3.0 / n as f64))
            .collect();
        let ex = extrapolate_reference(&records, RecordField::EnergySq, 1.0).unwrap();
        assert!((ex.value - 7.0).abs() < 1e-8, "value {}", ex.value);
        assert!((ex.rate - 1.0).abs() < 1e-6, "rate {}", ex.rate);
        assert!(!ex.non_monotone);

        let constant: Vec<AdaptiveRecord> = [10, 20, 40, 80].iter().map(|&n| mk(n, 5.0)).collect();
        let ex = extrapolate_reference(&constant, RecordField::EnergySq, 1.0).unwrap();
        assert_eq!(ex.value, 5.0);

        assert!(matches!(
            extrapolate_reference(&records[..3], RecordField::EnergySq, 1.0),
            Err(DriverError::TooFewRecords(3))
        ));

        // oscillating input is flagged
        let wobble: Vec<AdaptiveRecord> = [10, 20, 40, 80, 160, 320]
            .iter()
            .enumerate()
            .map(|(i, &n)| mk(n, if i % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let ex = extrapolate_reference(&wobble, RecordField::Goal, 1.0).unwrap();
        assert!(ex.non_monotone);
    }

    #[test]
    fn loglog_slope_of_power_law_is_exact() {
        let xs: Vec<f64> = (1..=6).map(|k| 10.0f64.powi(k)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 3.0 * x.powf(-0.5)).collect();
        assert!((fit_loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }
}
