//! Asynchronous exponential growth experiments and the figure datasets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::{evaluate_condition_with, ConditionError, ConditionId, ConditionVerdict, Verdict, Window};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dynamics::{integrate_shifted, DynamicsError, Evolver, Propagator, SimulationTrace, PROPAGATOR_LIMIT};
use crate::model::CoefficientModel;
use crate::operators::{assemble, OperatorKind};
use crate::spaces::{compensated_sum, norm, pairing, power_norm, StateVector};
use crate::spectral::{perron_eigenpair_with, PerronOptions, SpectralError, SpectralTriple};

#[derive(Debug, Error)]
pub enum AegError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("projection constant <h, f_in> = {0:e} is not positive")]
    NonPositiveProjection(f64),
    #[error("only {usable} usable samples above the floor after t_min, need {needed}")]
    InsufficientData { usable: usize, needed: usize },
    #[error("unknown figure `{0}` (expected fig1, fig2 or fig3)")]
    UnknownFigure(String),
}

/// Default floor below which error samples carry no information.
pub const FIT_FLOOR: f64 = 1e-14;
/// Floor used by the experiment pipeline, whose error curve is computed without cancellation.
pub const DEFLATED_FLOOR: f64 = 1e-280;
pub const MIN_FIT_SAMPLES: usize = 8;

/// Least-squares fit of `log error = log M - eps t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `eps`, or `+inf` when every sample already sits at the floor.
    pub rate: f64,
    pub prefactor: f64,
    /// RMS of the log-error about the fitted line.
    pub rms_residual: f64,
    pub t_min: f64,
    pub samples: usize,
    pub at_floor: bool,
}

pub fn fit_decay_rate(times: &[f64], errors: &[f64], t_min: f64) -> Result<DecayFit, AegError> {
    fit_decay_rate_with_floor(times, errors, t_min, FIT_FLOOR)
}

pub fn fit_decay_rate_with_floor(times: &[f64], errors: &[f64], t_min: f64, floor: f64) -> Result<DecayFit, AegError> {
    let window: Vec<(f64, f64)> = times.iter().zip(errors).filter(|(t, _)| **t >= t_min).map(|(t, e)| (*t, *e)).collect();
    let usable: Vec<(f64, f64)> = window.iter().filter(|(_, e)| *e > floor).map(|(t, e)| (*t, e.ln())).collect();
    if usable.is_empty() && window.len() >= MIN_FIT_SAMPLES {
        return Ok(DecayFit { rate: f64::INFINITY, prefactor: 0.0, rms_residual: 0.0, t_min, samples: 0, at_floor: true });
    }
    if usable.len() < MIN_FIT_SAMPLES {
        return Err(AegError::InsufficientData { usable: usable.len(), needed: MIN_FIT_SAMPLES });
    }
    let k = usable.len() as f64;
    let tbar = usable.iter().map(|p| p.0).sum::<f64>() / k;
    let ybar = usable.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = usable.iter().map(|p| (p.0 - tbar).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - tbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * tbar;
    let rss: f64 = usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(DecayFit {
        rate: -slope,
        prefactor: intercept.exp(),
        rms_residual: (rss / k).sqrt(),
        t_min,
        samples: usable.len(),
        at_floor: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AegResult {
    pub config: ExperimentConfig,
    pub spectral: SpectralTriple,
    /// Trajectory of `exp(-lambda0 t) f(t)`.
    pub trace: SimulationTrace,
    /// `exp(-lambda0 t) f(t) - <h, f_in> e` on the trace grid.
    pub error_states: Vec<StateVector>,
    pub error_curve: Vec<f64>,
    pub fit: DecayFit,
    pub error_method: ErrorMethod,
    /// Largest relative gap between the error curve and `||trace - <h, f_in> e||_[m]`
    /// over samples where the latter is well above rounding.
    pub trace_consistency: f64,
    pub projection_constant: f64,
    /// Verdicts for the conditions the experiment relies on.
    pub preconditions: Vec<ConditionVerdict>,
    /// Set when a failing precondition was overridden by `force`.
    pub overridden: bool,
}

impl AegResult {
    pub fn times(&self) -> &[f64] {
        &self.trace.times
    }
}

fn check_preconditions(cfg: &ExperimentConfig, model: &CoefficientModel) -> Result<(Vec<ConditionVerdict>, bool), AegError> {
    let mut verdicts = Vec::new();
    for id in [ConditionId::MomentDeficit, ConditionId::EffectiveRateUnbounded] {
        verdicts.push(evaluate_condition_with(model, id, cfg.m, cfg.m_prime, &Window::default(), cfg.growth_constants)?);
    }
    let failing: Vec<String> = verdicts
        .iter()
        .filter(|v| v.verdict == Verdict::Fails)
        .map(|v| match &v.note {
            Some(n) => format!("{} fails ({n})", v.condition_id),
            None => format!("{} fails", v.condition_id),
        })
        .collect();
    if failing.is_empty() {
        Ok((verdicts, false))
    } else if cfg.force {
        Ok((verdicts, true))
    } else {
        Err(AegError::Precondition(failing.join("; ")))
    }
}

/// Runs the full pipeline: eigenpair, scaled trajectory, error curve and fit.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AegResult, AegError> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let (preconditions, overridden) = check_preconditions(cfg, &model)?;

    let popts = PerronOptions { policy: cfg.policy, norm_order: cfg.m, ..PerronOptions::default() };
    let spectral = perron_eigenpair_with(&model, cfg.truncation, cfg.eigen_tol, &popts)?;
    let f_in = cfg.initial_state()?;
    let c = pairing(&spectral.h, &f_in);
    if !(c > 0.0) {
        return Err(AegError::NonPositiveProjection(c));
    }
    let sopts = cfg.solver_options();
    let lambda0 = spectral.lambda0;
    let trace = integrate_shifted(&model, &f_in, cfg.t_span, &sopts, lambda0)?;

    // The deviation from the asymptotic state is evolved on its own, with the
    // e-component removed after every step, so that it stays resolved long
    // after it has fallen below the rounding level of the trajectory.
    let e = spectral.e.as_slice().to_vec();
    let h = spectral.h.as_slice().to_vec();
    let r0: Vec<f64> = f_in.as_slice().iter().zip(&e).map(|(f, ei)| f - c * ei).collect();
    let (error_states, error_method) = if cfg.truncation <= PROPAGATOR_LIMIT {
        (deviation_by_propagator(&model, cfg, lambda0, &trace.times, r0, &e, &h)?, ErrorMethod::Propagator)
    } else {
        (deviation_by_integrator(&model, cfg, lambda0, &trace.times, r0, e, h)?, ErrorMethod::Integrator)
    };
    let mut error_curve = Vec::with_capacity(error_states.len());
    for s in &error_states {
        error_curve.push(norm(s, cfg.m, cfg.error_norm).map_err(|err| AegError::Precondition(err.to_string()))?);
    }
    let fit = fit_decay_rate_with_floor(&trace.times, &error_curve, cfg.t_min, DEFLATED_FLOOR)?;
    let trace_consistency = consistency(&trace, &error_states, &spectral.e, c, cfg.m);
    Ok(AegResult {
        config: cfg.clone(),
        spectral,
        trace,
        error_states,
        error_curve,
        fit,
        error_method,
        trace_consistency,
        projection_constant: c,
        preconditions,
        overridden,
    })
}

/// How the deviation `exp(-lambda0 t) f(t) - <h, f_in> e` is evolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMethod {
    /// Dense `exp(dt (U - lambda0 I))`, one per distinct output interval.
    Propagator,
    /// The stiff integrator, rescaled at every output time.
    Integrator,
}

fn deflate(y: &mut [f64], e: &[f64], h: &[f64]) {
    let k = compensated_sum(h.iter().zip(y.iter()).map(|(a, b)| a * b));
    for (yi, ei) in y.iter_mut().zip(e) {
        *yi -= k * ei;
    }
}

fn deviation_by_propagator(
    model: &CoefficientModel,
    cfg: &ExperimentConfig,
    lambda0: f64,
    times: &[f64],
    mut r: Vec<f64>,
    e: &[f64],
    h: &[f64],
) -> Result<Vec<StateVector>, AegError> {
    let op = assemble(model, cfg.truncation, OperatorKind::Full, cfg.policy).map_err(DynamicsError::from)?;
    let mut cache: Vec<Propagator> = Vec::new();
    deflate(&mut r, e, h);
    let mut out = vec![StateVector::from_vec_unchecked(r.clone())];
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let pos = match cache.iter().position(|p| (p.dt() - dt).abs() <= 1e-12 * dt.abs()) {
            Some(p) => p,
            None => {
                cache.push(Propagator::new(&op, lambda0, dt)?);
                cache.len() - 1
            }
        };
        r = cache[pos].apply(&r);
        deflate(&mut r, e, h);
        out.push(StateVector::from_vec_unchecked(r.clone()));
    }
    Ok(out)
}

fn deviation_by_integrator(
    model: &CoefficientModel,
    cfg: &ExperimentConfig,
    lambda0: f64,
    times: &[f64],
    mut r: Vec<f64>,
    e: Vec<f64>,
    h: Vec<f64>,
) -> Result<Vec<StateVector>, AegError> {
    // Rescaled to unit size at every output time, so the absolute tolerance is
    // taken relative to the current size of the deviation.
    let mut opts = cfg.solver_options();
    opts.atol = opts.rtol;
    let mut ev = Evolver::new(model, cfg.truncation, lambda0, &opts)?.with_deflation(e, h);
    let mut scale = 1.0f64;
    let mut out = vec![StateVector::from_vec_unchecked(r.clone())];
    for w in times.windows(2) {
        let s = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if s > 0.0 {
            for v in r.iter_mut() {
                *v /= s;
            }
            scale *= s;
        }
        let (states, _) = ev.run(&r, &[w[0], w[1]])?;
        r = states.into_iter().last().expect("two output times");
        out.push(StateVector::from_vec_unchecked(r.iter().map(|v| v * scale).collect()));
    }
    Ok(out)
}

fn consistency(trace: &SimulationTrace, errors: &[StateVector], e: &StateVector, c: f64, m: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (s, r) in trace.states.iter().zip(errors) {
        let direct: Vec<f64> = s.as_slice().iter().zip(e.as_slice()).map(|(f, ei)| f - c * ei).collect();
        let dn = power_norm(&direct, m);
        if dn > 1e-6 * power_norm(s.as_slice(), m) {
            let diff: Vec<f64> = direct.iter().zip(r.as_slice()).map(|(a, b)| a - b).collect();
            worst = worst.max(power_norm(&diff, m) / dn);
        }
    }
    worst
}

/// A numeric table with named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Panels of one figure: snapshots, error vectors, asymptotic distribution, error norms.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureDataset {
    pub figure: String,
    pub result: AegResult,
    pub tables: Vec<Table>,
}

/// Times at which the per-size panels are sampled.
pub const SNAPSHOT_TIMES: [f64; 6] = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0];

fn snapshot_indices(times: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = SNAPSHOT_TIMES
        .iter()
        .filter_map(|t| {
            times
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
                .map(|(i, _)| i)
        })
        .collect();
    out.dedup();
    out
}

fn per_size_table(name: &str, times: &[f64], idx: &[usize], states: &[StateVector]) -> Table {
    let mut columns = vec!["n".to_string()];
    columns.extend(idx.iter().map(|&i| format!("t={}", times[i])));
    let n = states[0].len();
    let rows = (1..=n)
        .map(|k| {
            let mut row = vec![k as f64];
            row.extend(idx.iter().map(|&i| states[i].get(k)));
            row
        })
        .collect();
    Table { name: name.into(), columns, rows }
}

pub fn build_tables(result: &AegResult) -> Vec<Table> {
    let times = &result.trace.times;
    let idx = snapshot_indices(times);
    let snapshots = per_size_table("solution_snapshots", times, &idx, &result.trace.states);
    let errors = per_size_table("asymptotic_error", times, &idx, &result.error_states);
    let c = result.projection_constant;
    let e = &result.spectral.e;
    let h = &result.spectral.h;
    let distribution = Table {
        name: "asymptotic_distribution".into(),
        columns: vec!["n".into(), "c_e_n".into(), "e_n".into(), "h_n".into()],
        rows: (1..=e.len()).map(|k| vec![k as f64, c * e.get(k), e.get(k), h.get(k)]).collect(),
    };
    let fit = &result.fit;
    let norms = Table {
        name: "error_norm".into(),
        columns: vec!["t".into(), "error".into(), "fitted".into(), "scaled_mass".into(), "norm_m".into()],
        rows: times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let fitted = if fit.at_floor { 0.0 } else { fit.prefactor * (-fit.rate * t).exp() };
                vec![t, result.error_curve[i], fitted, result.trace.mass[i], result.trace.norm_m[i]]
            })
            .collect(),
    };
    vec![snapshots, errors, distribution, norms]
}

/// Runs one of the published configurations and tabulates its four panels.
pub fn figure_dataset(figure: &str) -> Result<FigureDataset, AegError> {
    let cfg = ExperimentConfig::figure(figure).ok_or_else(|| AegError::UnknownFigure(figure.into()))?;
    figure_dataset_with(figure, &cfg)
}

pub fn figure_dataset_with(figure: &str, cfg: &ExperimentConfig) -> Result<FigureDataset, AegError> {
    let result = run_experiment(cfg)?;
    let tables = build_tables(&result);
    Ok(FigureDataset { figure: figure.into(), result, tables })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::InitialCondition;

    fn small_fig1() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::figure("fig1").unwrap();
        cfg.truncation = 200;
        cfg.t_span = (0.0, 6.0);
        cfg
    }

    #[test]
    fn exact_exponential_fit() {
        let t: Vec<f64> = (0..40).map(|k| 0.25 * k as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = fit_decay_rate(&t, &y, 1.0).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-12);
        assert!((fit.prefactor - 3.0).abs() < 1e-10);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn floor_sentinel_and_shortage() {
        let t: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let fit = fit_decay_rate(&t, &vec![1e-20; 20], 1.0).unwrap();
        assert!(fit.at_floor && fit.rate.is_infinite());
        assert!(matches!(fit_decay_rate(&t[..5], &[1.0; 5], 0.0), Err(AegError::InsufficientData { .. })));
    }

    #[test]
    fn fig1_small_run_decays() {
        let res = run_experiment(&small_fig1()).unwrap();
        assert!((res.spectral.lambda0 - 1.0).abs() < 1e-8);
        assert!(res.fit.rate > 0.0);
        let c = res.projection_constant;
        assert!((c - 100.0).abs() < 1e-6 * 100.0, "{c}");
        assert_eq!(res.error_method, ErrorMethod::Propagator);
        assert!(res.trace_consistency < 1e-4, "{}", res.trace_consistency);
        for w in res.trace.mass.windows(2) {
            assert!((w[1] - w[0]).abs() < 1e-6 * w[0]);
        }
    }

    #[test]
    fn eigenvector_start_has_no_error() {
        let base = run_experiment(&small_fig1()).unwrap();
        let mut cfg = small_fig1();
        cfg.t_span = (0.0, 2.0);
        cfg.t_min = 0.5;
        cfg.output_step = Some(0.1);
        let e = base.spectral.e.as_slice();
        cfg.initial = InitialCondition::Values { values: e.to_vec() };
        match run_experiment(&cfg) {
            Ok(res) => assert!(res.error_curve.iter().all(|v| *v < 1e-9), "{:?}", res.error_curve),
            Err(AegError::InsufficientData { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn rescaling_initial_data() {
        let a = run_experiment(&small_fig1()).unwrap();
        let mut cfg = small_fig1();
        cfg.initial = InitialCondition::Delta { index: 10, scale: 30.0 };
        let b = run_experiment(&cfg).unwrap();
        for (x, y) in a.error_curve.iter().zip(&b.error_curve) {
            assert!((y / x - 3.0).abs() < 1e-6, "{x} {y}");
        }
        assert!((a.fit.rate - b.fit.rate).abs() < 1e-6);
    }

    #[test]
    fn deviation_routes_agree() {
        let mut cfg = small_fig1();
        cfg.truncation = 60;
        cfg.t_span = (0.0, 4.0);
        let model = cfg.build_model().unwrap();
        let sp = crate::spectral::perron_eigenpair(&model, 60, 1e-11).unwrap();
        let f = cfg.initial_state().unwrap();
        let c = pairing(&sp.h, &f);
        let e = sp.e.as_slice().to_vec();
        let h = sp.h.as_slice().to_vec();
        let r0: Vec<f64> = f.as_slice().iter().zip(&e).map(|(a, b)| a - c * b).collect();
        let times = cfg.solver_options().output_grid(0.0, 4.0);
        let exact = deviation_by_propagator(&model, &cfg, sp.lambda0, &times, r0.clone(), &e, &h).unwrap();
        let stepped = deviation_by_integrator(&model, &cfg, sp.lambda0, &times, r0, e, h).unwrap();
        for (a, b) in exact.iter().zip(&stepped) {
            let rel = a.sub(b).unwrap().max_abs() / a.max_abs();
            assert!(rel < 1e-5, "{rel}");
        }
    }

    #[test]
    fn precondition_gate() {
        let mut cfg = small_fig1();
        cfg.model.kernel = crate::model::FragmentationKernel::EndsOnly;
        assert!(matches!(run_experiment(&cfg), Err(AegError::Precondition(_))));
        cfg.force = true;
        let res = run_experiment(&cfg).unwrap();
        assert!(res.overridden);
    }
}
