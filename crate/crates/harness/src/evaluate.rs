//! Simulated interactive evaluation over a dataset, sweeps, backend
//! comparison and the reports they write.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dins_core::clicksim::{run_session, ClickError, SessionConfig, SessionTrace};
use dins_core::transforms::ExpParams;
use serde::{Deserialize, Serialize};

use crate::backend::{load_model, Backend, BackendKind, BackendParams, BackendSpec, Inputs};
use crate::phantom::{phantom_cases, read_dataset, Case, PhantomConfig};
use crate::report::{write_curve_svg, Series};
use crate::HarnessError;

/// Sweep axes; an empty list means the base value only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    /// ExpDT widths (σz, σy, σx) used at inference.
    pub sigmas: Vec<[f64; 3]>,
    /// Simulated-user click budgets.
    pub budgets: Vec<usize>,
    /// Checkpoints to compare, typically one per DIM variant.
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Directory of `case_XXX_image.raw`/`case_XXX_label.raw` pairs. When
    /// absent, `phantom_count` phantoms are generated from `phantoms`.
    pub data_dir: Option<PathBuf>,
    pub phantoms: PhantomConfig,
    pub phantom_count: usize,
    pub backend: BackendKind,
    pub checkpoint: Option<PathBuf>,
    pub params: BackendParams,
    pub session: SessionConfig,
    pub sweep: SweepAxes,
    /// Backends for `compare`; empty means network, graph cut and random walk.
    pub compare: Vec<String>,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            data_dir: None,
            phantoms: PhantomConfig { seed: 1000, ..PhantomConfig::default() },
            phantom_count: 16,
            backend: BackendKind::Din,
            checkpoint: None,
            params: BackendParams::default(),
            session: SessionConfig::default(),
            sweep: SweepAxes::default(),
            compare: Vec::new(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentSpec {
    pub fn load_cases(&self) -> Result<Vec<Case>, HarnessError> {
        match &self.data_dir {
            Some(dir) => read_dataset(dir),
            None if self.phantom_count == 0 => Err(HarnessError::Config("phantom_count must be at least 1".into())),
            None => phantom_cases(&self.phantoms, self.phantom_count),
        }
    }
}

/// One combination of sweep values.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub sigma: [f64; 3],
    pub budget: usize,
    pub checkpoint: Option<PathBuf>,
}

pub fn sweep_points(spec: &ExperimentSpec) -> Vec<SweepPoint> {
    fn or_base<T: Clone>(v: &[T], base: T) -> Vec<T> {
        if v.is_empty() { vec![base] } else { v.to_vec() }
    }
    let sigmas = or_base(&spec.sweep.sigmas, spec.params.exp.sigma);
    let budgets = or_base(&spec.sweep.budgets, spec.session.max_clicks);
    let checkpoints: Vec<Option<PathBuf>> =
        if spec.sweep.checkpoints.is_empty() { vec![spec.checkpoint.clone()] } else { spec.sweep.checkpoints.iter().cloned().map(Some).collect() };
    let mut points = Vec::new();
    for ck in &checkpoints {
        for &sigma in &sigmas {
            for &budget in &budgets {
                let mut label = spec.backend.to_string();
                if spec.sweep.checkpoints.len() > 1 {
                    let stem = ck.as_deref().and_then(Path::file_stem).and_then(|s| s.to_str()).unwrap_or("model");
                    label.push_str(&format!(" {stem}"));
                }
                if spec.backend.needs_model() || spec.sweep.sigmas.len() > 1 {
                    label.push_str(&format!(" sigma=({}/{}/{})", sigma[0], sigma[1], sigma[2]));
                }
                label.push_str(&format!(" budget={budget}"));
                points.push(SweepPoint { label, sigma, budget, checkpoint: ck.clone() });
            }
        }
    }
    points
}

/// Outcome of one backend/sweep point over all cases.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub point: SweepPoint,
    /// Successful sessions, in case order.
    pub traces: Vec<(String, SessionTrace)>,
    pub failures: Vec<(String, String)>,
    pub segment_calls: usize,
    pub segment_seconds: f64,
}

impl PointResult {
    /// Mean DSC after `k` clicks over successful cases.
    pub fn mean_dsc(&self, k: usize) -> f64 {
        mean(self.traces.iter().map(|(_, t)| t.dsc_after(k)))
    }

    pub fn curve(&self) -> Vec<f64> {
        (0..=self.point.budget).map(|k| self.mean_dsc(k)).collect()
    }

    pub fn mean_clicks_to(&self, threshold: f64) -> f64 {
        mean(self.traces.iter().map(|(_, t)| t.clicks_to(threshold, self.point.budget) as f64))
    }

    pub fn seconds_per_interaction(&self) -> f64 {
        if self.segment_calls == 0 {
            0.0
        } else {
            self.segment_seconds / self.segment_calls as f64
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Runs one simulated session per case.
pub fn run_point(backend: &Backend, cases: &[Case], point: &SweepPoint, session: &SessionConfig) -> PointResult {
    let session = SessionConfig { max_clicks: point.budget, ..session.clone() };
    let mut result = PointResult { point: point.clone(), traces: Vec::new(), failures: Vec::new(), segment_calls: 0, segment_seconds: 0.0 };
    for case in cases {
        let mut calls = 0usize;
        let mut seconds = 0.0;
        let outcome = run_session(
            |clicks| {
                let start = Instant::now();
                let m = backend.segment(&Inputs { image: &case.image, truth: &case.label, clicks }).map_err(|e| ClickError::Segmenter(e.to_string()));
                seconds += start.elapsed().as_secs_f64();
                calls += 1;
                m
            },
            &case.label,
            &session,
        );
        result.segment_calls += calls;
        result.segment_seconds += seconds;
        match outcome {
            Ok(t) => result.traces.push((case.id.clone(), t)),
            Err(e) => {
                log::warn!("{}: case {} failed: {e}", point.label, case.id);
                result.failures.push((case.id.clone(), e.to_string()));
            }
        }
    }
    result
}

fn backend_for(kind: BackendKind, params: &BackendParams, point: &SweepPoint) -> Result<Backend, HarnessError> {
    let params = BackendParams { exp: ExpParams { sigma: point.sigma, ..params.exp }, ..params.clone() };
    let model = match (kind.needs_model(), &point.checkpoint) {
        (true, Some(p)) => Some(std::sync::Arc::new(load_model(p)?)),
        (true, None) => return Err(HarnessError::Config(format!("backend {kind} needs a checkpoint"))),
        (false, _) => None,
    };
    Backend::new(kind, params, model)
}

/// Evaluates every sweep point. `backend` overrides checkpoint loading, for
/// callers that already hold a model.
pub fn evaluate_cases(spec: &ExperimentSpec, cases: &[Case], backend: Option<&Backend>) -> Result<Vec<PointResult>, HarnessError> {
    sweep_points(spec)
        .iter()
        .map(|p| {
            let b = match backend {
                Some(b) => b.with_sigma(p.sigma),
                None => backend_for(spec.backend, &spec.params, p)?,
            };
            log::info!("evaluating {} on {} cases", p.label, cases.len());
            Ok(run_point(&b, cases, p, &spec.session))
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "point,label,click,mean_dsc,cases,failures";

/// Mean DSC per click count for every point. Contains no timings, so it is
/// reproducible byte for byte.
pub fn summary_csv(results: &[PointResult]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (i, r) in results.iter().enumerate() {
        for (k, d) in r.curve().iter().enumerate() {
            out.push_str(&format!("{i},{},{k},{d:.6},{},{}\n", r.point.label, r.traces.len(), r.failures.len()));
        }
    }
    out
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::Io(path.display().to_string(), e))
}

/// Writes `cases/*.csv`, `summary.csv` and `curve.svg` under `out`.
pub fn write_reports(out: &Path, results: &[PointResult]) -> Result<(), HarnessError> {
    let cases = out.join("cases");
    create_dir(&cases)?;
    for (i, r) in results.iter().enumerate() {
        for (id, trace) in &r.traces {
            let name = if results.len() == 1 { format!("{id}.csv") } else { format!("p{i}_{id}.csv") };
            let mut buf = Vec::new();
            trace.write_csv(&mut buf).map_err(|e| HarnessError::Io(name.clone(), e))?;
            write_file(&cases.join(name), &buf)?;
        }
    }
    write_file(&out.join("summary.csv"), summary_csv(results).as_bytes())?;
    let series: Vec<Series> = results.iter().map(|r| Series { label: r.point.label.clone(), values: r.curve() }).collect();
    write_file(&out.join("curve.svg"), write_curve_svg("Mean DSC vs. number of clicks (synthetic phantoms, not clinical data)", &series).as_bytes())
}

/// Loads the cases, evaluates every sweep point and writes the reports.
pub fn evaluate(spec: &ExperimentSpec) -> Result<Vec<PointResult>, HarnessError> {
    let cases = spec.load_cases()?;
    let results = evaluate_cases(spec, &cases, None)?;
    write_reports(&spec.out, &results)?;
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub backend: String,
    pub dsc_at_budget: f64,
    pub clicks_to_threshold: f64,
    pub seconds_per_interaction: f64,
    pub failures: usize,
}

pub const COMPARE_HEADER: &str = "backend,dsc_at_budget,clicks_to_threshold,seconds_per_interaction,failures";

impl CompareRow {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.3},{:.6},{}", self.backend, self.dsc_at_budget, self.clicks_to_threshold, self.seconds_per_interaction, self.failures)
    }
}

/// One row per backend: DSC at the click budget, clicks to reach the
/// threshold (budget when never reached) and wall time per interaction.
pub fn compare_cases(spec: &ExperimentSpec, cases: &[Case], backends: &[Backend]) -> Vec<(CompareRow, PointResult)> {
    let point = SweepPoint { label: String::new(), sigma: spec.params.exp.sigma, budget: spec.session.max_clicks, checkpoint: None };
    backends
        .iter()
        .map(|b| {
            let point = SweepPoint { sigma: b.params.exp.sigma, label: b.kind.to_string(), ..point.clone() };
            let r = run_point(b, cases, &point, &spec.session);
            let row = CompareRow {
                backend: b.kind.to_string(),
                dsc_at_budget: r.mean_dsc(point.budget),
                clicks_to_threshold: r.mean_clicks_to(spec.session.dsc_threshold),
                seconds_per_interaction: r.seconds_per_interaction(),
                failures: r.failures.len(),
            };
            (row, r)
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{COMPARE_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Runs `compare_cases` for the spec's backend list and writes
/// `comparison.csv` plus the per-backend reports.
pub fn compare(spec: &ExperimentSpec) -> Result<Vec<CompareRow>, HarnessError> {
    let cases = spec.load_cases()?;
    let names = if spec.compare.is_empty() { vec!["din".to_string(), "graphcut".into(), "randomwalk".into()] } else { spec.compare.clone() };
    let backends = names
        .iter()
        .map(|n| {
            let s: BackendSpec = n.parse()?;
            let ck = s.checkpoint.or_else(|| spec.checkpoint.clone());
            Backend::with_checkpoint(s.kind, spec.params.clone(), ck.as_deref())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let results = compare_cases(spec, &cases, &backends);
    let rows: Vec<CompareRow> = results.iter().map(|(r, _)| r.clone()).collect();
    create_dir(&spec.out)?;
    write_file(&spec.out.join("comparison.csv"), compare_csv(&rows).as_bytes())?;
    let points: Vec<PointResult> = results.into_iter().map(|(_, p)| p).collect();
    write_reports(&spec.out, &points)?;
    Ok(rows)
}
