use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use daaria_core::calibration::{
    gaze_laser_to_point, monte_carlo_study, register_icp, run_calibration_procedure, CalibrationFile,
    CalibrationTarget, GazeLaserSample, IcpParams, ProcedureOptions, SampleNoise, StudyConfig, SyntheticRig,
};
use daaria_core::config::Config;
use daaria_core::pipeline::{MetricsCollector, Pipeline};
use daaria_core::render::{render_bird, render_scene, BirdLayout};
use daaria_core::replay::{read_log, write_log, ReplayError};
use daaria_core::simulation::{run, Scenario, ScenarioError};
use daaria_core::RigidTransform;
use daaria_service::{ServiceConfig, ServiceError};

use crate::Method;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: exit code 2.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn replay_err(path: &Path, e: ReplayError) -> CliError {
    match e {
        ReplayError::Io(e) => io_err(path, e),
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_config() -> Result<Config> {
    Config::from_env().map_err(|e| CliError::Invalid(e.to_string()))
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    let described = |e: ScenarioError| CliError::Invalid(format!("{spec}: {e}"));
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Scenario::from_json(&text).map_err(described)
    } else {
        Scenario::bundled(spec).map_err(|_| {
            let names: Vec<&str> = Scenario::bundled_names().collect();
            CliError::Invalid(format!("scenario: no file or bundled scenario {spec:?} (bundled: {})", names.join(", ")))
        })
    }
}

/// `run.jsonl` → `run.truth.jsonl`, `run.calib.json`.
pub fn sidecar_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.with_extension("truth.jsonl"), out.with_extension("calib.json"))
}

pub fn simulate(scenario: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut s = load_scenario(scenario)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let log = run(&s).map_err(|e| CliError::Invalid(format!("{scenario}: {e}")))?;
    let (truth_path, calib_path) = sidecar_paths(out);
    write_log(&log.records, out).map_err(|e| replay_err(out, e))?;
    write_log(&log.truth, &truth_path).map_err(|e| replay_err(&truth_path, e))?;
    let calib = CalibrationFile {
        transform_f_to_m: s.calibration_truth,
        rms: 0.0,
        residuals: Vec::new(),
        scene_camera: Some(s.scene_camera),
    };
    write_json(&calib_path, &calib)?;
    print_json(&serde_json::json!({
        "scenario": s.name,
        "seed": s.seed,
        "records": log.records.len(),
        "log": out,
        "truth": truth_path,
        "calib": calib_path,
    }));
    Ok(())
}

pub fn replay(
    log: &Path,
    calib: &Path,
    render: Option<&Path>,
    metrics_out: Option<&Path>,
    vane_out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config()?;
    let records = read_log(log).map_err(|e| replay_err(log, e))?;
    let calib_file: CalibrationFile = read_json(calib)?;
    let scene = calib_file.scene_camera.unwrap_or_default();
    let mut pipeline = Pipeline::new(cfg.clone(), calib_file.transform_f_to_m, scene);
    let mut collector = MetricsCollector::new(cfg.metaphor.max_arrows);
    let mut outputs = Vec::with_capacity(records.len());
    for r in &records {
        let out = pipeline
            .process(r)
            .map_err(|e| CliError::Invalid(format!("{}: t={}: {e}", log.display(), r.t)))?;
        collector.observe(&out);
        outputs.push(out);
    }

    if let Some(dir) = render {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let vane_path = vane_out.map(Path::to_path_buf).or_else(|| render.map(|d| d.join("vane.jsonl")));
    if let Some(p) = &vane_path {
        let file = fs::File::create(p).map_err(|e| io_err(p, e))?;
        let mut w = BufWriter::new(file);
        for o in &outputs {
            let line = serde_json::to_string(&o.vane).expect("vane serializes");
            writeln!(w, "{line}").map_err(|e| io_err(p, e))?;
        }
        w.flush().map_err(|e| io_err(p, e))?;
    }
    if let Some(dir) = render {
        let layout = BirdLayout {
            size: cfg.bird_size_px,
            extent_m: cfg.bird_extent_m,
        };
        let (w, h) = (scene.intrinsics.width as usize, scene.intrinsics.height as usize);
        outputs.par_iter().enumerate().try_for_each(|(k, o)| {
            let bird = dir.join(format!("bird_{k:05}.ppm"));
            fs::write(&bird, render_bird(&layout, &o.bird).to_ppm()).map_err(|e| io_err(&bird, e))?;
            let sc = dir.join(format!("scene_{k:05}.ppm"));
            fs::write(&sc, render_scene(w, h, &o.scene).to_ppm()).map_err(|e| io_err(&sc, e))
        })?;
    }

    let metrics = collector.finish();
    if let Some(p) = metrics_out {
        write_json(p, &metrics)?;
    }
    print_json(&metrics);
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<GazeLaserSample>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: GazeLaserSample = serde_json::from_str(&line)
            .map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        gaze_laser_to_point(&s).map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

fn write_samples(path: &Path, samples: &[GazeLaserSample]) -> Result<()> {
    let mut text = String::new();
    for s in samples {
        text.push_str(&serde_json::to_string(s).expect("sample serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn rotation_rows(t: &RigidTransform) -> [[f64; 3]; 3] {
    let r = t.rotation();
    [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ]
}

pub fn calibrate(
    samples_path: &Path,
    target_path: &Path,
    method: Method,
    init: Option<&Path>,
    truth: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let samples = read_samples(samples_path)?;
    let target: CalibrationTarget = read_json(target_path)?;
    let invalid = |e: daaria_core::calibration::CalibrationError| CliError::Invalid(format!("calibration: {e}"));
    let result = match method {
        Method::Kabsch => run_calibration_procedure(&samples, &target, &ProcedureOptions::default()).map_err(invalid)?,
        Method::Icp => {
            let points_f = samples
                .iter()
                .map(gaze_laser_to_point)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(invalid)?;
            let points_m: Vec<_> = target.points.values().map(|q| target.pose_m.transform_point(q)).collect();
            let init = match init {
                Some(p) => read_json::<CalibrationFile>(p)?.transform_f_to_m,
                None => RigidTransform::identity(),
            };
            register_icp(&points_f, &points_m, &init, &IcpParams::default()).map_err(invalid)?
        }
    };
    let file = CalibrationFile::from(&result);
    if let Some(p) = out {
        write_json(p, &file)?;
    }
    let t = &result.transform_f_to_m;
    let mut report = serde_json::json!({
        "method": match method { Method::Kabsch => "kabsch", Method::Icp => "icp" },
        "rotation": rotation_rows(t),
        "translation": [t.translation().x, t.translation().y, t.translation().z],
        "rms": result.rms_residual,
        "residuals": samples.iter().zip(&result.per_point_residuals)
            .map(|(s, r)| serde_json::json!({"id": s.target_point_id, "residual": r}))
            .collect::<Vec<_>>(),
        "iterations": result.iterations,
        "converged": result.converged,
    });
    if let Some(p) = truth {
        let truth = read_json::<CalibrationFile>(p)?.transform_f_to_m;
        report["rotation_error_rad"] = t.rotation_angle_to(&truth).into();
        report["translation_error_m"] = t.translation_distance_to(&truth).into();
    }
    print_json(&report);
    Ok(())
}

pub struct SynthArgs<'a> {
    pub truth: &'a Path,
    pub n: usize,
    pub gaze_noise_deg: f64,
    pub dist_noise_m: f64,
    pub trials: usize,
    pub seed: u64,
    pub write_samples: Option<&'a Path>,
    pub write_target: Option<&'a Path>,
}

pub fn calib_synth(a: SynthArgs<'_>) -> Result<()> {
    let truth = read_json::<CalibrationFile>(a.truth)?.transform_f_to_m;
    let rig = SyntheticRig::default();
    let available = rig.target.points.len();
    if a.n < 3 || a.n > available {
        return Err(CliError::Invalid(format!("--n: must lie in [3, {available}], got {}", a.n)));
    }
    if !(a.gaze_noise_deg.is_finite() && a.gaze_noise_deg >= 0.0) {
        return Err(CliError::Invalid("--gaze-noise-deg: must be >= 0".into()));
    }
    if !(a.dist_noise_m.is_finite() && a.dist_noise_m >= 0.0) {
        return Err(CliError::Invalid("--dist-noise-m: must be >= 0".into()));
    }
    if a.trials == 0 {
        return Err(CliError::Invalid("--trials: must be positive".into()));
    }
    let noise = SampleNoise {
        gaze_sigma_rad: a.gaze_noise_deg.to_radians(),
        distance_sigma_m: a.dist_noise_m,
    };
    if let Some(p) = a.write_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        write_samples(p, &rig.synthesize_samples(&truth, a.n, &noise, &mut rng))?;
    }
    if let Some(p) = a.write_target {
        write_json(p, &rig.target)?;
    }
    let study = monte_carlo_study(
        &rig,
        &truth,
        &StudyConfig {
            samples_per_trial: a.n,
            trials: a.trials,
            noise,
            seed: a.seed,
        },
    );
    print_json(&serde_json::json!({
        "gaze_noise_deg": a.gaze_noise_deg,
        "dist_noise_m": a.dist_noise_m,
        "seed": a.seed,
        "study": study,
    }));
    Ok(())
}

pub fn serve(port: u16, host: std::net::Ipv4Addr, scenario_dir: Option<PathBuf>, scenario: String) -> Result<()> {
    if let Some(d) = &scenario_dir {
        if !d.is_dir() {
            return Err(CliError::Invalid(format!("--scenario-dir: {} is not a directory", d.display())));
        }
    }
    let cfg = ServiceConfig {
        port,
        bind_host: host.octets(),
        scenario_dir,
        default_scenario: scenario,
        config: load_config()?,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Failed(e.to_string()))?;
    runtime.block_on(async {
        let server = daaria_service::bind(cfg).await.map_err(|e| match e {
            ServiceError::UnknownScenario(_) | ServiceError::BadScenario { .. } => CliError::Invalid(e.to_string()),
            other => CliError::Failed(other.to_string()),
        })?;
        if let Ok(addr) = server.local_addr() {
            eprintln!("daaria: listening on ws://{addr}/session");
        }
        server.run().await.map_err(|e| CliError::Failed(e.to_string()))
    })
}
