use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Subcommand, ValueEnum};
use serde::Serialize;

use rigidscene::fusion::{fuse_flow, total_energy, LossTerms, LossWeights};
use rigidscene::geometry::rigid_flow;
use rigidscene::io::{
    colorize_flow, colorize_map, read_depth, read_flo, read_json, read_pfm, read_sample, write_flo, write_image,
    write_json, write_mask, write_pfm, write_sample, Colormap, OutputFormat, VisualizationSpec,
};
use rigidscene::pipeline::{evaluate_losses, evaluate_outputs, training_sample, LossInputs, PerturbConfig};
use rigidscene::pnp::{correspondences_from_flow, solve_pnp, PnpConfig};
use rigidscene::rfm::{train_rfm, MlpParams, RfmConfig, RfmSample};
use rigidscene::simulator::{generate_scene, random_scene_config, RandomSceneSpec, SceneConfig, SceneSample};
use rigidscene::{CameraPose, Grid};

use crate::CliError;

type CliResult = Result<(), CliError>;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic frame pair with ground truth into a sample directory
    Simulate(SimulateArgs),
    /// Estimate the camera pose from optical flow and depth
    Pose(PoseArgs),
    /// Compute the rigid flow induced by depth and a pose
    RigidFlow(RigidFlowArgs),
    /// Train the rigidity boundary regressor on sample directories
    RfmTrain(RfmTrainArgs),
    /// Infer a rigid map from optical and rigid flow
    RfmInfer(RfmInferArgs),
    /// Fuse optical and rigid flow with a rigid map
    Fuse(FuseArgs),
    /// Score flow, rigid map and pose against a sample's ground truth
    Eval(EvalArgs),
    /// Evaluate every unsupervised loss term and the weighted energy
    Losses(LossesArgs),
    /// Render a flow field or a scalar map as a color image
    Viz(VizArgs),
}

impl Command {
    pub fn run(self) -> CliResult {
        match self {
            Command::Simulate(a) => a.run(),
            Command::Pose(a) => a.run(),
            Command::RigidFlow(a) => a.run(),
            Command::RfmTrain(a) => a.run(),
            Command::RfmInfer(a) => a.run(),
            Command::Fuse(a) => a.run(),
            Command::Eval(a) => a.run(),
            Command::Losses(a) => a.run(),
            Command::Viz(a) => a.run(),
        }
    }
}

/// Writes JSON to `out`, or pretty-prints it to stdout.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    match out {
        Some(path) => write_json(path, value)?,
        None => {
            let text = serde_json::to_string_pretty(value).expect("serializable report");
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                Err(source) => {
                    return Err(rigidscene::Error::Io {
                        path: PathBuf::from("<stdout>"),
                        source,
                    }
                    .into())
                }
                Ok(()) => {}
            }
        }
    }
    Ok(())
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    Ok(match path {
        Some(p) => read_json(p)?,
        None => T::default(),
    })
}

fn load_sample(dir: &Path) -> Result<SceneSample, CliError> {
    Ok(read_sample(dir)?.0)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene configuration JSON; a random scene is drawn from --seed when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// Texture seed, or the scene seed when no config is given
    #[arg(long)]
    seed: Option<u64>,
    /// Output sample directory
    #[arg(long)]
    out: PathBuf,
}

impl SimulateArgs {
    fn run(self) -> CliResult {
        let cfg = match &self.config {
            Some(path) => {
                let mut cfg: SceneConfig = read_json(path)?;
                if let Some(seed) = self.seed {
                    cfg.rng_seed = seed;
                }
                cfg
            }
            None => random_scene_config(self.seed.unwrap_or(0), &RandomSceneSpec::default())?,
        };
        let sample = generate_scene(&cfg)?;
        write_sample(&self.out, &sample, &cfg, cfg.rng_seed)?;
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    /// Sample directory providing intrinsics and default inputs
    #[arg(long)]
    sample: PathBuf,
    /// Optical flow (.flo); defaults to the sample's ground truth
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Depth (.pfm); defaults to the sample's ground truth
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Solver configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// RANSAC seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output pose JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct PoseSummary {
    correspondences: usize,
    inliers: usize,
    inlier_ratio: f64,
    rms_px: f64,
}

impl PoseArgs {
    fn run(self) -> CliResult {
        let sample = load_sample(&self.sample)?;
        let mut cfg: PnpConfig = load_or_default(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        let flow = match &self.flow {
            Some(p) => read_flo(p)?,
            None => sample.optical_flow.clone(),
        };
        let depth = match &self.depth {
            Some(p) => read_depth(p)?,
            None => sample.depth.clone(),
        };
        let corrs = correspondences_from_flow(&flow, &depth)?;
        let result = solve_pnp(&corrs, &sample.intrinsics, &cfg)?;
        write_json(&self.out, &result.pose)?;
        emit(
            None,
            &PoseSummary {
                correspondences: corrs.len(),
                inliers: result.inlier_count(),
                inlier_ratio: result.inlier_ratio(),
                rms_px: result.final_rms_px,
            },
        )
    }
}

#[derive(Debug, Args)]
pub struct RigidFlowArgs {
    #[arg(long)]
    sample: PathBuf,
    /// Pose JSON
    #[arg(long)]
    pose: PathBuf,
    /// Depth (.pfm); defaults to the sample's ground truth
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Output flow (.flo)
    #[arg(long)]
    out: PathBuf,
    /// Optional validity mask image
    #[arg(long)]
    valid_out: Option<PathBuf>,
}

impl RigidFlowArgs {
    fn run(self) -> CliResult {
        let sample = load_sample(&self.sample)?;
        let pose: CameraPose = read_json(&self.pose)?;
        let depth = match &self.depth {
            Some(p) => read_depth(p)?,
            None => sample.depth.clone(),
        };
        let (flow, valid) = rigid_flow(&depth, &sample.intrinsics, &pose);
        write_flo(&self.out, &flow)?;
        if let Some(path) = &self.valid_out {
            write_mask(path, &valid)?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RfmTrainArgs {
    /// Training sample directories
    #[arg(long, num_args = 1.., required = true)]
    samples: Vec<PathBuf>,
    /// Training configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling and input noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RMS of the correlated noise added to the ground-truth flow, in pixels
    #[arg(long, default_value_t = 1.0)]
    flow_noise: f64,
    /// Standard deviation of the log-depth noise
    #[arg(long, default_value_t = 0.3)]
    depth_noise: f64,
    /// Output parameters JSON
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch loss trace JSON
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl RfmTrainArgs {
    fn run(self) -> CliResult {
        let mut cfg: RfmConfig = load_or_default(self.config.as_deref())?;
        cfg.rng_seed = self.seed;
        let pnp = PnpConfig {
            rng_seed: self.seed,
            ..PnpConfig::default()
        };
        let mut data = Vec::with_capacity(self.samples.len());
        for (i, dir) in self.samples.iter().enumerate() {
            let sample = load_sample(dir)?;
            let perturb = PerturbConfig {
                flow_amplitude: self.flow_noise,
                depth_sigma: self.depth_noise,
                seed: self.seed.wrapping_add(i as u64),
                ..PerturbConfig::default()
            };
            data.push(training_sample(&sample, &perturb, &pnp, &cfg)?);
        }
        let trained = train_rfm(&data, &MlpParams::random(self.seed), &cfg)?;
        write_json(&self.out, &trained.params)?;
        if let Some(path) = &self.trace {
            write_json(path, &trained.trace)?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RfmInferArgs {
    /// Sample directory providing the frame pair
    #[arg(long)]
    sample: PathBuf,
    /// Trained parameters JSON
    #[arg(long)]
    params: PathBuf,
    /// Optical flow (.flo)
    #[arg(long)]
    flow: PathBuf,
    /// Rigid flow (.flo)
    #[arg(long)]
    rigid: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output rigid map (.pfm)
    #[arg(long)]
    out: PathBuf,
}

impl RfmInferArgs {
    fn run(self) -> CliResult {
        let sample = load_sample(&self.sample)?;
        let cfg: RfmConfig = load_or_default(self.config.as_deref())?;
        let theta: MlpParams = read_json(&self.params)?;
        let optical = read_flo(&self.flow)?;
        let rigid = read_flo(&self.rigid)?;
        let rfm = RfmSample::new(&sample.image_t, &sample.image_t1, &optical, &rigid, &cfg.photometric)?;
        write_pfm(&self.out, &rfm.rigid_map(&theta, cfg.alpha))?;
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    optical: PathBuf,
    #[arg(long)]
    rigid: PathBuf,
    /// Rigid map (.pfm) with values in [0, 1]
    #[arg(long)]
    rigid_map: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

impl FuseArgs {
    fn run(self) -> CliResult {
        let optical = read_flo(&self.optical)?;
        let rigid = read_flo(&self.rigid)?;
        let map = read_pfm(&self.rigid_map)?;
        map.check_unit_range("rigid map")?;
        write_flo(&self.out, &fuse_flow(&optical, &rigid, &map)?)?;
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    sample: PathBuf,
    /// Flow estimate (.flo)
    #[arg(long)]
    flow: PathBuf,
    /// Rigid map (.pfm); pixels below 0.5 count as moving
    #[arg(long)]
    rigid_map: PathBuf,
    /// Pose estimate JSON
    #[arg(long)]
    pose: PathBuf,
    /// Report JSON; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalArgs {
    fn run(self) -> CliResult {
        let sample = load_sample(&self.sample)?;
        let flow = read_flo(&self.flow)?;
        let map = read_pfm(&self.rigid_map)?;
        let pose: CameraPose = read_json(&self.pose)?;
        let report = evaluate_outputs(&sample, &flow, &map, &pose)?;
        emit(self.out.as_deref(), &report)
    }
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[arg(long)]
    sample: PathBuf,
    /// Optical flow (.flo); defaults to ground truth, as do the other inputs
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Backward flow (.flo) for the occlusion check
    #[arg(long)]
    backward_flow: Option<PathBuf>,
    /// Rigid flow (.flo)
    #[arg(long)]
    rigid: Option<PathBuf>,
    /// Rigid map (.pfm)
    #[arg(long)]
    rigid_map: Option<PathBuf>,
    /// Left depth (.pfm)
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Right depth (.pfm)
    #[arg(long)]
    depth_right: Option<PathBuf>,
    /// Loss weights JSON; the joint-stage weights when absent
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct LossReport {
    #[serde(flatten)]
    terms: LossTerms,
    #[serde(rename = "E")]
    energy: f64,
}

impl LossesArgs {
    fn run(self) -> CliResult {
        let sample = load_sample(&self.sample)?;
        let weights: LossWeights = load_or_default(self.weights.as_deref())?;
        let flo = |p: &Option<PathBuf>, gt: &rigidscene::FlowField| -> Result<_, CliError> {
            Ok(match p {
                Some(p) => read_flo(p)?,
                None => gt.clone(),
            })
        };
        let dep = |p: &Option<PathBuf>, gt: &rigidscene::DepthMap| -> Result<_, CliError> {
            Ok(match p {
                Some(p) => read_depth(p)?,
                None => gt.clone(),
            })
        };
        let optical = flo(&self.flow, &sample.optical_flow)?;
        let backward = flo(&self.backward_flow, &sample.backward_flow)?;
        let rigid = flo(&self.rigid, &sample.rigid_flow)?;
        let depth = dep(&self.depth, &sample.depth)?;
        let depth_right = dep(&self.depth_right, &sample.depth_right)?;
        let rigid_map = match &self.rigid_map {
            Some(p) => read_pfm(p)?,
            None => sample.rigid_map(),
        };
        rigid_map.check_unit_range("rigid map")?;
        let rigid_valid = Grid::filled(sample.width(), sample.height(), 1.0);
        let inputs = LossInputs {
            optical: &optical,
            backward: &backward,
            rigid: &rigid,
            rigid_valid: &rigid_valid,
            rigid_map: &rigid_map,
            depth: &depth,
            depth_right: &depth_right,
        };
        let cfg = RfmConfig::default();
        let terms = evaluate_losses(&sample, &inputs, &cfg.photometric, cfg.eps_area)?;
        let energy = total_energy(&terms, &weights)?;
        emit(self.out.as_deref(), &LossReport { terms, energy })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ColormapArg {
    Heat,
    Gray,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["flow", "map"])))]
pub struct VizArgs {
    /// Flow field (.flo) to color-code
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Scalar map (.pfm) with values in [0, 1]
    #[arg(long)]
    map: Option<PathBuf>,
    /// Flow magnitude at full saturation; the field maximum when absent
    #[arg(long)]
    max: Option<f64>,
    #[arg(long, value_enum, default_value_t = ColormapArg::Heat)]
    colormap: ColormapArg,
    /// Output image; `.png` writes PNG, anything else binary PPM
    #[arg(long)]
    out: PathBuf,
}

impl VizArgs {
    fn run(self) -> CliResult {
        let is_png = self.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let spec = VisualizationSpec {
            flow_max: self.max,
            colormap: match self.colormap {
                ColormapArg::Heat => Colormap::Heat,
                ColormapArg::Gray => Colormap::Gray,
            },
            format: if is_png { OutputFormat::Png } else { OutputFormat::Ppm },
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let image = match (&self.flow, &self.map) {
            (Some(p), _) => colorize_flow(&read_flo(p)?, &spec),
            (_, Some(p)) => colorize_map(&read_pfm(p)?, &spec),
            _ => unreachable!("clap enforces one input"),
        };
        write_image(&self.out, &image)?;
        Ok(())
    }
}
