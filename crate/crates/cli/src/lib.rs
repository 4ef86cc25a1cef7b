//! Subcommands of the `elevmap` binary.
//!
//! Every command resolves its settings as defaults, then `--config` file
//! entries, then explicit flags, and writes the resolved settings next to
//! its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use elevmap::pipeline::{self, DatasetConfig, Predictor, RunConfig};
use elevmap::predictor::{self, TrainConfig};
use elevmap::terrain::{self, TerrainFamily, TerrainSpec};
use elevmap::{io, Error, RobotProfile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// Process exit code: 2 for usage and configuration errors, 3 for
    /// anything wrong with the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::BadProportions(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "elevmap",
    version,
    about = "Uncertainty-aware elevation mapping toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Seed for every random choice of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// `key=value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one terrain tile (EMHF + PGM preview).
    Terrain {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        difficulty: Option<f64>,
        #[arg(long)]
        profile: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize an input/label dataset (EMDS).
    Dataset {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        profile: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the predictor on a dataset (EMWT + loss curve).
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Trailing fraction of the dataset used for validation.
        #[arg(long)]
        val_fraction: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a network and the baseline on a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Omit to report only the baseline.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop mapping simulation along a scripted trajectory.
    FuseSim {
        /// Use this terrain instead of generating one.
        #[arg(long)]
        terrain: Option<PathBuf>,
        /// Trained network; the baseline predictor is used otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        cameras: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a binary file into PGM previews or text.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// What a command wrote, for reporting.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub summary: String,
}

impl Report {
    fn write(&mut self, dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        let path = dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }
}

pub fn run(cli: Cli) -> CliResult<Report> {
    match cli.command {
        Command::Terrain {
            family,
            difficulty,
            profile,
            common,
        } => cmd_terrain(family, difficulty, profile, &common),
        Command::Dataset {
            count,
            profile,
            common,
        } => cmd_dataset(count, profile, &common),
        Command::Train {
            dataset,
            epochs,
            val_fraction,
            common,
        } => cmd_train(&dataset, epochs, val_fraction, &common),
        Command::Eval {
            dataset,
            weights,
            beta,
            common,
        } => cmd_eval(&dataset, weights.as_deref(), beta, &common),
        Command::FuseSim {
            terrain,
            weights,
            cameras,
            common,
        } => cmd_fuse_sim(terrain.as_deref(), weights.as_deref(), cameras, &common),
        Command::Export { input, common } => cmd_export(&input, &common),
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))
}

fn load_config(common: &Common) -> CliResult<BTreeMap<String, String>> {
    match &common.config {
        None => Ok(BTreeMap::new()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
            Ok(pipeline::parse_kv(&text)?)
        }
    }
}

fn out_dir(common: &Common) -> CliResult<&Path> {
    fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Data(format!("creating {}: {e}", common.out.display())))?;
    Ok(&common.out)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| usage(format!("{key} = `{v}`: {e}")))
}

fn parse_profile(s: &str) -> CliResult<RobotProfile> {
    RobotProfile::parse(s)
        .ok_or_else(|| usage(format!("unknown profile `{s}` (quadruped | biped)")))
}

/// Removes `key` from the config map.
fn take(kv: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
    kv.remove(key)
}

fn reject_leftovers(kv: &BTreeMap<String, String>) -> CliResult<()> {
    match kv.keys().next() {
        Some(k) => Err(usage(format!("unknown config key `{k}`"))),
        None => Ok(()),
    }
}

pub fn cmd_terrain(
    family: Option<String>,
    difficulty: Option<f64>,
    profile: Option<String>,
    common: &Common,
) -> CliResult<Report> {
    let mut kv = load_config(common)?;
    let family = family
        .or_else(|| take(&mut kv, "family"))
        .unwrap_or_else(|| "rough".into());
    let family =
        TerrainFamily::parse(&family).ok_or_else(|| usage(format!("unknown family `{family}`")))?;
    let difficulty = match (difficulty, take(&mut kv, "difficulty")) {
        (Some(d), _) => d,
        (None, Some(v)) => parse_num("difficulty", &v)?,
        (None, None) => 0.5,
    };
    let profile = profile
        .or_else(|| take(&mut kv, "profile"))
        .unwrap_or_else(|| "quadruped".into());
    let profile = parse_profile(&profile)?;
    let seed = match (common.seed, take(&mut kv, "seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => parse_num("seed", &v)?,
        (None, None) => 0,
    };
    reject_leftovers(&kv)?;
    if !difficulty.is_finite() {
        return Err(usage("difficulty must be finite"));
    }
    let mut report = Report::default();
    if !(0.0..=1.0).contains(&difficulty) {
        report
            .warnings
            .push(format!("difficulty {difficulty} clamped to [0, 1]"));
    }
    let spec = TerrainSpec::new(family, difficulty, seed, profile);
    let field = terrain::generate(&spec);
    let dir = out_dir(common)?;
    report.write(dir, "terrain.emhf", io::encode_heightfield(&field))?;
    report.write(dir, "terrain.pgm", io::heightfield_pgm(&field))?;
    let meta = format!(
        "family={}\ndifficulty={}\nprofile={}\nseed={}\nlength={}\nwidth={}\nresolution={}\n",
        family.name(),
        spec.difficulty(),
        profile.name(),
        seed,
        field.length(),
        field.width(),
        field.resolution()
    );
    report.write(dir, "terrain.cfg", meta)?;
    report.summary = format!(
        "{} terrain, difficulty {}",
        family.name(),
        spec.difficulty()
    );
    Ok(report)
}

fn apply_dataset_kv(cfg: &mut DatasetConfig, kv: &mut BTreeMap<String, String>) -> CliResult<()> {
    let keys: Vec<String> = kv.keys().cloned().collect();
    for k in keys {
        let v = kv.remove(&k).expect("key listed");
        let range = |v: &str| -> CliResult<(f64, f64)> {
            let (a, b) = v
                .split_once(',')
                .ok_or_else(|| usage(format!("{k} needs `low,high`")))?;
            Ok((parse_num(&k, a.trim())?, parse_num(&k, b.trim())?))
        };
        match k.as_str() {
            "count" => cfg.count = parse_num(&k, &v)?,
            "profile" => cfg.profile = parse_profile(&v)?,
            "seed" => cfg.seed = parse_num(&k, &v)?,
            "samples_per_terrain" => cfg.samples_per_terrain = parse_num(&k, &v)?,
            "height_jitter" => cfg.height_jitter = parse_num(&k, &v)?,
            "augment.noise_mag_range" => cfg.augment.noise_mag_range = range(&v)?,
            "augment.crop_max_cells" => cfg.augment.crop_max_cells = parse_num(&k, &v)?,
            "augment.missing_ratio_range" => cfg.augment.missing_ratio_range = range(&v)?,
            "augment.outlier_ratio_range" => cfg.augment.outlier_ratio_range = range(&v)?,
            "augment.outlier_elevation_range" => cfg.augment.outlier_elevation_range = range(&v)?,
            "augment.occlusion" => {
                if !parse_num::<bool>(&k, &v)? {
                    cfg.augment.occlusion = None;
                }
            }
            "augment.clip" => {
                if !parse_num::<bool>(&k, &v)? {
                    cfg.augment.clip = None;
                }
            }
            "augment.seed" => cfg.augment.seed = parse_num(&k, &v)?,
            _ => return Err(usage(format!("unknown config key `{k}`"))),
        }
    }
    Ok(())
}

fn dataset_metadata(cfg: &DatasetConfig) -> String {
    let a = &cfg.augment;
    let pair = |p: (f64, f64)| format!("{},{}", p.0, p.1);
    let mut s = format!(
        "count={}\nprofile={}\nseed={}\nsamples_per_terrain={}\nheight_jitter={}\n\
         augment.noise_mag_range={}\naugment.crop_max_cells={}\naugment.missing_ratio_range={}\n\
         augment.outlier_ratio_range={}\naugment.outlier_elevation_range={}\naugment.occlusion={}\n\
         augment.clip={}\naugment.seed={}\n",
        cfg.count,
        cfg.profile.name(),
        cfg.seed,
        cfg.samples_per_terrain,
        cfg.height_jitter,
        pair(a.noise_mag_range),
        a.crop_max_cells,
        pair(a.missing_ratio_range),
        pair(a.outlier_ratio_range),
        pair(a.outlier_elevation_range),
        a.occlusion.is_some(),
        a.clip.is_some(),
        a.seed,
    );
    if let Some(o) = &a.occlusion {
        s.push_str(&format!("# occlusion {o:?}\n"));
    }
    if let Some(c) = &a.clip {
        s.push_str(&format!("# clip {c:?}\n"));
    }
    for (f, p) in &cfg.proportions {
        s.push_str(&format!("# proportion {}={}\n", f.name(), p));
    }
    s
}

pub fn cmd_dataset(
    count: Option<usize>,
    profile: Option<String>,
    common: &Common,
) -> CliResult<Report> {
    let mut kv = load_config(common)?;
    let mut cfg = DatasetConfig::new(1000, RobotProfile::BipedT, 0);
    apply_dataset_kv(&mut cfg, &mut kv)?;
    if let Some(n) = count {
        cfg.count = n;
    }
    if let Some(p) = profile {
        cfg.profile = parse_profile(&p)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let data = pipeline::synthesize_dataset(&cfg)?;
    let dir = out_dir(common)?;
    let mut report = Report::default();
    report.write(
        dir,
        "dataset.emds",
        io::encode_dataset(&data.samples, &data.geometry),
    )?;
    report.write(dir, "dataset.cfg", dataset_metadata(&cfg))?;
    let (rows, cols) = data.geometry.shape();
    report.summary = format!("{} samples of {rows}x{cols}", data.len());
    Ok(report)
}

fn apply_train_kv(
    cfg: &mut TrainConfig,
    kv: &mut BTreeMap<String, String>,
) -> CliResult<Option<f64>> {
    let mut val_fraction = None;
    let keys: Vec<String> = kv.keys().cloned().collect();
    for k in keys {
        let v = kv.remove(&k).expect("key listed");
        match k.as_str() {
            "beta" => cfg.beta = parse_num(&k, &v)?,
            "learning_rate" => cfg.learning_rate = parse_num(&k, &v)?,
            "final_lr_fraction" => cfg.final_lr_fraction = parse_num(&k, &v)?,
            "batch_size" => cfg.batch_size = parse_num(&k, &v)?,
            "epochs" => cfg.epochs = parse_num(&k, &v)?,
            "tv_epsilon" => cfg.tv_epsilon = parse_num(&k, &v)?,
            "grad_clip" => cfg.grad_clip = parse_num(&k, &v)?,
            "seed" => cfg.seed = parse_num(&k, &v)?,
            "val_fraction" => val_fraction = Some(parse_num(&k, &v)?),
            "channels" => {
                let c: Vec<usize> = v
                    .split(',')
                    .map(|t| parse_num(&k, t.trim()))
                    .collect::<CliResult<_>>()?;
                match c[..] {
                    [a, b, d] => cfg.channels = (a, b, d),
                    _ => return Err(usage("channels needs three widths")),
                }
            }
            _ => return Err(usage(format!("unknown config key `{k}`"))),
        }
    }
    Ok(val_fraction)
}

fn load_dataset(path: &Path) -> CliResult<Vec<predictor::Sample>> {
    let (_, samples) = io::decode_dataset(&read(path)?)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    Ok(samples)
}

pub fn cmd_train(
    dataset: &Path,
    epochs: Option<usize>,
    val_fraction: Option<f64>,
    common: &Common,
) -> CliResult<Report> {
    let mut kv = load_config(common)?;
    let mut cfg = TrainConfig::default();
    let kv_fraction = apply_train_kv(&mut cfg, &mut kv)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let fraction = val_fraction.or(kv_fraction).unwrap_or(0.2);
    if !(0.0..1.0).contains(&fraction) {
        return Err(usage("val_fraction must lie in [0, 1)"));
    }
    cfg.validate()?;
    let samples = load_dataset(dataset)?;
    let held = ((samples.len() as f64) * fraction).round() as usize;
    let (train, val) = samples.split_at(samples.len() - held);
    let outcome = predictor::train(train, val, &cfg)?;
    let dir = out_dir(common)?;
    let mut report = Report::default();
    report.write(dir, "weights.emwt", io::encode_weights(&outcome.net))?;
    report.write(dir, "loss.csv", io::loss_curve_csv(&outcome.curve))?;
    let (a, b, c) = cfg.channels;
    let meta = format!(
        "dataset={}\nbeta={}\nlearning_rate={}\nfinal_lr_fraction={}\nbatch_size={}\nepochs={}\ntv_epsilon={}\n\
         grad_clip={}\nchannels={a},{b},{c}\nseed={}\nval_fraction={fraction}\n",
        dataset.display(),
        cfg.beta,
        cfg.learning_rate,
        cfg.final_lr_fraction,
        cfg.batch_size,
        cfg.epochs,
        cfg.tv_epsilon,
        cfg.grad_clip,
        cfg.seed,
    );
    report.write(dir, "train.cfg", meta)?;
    let last = outcome.curve.last();
    report.summary = format!(
        "{} epochs on {} samples, final train loss {}",
        outcome.curve.len(),
        train.len(),
        last.map_or(f64::NAN, |e| e.train_loss)
    );
    Ok(report)
}

pub fn cmd_eval(
    dataset: &Path,
    weights: Option<&Path>,
    beta: Option<f64>,
    common: &Common,
) -> CliResult<Report> {
    let mut kv = load_config(common)?;
    let beta = match (beta, take(&mut kv, "beta")) {
        (Some(b), _) => b,
        (None, Some(v)) => parse_num("beta", &v)?,
        (None, None) => 0.5,
    };
    reject_leftovers(&kv)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(usage("beta must lie in [0, 1]"));
    }
    let samples = load_dataset(dataset)?;
    let net = weights
        .map(|p| read(p).and_then(|b| Ok(io::decode_weights(&b)?)))
        .transpose()?;
    let r = pipeline::evaluate_report(net.as_ref(), &samples, beta)?;
    let trained = r.trained.map(|t| t.to_string()).unwrap_or_default();
    let text = format!(
        "dataset={}\nweights={}\nsamples={}\nbeta={}\ntrained_loss={trained}\nbaseline_loss={}\n",
        dataset.display(),
        weights.map(|p| p.display().to_string()).unwrap_or_default(),
        r.samples,
        r.beta,
        r.baseline
    );
    let dir = out_dir(common)?;
    let mut report = Report::default();
    report.write(dir, "eval.txt", &text)?;
    report.summary = text;
    Ok(report)
}

pub fn cmd_fuse_sim(
    terrain_path: Option<&Path>,
    weights: Option<&Path>,
    cameras: Option<usize>,
    common: &Common,
) -> CliResult<Report> {
    let kv = load_config(common)?;
    let profile = match kv.get("profile") {
        Some(p) => parse_profile(p)?,
        None => RobotProfile::QuadrupedA,
    };
    let mut cfg = RunConfig::new(profile, 0);
    cfg.apply(&kv)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.fusion.seed = s;
    }
    if let Some(c) = cameras {
        cfg.cameras = c;
    }
    cfg.validate()?;
    let field = match terrain_path {
        Some(p) => io::decode_heightfield(&read(p)?)?,
        None => terrain::generate(&cfg.terrain),
    };
    let predictor = match weights {
        Some(p) => Predictor::Trained(io::decode_weights(&read(p)?)?),
        None => Predictor::Baseline,
    };
    let out = pipeline::run_fuse_sim(&cfg, &field, &predictor)?;
    let dir = out_dir(common)?;
    let mut report = Report::default();
    report.write(dir, "map.emgm", io::encode_global_map(&out.map))?;
    let stats: Vec<_> = out.frames.iter().map(|f| f.stats).collect();
    report.write(dir, "stats.csv", io::fusion_stats_csv(&stats))?;
    let mut frames = String::from("frame,observed,l05\n");
    let mut timing = String::from("frame,predict_ms,fuse_ms\n");
    for f in &out.frames {
        frames.push_str(&format!("{},{},{}\n", f.frame, f.observed, f.l05));
        timing.push_str(&format!("{},{},{}\n", f.frame, f.predict_ms, f.fuse_ms));
    }
    report.write(dir, "frames.csv", frames)?;
    report.write(dir, "timing.csv", timing)?;
    let n = out.map.extent();
    report.write(dir, "elevation.pgm", io::pgm16(out.map.elevation(), n, n)?)?;
    report.write(dir, "variance.pgm", io::pgm16(out.map.variance(), n, n)?)?;
    let mut meta = cfg.to_kv();
    meta.push_str(&format!(
        "# predictor={}\n# terrain={}\n",
        predictor.name(),
        terrain_path.map_or_else(|| "generated".to_string(), |p| p.display().to_string())
    ));
    report.write(dir, "run.cfg", meta)?;
    let mean_l05 = out.frames.iter().map(|f| f.l05).sum::<f64>() / out.frames.len().max(1) as f64;
    report.summary = format!("{} frames, mean L0.5 {mean_l05:.4}", out.frames.len());
    Ok(report)
}

pub fn cmd_export(input: &Path, common: &Common) -> CliResult<Report> {
    reject_leftovers(&load_config(common)?)?;
    let bytes = read(input)?;
    let stem = input.file_stem().map_or_else(
        || "export".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let dir = out_dir(common)?;
    let mut report = Report::default();
    let grid_pgm = |g: &elevmap::sensing::LocalGrid| {
        let (r, c) = g.shape();
        let v: Vec<f64> = (0..g.geometry().len())
            .map(|i| g.get_index(i).unwrap_or(f64::NAN))
            .collect();
        io::pgm16(&v, r, c)
    };
    match bytes.get(..4) {
        Some(m) if m == io::HEIGHTFIELD_MAGIC => {
            let f = io::decode_heightfield(&bytes)?;
            report.write(dir, &format!("{stem}.pgm"), io::heightfield_pgm(&f))?;
        }
        Some(m) if m == io::GLOBAL_MAP_MAGIC => {
            let map = io::decode_global_map(&bytes)?;
            let n = map.extent();
            report.write(
                dir,
                &format!("{stem}_elevation.pgm"),
                io::pgm16(map.elevation(), n, n)?,
            )?;
            report.write(
                dir,
                &format!("{stem}_variance.pgm"),
                io::pgm16(map.variance(), n, n)?,
            )?;
        }
        Some(m) if m == io::LOCAL_GRID_MAGIC => {
            let g = io::decode_local_grid(&bytes)?;
            report.write(dir, &format!("{stem}.pgm"), grid_pgm(&g)?)?;
        }
        Some(m) if m == io::DATASET_MAGIC => {
            let (_, samples) = io::decode_dataset(&bytes)?;
            for (k, s) in samples.iter().take(8).enumerate() {
                report.write(dir, &format!("{stem}_{k}_input.pgm"), grid_pgm(&s.input)?)?;
                report.write(dir, &format!("{stem}_{k}_label.pgm"), grid_pgm(&s.label)?)?;
            }
        }
        Some(m) if m == io::WEIGHTS_MAGIC => {
            let net = io::decode_weights(&bytes)?;
            let c = net.config();
            let text = format!(
                "rows={}\ncols={}\nchannels={},{},{}\nleaky_slope={}\nparameters={}\n",
                c.rows,
                c.cols,
                c.c1,
                c.c2,
                c.c3,
                c.leaky_slope,
                net.parameter_count()
            );
            report.write(dir, &format!("{stem}.txt"), text)?;
        }
        _ => {
            return Err(CliError::Data(format!(
                "{}: unrecognized file magic",
                input.display()
            )))
        }
    }
    report.summary = format!("{} file(s) written", report.files.len());
    Ok(report)
}
