//! `geomem`: command-line harness for scene generation, rendering,
//! training, rollouts, evaluation and export.
//!
//! Exit codes: 0 success, 1 usage error, 2 config or input validation
//! failure, 3 runtime failure (including a failing `selftest`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geomem::camera::{pose_of, EgomotionNoise, NoiseMode, ViewIndex};
use geomem::config::RunConfig;
use geomem::experiment::{self, Provenance};
use geomem::policy::{PolicyKind, PolicyParams};
use geomem::render::render;
use geomem::scene::VoxelScene;
use geomem::tensor_io::{read_tns, write_tns};
use geomem::Error;

#[derive(Parser)]
#[command(name = "geomem", version, about = "Active-vision 3D reconstruction with a geometry-aware recurrent memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset as VXG1 files plus scenes.json.
    GenScenes {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view of a scene and write RGB and depth PPM images.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Rig view as `elevation,azimuth` indices, e.g. `1,4`.
        #[arg(long)]
        view: ViewIndex,
        #[arg(long = "dump-views")]
        dump_views: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the reconstruction model; writes a checkpoint and train_log.jsonl.
    TrainRecon {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint directory (default: <output_dir>/recon).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the learned view policy for each seed with the model frozen.
    TrainPolicy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Roll a policy out over a scene directory; writes EpisodeRecords as JSON lines.
    Rollout {
        #[arg(long)]
        policy: PolicyKind,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Policy checkpoint for `--policy learned`.
        #[arg(long = "policy-checkpoint")]
        policy_checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (default: <output_dir>/rollouts/<policy>.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-view decode tensors (occupancy, instance) here.
        #[arg(long = "dump-tensors")]
        dump_tensors: Option<PathBuf>,
    },
    /// Evaluate a policy on the held-out split; writes summary.json and per_scene.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        policy: PolicyKind,
        #[arg(long, default_value = "off")]
        noise: NoiseMode,
        /// Noise standard deviation in degrees (default: the config's eval noise).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "policy-checkpoint")]
        policy_checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: <output_dir>/eval/<policy>-<noise>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export thresholded voxels of a TNS1 tensor as a PLY point cloud.
    ExportPly {
        #[arg(long)]
        tensor: PathBuf,
        /// `occupancy`, `instance`, or a channel index.
        #[arg(long, default_value = "occupancy")]
        channel: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        /// Output file (default: the tensor path with a .ply extension).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the invariant suite; exits nonzero if any check fails.
    Selftest,
}

fn load_config(path: Option<&Path>) -> geomem::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_policy(kind: PolicyKind, path: Option<&Path>) -> geomem::Result<Option<PolicyParams>> {
    match (kind, path) {
        (PolicyKind::Learned, Some(p)) => Ok(Some(PolicyParams::load(p)?.0)),
        (PolicyKind::Learned, None) => Err(Error::Validation(
            "--policy learned needs --policy-checkpoint DIR (written by train-policy)".into(),
        )),
        _ => Ok(None),
    }
}

fn comment(p: &Provenance) -> String {
    format!("config_hash={} code_version={} seed={}", p.config_hash, p.code_version, p.seed)
}

fn run(command: Command) -> geomem::Result<()> {
    match command {
        Command::GenScenes { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let m = experiment::write_scene_dir(&cfg, &out)?;
            eprintln!("wrote {} scenes to {}", m.scenes.len(), out.display());
        }
        Command::Render {
            scene,
            view,
            dump_views,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let s = VoxelScene::read_vxg(fs::File::open(&scene)?)?;
            let rendered = render(&s, &pose_of(view, &cfg.camera), &cfg.camera);
            fs::create_dir_all(&dump_views)?;
            let note = format!("view={view} {}", comment(&Provenance::new(&cfg, cfg.seed)));
            let stem = format!("view_{}_{}", view.elev, view.azim);
            let mut rgb = Vec::new();
            rendered.write_rgb_ppm(&mut rgb, &note)?;
            fs::write(dump_views.join(format!("{stem}_rgb.ppm")), rgb)?;
            let mut depth = Vec::new();
            let near = cfg.camera.radius - 0.5 * 3f64.sqrt();
            rendered.write_depth_ppm(&mut depth, &note, near, cfg.camera.radius + 0.5 * 3f64.sqrt())?;
            fs::write(dump_views.join(format!("{stem}_depth.ppm")), depth)?;
        }
        Command::TrainRecon { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let dir = out.unwrap_or_else(|| experiment::recon_dir(&cfg));
            let steps = cfg.train.steps;
            experiment::run_train_recon(&cfg, &dir, |e| {
                if (e.step + 1) % 100 == 0 || e.step + 1 == steps {
                    eprintln!("step {}/{steps} loss {:.4} (bce {:.4})", e.step + 1, e.loss, e.bce);
                }
            })?;
            eprintln!("checkpoint written to {}", dir.display());
        }
        Command::TrainPolicy { config, checkpoint, seeds } => {
            let cfg = load_config(config.as_deref())?;
            let (model, _) = experiment::load_model(&checkpoint)?;
            for seed in seeds {
                let dir = experiment::policy_dir(&cfg, seed);
                experiment::run_train_policy(&cfg, &model, seed, &dir, |e| {
                    if (e.update + 1) % 25 == 0 {
                        eprintln!("seed {seed} update {} mean return {:.4}", e.update + 1, e.mean_return);
                    }
                })?;
                eprintln!("policy for seed {seed} written to {}", dir.display());
            }
        }
        Command::Rollout {
            policy,
            checkpoint,
            scenes,
            config,
            policy_checkpoint,
            seed,
            out,
            dump_tensors,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let (model, _) = experiment::load_model(&checkpoint)?;
            let learned = load_policy(policy, policy_checkpoint.as_deref())?;
            let (_, scene_list) = experiment::read_scene_dir(&scenes)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("rollouts").join(format!("{policy}.jsonl")));
            let records = experiment::run_rollouts(&cfg, &model, &scene_list, policy, learned.as_ref(), seed, &out)?;
            if let Some(dir) = dump_tensors {
                fs::create_dir_all(&dir)?;
                let n = model.config.memory_resolution;
                for (record, (_, scene)) in records.iter().zip(&scene_list) {
                    let dumps = experiment::episode_dumps(&cfg, &model, scene, &record.views, seed)?;
                    for (t, data) in dumps.iter().enumerate() {
                        let mut buf = Vec::new();
                        write_tns(&mut buf, experiment::DUMP_CHANNELS.len(), n, data)?;
                        fs::write(dir.join(format!("scene_{:04}_view_{}.tns", record.scene, t + 1)), buf)?;
                    }
                }
            }
            eprintln!("{} episodes written to {}", records.len(), out.display());
        }
        Command::Eval {
            checkpoint,
            policy,
            noise,
            sigma,
            config,
            policy_checkpoint,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let noise = EgomotionNoise {
                sigma_deg: sigma.unwrap_or(cfg.eval.noise.sigma_deg),
                mode: noise,
            };
            noise.validate().map_err(|e| Error::Validation(e.to_string()))?;
            let (model, manifest) = experiment::load_model(&checkpoint)?;
            let learned = load_policy(policy, policy_checkpoint.as_deref())?;
            let (summary, episodes) = experiment::run_eval(&cfg, &model, &manifest, policy, learned.as_ref(), noise, seed)?;
            let mode = format!("{:?}", noise.mode).to_lowercase();
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("eval").join(format!("{policy}-{mode}-seed{seed}")));
            fs::create_dir_all(&dir)?;
            experiment::write_eval(&dir, &summary, &episodes)?;
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
            println!("occupancy IoU per view: {}", fmt(&summary.occupancy_iou));
            println!("segmentation IoU per view: {}", fmt(&summary.segmentation_iou));
            println!("classification accuracy per view: {}", fmt(&summary.classification_accuracy));
            eprintln!("summary written to {}", dir.display());
        }
        Command::ExportPly {
            tensor,
            channel,
            threshold,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let (c, n, data) = read_tns(fs::File::open(&tensor)?)?;
            let index = match channel.as_str() {
                name if experiment::DUMP_CHANNELS.contains(&name) => {
                    experiment::DUMP_CHANNELS.iter().position(|&c| c == name).expect("listed")
                }
                other => other
                    .parse()
                    .map_err(|_| Error::Validation(format!("--channel must be occupancy, instance or an index, got {other:?}")))?,
            };
            let (text, count) = experiment::ply_from_tensor(c, n, &data, index, threshold, &comment(&Provenance::new(&cfg, cfg.seed)))?;
            let out = out.unwrap_or_else(|| tensor.with_extension("ply"));
            fs::write(&out, text)?;
            eprintln!("{count} vertices written to {}", out.display());
        }
        Command::Selftest => {
            let results = geomem::selftest::run_all()?;
            let mut failed = 0;
            for r in &results {
                println!("{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} selftest checks failed")));
            }
            println!("all {} checks passed", results.len());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
