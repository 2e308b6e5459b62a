use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geovo::fields::build_omega;
use geovo::gradcheck::{run_gradcheck, IMPLICIT_TOLERANCE, JACOBIAN_TOLERANCE};
use geovo::io::config::{load_config, RunConfig};
use geovo::io::raster::{read_raster, weights_from_file, weights_to_file, write_raster};
use geovo::io::sequence::{read_sequence, write_sequence, SequenceDir};
use geovo::io::trajectory::{read_trajectory, write_trajectory};
use geovo::pipeline::{estimate_pairs, fit_pairs, write_frame_report_csv, write_loss_csv, EstimateWeights};
use geovo::synth::{consistency_violations, render_sequence};
use geovo::trajeval::{write_metrics_csv, write_per_frame_csv, SequenceEvaluation};
use geovo::{Error, ErrorClass, Result};

/// Largest rigid-consistency violation, in pixels, tolerated by the
/// post-write spot check of `simulate`.
const SPOT_CHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "geovo", version, about = "Stereo visual odometry from weighted geometric residuals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic sequence directory.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a trajectory by solving and chaining every frame pair.
    Estimate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seq: PathBuf,
        /// 2D weight raster; uniform one when omitted.
        #[arg(long)]
        weights_2d: Option<PathBuf>,
        /// 3D weight raster; uniform one when omitted.
        #[arg(long)]
        weights_3d: Option<PathBuf>,
        #[arg(long)]
        out_traj: PathBuf,
        /// Per-frame solver report; defaults to the trajectory path with a `.csv` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare an estimated trajectory with the ground truth.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional configuration for the `[eval]` section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-frame ATE and RPE values.
        #[arg(long)]
        per_frame: Option<PathBuf>,
        /// Skip rigid alignment before computing ATE.
        #[arg(long)]
        no_align: bool,
        #[arg(long)]
        name: Option<String>,
    },
    /// Finite-difference checks of the analytic and implicit gradients.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of random scenes.
        #[arg(long, default_value_t = 3)]
        scenes: usize,
        /// Negate the analytic gradients before comparing.
        #[arg(long)]
        flip_gradient_sign: bool,
    },
    /// Fit per-pixel weight rasters on a sequence with ground truth.
    Fitweights {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seq: PathBuf,
        /// Directory receiving `weights_2d.gvr` and `weights_3d.gvr`.
        #[arg(long)]
        out_weights: PathBuf,
        #[arg(long)]
        loss_csv: PathBuf,
    },
}

type Overrides = Vec<(String, String)>;

/// Splits `--section.key value` pairs off the argument list.
fn split_overrides(args: Vec<String>) -> std::result::Result<(Vec<String>, Overrides), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(key) if key.contains('.') => {
                let (key, value) = match key.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let v = it.next().ok_or_else(|| format!("override --{key} needs a value"))?;
                        (key.to_string(), v)
                    }
                };
                overrides.push((key, value));
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    if !path.is_file() {
        return Err(Error::Config(format!("config file {} does not exist", path.display())));
    }
    load_config(path, overrides)
}

fn simulate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let spec = cfg.scene(seed)?;
    if spec.n_frames < 2 {
        return Err(Error::Config(format!("n_frames = {} but a pair needs two frames", spec.n_frames)));
    }
    let seq = render_sequence(&spec)?;
    write_sequence(out, &seq)?;

    let back = read_sequence(out)?;
    let pair = back.frame_pair(1)?;
    let omega = build_omega(&pair)?;
    let label = back.frames[1].label.as_slice();
    let rigid: Vec<usize> = omega.into_iter().filter(|&k| label[k] == 0).collect();
    let worst = consistency_violations(&pair, &back.gt_pose(1), &rigid)?
        .into_iter()
        .map(|(e2, _)| e2)
        .fold(0.0, f64::max);
    println!(
        "wrote {} frames ({}x{}) to {}",
        seq.len(),
        spec.rig.width,
        spec.rig.height,
        out.display()
    );
    println!(
        "spot check frame 1: max rigid-consistency error {worst:.3e} px over {} pixels",
        rigid.len()
    );
    if !(worst < SPOT_CHECK_TOLERANCE) {
        return Err(Error::NumericalFailure(format!(
            "spot check failed: {worst:e} px exceeds {SPOT_CHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn estimate(
    cfg: &RunConfig,
    seq_dir: &Path,
    w2d: Option<&Path>,
    w3d: Option<&Path>,
    out_traj: &Path,
    report: Option<&Path>,
) -> Result<()> {
    let seq = SequenceDir::open(seq_dir)?;
    if let Some(rig) = &cfg.rig {
        if rig.to_rig()? != *seq.rig() {
            return Err(Error::Config(format!(
                "configured rig differs from {}",
                seq_dir.join("rig.cfg").display()
            )));
        }
    }
    let load = |p: Option<&Path>| -> Result<_> {
        p.map(|p| {
            let w = weights_from_file(&read_raster(p)?, p)?;
            if (w.width(), w.height()) != (seq.rig().width, seq.rig().height) {
                return Err(Error::format(p, "weight raster size differs from the sequence"));
            }
            Ok(w)
        })
        .transpose()
    };
    let weights = EstimateWeights {
        w2d: load(w2d)?,
        w3d: load(w3d)?,
    };
    let stamps: Vec<f64> = match seq.ground_truth() {
        Some(gt) => gt.stamps().to_vec(),
        None => (0..seq.len()).map(|i| i as f64).collect(),
    };
    let res = estimate_pairs(seq.pairs(), &stamps, seq.rig().d_max, cfg, &weights)?;
    write_trajectory(out_traj, &res.trajectory)?;
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| out_traj.with_extension("csv"));
    write_frame_report_csv(&report_path, &res.frames)?;
    let fallbacks = res.frames.iter().filter(|f| f.fallback).count();
    let unconverged = res.frames.iter().filter(|f| !f.converged && !f.fallback).count();
    println!(
        "estimated {} relative poses ({fallbacks} fallback, {unconverged} not converged); trajectory {}, report {}",
        res.relative.len(),
        out_traj.display(),
        report_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &RunConfig,
    est: &Path,
    gt: &Path,
    out: &Path,
    per_frame: Option<&Path>,
    no_align: bool,
    name: Option<String>,
) -> Result<()> {
    let est_t = read_trajectory(est)?;
    let gt_t = read_trajectory(gt)?;
    let name = name.unwrap_or_else(|| {
        est.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into())
    });
    let align = cfg.eval.align && !no_align;
    let ev = SequenceEvaluation::compute(&name, &est_t, &gt_t, cfg.eval.rpe_delta, align)?;
    let row = ev.metrics();
    write_metrics_csv(out, std::slice::from_ref(&row))?;
    if let Some(p) = per_frame {
        write_per_frame_csv(p, std::slice::from_ref(&ev))?;
    }
    println!(
        "{}: ATE-RMSE {:.6e}, RPE-trans {:.6e} +- {:.6e}, RPE-rot {:.6e} +- {:.6e} deg",
        row.name, row.ate_rmse, row.rpe_trans_mean, row.rpe_trans_std, row.rpe_rot_mean, row.rpe_rot_std
    );
    Ok(())
}

fn gradcheck(seed: u64, scenes: usize, flip: bool) -> Result<bool> {
    if scenes == 0 {
        return Err(Error::Config("gradcheck needs at least one scene".into()));
    }
    let r = run_gradcheck(seed, scenes, flip)?;
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!(
        "analytic jacobian: max relative error {:.3e} (threshold {JACOBIAN_TOLERANCE:e}) {}",
        r.jacobian_max_rel,
        verdict(r.jacobian_ok())
    );
    println!(
        "implicit gradient: max relative error {:.3e} (threshold {IMPLICIT_TOLERANCE:e}) {}",
        r.implicit_max_rel,
        verdict(r.implicit_ok())
    );
    Ok(r.passed())
}

fn fitweights(cfg: &RunConfig, seq_dir: &Path, out_dir: &Path, loss_csv: &Path) -> Result<()> {
    let seq = SequenceDir::open(seq_dir)?;
    let gt = seq
        .gt_relative()?
        .ok_or_else(|| Error::Sequence(format!("{} has no gt.traj", seq_dir.display())))?;
    let fit = fit_pairs(seq.pairs(), &gt, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (w2, w3) = fit.params.weight_maps();
    write_raster(&out_dir.join("weights_2d.gvr"), &weights_to_file(&w2))?;
    write_raster(&out_dir.join("weights_3d.gvr"), &weights_to_file(&w3))?;
    write_loss_csv(loss_csv, &fit)?;
    let first = fit.trace.first().map_or(f64::NAN, |t| t.train_loss);
    let best = &fit.trace[fit.best_iteration];
    println!(
        "initial train loss {first:.6e}; selected iteration {} with train loss {:.6e}{}",
        fit.best_iteration,
        best.train_loss,
        best.val_loss.map_or(String::new(), |v| format!(", validation loss {v:.6e}"))
    );
    Ok(())
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<bool> {
    match cli.command {
        Command::Simulate { config: c, seed, out } => {
            let cfg = config(&c.config, overrides)?;
            simulate(&cfg, seed.unwrap_or(cfg.seed), &out)?;
        }
        Command::Estimate {
            config: c,
            seq,
            weights_2d,
            weights_3d,
            out_traj,
            report,
        } => {
            let cfg = config(&c.config, overrides)?;
            estimate(&cfg, &seq, weights_2d.as_deref(), weights_3d.as_deref(), &out_traj, report.as_deref())?;
        }
        Command::Evaluate {
            est,
            gt,
            out,
            config: c,
            per_frame,
            no_align,
            name,
        } => {
            let cfg = match c {
                Some(p) => config(&p, overrides)?,
                None if overrides.is_empty() => RunConfig::default(),
                None => geovo::io::config::parse_config("", overrides, Path::new("<overrides>"))?,
            };
            evaluate(&cfg, &est, &gt, &out, per_frame.as_deref(), no_align, name)?;
        }
        Command::Gradcheck {
            config: c,
            seed,
            scenes,
            flip_gradient_sign,
        } => {
            let cfg = config(&c.config, overrides)?;
            return gradcheck(seed.unwrap_or(cfg.seed), scenes, flip_gradient_sign);
        }
        Command::Fitweights {
            config: c,
            seq,
            out_weights,
            loss_csv,
        } => {
            let cfg = config(&c.config, overrides)?;
            fitweights(&cfg, &seq, &out_weights, &loss_csv)?;
        }
    }
    Ok(true)
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &overrides) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(exit_code(ErrorClass::Numerical)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
