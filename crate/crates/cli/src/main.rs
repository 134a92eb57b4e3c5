use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wallbuild::geometry::RigidPose;
use wallbuild::harness::{experiment_load, experiment_unload, write_experiment, write_run, write_snapshot, ExperimentReport};
use wallbuild::scenario::{NoiseSpec, Scenario};
use wallbuild::world::EffectorPose;

#[derive(Parser)]
#[command(name = "wallbuild", version, about = "Wall-building ground robot simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full mission from a scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `off`, `field`, or a JSON object; overrides the scenario's noise.
        #[arg(long)]
        noise: Option<String>,
        /// Write every camera frame as PPM/PGM under `<out>/frames`.
        #[arg(long)]
        dump_frames: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        max_sim_time: Option<f64>,
    },
    /// Loading experiment: seeded pickups from random relative orientations.
    ExpLoad(Experiment),
    /// Unloading experiment: seeded drops onto randomly oriented patterns.
    ExpUnload(Experiment),
    /// Render one noiseless RGB-D frame of a scenario.
    Snapshot {
        #[arg(long)]
        scenario: PathBuf,
        /// Base pose `x,y,yaw_deg` in the map frame.
        #[arg(long, value_parser = parse_floats::<3>)]
        base: [f64; 3],
        /// Arm pose `x,y,z,pitch_deg,yaw_deg` in the base frame.
        #[arg(long, value_parser = parse_floats::<5>)]
        arm: Option<[f64; 5]>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Experiment {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value = "off")]
    noise: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    max_sim_time: Option<f64>,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn run(scenario: PathBuf, seed: u64, noise: Option<String>, dump_frames: bool, out: PathBuf, max_sim_time: Option<f64>) -> Result<bool> {
    let mut sc = Scenario::load(&scenario)?;
    if let Some(n) = noise {
        sc.noise = NoiseSpec::parse(&n)?;
    }
    if let Some(t) = max_sim_time {
        sc.sim.max_sim_time = t;
    }
    let mut sim = sc.build(seed)?;
    if dump_frames {
        sim.dump_dir = Some(out.join("frames"));
    }
    sim.run();
    let output = sim.into_output();
    write_run(&out, &output).with_context(|| format!("writing results to {}", out.display()))?;
    let r = &output.report;
    println!(
        "completed={} sim_time={:.1}s bricks_placed={} pickups={} failures={} skipped={}",
        r.completed,
        r.sim_time,
        r.bricks_placed,
        r.pickups,
        r.pickup_failures,
        r.skipped.len()
    );
    Ok(r.completed)
}

fn experiment(e: Experiment, load: bool) -> Result<bool> {
    if e.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let noise = NoiseSpec::parse(&e.noise)?;
    let report: ExperimentReport =
        if load { experiment_load(e.runs, e.seed, noise, e.max_sim_time) } else { experiment_unload(e.runs, e.seed, noise, e.max_sim_time) };
    write_experiment(&e.out, &report).with_context(|| format!("writing results to {}", e.out.display()))?;
    let a = &report.aggregates;
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "runs={} success_rate={:.3} distance_mae={} orientation_mae_deg={} placement_orientation_mae_deg={} max_perpendicularity_deg={}",
        a.runs,
        a.success_rate,
        f(a.distance_mae),
        f(a.orientation_mae_deg),
        f(a.placement_orientation_mae_deg),
        f(a.max_perpendicularity_deg)
    );
    Ok(report.all_succeeded())
}

fn snapshot(scenario: PathBuf, base: [f64; 3], arm: Option<[f64; 5]>, out: PathBuf) -> Result<bool> {
    let sc = Scenario::load(&scenario)?;
    let base = RigidPose::planar(base[0], base[1], base[2].to_radians());
    let arm = arm.map(|a| EffectorPose { x: a[0], y: a[1], z: a[2], pitch: a[3].to_radians(), yaw: a[4].to_radians() });
    write_snapshot(&sc, base, arm, &out)?;
    println!("wrote {} and {}", out.join("label.ppm").display(), out.join("depth.pgm").display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { scenario, seed, noise, dump_frames, out, max_sim_time } => run(scenario, seed, noise, dump_frames, out, max_sim_time),
        Cmd::ExpLoad(e) => experiment(e, true),
        Cmd::ExpUnload(e) => experiment(e, false),
        Cmd::Snapshot { scenario, base, arm, out } => snapshot(scenario, base, arm, out),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
