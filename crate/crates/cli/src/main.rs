//! `dynfusion`: build dynamic-scene reconstructions from a dataset manifest,
//! evaluate them against lidar, synthesize oracle datasets and export meshes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use dynfusion::decompose::Strategy;
use dynfusion::dynamic_map::{DynamicMap, FramePacket, MapConfig, MapMode, VolumeLabel};
use dynfusion::evaluation::{evaluate_sequence, EvalConfig, EvalFrame, EvalReport};
use dynfusion::geometry::Pose;
use dynfusion::io::{self, DatasetManifest, KeyValues, ScalarMapFile, SynthConfig};
use dynfusion::oracle::perturb;
use dynfusion::TrackletId;

#[derive(Parser)]
#[command(name = "dynfusion", version, about = "Dense reconstruction of dynamic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a sequence and write live-view renders, meshes and poses.
    Fuse {
        manifest: PathBuf,
        /// `dynamic` (default) or `static`.
        #[arg(long)]
        mode: Option<MapMode>,
        /// `box2d` (default) or `box3d15`.
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        out: PathBuf,
        /// key = value file with reconstruction settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` settings, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        background_voxel: Option<f64>,
        #[arg(long)]
        object_voxel: Option<f64>,
        #[arg(long)]
        max_depth: Option<f64>,
    },
    /// Mean relative error of one or more reconstructions against lidar.
    Eval {
        manifest: PathBuf,
        #[arg(required = true)]
        recon: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
        caps: Vec<f64>,
        /// Also write the full per-frame report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write an oracle dataset described by a key = value scene file.
    Synth {
        scene_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export meshes placed in the world frame at a given frame.
    Mesh {
        recon: PathBuf,
        #[arg(long)]
        frame: u64,
        /// Output directory; defaults to `<recon>/placed/<frame>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuse { manifest, mode, strategy, out, config, overrides, background_voxel, object_voxel, max_depth } => {
            let flags = [
                ("mode", mode.map(|v| v.to_string())),
                ("strategy", strategy.map(|v| v.to_string())),
                ("background_voxel", background_voxel.map(|v| v.to_string())),
                ("object_voxel", object_voxel.map(|v| v.to_string())),
                ("max_depth", max_depth.map(|v| v.to_string())),
            ];
            settings(config.as_deref(), &flags, &overrides).and_then(|kv| fuse(&manifest, &out, &kv))
        }
        Command::Eval { manifest, recon, caps, json } => eval(&manifest, &recon, caps, json.as_deref()),
        Command::Synth { scene_config, out } => synth(&scene_config, &out),
        Command::Mesh { recon, frame, out } => mesh(&recon, frame, out),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Config file values, then flags, then `--set` overrides.
fn settings(config: Option<&Path>, flags: &[(&str, Option<String>)], overrides: &[String]) -> Result<KeyValues> {
    let mut kv = match config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new("<flags>"),
    };
    for (key, value) in flags {
        if let Some(v) = value {
            kv.set(key, v.clone());
        }
    }
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else { bail!("--set expects KEY=VALUE, got '{o}'") };
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

#[derive(Serialize)]
struct VolumeSummary {
    label: String,
    allocated_blocks: usize,
    voxel_size: f64,
    frames_with_pose: usize,
}

#[derive(Serialize)]
struct FrameSummary {
    frame: u64,
    background_pixels: usize,
    background_new_blocks: usize,
    object_pixels: usize,
    objects: usize,
    tracked: bool,
    warnings: Vec<String>,
    load_ms: f64,
    decompose_ms: f64,
    integrate_ms: f64,
    process_ms: f64,
    render_ms: f64,
}

#[derive(Serialize)]
struct RunSummary {
    frames_processed: usize,
    config: MapConfig,
    volumes: Vec<VolumeSummary>,
    total_seconds: f64,
    mean_process_ms: f64,
    frames: Vec<FrameSummary>,
}

fn frame_name(frame: u64) -> String {
    format!("{frame:06}")
}

fn fuse(manifest_path: &Path, out: &Path, kv: &KeyValues) -> Result<()> {
    let start = Instant::now();
    let manifest = DatasetManifest::open(manifest_path)?;
    let mut config = MapConfig::default();
    io::apply_map_config(&mut config, kv)?;
    let k = manifest.intrinsics;
    let mut map = DynamicMap::new(config, k)?;

    // frames are loaded on a helper thread, one step ahead of the consumer
    let (tx, rx) = mpsc::sync_channel::<(Result<FramePacket, io::IoError>, f64)>(2);
    let loader_manifest = manifest.clone();
    let loader = std::thread::spawn(move || {
        for f in 0..loader_manifest.frames {
            let t = Instant::now();
            let packet = loader_manifest.load_frame(f);
            if tx.send((packet, t.elapsed().as_secs_f64() * 1e3)).is_err() {
                break;
            }
        }
    });

    let mut frames = Vec::new();
    for received in rx.iter() {
        let (packet, load_ms) = received;
        let packet = packet?;
        let report = map.process_frame(&packet).with_context(|| format!("frame {}", packet.frame_index))?;
        let t = Instant::now();
        let view = map.render_live_view(packet.frame_index, &k)?;
        io::write_depth(&out.join("live").join(format!("{}.dfdm", frame_name(packet.frame_index))), &view.depth)?;
        for w in &report.warnings {
            eprintln!("frame {}: warning: {w}", packet.frame_index);
        }
        frames.push(FrameSummary {
            frame: packet.frame_index,
            background_pixels: report.background.pixels_used,
            background_new_blocks: report.background.new_blocks,
            object_pixels: report.objects.iter().map(|(_, s)| s.pixels_used).sum(),
            objects: report.objects.len(),
            tracked: report.tracked,
            warnings: report.warnings,
            load_ms,
            decompose_ms: report.timings.decompose_ms,
            integrate_ms: report.timings.integrate_ms,
            process_ms: report.timings.total_ms,
            render_ms: t.elapsed().as_secs_f64() * 1e3,
        });
    }
    loader.join().map_err(|_| anyhow::anyhow!("frame loader panicked"))?;

    for (frame, pose) in map.trajectory() {
        io::write_pose(&out.join("camera").join(format!("{}.txt", frame_name(*frame))), pose)?;
    }
    io::write_ply(&out.join("meshes").join("background.ply"), &map.background().extract_mesh())?;
    let mut volumes = vec![VolumeSummary {
        label: "background".into(),
        allocated_blocks: map.background().allocated_block_count(),
        voxel_size: config.background.voxel_size,
        frames_with_pose: map.trajectory().len(),
    }];
    for (id, obj) in map.objects() {
        io::write_ply(&out.join("meshes").join(format!("object_{id}.ply")), &obj.volume.extract_mesh())?;
        for (frame, pose) in &obj.pose_history {
            io::write_pose(&out.join("objects").join(id.to_string()).join(format!("{}.txt", frame_name(*frame))), pose)?;
        }
        volumes.push(VolumeSummary {
            label: format!("object {id} ({})", obj.class_label),
            allocated_blocks: obj.volume.allocated_block_count(),
            voxel_size: config.object.voxel_size,
            frames_with_pose: obj.pose_history.len(),
        });
    }

    let processed = frames.len();
    let summary = RunSummary {
        frames_processed: processed,
        config,
        volumes,
        total_seconds: start.elapsed().as_secs_f64(),
        mean_process_ms: frames.iter().map(|f| f.process_ms).sum::<f64>() / processed.max(1) as f64,
        frames,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out.join("summary.json"), json + "\n").with_context(|| format!("writing {}", out.join("summary.json").display()))?;
    println!(
        "fused {processed} frames ({} mode, {}): {} object volumes, {:.1} ms/frame, output in {}",
        config.mode,
        config.strategy,
        map.objects().len(),
        summary.mean_process_ms,
        out.display()
    );
    Ok(())
}

fn eval(manifest_path: &Path, recons: &[PathBuf], caps: Vec<f64>, json: Option<&Path>) -> Result<()> {
    let manifest = DatasetManifest::open(manifest_path)?;
    let config = EvalConfig { range_caps: caps };
    config.validate().map_err(anyhow::Error::msg)?;
    let k = manifest.intrinsics;

    let mut gt = Vec::with_capacity(manifest.frames);
    for f in 0..manifest.frames {
        let points = match manifest.lidar_path(f) {
            Some(p) => io::read_lidar(&p)?,
            None => Vec::new(),
        };
        let boxes = match manifest.detections_path(f) {
            Some(p) => io::read_detections(&p)?.into_iter().map(|(_, d)| d.box2).collect(),
            None => Vec::new(),
        };
        gt.push((points, boxes));
    }

    let mut reports = Vec::new();
    for recon in recons {
        let mut frames = Vec::new();
        for (f, (points, boxes)) in gt.iter().enumerate() {
            let path = recon.join("live").join(format!("{}.dfdm", frame_name(f as u64)));
            let ScalarMapFile::Depth(pred) = io::read_scalar_map(&path)? else {
                bail!("{}: expected a depth map", path.display());
            };
            if pred.width() != k.width || pred.height() != k.height {
                bail!("{}: render is {}x{}, expected {}x{}", path.display(), pred.width(), pred.height(), k.width, k.height);
            }
            frames.push(EvalFrame { frame_index: f as u64, pred, gt_points: points.clone(), boxes: boxes.clone() });
        }
        let name = recon.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| recon.display().to_string());
        reports.push((name, evaluate_sequence(&frames, &k, &config)));
    }
    let runs: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    print!("{}", EvalReport::table(&runs));
    if let Some(path) = json {
        let map: BTreeMap<&str, &EvalReport> = runs.iter().copied().collect();
        std::fs::write(path, serde_json::to_string_pretty(&map)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn synth(scene_config: &Path, out: &Path) -> Result<()> {
    let kv = KeyValues::load(scene_config)?;
    let config = SynthConfig::from_key_values(&kv)?;
    let script = config.script();
    let mut packets = Vec::with_capacity(script.frames);
    for f in 0..script.frames {
        let frame = script.render_frame(f)?;
        packets.push(perturb(&frame.packet, &config.noise));
    }
    let manifest = io::write_dataset(out, &script.intrinsics, &packets, config.input, config.track_ids)?;
    println!("wrote {} frames ({} scene) to {}", manifest.frames, config.scene, out.join(io::MANIFEST_FILE).display());
    Ok(())
}

fn mesh(recon: &Path, frame: u64, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| recon.join("placed").join(frame_name(frame)));
    let camera_path = recon.join("camera").join(format!("{}.txt", frame_name(frame)));
    if !camera_path.is_file() {
        bail!("frame {frame} was not reconstructed ({} missing)", camera_path.display());
    }
    let camera = io::read_pose(&camera_path)?;

    let background = io::read_ply(&recon.join("meshes").join("background.ply"))?;
    let mut written = vec![(VolumeLabel::Background, out.join("background.ply"))];
    io::write_ply(&written[0].1, &background)?;

    let objects_dir = recon.join("objects");
    let mut ids: Vec<TrackletId> = Vec::new();
    if objects_dir.is_dir() {
        for entry in std::fs::read_dir(&objects_dir).with_context(|| format!("reading {}", objects_dir.display()))? {
            if let Ok(id) = entry?.file_name().to_string_lossy().parse() {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    for id in ids {
        let pose_path = objects_dir.join(id.to_string()).join(format!("{}.txt", frame_name(frame)));
        if !pose_path.is_file() {
            continue;
        }
        let object_to_camera: Pose = io::read_pose(&pose_path)?;
        let world = camera.compose(&object_to_camera);
        let local = io::read_ply(&recon.join("meshes").join(format!("object_{id}.ply")))?;
        let path = out.join(format!("object_{id}.ply"));
        io::write_ply(&path, &local.map_vertices(|p| world.apply(p)))?;
        written.push((VolumeLabel::Object(id), path));
    }
    for (label, path) in &written {
        println!("{label:?}: {}", path.display());
    }
    Ok(())
}
