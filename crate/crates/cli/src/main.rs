use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use otmot::costs::Embedding;
use otmot::geom::{Detection, MotionField};
use otmot::io::{self, Config, EmbeddingTable};
use otmot::metrics::evaluate;
use otmot::pseudo::{
    filter_detection_indices, generate_pseudo_labels, generate_stereo_pseudo_labels, stereo_occlusion_masks,
    OcclusionMask,
};
use otmot::selfcheck;
use otmot::synth::{exact_motion, generate, SynthConfig};
use otmot::tracker::{run_sequence, FrameInput};

const EXIT_FAILURE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_EMBEDDING: u8 = 3;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = std::result::Result<T, Failure>;

trait WithCode<T> {
    fn code(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for std::result::Result<T, E> {
    fn code(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

#[derive(Parser)]
#[command(name = "otmot", version, about = "Optimal-transport association for multi-object tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// key=value configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> CliResult<Config> {
        match &self.config {
            None => Ok(Config::default()),
            Some(p) => {
                let text = read_text(p)?;
                Config::parse(&text)
                    .with_context(|| format!("config {}", p.display()))
                    .code(EXIT_PARSE)
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Track one or more sequences. Repeat --detections/--embeddings/--output
    /// once per sequence.
    Track {
        #[arg(long, required = true)]
        detections: Vec<PathBuf>,
        #[arg(long, required = true)]
        embeddings: Vec<PathBuf>,
        #[arg(long, required = true)]
        output: Vec<PathBuf>,
        /// Number of sequences processed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Pseudo-labels between a reference and a target detection file.
    Pseudolabel {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Motion (2-channel) or disparity (1-channel) grid, reference to target.
        #[arg(long)]
        grid: PathBuf,
        /// Occlusion masks (nonzero = occluded) for the stereo variant.
        #[arg(long, requires = "target_mask")]
        reference_mask: Option<PathBuf>,
        #[arg(long, requires = "reference_mask")]
        target_mask: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Discard statistics; defaults to `<output>.report`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Stereo occlusion masks from left and right disparity grids.
    Occlusion {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        output_left: PathBuf,
        #[arg(long)]
        output_right: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Identity metrics of predicted tracks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Runs the oracle battery; exits 0 iff every check passes.
    Selfcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Writes a synthetic scenario.
    Synth {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        objects: usize,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        separation: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        occlusions: usize,
        #[arg(long, default_value_t = 3)]
        occlusion_length: usize,
        #[arg(long)]
        staggered: bool,
        #[arg(long)]
        crossing: bool,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        /// Exact motion grids are written for the first N frame pairs.
        #[arg(long, default_value_t = 1)]
        flows: usize,
    },
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(EXIT_FAILURE)
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(EXIT_FAILURE)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .code(EXIT_FAILURE)
}

fn load_detections(path: &Path) -> CliResult<Vec<Detection>> {
    io::parse_detections(&read_text(path)?)
        .with_context(|| format!("detection file {}", path.display()))
        .code(EXIT_PARSE)
}

fn load_embeddings(path: &Path) -> CliResult<EmbeddingTable> {
    io::read_embeddings(&read_bytes(path)?)
        .with_context(|| format!("embedding file {}", path.display()))
        .code(EXIT_EMBEDDING)
}

fn load_grid(path: &Path) -> CliResult<MotionField> {
    io::read_grid(&read_bytes(path)?)
        .with_context(|| format!("grid file {}", path.display()))
        .code(EXIT_PARSE)
}

fn load_mask(path: &Path) -> CliResult<OcclusionMask> {
    let g = load_grid(path)?;
    let bits = g.values().iter().step_by(g.channels()).map(|&v| v != 0.0).collect();
    OcclusionMask::new(g.width(), g.height(), bits).code(EXIT_PARSE)
}

/// Tracker input with one entry per frame from the first to the last
/// detection frame, empty frames included.
fn frame_inputs(dets: &[Detection], embs: &[Embedding]) -> Vec<FrameInput> {
    let groups = io::group_by_frame(dets, embs);
    let (Some(first), Some(last)) = (groups.first().map(|g| g.0), groups.last().map(|g| g.0)) else {
        return Vec::new();
    };
    let mut groups = groups.into_iter().peekable();
    (first..=last)
        .map(|frame| match groups.next_if(|g| g.0 == frame) {
            Some((_, detections, embeddings)) => FrameInput {
                frame,
                detections,
                embeddings,
            },
            None => FrameInput {
                frame,
                detections: Vec::new(),
                embeddings: Vec::new(),
            },
        })
        .collect()
}

fn track_one(dets: &Path, embs: &Path, out: &Path, config: &Config) -> CliResult<usize> {
    let detections = load_detections(dets)?;
    let table = load_embeddings(embs)?;
    if table.len() != detections.len() {
        return Err(Failure {
            code: EXIT_EMBEDDING,
            error: anyhow!(
                "{} has {} embedding rows but {} has {} detections",
                embs.display(),
                table.len(),
                dets.display(),
                detections.len()
            ),
        });
    }
    let input = frame_inputs(&detections, &table.rows());
    let tracks = run_sequence(&input, &config.tracker()).code(EXIT_EMBEDDING)?;
    write(out, io::write_tracks(&tracks))?;
    Ok(tracks.iter().map(|f| f.tracks.len()).sum())
}

fn cmd_track(
    detections: &[PathBuf],
    embeddings: &[PathBuf],
    outputs: &[PathBuf],
    jobs: usize,
    config: &Config,
) -> CliResult<()> {
    if detections.len() != embeddings.len() || detections.len() != outputs.len() {
        return Err(Failure {
            code: EXIT_FAILURE,
            error: anyhow!("--detections, --embeddings and --output must be given the same number of times"),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .code(EXIT_FAILURE)?;
    let results: Vec<CliResult<usize>> = pool.install(|| {
        (0..detections.len())
            .into_par_iter()
            .map(|k| track_one(&detections[k], &embeddings[k], &outputs[k], config))
            .collect()
    });
    let mut first_failure = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(n) => println!("{}: {n} track boxes", outputs[k].display()),
            Err(f) => {
                eprintln!("sequence {}: {:#}", detections[k].display(), f.error);
                first_failure.get_or_insert(f);
            }
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn cmd_pseudolabel(
    reference: &Path,
    target: &Path,
    grid: &Path,
    masks: Option<(&Path, &Path)>,
    output: &Path,
    report: Option<&Path>,
    config: &Config,
) -> CliResult<()> {
    let params = config.pseudo();
    let reference_dets = load_detections(reference)?;
    let target_dets = load_detections(target)?;
    let motion = load_grid(grid)?;
    let ref_keep = filter_detection_indices(&reference_dets, &params);
    let tgt_keep = filter_detection_indices(&target_dets, &params);
    let r: Vec<Detection> = ref_keep.iter().map(|&i| reference_dets[i].clone()).collect();
    let t: Vec<Detection> = tgt_keep.iter().map(|&i| target_dets[i].clone()).collect();
    let mut labels = match masks {
        None => generate_pseudo_labels(&r, &t, &motion, params.min_match_iou),
        Some((mr, mt)) => {
            let (mr, mt) = (load_mask(mr)?, load_mask(mt)?);
            generate_stereo_pseudo_labels(&r, &t, &motion, &mr, &mt, &params)
        }
    };
    for pair in &mut labels.pairs {
        *pair = (ref_keep[pair.0], tgt_keep[pair.1]);
    }
    write(output, io::write_labels(&labels.pairs))?;
    let report_path = report.map_or_else(
        || {
            let mut p = output.as_os_str().to_owned();
            p.push(".report");
            PathBuf::from(p)
        },
        Path::to_path_buf,
    );
    let text = format!(
        "pairs={}\ndiscarded_low_iou={}\ndropped_occluded={}\ndropped_out_of_field={}\nfiltered_reference={}\nfiltered_target={}\n",
        labels.pairs.len(),
        labels.discarded_low_iou,
        labels.dropped_occluded,
        labels.dropped_out_of_field,
        reference_dets.len() - ref_keep.len(),
        target_dets.len() - tgt_keep.len(),
    );
    write(&report_path, &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_occlusion(left: &Path, right: &Path, out_left: &Path, out_right: &Path, config: &Config) -> CliResult<()> {
    let dl = load_grid(left)?;
    let dr = load_grid(right)?;
    if dl.channels() != 1 || dr.channels() != 1 {
        return Err(Failure {
            code: EXIT_PARSE,
            error: anyhow!("disparity grids must have one channel"),
        });
    }
    let (ml, mr) = stereo_occlusion_masks(&dl, &dr, config.tau_occ)
        .context("occlusion masks")
        .code(EXIT_PARSE)?;
    write(out_left, io::write_grid(&ml.to_field()))?;
    write(out_right, io::write_grid(&mr.to_field()))?;
    println!("occluded_left={}\noccluded_right={}", ml.count(), mr.count());
    Ok(())
}

fn cmd_eval(pred: &Path, gt: &Path, config: &Config) -> CliResult<()> {
    let load = |p: &Path| -> CliResult<_> {
        io::parse_tracks(&read_text(p)?)
            .with_context(|| format!("track file {}", p.display()))
            .code(EXIT_PARSE)
    };
    let report = evaluate(&load(pred)?, &load(gt)?, config.iou_thresh_eval);
    print!("{report}");
    Ok(())
}

fn cmd_selfcheck(seed: u64) -> CliResult<()> {
    let outcomes = selfcheck::run_all(seed).code(EXIT_FAILURE)?;
    for o in &outcomes {
        println!("{o}");
    }
    if outcomes.iter().all(|o| o.passed) {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILURE,
            error: anyhow!("selfcheck failed"),
        })
    }
}

fn cmd_synth(config: &SynthConfig, seed: u64, dir: &Path, flows: usize) -> CliResult<()> {
    let scenario = generate(config, seed).code(EXIT_FAILURE)?;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .code(EXIT_FAILURE)?;
    let mut all_dets = Vec::new();
    let mut all_embs = Vec::new();
    for f in 0..scenario.num_frames() {
        let (dets, _, embs) = scenario.frame_detections(f);
        write(&dir.join(format!("frame_{f:04}.txt")), io::write_detections(&dets))?;
        all_dets.extend(dets);
        all_embs.extend(embs);
    }
    let table = EmbeddingTable::from_embeddings(config.dim, &all_embs).code(EXIT_FAILURE)?;
    write(&dir.join("detections.txt"), io::write_detections(&all_dets))?;
    write(&dir.join("embeddings.bin"), io::write_embeddings(&table))?;
    write(&dir.join("gt.txt"), io::write_tracks(&scenario.ground_truth()))?;
    let pairs = flows.min(scenario.num_frames().saturating_sub(1));
    for f in 0..pairs {
        let flow = exact_motion(&scenario, f, f + 1).code(EXIT_FAILURE)?;
        write(&dir.join(format!("flow_{f:04}.bin")), io::write_grid(&flow))?;
    }
    println!(
        "wrote {} detections over {} frames and {pairs} flow grids to {}",
        all_dets.len(),
        scenario.num_frames(),
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Track {
            detections,
            embeddings,
            output,
            jobs,
            config,
        } => cmd_track(&detections, &embeddings, &output, jobs, &config.load()?),
        Command::Pseudolabel {
            reference,
            target,
            grid,
            reference_mask,
            target_mask,
            output,
            report,
            config,
        } => {
            let masks = reference_mask.as_deref().zip(target_mask.as_deref());
            cmd_pseudolabel(&reference, &target, &grid, masks, &output, report.as_deref(), &config.load()?)
        }
        Command::Occlusion {
            left,
            right,
            output_left,
            output_right,
            config,
        } => cmd_occlusion(&left, &right, &output_left, &output_right, &config.load()?),
        Command::Eval { pred, gt, config } => cmd_eval(&pred, &gt, &config.load()?),
        Command::Selfcheck { seed } => cmd_selfcheck(seed),
        Command::Synth {
            output_dir,
            seed,
            objects,
            frames,
            dim,
            separation,
            noise,
            occlusions,
            occlusion_length,
            staggered,
            crossing,
            jitter,
            width,
            height,
            flows,
        } => {
            let config = SynthConfig {
                num_objects: objects,
                num_frames: frames,
                dim,
                separation,
                noise_sigma: noise,
                image_width: width,
                image_height: height,
                occlusions_per_object: occlusions,
                occlusion_length,
                staggered_lifespans: staggered,
                crossing,
                box_jitter: jitter,
                ..SynthConfig::default()
            };
            cmd_synth(&config, seed, &output_dir, flows)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
