//! Seeded synthetic scenarios with ground-truth identities: separated latent
//! embeddings, constant-velocity boxes, visibility dropout, and exact motion
//! fields between frames.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::assign::HardAssignment;
use crate::costs::{CostMatrix, Embedding};
use crate::error::{Error, Result};
use crate::geom::{BoundingBox, Detection, MotionField};
use crate::tracker::{FrameInput, FrameTracks};

const LATENT_RETRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_objects: usize,
    pub num_frames: usize,
    pub dim: usize,
    /// Minimum pairwise cosine distance between latent embeddings.
    pub separation: f64,
    /// Per-coordinate std of the gaussian added to latents before
    /// re-normalization.
    pub noise_sigma: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub min_box: f64,
    pub max_box: f64,
    /// Largest per-axis speed in pixels per frame.
    pub max_speed: f64,
    /// Number of dropout windows per object.
    pub occlusions_per_object: usize,
    pub occlusion_length: usize,
    /// Objects enter and leave at random frames instead of spanning the
    /// whole sequence.
    pub staggered_lifespans: bool,
    /// Pairs of objects swap start and end positions, crossing mid-sequence.
    pub crossing: bool,
    /// Uniform jitter in pixels applied to each detection box coordinate.
    pub box_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_objects: 8,
            num_frames: 50,
            dim: 16,
            separation: 0.5,
            noise_sigma: 0.0,
            image_width: 640,
            image_height: 480,
            min_box: 30.0,
            max_box: 60.0,
            max_speed: 4.0,
            occlusions_per_object: 0,
            occlusion_length: 3,
            staggered_lifespans: false,
            crossing: false,
            box_jitter: 0.0,
        }
    }
}

/// Ground truth for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthObject {
    /// Ground-truth identity, starting at 1.
    pub id: u64,
    pub latent: Embedding,
    /// Frame range `[enter, exit)` in which the object exists.
    pub lifespan: (usize, usize),
    /// Top-left corner at the enter frame.
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub size: (f64, f64),
    /// Per frame: whether a detection is emitted.
    pub visible: Vec<bool>,
    /// Per frame: observed embedding, present when visible.
    pub observed: Vec<Option<Embedding>>,
    /// Per frame: detection box (true box plus jitter), present when visible.
    pub detected: Vec<Option<BoundingBox>>,
}

impl SynthObject {
    /// True box at `frame`, extrapolating the constant velocity outside the
    /// lifespan.
    pub fn box_at(&self, frame: usize) -> BoundingBox {
        let dt = frame as f64 - self.lifespan.0 as f64;
        let x = self.start.0 + self.velocity.0 * dt;
        let y = self.start.1 + self.velocity.1 * dt;
        BoundingBox::from_xywh(x, y, self.size.0, self.size.1).expect("positive size")
    }

    pub fn alive(&self, frame: usize) -> bool {
        (self.lifespan.0..self.lifespan.1).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SynthConfig,
    pub seed: u64,
    pub objects: Vec<SynthObject>,
    /// Per frame: object indices in emission order (shuffled).
    pub order: Vec<Vec<usize>>,
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn sample_latents(rng: &mut ChaCha8Rng, config: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    let infeasible = Error::SeparationInfeasible {
        num_objects: config.num_objects,
        dim: config.dim,
        separation: config.separation,
    };
    if config.dim == 0 && config.num_objects > 0 {
        return Err(infeasible);
    }
    let mut latents: Vec<Vec<f64>> = Vec::with_capacity(config.num_objects);
    for _ in 0..config.num_objects {
        let mut placed = false;
        for _ in 0..LATENT_RETRIES {
            let cand = unit_gaussian(rng, config.dim);
            if latents.iter().all(|l| cosine_distance(l, &cand) >= config.separation) {
                latents.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(infeasible);
        }
    }
    Ok(latents)
}

/// Builds a scenario; identical `(config, seed)` give identical scenarios.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<Scenario> {
    if config.num_frames == 0 {
        return Err(Error::InvalidArgument("num_frames must be positive".into()));
    }
    if !(config.min_box > 0.0 && config.min_box <= config.max_box)
        || config.max_box >= config.image_width.min(config.image_height) as f64
    {
        return Err(Error::InvalidArgument("box size range does not fit the image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents = sample_latents(&mut rng, config)?;
    let (w_img, h_img) = (config.image_width as f64, config.image_height as f64);
    let n_frames = config.num_frames;

    let mut objects = Vec::with_capacity(config.num_objects);
    for (k, latent) in latents.into_iter().enumerate() {
        let size = (
            rng.random_range(config.min_box..=config.max_box),
            rng.random_range(config.min_box..=config.max_box),
        );
        let lifespan = if config.staggered_lifespans && n_frames >= 4 {
            let min_len = (n_frames / 4).max(2);
            let enter = rng.random_range(0..=n_frames - min_len);
            let exit = rng.random_range(enter + min_len..=n_frames);
            (enter, exit)
        } else {
            (0, n_frames)
        };
        let span = (lifespan.1 - lifespan.0 - 1).max(1) as f64;
        let max_x = w_img - size.0;
        let max_y = h_img - size.1;
        let start = (rng.random_range(0.0..max_x), rng.random_range(0.0..max_y));
        let raw_v = (
            rng.random_range(-config.max_speed..=config.max_speed),
            rng.random_range(-config.max_speed..=config.max_speed),
        );
        let end = (
            (start.0 + raw_v.0 * span).clamp(0.0, max_x),
            (start.1 + raw_v.1 * span).clamp(0.0, max_y),
        );
        let (start, end) = if config.crossing && k % 2 == 1 {
            // reverse the previous object's path
            let prev: &SynthObject = &objects[k - 1];
            let p_span = (prev.lifespan.1 - prev.lifespan.0 - 1).max(1) as f64;
            let p_start = prev.start;
            let p_end = (
                prev.start.0 + prev.velocity.0 * p_span,
                prev.start.1 + prev.velocity.1 * p_span,
            );
            (
                (p_end.0.clamp(0.0, max_x), p_end.1.clamp(0.0, max_y)),
                (p_start.0.clamp(0.0, max_x), p_start.1.clamp(0.0, max_y)),
            )
        } else {
            (start, end)
        };
        let velocity = ((end.0 - start.0) / span, (end.1 - start.1) / span);

        let mut visible: Vec<bool> = (0..n_frames).map(|f| (lifespan.0..lifespan.1).contains(&f)).collect();
        let life = lifespan.1 - lifespan.0;
        if config.occlusion_length > 0 && life > config.occlusion_length + 2 {
            for _ in 0..config.occlusions_per_object {
                // keep the first and last frames of the lifespan visible
                let first = lifespan.0 + 1;
                let last = lifespan.1 - 1 - config.occlusion_length;
                let s = rng.random_range(first..=last);
                for v in &mut visible[s..s + config.occlusion_length] {
                    *v = false;
                }
            }
        }
        objects.push(SynthObject {
            id: k as u64 + 1,
            latent: Embedding(latent),
            lifespan,
            start,
            velocity,
            size,
            visible,
            observed: vec![None; n_frames],
            detected: vec![None; n_frames],
        });
    }

    let mut order = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        for obj in objects.iter_mut() {
            if !obj.visible[f] {
                continue;
            }
            let emb = if config.noise_sigma == 0.0 {
                obj.latent.clone()
            } else {
                let noisy: Vec<f64> = obj
                    .latent
                    .values()
                    .iter()
                    .map(|v| v + config.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Embedding(noisy).normalized().unwrap_or_else(|| obj.latent.clone())
            };
            obj.observed[f] = Some(emb);
            let b = obj.box_at(f);
            let det = if config.box_jitter > 0.0 {
                let j = config.box_jitter;
                let mut c = b.corners();
                for v in &mut c {
                    *v += rng.random_range(-j..=j);
                }
                BoundingBox::new(c[0], c[1], c[2], c[3]).unwrap_or(b)
            } else {
                b
            };
            obj.detected[f] = Some(det);
        }
        let mut idx: Vec<usize> = (0..objects.len()).filter(|&k| objects[k].visible[f]).collect();
        idx.shuffle(&mut rng);
        order.push(idx);
    }

    Ok(Scenario {
        config: config.clone(),
        seed,
        objects,
        order,
    })
}

impl Scenario {
    pub fn num_frames(&self) -> usize {
        self.config.num_frames
    }

    /// Detections of one frame in emission order, with their ground-truth ids
    /// and observed embeddings.
    pub fn frame_detections(&self, frame: usize) -> (Vec<Detection>, Vec<u64>, Vec<Embedding>) {
        let mut dets = Vec::new();
        let mut ids = Vec::new();
        let mut embs = Vec::new();
        for &k in &self.order[frame] {
            let obj = &self.objects[k];
            let mut det = Detection::new(obj.detected[frame].expect("visible"), 1.0, 0, frame as i64)
                .expect("valid confidence");
            det.embedding_row = Some(dets.len());
            dets.push(det);
            ids.push(obj.id);
            embs.push(obj.observed[frame].clone().expect("visible"));
        }
        (dets, ids, embs)
    }

    /// The whole sequence as tracker input.
    pub fn tracker_input(&self) -> Vec<FrameInput> {
        (0..self.num_frames())
            .map(|f| {
                let (detections, _, embeddings) = self.frame_detections(f);
                FrameInput {
                    frame: f as i64,
                    detections,
                    embeddings,
                }
            })
            .collect()
    }

    /// Ground-truth tracks over the detection boxes.
    pub fn ground_truth(&self) -> Vec<FrameTracks> {
        (0..self.num_frames())
            .map(|f| {
                let (dets, ids, _) = self.frame_detections(f);
                FrameTracks {
                    frame: f as i64,
                    tracks: ids.into_iter().zip(dets).map(|(id, d)| (id, d.bbox)).collect(),
                }
            })
            .collect()
    }
}

/// Dense flow from frame `a` to frame `b`: every pixel cell covered by an
/// object visible in `a` carries that object's true displacement; later
/// objects overwrite earlier ones; background is zero.
pub fn exact_motion(s: &Scenario, a: usize, b: usize) -> Result<MotionField> {
    let n = s.num_frames();
    if a >= n || b >= n {
        return Err(Error::InvalidArgument(format!("frames ({a}, {b}) outside 0..{n}")));
    }
    let (w, h) = (s.config.image_width, s.config.image_height);
    let mut field = MotionField::zeros(w, h, 2)?;
    for obj in &s.objects {
        if !obj.visible[a] {
            continue;
        }
        let from = obj.box_at(a);
        let to = obj.box_at(b);
        let (dx, dy) = (to.x1() - from.x1(), to.y1() - from.y1());
        let (xs, ys) = from.covered_cells(w, h);
        for y in ys {
            for x in xs.clone() {
                field.set(x, y, 0, dx);
                field.set(x, y, 1, dy);
            }
        }
    }
    Ok(field)
}

/// Exhaustive minimum-cost assignment of the smaller side into the larger.
/// Ties keep the first injection in lexicographic order.
pub fn brute_force_assign(c: &CostMatrix) -> Result<HardAssignment> {
    let (n1, n2) = (c.real_rows(), c.real_cols());
    let k = n1.min(n2);
    if k > 8 {
        return Err(Error::TooLarge(k));
    }
    let transpose = n1 > n2;
    let (rows, cols) = if transpose { (n2, n1) } else { (n1, n2) };
    let at = |i: usize, j: usize| if transpose { c.get(j, i) } else { c.get(i, j) };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(rows);
    let mut used = vec![false; cols];
    fn search(
        row: usize,
        rows: usize,
        cols: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        at: &dyn Fn(usize, usize) -> f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if row == rows {
            let total = if rows == 0 {
                0.0
            } else {
                // sum in row order of the original matrix
                let mut pairs: Vec<(usize, usize)> = current.iter().enumerate().map(|(i, &j)| (i, j)).collect();
                pairs.sort_unstable();
                pairs.iter().map(|&(i, j)| at(i, j)).sum()
            };
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                *best = Some((total, current.clone()));
            }
            return;
        }
        for j in 0..cols {
            if used[j] {
                continue;
            }
            used[j] = true;
            current.push(j);
            search(row + 1, rows, cols, current, used, at, best);
            current.pop();
            used[j] = false;
        }
    }
    search(0, rows, cols, &mut current, &mut used, &at, &mut best);
    let chosen = best.map(|b| b.1).unwrap_or_default();
    let matches = chosen
        .into_iter()
        .enumerate()
        .map(|(i, j)| if transpose { (j, i) } else { (i, j) })
        .collect();
    Ok(HardAssignment::from_matches(matches, n1, n2))
}
