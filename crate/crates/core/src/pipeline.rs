//! Run configuration, genome evaluation and the generational loop.
//!
//! A run writes one directory per generation:
//!
//! ```text
//! out/gen_<k>/best.png            best render
//! out/gen_<k>/best_overlay.png    its flow overlay
//! out/gen_<k>/best_genome.json
//! out/gen_<k>/scores.json         every member, population order
//! out/gen_<k>/report.json
//! out/gen_<k>/checkpoint.json     enough to resume after generation k
//! out/final/                      the same files for the last generation,
//!                                 plus composite.png
//! ```
//!
//! With diagnostics enabled each member also gets
//! `gen_<k>/genomes/<index>/{image.png,overlay.png,flow.json,score.json}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cppn::{render, CppnError, CppnGenome, Frame, RenderMode, RingGeometry};
use crate::fitness::{score, FitnessParams, FitnessScore};
use crate::flow::{flow_between, FlowError, FlowParams, VectorField};
use crate::imaging::{
    compose_mirrored, save_png, FlowOverlay, ImagingError, OverlayBackground, Raster,
    DEFAULT_AMPLITUDE_SCALE,
};
use crate::neat::{genome_json, NeatError, NeatParams, Population};
use crate::predictor::{make_static_sequence, PredictError, Predictor, PredictorSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Render(#[from] CppnError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Neat(#[from] NeatError),
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Which two frames the flow is measured between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowPair {
    /// Last input frame to the first predicted frame.
    #[default]
    InputPred,
    /// First predicted frame to the second.
    PredPred,
}

/// Ring layout in configuration form; a missing center means the image
/// center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSettings {
    pub center: Option<(f64, f64)>,
    pub ring_count: u32,
    pub band_width: f64,
    pub angular_period: u32,
    pub inner_radius: f64,
}

impl Default for RingSettings {
    fn default() -> Self {
        let g = RingGeometry::default_for(160, 120);
        Self {
            center: None,
            ring_count: g.ring_count,
            band_width: g.band_width,
            angular_period: g.angular_period,
            inner_radius: g.inner_radius,
        }
    }
}

impl RingSettings {
    pub fn geometry(&self, width: usize, height: usize) -> RingGeometry {
        RingGeometry {
            center: self
                .center
                .unwrap_or((width as f64 / 2.0, height as f64 / 2.0)),
            ring_count: self.ring_count,
            band_width: self.band_width,
            angular_period: self.angular_period,
            inner_radius: self.inner_radius,
        }
    }
}

/// Every tunable of a run. The config file format is flat `key = value`
/// lines; nested fields are addressed as `section.field` (for example
/// `flow.window = 21`) or by their bare name when it is unambiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub width: usize,
    pub height: usize,
    pub mode: RenderMode,
    pub rings: RingSettings,
    /// `false` renders in plain image coordinates without rings.
    pub use_rings: bool,
    pub sequence_length: usize,
    pub extension: usize,
    pub predictor: PredictorSpec,
    pub flow_pair: FlowPair,
    pub flow: FlowParams,
    pub fitness: FitnessParams,
    pub neat: NeatParams,
    pub species_count: usize,
    pub species_size: usize,
    pub max_generations: u64,
    pub convergence_patience: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub diagnostics: bool,
    /// Evaluation threads; 0 uses every available core.
    pub workers: usize,
    /// Child processes for an external predictor.
    pub sidecars: usize,
    pub overlay_scale: f32,
    pub overlay_background: OverlayBackground,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            mode: RenderMode::Gray,
            rings: RingSettings::default(),
            use_rings: true,
            sequence_length: crate::predictor::DEFAULT_SEQUENCE_LENGTH,
            extension: crate::predictor::DEFAULT_EXTENSION,
            predictor: PredictorSpec::Drift {
                gain: DEFAULT_DRIFT_GAIN,
            },
            flow_pair: FlowPair::InputPred,
            flow: FlowParams::default(),
            fitness: FitnessParams::default(),
            neat: NeatParams::default(),
            species_count: 5,
            species_size: 10,
            max_generations: 20,
            convergence_patience: 5,
            seed: 0,
            output_dir: PathBuf::from("out"),
            diagnostics: false,
            workers: 0,
            sidecars: 1,
            overlay_scale: DEFAULT_AMPLITUDE_SCALE,
            overlay_background: OverlayBackground::Image,
        }
    }
}

/// Gain of the default drift predictor. At this gain a full-contrast step
/// drifts about 0.04 px per frame, just under the default validity floor.
pub const DEFAULT_DRIFT_GAIN: f32 = 0.2;

const SECTIONS: [&str; 4] = ["rings", "flow", "fitness", "neat"];

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.width == 0 || self.height == 0 {
            return err(format!(
                "image size {}x{} must be positive",
                self.width, self.height
            ));
        }
        if self.sequence_length == 0 {
            return err("sequence_length must be >= 1".into());
        }
        if self.extension == 0 {
            return err("extension must be >= 1".into());
        }
        if self.flow_pair == FlowPair::PredPred && self.extension < 2 {
            return err("flow_pair = pred_pred needs extension >= 2".into());
        }
        if self.species_count * self.species_size < 2 {
            return err("species_count * species_size must be >= 2".into());
        }
        if self.max_generations == 0 {
            return err("max_generations must be >= 1".into());
        }
        if self.sidecars == 0 {
            return err("sidecars must be >= 1".into());
        }
        if !(self.overlay_scale > 0.0) || !self.overlay_scale.is_finite() {
            return err(format!(
                "overlay_scale {} must be positive",
                self.overlay_scale
            ));
        }
        if self.use_rings {
            self.geometry()
                .validate(self.width, self.height)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.flow
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.fitness
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.neat
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn geometry(&self) -> RingGeometry {
        self.rings.geometry(self.width, self.height)
    }

    pub fn frame(&self) -> Frame {
        if self.use_rings {
            Frame::Rings(self.geometry())
        } else {
            Frame::Global
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let path = resolve_key(&doc, key)?;
        let slot = path
            .iter()
            .try_fold(&mut doc, |node, part| node.get_mut(part))
            .expect("resolved key exists");
        *slot = coerce(slot, value).map_err(|m| PipelineError::Config(format!("{key}: {m}")))?;
        *self = serde_json::from_value(doc)
            .map_err(|e| PipelineError::Config(format!("{key} = {value}: {e}")))?;
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                PipelineError::Config(m) => PipelineError::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text)
    }
}

fn resolve_key(doc: &Value, key: &str) -> Result<Vec<String>, PipelineError> {
    let unknown = || PipelineError::Config(format!("unknown key `{key}`"));
    if let Some((section, field)) = key.split_once('.') {
        return match doc.get(section).and_then(|s| s.get(field)) {
            Some(_) if SECTIONS.contains(&section) => Ok(vec![section.into(), field.into()]),
            _ => Err(unknown()),
        };
    }
    if doc.get(key).is_some() && !SECTIONS.contains(&key) {
        return Ok(vec![key.into()]);
    }
    let hits: Vec<&str> = SECTIONS
        .iter()
        .copied()
        .filter(|s| doc[*s].get(key).is_some())
        .collect();
    match hits.as_slice() {
        [one] => Ok(vec![(*one).into(), key.into()]),
        [] => Err(unknown()),
        many => Err(PipelineError::Config(format!(
            "key `{key}` is ambiguous, use one of {}",
            many.iter()
                .map(|s| format!("{s}.{key}"))
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

fn coerce(current: &Value, raw: &str) -> Result<Value, String> {
    let text = raw
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .unwrap_or(raw);
    match current {
        Value::String(_) => Ok(Value::String(text.to_string())),
        // the only optional field is the ring center
        Value::Null | Value::Array(_) => {
            if matches!(text, "auto" | "none") {
                return Ok(Value::Null);
            }
            let parts = text
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| format!("expected `x, y`, got `{raw}`"))?;
            match parts.as_slice() {
                [x, y] => Ok(serde_json::json!([x, y])),
                _ => Err(format!("expected `x, y`, got `{raw}`")),
            }
        }
        _ => serde_json::from_str(text).map_err(|_| format!("cannot parse `{raw}`")),
    }
}

/// Hex SHA-256 of the genome's compact JSON.
pub fn genome_id(g: &CppnGenome) -> String {
    Sha256::digest(genome_json(g).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// True once the last `patience + 1` best-genome ids are identical.
pub fn converged(history: &[String], patience: usize) -> bool {
    history.len() > patience && {
        let tail = &history[history.len() - patience - 1..];
        tail.iter().all(|id| *id == tail[0])
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub score: FitnessScore,
    pub image: Raster,
    pub field: VectorField,
}

impl Evaluation {
    pub fn overlay(&self, cfg: &RunConfig) -> Result<Raster, ImagingError> {
        FlowOverlay::new(self.image.clone(), self.field.clone(), cfg.overlay_scale)?
            .with_background(cfg.overlay_background)
            .render()
    }
}

/// Static sequence, prediction, flow and score for an existing image.
pub fn evaluate_image(
    image: Raster,
    cfg: &RunConfig,
    predictor: &dyn Predictor,
) -> Result<Evaluation, PipelineError> {
    let req = make_static_sequence(&image, cfg.sequence_length, cfg.extension)?;
    let resp = predictor.predict(&req)?;
    let field = match cfg.flow_pair {
        FlowPair::InputPred => flow_between(req.last_frame(), &resp.predicted[0], &cfg.flow)?,
        FlowPair::PredPred => flow_between(&resp.predicted[0], &resp.predicted[1], &cfg.flow)?,
    };
    Ok(Evaluation {
        score: score(&field, &cfg.fitness),
        image,
        field,
    })
}

pub fn evaluate_genome(
    g: &CppnGenome,
    cfg: &RunConfig,
    predictor: &dyn Predictor,
) -> Result<Evaluation, PipelineError> {
    let image = render(g, &cfg.frame(), cfg.width, cfg.height, cfg.mode)?;
    evaluate_image(image, cfg, predictor)
}

/// Evaluation that never fails: errors are logged and score zero.
fn evaluate_or_zero(g: &CppnGenome, cfg: &RunConfig, predictor: &dyn Predictor) -> Evaluation {
    evaluate_genome(g, cfg, predictor).unwrap_or_else(|e| {
        warn!("genome {} scored 0: {e}", &genome_id(g)[..12]);
        let image = render(g, &cfg.frame(), cfg.width, cfg.height, cfg.mode)
            .or_else(|_| Raster::filled(cfg.width, cfg.height, cfg.mode.channels(), 1.0))
            .expect("validated dimensions");
        Evaluation {
            score: FitnessScore::zero(),
            image,
            field: VectorField {
                source_size: (cfg.width, cfg.height),
                vectors: Vec::new(),
            },
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub index: usize,
    pub species: u64,
    pub genome_id: String,
    #[serde(flatten)]
    pub score: FitnessScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesBest {
    pub species: u64,
    pub members: usize,
    pub best_total: f64,
}

/// Summary of one evaluated generation. Wall time is logged but never
/// written, so artifacts depend only on seed and config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: u64,
    pub best_total: f64,
    pub best_genome_id: String,
    pub species_best: Vec<SpeciesBest>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub generations: Vec<GenerationReport>,
    pub best_genome: CppnGenome,
    pub best_score: FitnessScore,
    pub converged: bool,
}

/// State after generation `population.generation` has been evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub population: Population,
    pub scores: Vec<FitnessScore>,
    pub history: Vec<String>,
    pub reports: Vec<GenerationReport>,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_file(path, text)
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

fn score_records(pop: &Population, scores: &[FitnessScore]) -> Vec<ScoreRecord> {
    pop.species
        .iter()
        .flat_map(|s| s.members.iter().map(move |g| (s.id, g)))
        .zip(scores)
        .enumerate()
        .map(|(index, ((species, g), score))| ScoreRecord {
            index,
            species,
            genome_id: genome_id(g),
            score: *score,
        })
        .collect()
}

struct Runner {
    cfg: RunConfig,
    predictor: Box<dyn Predictor>,
    pool: rayon::ThreadPool,
}

impl Runner {
    fn new(cfg: RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let predictor = cfg.predictor.build(cfg.sidecars)?;
        let mut threads = if cfg.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            cfg.workers
        };
        if cfg.predictor.is_external() {
            threads = threads.min(cfg.sidecars);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        create_dir(&cfg.output_dir)?;
        Ok(Self {
            cfg,
            predictor,
            pool,
        })
    }

    fn gen_dir(&self, generation: u64) -> PathBuf {
        self.cfg.output_dir.join(format!("gen_{generation}"))
    }

    fn evaluate_all(&self, pop: &Population) -> Vec<Evaluation> {
        let genomes = pop.genomes();
        let predictor = self.predictor.as_ref();
        self.pool.install(|| {
            genomes
                .par_iter()
                .map(|g| evaluate_or_zero(g, &self.cfg, predictor))
                .collect()
        })
    }

    fn write_best(
        &self,
        dir: &Path,
        best: &CppnGenome,
        eval: &Evaluation,
        records: &[ScoreRecord],
    ) -> Result<(), PipelineError> {
        create_dir(dir)?;
        save_png(&eval.image, dir.join("best.png"))?;
        save_png(&eval.overlay(&self.cfg)?, dir.join("best_overlay.png"))?;
        write_json(&dir.join("best_genome.json"), best)?;
        write_json(&dir.join("scores.json"), &records)
    }

    fn write_diagnostics(&self, dir: &Path, evals: &[Evaluation]) -> Result<(), PipelineError> {
        for (i, eval) in evals.iter().enumerate() {
            let d = dir.join("genomes").join(format!("{i:03}"));
            create_dir(&d)?;
            save_png(&eval.image, d.join("image.png"))?;
            save_png(&eval.overlay(&self.cfg)?, d.join("overlay.png"))?;
            write_json(&d.join("flow.json"), &eval.field)?;
            write_json(&d.join("score.json"), &eval.score)?;
        }
        Ok(())
    }

    /// Evaluates one generation and writes its artifacts and checkpoint.
    fn step(
        &self,
        pop: &Population,
        history: &mut Vec<String>,
        reports: &mut Vec<GenerationReport>,
    ) -> Result<(Vec<FitnessScore>, Evaluation), PipelineError> {
        let started = Instant::now();
        let mut evals = self.evaluate_all(pop);
        let scores: Vec<FitnessScore> = evals.iter().map(|e| e.score).collect();
        let genomes = pop.genomes();
        let best_i =
            crate::neat::best_index(&genomes, &scores).ok_or(NeatError::EmptyPopulation)?;
        let best = genomes[best_i];
        let best_id = genome_id(best);

        let mut offset = 0;
        let species_best = pop
            .species
            .iter()
            .map(|s| {
                let members = s.members.len();
                let best_total = scores[offset..offset + members]
                    .iter()
                    .map(|sc| sc.total)
                    .fold(f64::NEG_INFINITY, f64::max);
                offset += members;
                SpeciesBest {
                    species: s.id,
                    members,
                    best_total,
                }
            })
            .collect();
        let report = GenerationReport {
            generation: pop.generation,
            best_total: scores[best_i].total,
            best_genome_id: best_id.clone(),
            species_best,
            wall_time: started.elapsed().as_secs_f64(),
        };
        info!(
            "generation {}: best {:.3} ({} valid vectors) across {} species in {:.2}s",
            report.generation,
            report.best_total,
            scores[best_i].n_valid,
            pop.species.len(),
            report.wall_time
        );

        let dir = self.gen_dir(pop.generation);
        let records = score_records(pop, &scores);
        self.write_best(&dir, best, &evals[best_i], &records)?;
        if self.cfg.diagnostics {
            self.write_diagnostics(&dir, &evals)?;
        }
        write_json(&dir.join("report.json"), &report)?;
        history.push(best_id);
        reports.push(report);
        write_json(
            &dir.join("checkpoint.json"),
            &Checkpoint {
                config: self.cfg.clone(),
                population: pop.clone(),
                scores: scores.clone(),
                history: history.clone(),
                reports: reports.clone(),
            },
        )?;
        Ok((scores, evals.swap_remove(best_i)))
    }

    fn finished(&self, generation: u64, history: &[String]) -> bool {
        generation + 1 >= self.cfg.max_generations
            || converged(history, self.cfg.convergence_patience)
    }

    fn drive(
        &self,
        mut pop: Population,
        mut pending: Option<Vec<FitnessScore>>,
        mut history: Vec<String>,
        mut reports: Vec<GenerationReport>,
    ) -> Result<RunReport, PipelineError> {
        loop {
            let (scores, best_eval) = match pending.take() {
                Some(scores) => (scores, None),
                None => {
                    let (s, e) = self.step(&pop, &mut history, &mut reports)?;
                    (s, Some(e))
                }
            };
            if self.finished(pop.generation, &history) {
                return self.finish(&pop, &scores, best_eval, history, reports);
            }
            pop = pop.next_generation(&scores, &self.cfg.neat)?;
        }
    }

    fn finish(
        &self,
        pop: &Population,
        scores: &[FitnessScore],
        best_eval: Option<Evaluation>,
        history: Vec<String>,
        reports: Vec<GenerationReport>,
    ) -> Result<RunReport, PipelineError> {
        let (best, best_score) = pop.best(scores)?;
        let eval = match best_eval {
            Some(e) => e,
            None => evaluate_or_zero(&best, &self.cfg, self.predictor.as_ref()),
        };
        let dir = self.cfg.output_dir.join("final");
        self.write_best(&dir, &best, &eval, &score_records(pop, scores))?;
        save_png(
            &compose_mirrored(&eval.image, 2, 2, true)?,
            dir.join("composite.png"),
        )?;
        let report = RunReport {
            converged: converged(&history, self.cfg.convergence_patience),
            generations: reports,
            best_genome: best,
            best_score,
        };
        write_json(&dir.join("report.json"), &report)?;
        info!(
            "finished after {} generations, best {:.3}{}",
            report.generations.len(),
            report.best_score.total,
            if report.converged { " (converged)" } else { "" }
        );
        Ok(report)
    }
}

/// Evolves from the seed until `max_generations` or convergence.
pub fn run(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    let runner = Runner::new(cfg.clone())?;
    let pop = Population::initial(
        cfg.seed,
        cfg.mode.channels(),
        cfg.species_count,
        cfg.species_size,
        &cfg.neat,
    )?;
    runner.drive(pop, None, Vec::new(), Vec::new())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Continues a run from a checkpoint, optionally writing to another
/// directory. The continuation is identical to the uninterrupted run.
pub fn resume(checkpoint: &Path, output_dir: Option<&Path>) -> Result<RunReport, PipelineError> {
    let ck = load_checkpoint(checkpoint)?;
    let mut cfg = ck.config;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    if ck.scores.len() != ck.population.len() {
        return Err(NeatError::ScoreCountMismatch {
            scores: ck.scores.len(),
            genomes: ck.population.len(),
        }
        .into());
    }
    let runner = Runner::new(cfg)?;
    runner.drive(ck.population, Some(ck.scores), ck.history, ck.reports)
}
