//! Bilevel training: per frame the rotation and depth are solved in closed
//! form on the tape, the reconstruction losses are assembled against the
//! solved camera-frame target, and Adam updates the active parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Dataset;
use crate::error::{GeometryError, TrainError};
use crate::geometry::{
    adaptive_normalize_node, normalize_frame, onp_align_inference, solve_node, AdaptiveScheme, NormalizedFrame,
    ObservationFrame, OccludedFill, Rotation, Shape3D,
};
use crate::matrix::Matrix;
use crate::networks::{
    decoder_forward, encoder_forward, get_codes, BoundParams, CodeMode, ModelParams, ModelSpec, ParamGroup,
    DEFAULT_HIDDEN, LIFTING_BLOCKS, LIFTING_WIDTH,
};
use crate::objectives::{code_reg, nuclear_norm_loss, recon_loss, weight_reg, LossBreakdown, LOW_RANK_WEIGHT};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{permutation, seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Auto-encoder and auto-decoder reconstruction terms.
    Paul,
    /// Auto-decoder term only; the encoder is not trained.
    Adl,
    /// [`Mode::Adl`] plus the nuclear norm of each decoded shape.
    AdlLowrank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverGrad {
    /// Differentiate through the rotation and depth solve.
    Full,
    /// Treat the solved rotation and depth as constants.
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub code_mode: CodeMode,
    pub bottleneck: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    pub solver_grad: SolverGrad,
    pub squared_recon: bool,
    pub occluded_free_variable: bool,
    pub adaptive_scheme: AdaptiveScheme,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub lifting_width: usize,
    pub lifting_blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Paul,
            code_mode: CodeMode::FreeCode,
            bottleneck: 4,
            batch_size: 64,
            steps: 20_000,
            learning_rate: 1e-3,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            seed: 0,
            solver_grad: SolverGrad::Full,
            squared_recon: false,
            occluded_free_variable: false,
            adaptive_scheme: AdaptiveScheme::VisibleMean,
            checkpoint_interval: 1000,
            hidden: DEFAULT_HIDDEN.to_vec(),
            lifting_width: LIFTING_WIDTH,
            lifting_blocks: LIFTING_BLOCKS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.bottleneck == 0 {
            return bad("bottleneck must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch-size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning-rate {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return bad(format!("adam-betas {:?} must lie in [0, 1)", self.adam_betas));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad(format!("adam-eps {} must be positive", self.adam_eps));
        }
        if self.occluded_free_variable && self.code_mode == CodeMode::Lifting {
            return bad("occluded-free-variable needs per-frame parameters (free-code mode)".into());
        }
        Ok(())
    }

    pub fn model_spec(&self, points: usize, frames: usize) -> ModelSpec {
        ModelSpec {
            points,
            bottleneck: self.bottleneck,
            hidden: self.hidden.clone(),
            code_mode: self.code_mode,
            frames,
            lifting_width: self.lifting_width,
            lifting_blocks: self.lifting_blocks,
            occluded_free_variable: self.occluded_free_variable,
        }
    }

    /// Parameter groups updated by the optimizer in this configuration.
    pub fn trainable_groups(&self) -> Vec<ParamGroup> {
        let mut g = alloc::vec![ParamGroup::Decoder];
        if self.mode == Mode::Paul {
            g.push(ParamGroup::Encoder);
        }
        g.push(match self.code_mode {
            CodeMode::FreeCode => ParamGroup::Codes,
            CodeMode::Lifting => ParamGroup::Lifting,
        });
        if self.occluded_free_variable {
            g.push(ParamGroup::OccludedFree);
        }
        g
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            eps: self.adam_eps,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StepReport {
    pub step: usize,
    pub loss: LossBreakdown,
    /// Mean over frames of the RMS distance between `W̃` and `R_xy·f_d(φ)` on
    /// visible points.
    pub reprojection: f64,
    pub frames: usize,
    pub skipped: usize,
    /// Seconds since training started, as reported by the observer.
    pub wall_time: f64,
}

/// Forward pass of one batch.
#[derive(Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub reprojection: f64,
    /// Per-frame `(frame id, recon_ae + recon_ad)` for frames that were solved.
    pub per_frame: Vec<(usize, f64)>,
    pub skipped: Vec<(usize, GeometryError)>,
}

fn accumulate(t: &mut Tape, acc: Option<Var>, v: Var) -> Result<Option<Var>, TrainError> {
    Ok(Some(match acc {
        None => v,
        Some(a) => t.add(a, v)?,
    }))
}

fn reprojection_rms(t: &Tape, rotation: Var, shape: Var, frame: &NormalizedFrame) -> f64 {
    let r = t.value(rotation);
    let s = t.value(shape);
    let w = &frame.keypoints;
    let vis = frame.visibility.visible_indices();
    let mut acc = 0.0;
    for &j in &vis {
        for row in 0..2 {
            let proj = r[(row, 0)] * s[(0, j)] + r[(row, 1)] * s[(1, j)] + r[(row, 2)] * s[(2, j)];
            let d = w[(row, j)] - proj;
            acc += d * d;
        }
    }
    libm::sqrt(acc / vis.len() as f64)
}

/// Builds the upper-level objective for `frames` on `t`.
///
/// Frames whose lower-level solve fails are skipped; the reconstruction terms
/// are averaged over the solved frames and the code regularizer over the
/// whole batch. Returns [`TrainError::AllFramesSkipped`] (with step 0) when
/// nothing could be solved.
pub fn batch_loss(
    t: &mut Tape,
    bound: &BoundParams,
    spec: &ModelSpec,
    config: &TrainConfig,
    frames: &[NormalizedFrame],
) -> Result<BatchLoss, TrainError> {
    let p = spec.points;
    let ids: Vec<usize> = frames.iter().map(|f| f.frame_id).collect();
    let codes = get_codes(t, bound, spec.code_mode, &ids, frames)?;
    let decoded = decoder_forward(t, bound, codes)?;
    let chain = if config.mode == Mode::Paul {
        let enc = encoder_forward(t, bound, decoded)?;
        decoder_forward(t, bound, enc)?
    } else {
        decoded
    };
    let stop = config.solver_grad == SolverGrad::Stop;

    let (mut ae_sum, mut ad_sum, mut lr_sum) = (None, None, None);
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut skipped = Vec::new();
    let mut reprojection = 0.0;
    for (i, frame) in frames.iter().enumerate() {
        let b = t.row_as(decoded, i, 3, p)?;
        let a = if config.mode == Mode::Paul {
            t.row_as(chain, i, 3, p)?
        } else {
            b
        };
        let fill = match bound.occluded {
            Some(free) => OccludedFill::Free(t.row_as(free, frame.frame_id, 3, p)?),
            None => OccludedFill::ClosedForm,
        };
        let (sa, sb) = if stop {
            (t.stop_gradient(a), t.stop_gradient(b))
        } else {
            (a, b)
        };
        let nodes = match solve_node(t, sa, sb, frame, fill, config.adaptive_scheme) {
            Ok(n) => n,
            Err(e) => {
                skipped.push((frame.frame_id, e));
                continue;
            }
        };
        let (ta, tb) = if !stop {
            (nodes.a, nodes.b)
        } else if frame.visibility.is_full() {
            (a, b)
        } else {
            (
                adaptive_normalize_node(t, a, &frame.visibility, config.adaptive_scheme)?,
                adaptive_normalize_node(t, b, &frame.visibility, config.adaptive_scheme)?,
            )
        };
        let ad = recon_loss(t, tb, nodes.rotation, nodes.camera, config.squared_recon)?;
        let mut frame_loss = t.scalar(ad);
        ad_sum = accumulate(t, ad_sum, ad)?;
        if config.mode == Mode::Paul {
            let ae = recon_loss(t, ta, nodes.rotation, nodes.camera, config.squared_recon)?;
            frame_loss += t.scalar(ae);
            ae_sum = accumulate(t, ae_sum, ae)?;
        }
        if config.mode == Mode::AdlLowrank {
            let nn = nuclear_norm_loss(t, b)?;
            lr_sum = accumulate(t, lr_sum, nn)?;
        }
        reprojection += reprojection_rms(t, nodes.rotation, tb, frame);
        per_frame.push((frame.frame_id, frame_loss));
    }
    if per_frame.is_empty() {
        return Err(TrainError::AllFramesSkipped { step: 0 });
    }
    let used = per_frame.len() as f64;
    let mean = |t: &mut Tape, v: Option<Var>| v.map(|v| t.scale(v, 1.0 / used));
    let ad = mean(t, ad_sum).expect("at least one solved frame");
    let ae = mean(t, ae_sum);
    let low_rank = mean(t, lr_sum);

    let rc = code_reg(t, codes);
    let rc = t.scale(rc, 1.0 / frames.len() as f64);
    let decoder_vars: Vec<Var> = bound.decoder.iter().flat_map(|d| [d.weight, d.bias]).collect();
    let rw = weight_reg(t, &decoder_vars)?;

    let mut total = t.add(ad, rc)?;
    total = t.add(total, rw)?;
    if let Some(lr) = low_rank {
        let weighted = t.scale(lr, LOW_RANK_WEIGHT);
        total = t.add(total, weighted)?;
    }
    if let Some(ae) = ae {
        total = t.add(total, ae)?;
    }
    let breakdown = LossBreakdown {
        recon_ae: ae.map_or(0.0, |v| t.scalar(v)),
        recon_ad: t.scalar(ad),
        reg_code: t.scalar(rc),
        reg_weights: t.scalar(rw),
        low_rank: low_rank.map_or(0.0, |v| t.scalar(v)),
        total: t.scalar(total),
    };
    Ok(BatchLoss {
        total,
        breakdown,
        reprojection: reprojection / used,
        per_frame,
        skipped,
    })
}

/// Hooks called by [`fit`].
pub trait Observer {
    fn on_step(&mut self, _report: &StepReport) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _step: usize, _params: &ModelParams, _is_final: bool) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_warning(&mut self, _message: &str) {}

    /// Seconds since training started; the core crate has no clock.
    fn elapsed(&mut self) -> f64 {
        0.0
    }
}

/// An observer that ignores everything.
pub struct Silent;

impl Observer for Silent {}

fn dump_frame(frame: &NormalizedFrame, params: &ModelParams) -> String {
    let code = params
        .codes()
        .filter(|c| frame.frame_id < c.rows())
        .map(|c| c.row(frame.frame_id).to_vec());
    format!(
        "keypoints={:?} visible={:?} scale={} code={:?}",
        frame.keypoints.as_slice(),
        frame.visibility.bits(),
        frame.scale,
        code
    )
}

/// Owns the parameters, optimizer state and shuffling generator of one run.
pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    adam: Adam,
    rng: Rng,
    frames: Vec<NormalizedFrame>,
    excluded: Vec<(usize, GeometryError)>,
    trainable: Vec<ParamGroup>,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    /// Normalizes the frames and initializes parameters from `config.seed`.
    pub fn new(config: TrainConfig, frames: &[ObservationFrame]) -> Result<Self, TrainError> {
        config.validate()?;
        let first = frames.first().ok_or(TrainError::EmptyDataset)?;
        let spec = config.model_spec(first.points(), frames.len());
        let mut rng = seeded(config.seed);
        let params = ModelParams::init(spec, &mut rng)?;
        Self::assemble(config, params, frames, rng)
    }

    /// Continues from existing parameters; the optimizer state starts fresh.
    pub fn with_params(
        config: TrainConfig,
        params: ModelParams,
        frames: &[ObservationFrame],
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let rng = seeded(config.seed);
        Self::assemble(config, params, frames, rng)
    }

    fn assemble(
        config: TrainConfig,
        params: ModelParams,
        frames: &[ObservationFrame],
        rng: Rng,
    ) -> Result<Self, TrainError> {
        if frames.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut normalized = Vec::with_capacity(frames.len());
        let mut excluded = Vec::new();
        for f in frames {
            match normalize_frame(f) {
                Ok(n) => normalized.push(n),
                Err(e) => excluded.push((f.frame_id, e)),
            }
        }
        if normalized.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let trainable = config.trainable_groups();
        let adam = Adam::new(config.adam(), params.arrays().iter().map(|a| &a.value));
        Ok(Self {
            config,
            params,
            adam,
            rng,
            frames: normalized,
            excluded,
            trainable,
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Frames rejected by normalization, never used for training.
    pub fn excluded_frames(&self) -> &[(usize, GeometryError)] {
        &self.excluded
    }

    pub fn frames(&self) -> &[NormalizedFrame] {
        &self.frames
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order = permutation(&mut self.rng, self.frames.len());
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// Loss of a batch (indices into [`Trainer::frames`]) without updating.
    pub fn evaluate_batch(&self, batch: &[usize]) -> Result<LossBreakdown, TrainError> {
        let frames: Vec<NormalizedFrame> = batch.iter().map(|&i| self.frames[i].clone()).collect();
        let mut t = Tape::new();
        let bound = self.params.bind(&mut t, &[]);
        let out = batch_loss(&mut t, &bound, self.params.spec(), &self.config, &frames)?;
        Ok(out.breakdown)
    }

    /// One optimizer step on the next shuffled mini-batch.
    pub fn step(&mut self) -> Result<StepReport, TrainError> {
        let batch = self.next_batch();
        self.step_on(&batch)
    }

    /// One optimizer step on an explicit batch of indices into
    /// [`Trainer::frames`].
    pub fn step_on(&mut self, batch: &[usize]) -> Result<StepReport, TrainError> {
        let step = self.step;
        let frames: Vec<NormalizedFrame> = batch.iter().map(|&i| self.frames[i].clone()).collect();
        let mut t = Tape::new();
        let bound = self.params.bind(&mut t, &self.trainable);
        let out = match batch_loss(&mut t, &bound, self.params.spec(), &self.config, &frames) {
            Err(TrainError::AllFramesSkipped { .. }) => return Err(TrainError::AllFramesSkipped { step }),
            other => other?,
        };
        if !out.breakdown.total.is_finite() {
            let culprit = out
                .per_frame
                .iter()
                .find(|(_, v)| !v.is_finite())
                .map(|(id, _)| *id)
                .unwrap_or(frames[0].frame_id);
            let frame = frames.iter().find(|f| f.frame_id == culprit).expect("batch frame");
            return Err(TrainError::NonFinite {
                step,
                frame: culprit,
                dump: format!("loss={:?} {}", out.breakdown, dump_frame(frame, &self.params)),
            });
        }
        let grads = t.backward(out.total)?;
        let mut slots: Vec<Option<&Matrix>> = Vec::with_capacity(bound.vars.len());
        for (array, &var) in self.params.arrays().iter().zip(&bound.vars) {
            let g = if self.trainable.contains(&array.group) {
                grads.get(var)
            } else {
                None
            };
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(TrainError::NonFinite {
                        step,
                        frame: frames[0].frame_id,
                        dump: format!("non-finite gradient for {}", array.name),
                    });
                }
            }
            slots.push(g);
        }
        let mut values: Vec<&mut Matrix> = self.params.arrays_mut().iter_mut().map(|a| &mut a.value).collect();
        self.adam.update(&mut values, &slots);
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss: out.breakdown,
            reprojection: out.reprojection,
            frames: frames.len(),
            skipped: out.skipped.len(),
            wall_time: 0.0,
        })
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub last: Option<StepReport>,
    /// Frames rejected before training.
    pub excluded: Vec<usize>,
    /// Frame-solves skipped across all steps.
    pub skipped_solves: usize,
}

/// Runs `config.steps` optimizer steps over shuffled mini-batches. Only the
/// observations of `dataset` are used; ground truth is ignored.
pub fn fit(dataset: &Dataset, config: &TrainConfig, observer: &mut dyn Observer) -> Result<FitOutcome, TrainError> {
    let mut trainer = Trainer::new(config.clone(), dataset.frames())?;
    for (id, err) in trainer.excluded_frames() {
        observer.on_warning(&format!("frame {id} excluded: {err}"));
    }
    let mut last = None;
    let mut skipped = 0;
    for _ in 0..config.steps {
        let mut report = trainer.step()?;
        report.wall_time = observer.elapsed();
        skipped += report.skipped;
        if report.skipped > 0 {
            observer.on_warning(&format!("step {}: skipped {} frame(s)", report.step, report.skipped));
        }
        observer.on_step(&report)?;
        if config.checkpoint_interval > 0
            && report.step % config.checkpoint_interval == 0
            && report.step != config.steps
        {
            observer.on_checkpoint(report.step, trainer.params(), false)?;
        }
        last = Some(report);
    }
    observer.on_checkpoint(trainer.steps_taken(), trainer.params(), true)?;
    let excluded = trainer.excluded_frames().iter().map(|(id, _)| *id).collect();
    Ok(FitOutcome {
        params: trainer.into_params(),
        last,
        excluded,
        skipped_solves: skipped,
    })
}

/// A frame lifted to 3D and aligned to its camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub rotation: Rotation,
    pub code: Vec<f64>,
    /// Camera-frame shape in normalized image units.
    pub normalized: Shape3D,
    /// Camera-frame shape in the frame's original image units.
    pub camera: Shape3D,
}

/// `S = f_d(φ)` with `φ = h(W̃)` (lifting mode) or the stored code of
/// `frame.frame_id` (free-code mode), aligned by a single-target OnP fit and
/// mapped back to the frame's image units.
pub fn predict(
    params: &ModelParams,
    frame: &ObservationFrame,
    scheme: AdaptiveScheme,
) -> Result<Prediction, TrainError> {
    let nf = normalize_frame(frame)?;
    predict_normalized(params, &nf, scheme)
}

pub fn predict_normalized(
    params: &ModelParams,
    nf: &NormalizedFrame,
    scheme: AdaptiveScheme,
) -> Result<Prediction, TrainError> {
    let code = params.code_for(nf.frame_id, nf)?;
    let shape = params.decode(&code)?;
    let (rotation, cam) = onp_align_inference(&shape, nf, scheme)?;
    let p = cam.points.cols();
    let original = Matrix::from_fn(3, p, |r, c| {
        let v = cam.points[(r, c)] * nf.scale;
        if r < 2 {
            v + nf.centroid[r]
        } else {
            v
        }
    });
    Ok(Prediction {
        rotation,
        code,
        normalized: cam,
        camera: Shape3D::camera(original),
    })
}
