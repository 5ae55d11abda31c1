//! Shape encoder `f_e`, shape decoder `f_d`, the 2D-3D encoder `h`, and the
//! per-frame free latent codes.
//!
//! All parameters live in one ordered list of named arrays so the optimizer
//! and the checkpoint format can treat them uniformly. Activations are stored
//! with one frame per row: a dense layer computes `X·W + 1·bᵀ` with `W` of
//! shape `fan_in × fan_out`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, LEAKY_SLOPE};
use crate::error::{AutodiffError, ModelError};
use crate::geometry::{NormalizedFrame, Shape3D};
use crate::matrix::Matrix;
use crate::rng::{uniform_matrix, Rng};

/// Hidden widths of the shape encoder; the decoder uses them reversed.
pub const DEFAULT_HIDDEN: [usize; 5] = [256, 128, 64, 32, 16];
pub const LIFTING_WIDTH: usize = 256;
pub const LIFTING_BLOCKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeMode {
    /// One trainable code per training frame (NRSfM reconstruction).
    FreeCode,
    /// Codes produced by the 2D-3D encoder `h`.
    Lifting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Leaky,
}

/// Layer widths of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layer_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    /// `(fan_in, fan_out)` of each dense layer, output layer included.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layer_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in self.layer_widths.iter().chain(core::iter::once(&self.output_dim)) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Everything needed to lay out a [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelSpec {
    pub points: usize,
    pub bottleneck: usize,
    pub hidden: Vec<usize>,
    pub code_mode: CodeMode,
    /// Number of training frames; sizes the free-code table.
    pub frames: usize,
    pub lifting_width: usize,
    pub lifting_blocks: usize,
    /// Per-frame learned fill for occluded camera-frame columns.
    pub occluded_free_variable: bool,
}

impl ModelSpec {
    pub fn new(points: usize, bottleneck: usize, code_mode: CodeMode, frames: usize) -> Self {
        Self {
            points,
            bottleneck,
            hidden: DEFAULT_HIDDEN.to_vec(),
            code_mode,
            frames,
            lifting_width: LIFTING_WIDTH,
            lifting_blocks: LIFTING_BLOCKS,
            occluded_free_variable: false,
        }
    }

    pub fn shape_dim(&self) -> usize {
        3 * self.points
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.bottleneck == 0 || self.bottleneck >= self.shape_dim() {
            return Err(ModelError::Bottleneck {
                k: self.bottleneck,
                dim: self.shape_dim(),
            });
        }
        if self.hidden.contains(&0) || self.lifting_width == 0 {
            return Err(ModelError::Layout("layer widths must be at least 1".into()));
        }
        if self.code_mode == CodeMode::FreeCode && self.frames == 0 {
            return Err(ModelError::Layout("free-code mode needs at least one frame".into()));
        }
        Ok(())
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.shape_dim(),
            layer_widths: self.hidden.clone(),
            output_dim: self.bottleneck,
            activation: Activation::Leaky,
        }
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.bottleneck,
            layer_widths: self.hidden.iter().rev().copied().collect(),
            output_dim: self.shape_dim(),
            activation: Activation::Leaky,
        }
    }

    /// Input width of `h`: normalized keypoints (2P) followed by the mask (P).
    pub fn lifting_input_dim(&self) -> usize {
        3 * self.points
    }

    /// Number of parameter arrays in the layout.
    pub fn array_count(&self) -> usize {
        let l = self.layout();
        l.lifting.end + usize::from(l.codes.is_some()) + usize::from(l.occluded.is_some())
    }

    /// Groups tape handles (one per array, in layout order) by network.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundParams {
        assert_eq!(vars.len(), self.array_count(), "one var per parameter array");
        let layout = self.layout();
        let pairs = |r: core::ops::Range<usize>| -> Vec<Dense> {
            r.step_by(2)
                .map(|i| Dense {
                    weight: vars[i],
                    bias: vars[i + 1],
                })
                .collect()
        };
        BoundParams {
            encoder: pairs(layout.encoder.clone()),
            decoder: pairs(layout.decoder.clone()),
            lifting: pairs(layout.lifting.clone()),
            codes: layout.codes.map(|i| vars[i]),
            occluded: layout.occluded.map(|i| vars[i]),
            vars,
        }
    }

    fn layout(&self) -> Layout {
        let enc = self.encoder_spec().layer_dims().len();
        let dec = self.decoder_spec().layer_dims().len();
        let lifting = match self.code_mode {
            CodeMode::Lifting => 2 * (2 + 2 * self.lifting_blocks),
            CodeMode::FreeCode => 0,
        };
        let encoder = 0..2 * enc;
        let decoder = encoder.end..encoder.end + 2 * dec;
        let lifting = decoder.end..decoder.end + lifting;
        let codes = match self.code_mode {
            CodeMode::FreeCode => Some(lifting.end),
            CodeMode::Lifting => None,
        };
        let next = lifting.end + usize::from(codes.is_some());
        let occluded = self.occluded_free_variable.then_some(next);
        Layout {
            encoder,
            decoder,
            lifting,
            codes,
            occluded,
        }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: core::ops::Range<usize>,
    decoder: core::ops::Range<usize>,
    lifting: core::ops::Range<usize>,
    codes: Option<usize>,
    occluded: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Lifting,
    Codes,
    OccludedFree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix,
}

/// Weights of `f_e`, `f_d`, `h` and the free per-frame variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    arrays: Vec<ParamArray>,
}

fn push_dense(
    out: &mut Vec<ParamArray>,
    prefix: &str,
    idx: usize,
    dims: (usize, usize),
    group: ParamGroup,
    rng: &mut Rng,
) {
    let (fan_in, fan_out) = dims;
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    out.push(ParamArray {
        name: format!("{prefix}.{idx}.weight"),
        group,
        value: uniform_matrix(rng, fan_in, fan_out, limit),
    });
    out.push(ParamArray {
        name: format!("{prefix}.{idx}.bias"),
        group,
        value: uniform_matrix(rng, 1, fan_out, limit),
    });
}

impl ModelParams {
    /// Weights and biases uniform in `±sqrt(6/(fan_in+fan_out))`, zero codes.
    /// Nonzero biases make the decoder's output for the zero code a usable
    /// nondegenerate shape.
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut arrays = Vec::new();
        for (i, d) in spec.encoder_spec().layer_dims().into_iter().enumerate() {
            push_dense(&mut arrays, "encoder", i, d, ParamGroup::Encoder, rng);
        }
        for (i, d) in spec.decoder_spec().layer_dims().into_iter().enumerate() {
            push_dense(&mut arrays, "decoder", i, d, ParamGroup::Decoder, rng);
        }
        if spec.code_mode == CodeMode::Lifting {
            let w = spec.lifting_width;
            push_dense(
                &mut arrays,
                "lifting",
                0,
                (spec.lifting_input_dim(), w),
                ParamGroup::Lifting,
                rng,
            );
            for b in 0..spec.lifting_blocks {
                push_dense(&mut arrays, "lifting", 1 + 2 * b, (w, w), ParamGroup::Lifting, rng);
                push_dense(&mut arrays, "lifting", 2 + 2 * b, (w, w), ParamGroup::Lifting, rng);
            }
            push_dense(
                &mut arrays,
                "lifting",
                1 + 2 * spec.lifting_blocks,
                (w, spec.bottleneck),
                ParamGroup::Lifting,
                rng,
            );
        } else {
            arrays.push(ParamArray {
                name: "codes".into(),
                group: ParamGroup::Codes,
                value: Matrix::zeros(spec.frames, spec.bottleneck),
            });
        }
        if spec.occluded_free_variable {
            arrays.push(ParamArray {
                name: "occluded".into(),
                group: ParamGroup::OccludedFree,
                value: Matrix::zeros(spec.frames, spec.shape_dim()),
            });
        }
        Ok(Self { spec, arrays })
    }

    /// Rebuilds parameters from named arrays, checking them against `spec`.
    pub fn from_arrays(spec: ModelSpec, named: Vec<(String, Matrix)>) -> Result<Self, ModelError> {
        let mut template = Self::init(spec, &mut crate::rng::seeded(0))?;
        if named.len() != template.arrays.len() {
            return Err(ModelError::Layout(format!(
                "expected {} arrays, found {}",
                template.arrays.len(),
                named.len()
            )));
        }
        for (slot, (name, value)) in template.arrays.iter_mut().zip(named) {
            if slot.name != name || slot.value.shape() != value.shape() {
                return Err(ModelError::Layout(format!(
                    "array {name} {:?} does not match expected {} {:?}",
                    value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = value;
        }
        Ok(template)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arrays(&self) -> &[ParamArray] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [ParamArray] {
        &mut self.arrays
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays.iter().map(|a| a.value.len()).sum()
    }

    /// Concatenated decoder weights and biases, `θ_d`.
    pub fn decoder_arrays(&self) -> impl Iterator<Item = &ParamArray> {
        self.arrays.iter().filter(|a| a.group == ParamGroup::Decoder)
    }

    pub fn codes(&self) -> Option<&Matrix> {
        self.spec.layout().codes.map(|i| &self.arrays[i].value)
    }

    pub fn codes_mut(&mut self) -> Option<&mut Matrix> {
        self.spec.layout().codes.map(move |i| &mut self.arrays[i].value)
    }

    /// Places every array on the tape; groups in `trainable` become leaves,
    /// the rest constants.
    pub fn bind(&self, t: &mut Tape, trainable: &[ParamGroup]) -> BoundParams {
        let vars: Vec<Var> = self
            .arrays
            .iter()
            .map(|a| {
                if trainable.contains(&a.group) {
                    t.leaf(a.value.clone())
                } else {
                    t.constant(a.value.clone())
                }
            })
            .collect();
        self.spec.bind_vars(vars)
    }

    fn layers(&self, range: core::ops::Range<usize>) -> Vec<(&Matrix, &Matrix)> {
        self.arrays[range]
            .chunks_exact(2)
            .map(|w| (&w[0].value, &w[1].value))
            .collect()
    }

    /// `f_d(φ)` for a single code, as a canonical 3×P shape.
    pub fn decode(&self, code: &[f64]) -> Result<Shape3D, ModelError> {
        let c = Matrix::from_vec(1, code.len(), code.to_vec()).map_err(AutodiffError::from)?;
        let out = plain_mlp(&self.layers(self.spec.layout().decoder), c)?;
        let p = self.spec.points;
        Ok(Shape3D::canonical(out.reshape(3, p).map_err(AutodiffError::from)?))
    }

    /// `f_e(S)` for a single canonical shape.
    pub fn encode(&self, shape: &Matrix) -> Result<Vec<f64>, ModelError> {
        let flat = shape.clone().reshape(1, shape.len()).map_err(AutodiffError::from)?;
        Ok(plain_mlp(&self.layers(self.spec.layout().encoder), flat)?.into_vec())
    }

    /// `h(W̃, M)` for a single normalized frame.
    pub fn lift(&self, frame: &NormalizedFrame) -> Result<Vec<f64>, ModelError> {
        if self.spec.code_mode != CodeMode::Lifting {
            return Err(ModelError::CodeMode("lifting"));
        }
        let layers = self.layers(self.spec.layout().lifting);
        let x = lifting_input(core::slice::from_ref(frame));
        Ok(plain_lifting(&layers, x)?.into_vec())
    }

    /// The latent code of training frame `frame_id` (free-code mode) or of
    /// `frame` through `h` (lifting mode).
    pub fn code_for(&self, frame_id: usize, frame: &NormalizedFrame) -> Result<Vec<f64>, ModelError> {
        match self.spec.code_mode {
            CodeMode::FreeCode => {
                let codes = self.codes().expect("free-code layout");
                if frame_id >= codes.rows() {
                    return Err(ModelError::FrameOutOfRange {
                        id: frame_id,
                        frames: codes.rows(),
                    });
                }
                Ok(codes.row(frame_id).to_vec())
            }
            CodeMode::Lifting => self.lift(frame),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: Var,
    pub bias: Var,
}

/// Tape handles for every parameter array.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    pub lifting: Vec<Dense>,
    pub codes: Option<Var>,
    pub occluded: Option<Var>,
    /// One var per array, in [`ModelParams::arrays`] order.
    pub vars: Vec<Var>,
}

fn dense(t: &mut Tape, layer: &Dense, x: Var) -> Result<Var, AutodiffError> {
    let y = t.matmul(x, layer.weight)?;
    t.add_row_broadcast(y, layer.bias)
}

fn plain_dense(layer: (&Matrix, &Matrix), x: &Matrix) -> Result<Matrix, AutodiffError> {
    let mut y = x.matmul(layer.0)?;
    let bias = layer.1.as_slice();
    for r in 0..y.rows() {
        for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(y)
}

fn plain_leaky(x: Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Tape-free [`mlp_forward`]; produces the same bits.
fn plain_mlp(layers: &[(&Matrix, &Matrix)], x: Matrix) -> Result<Matrix, AutodiffError> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = plain_dense(*layer, &h)?;
        if i + 1 < layers.len() {
            h = plain_leaky(h);
        }
    }
    Ok(h)
}

/// Tape-free [`lifting_forward`].
fn plain_lifting(layers: &[(&Matrix, &Matrix)], x: Matrix) -> Result<Matrix, AutodiffError> {
    let mut h = plain_leaky(plain_dense(layers[0], &x)?);
    let blocks = (layers.len() - 2) / 2;
    for b in 0..blocks {
        let a = plain_leaky(plain_dense(layers[1 + 2 * b], &h)?);
        let a = plain_dense(layers[2 + 2 * b], &a)?;
        h = plain_leaky(h.zip_map(&a, |x, y| x + y)?);
    }
    plain_dense(layers[layers.len() - 1], &h)
}

/// Hidden layers with the leaky activation, linear output layer.
pub fn mlp_forward(t: &mut Tape, layers: &[Dense], x: Var) -> Result<Var, AutodiffError> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = dense(t, layer, h)?;
        if i + 1 < layers.len() {
            h = t.leaky(h);
        }
    }
    Ok(h)
}

/// Rows of codes (B×K) to flattened shapes (B×3P).
pub fn decoder_forward(t: &mut Tape, p: &BoundParams, codes: Var) -> Result<Var, AutodiffError> {
    mlp_forward(t, &p.decoder, codes)
}

/// Rows of flattened shapes (B×3P) to codes (B×K).
pub fn encoder_forward(t: &mut Tape, p: &BoundParams, shapes: Var) -> Result<Var, AutodiffError> {
    mlp_forward(t, &p.encoder, shapes)
}

/// Residual 2D-3D encoder: `linear → act`, then blocks of
/// `x + linear(act(linear(x)))` each followed by the activation, then a
/// linear map to the bottleneck.
pub fn lifting_forward(t: &mut Tape, p: &BoundParams, input: Var) -> Result<Var, AutodiffError> {
    let layers = &p.lifting;
    let first = dense(t, &layers[0], input)?;
    let mut h = t.leaky(first);
    let blocks = (layers.len() - 2) / 2;
    for b in 0..blocks {
        let a = dense(t, &layers[1 + 2 * b], h)?;
        let a = t.leaky(a);
        let a = dense(t, &layers[2 + 2 * b], a)?;
        let sum = t.add(h, a)?;
        h = t.leaky(sum);
    }
    dense(t, &layers[layers.len() - 1], h)
}

/// Rows of `[x₁..x_P, y₁..y_P, m₁..m_P]` with occluded coordinates zeroed.
pub fn lifting_input(frames: &[NormalizedFrame]) -> Matrix {
    let p = frames.first().map(|f| f.points()).unwrap_or(0);
    let mut out = Matrix::zeros(frames.len(), 3 * p);
    for (i, f) in frames.iter().enumerate() {
        let row = out.row_mut(i);
        for j in 0..p {
            let visible = f.visibility.is_visible(j);
            if visible {
                row[j] = f.keypoints[(0, j)];
                row[p + j] = f.keypoints[(1, j)];
                row[2 * p + j] = 1.0;
            }
        }
    }
    out
}

/// Codes for a batch: rows of the free-code table or `h` outputs.
pub fn get_codes(
    t: &mut Tape,
    p: &BoundParams,
    mode: CodeMode,
    frame_ids: &[usize],
    frames: &[NormalizedFrame],
) -> Result<Var, ModelError> {
    match mode {
        CodeMode::FreeCode => {
            let codes = p.codes.ok_or(ModelError::CodeMode("free-code"))?;
            let n = t.shape(codes).0;
            if let Some(&bad) = frame_ids.iter().find(|&&i| i >= n) {
                return Err(ModelError::FrameOutOfRange { id: bad, frames: n });
            }
            Ok(t.gather_rows(codes, frame_ids)?)
        }
        CodeMode::Lifting => {
            if p.lifting.is_empty() {
                return Err(ModelError::CodeMode("lifting"));
            }
            let x = t.constant(lifting_input(frames));
            Ok(lifting_forward(t, p, x)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn zeroed(mut params: ModelParams) -> ModelParams {
        for a in params.arrays_mut() {
            a.value = Matrix::zeros(a.value.rows(), a.value.cols());
        }
        params
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let spec = ModelSpec::new(10, 4, CodeMode::FreeCode, 7);
        let params = ModelParams::init(spec, &mut seeded(1)).unwrap();
        let widths = [30usize, 256, 128, 64, 32, 16, 4];
        let mlp: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        // Encoder and decoder mirror each other: same weight count, biases differ.
        let dec: usize = widths
            .iter()
            .rev()
            .copied()
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        assert_eq!(params.parameter_count(), mlp + dec + 7 * 4);
        assert_eq!(
            params.spec().encoder_spec().parameter_count() - 4,
            params.spec().decoder_spec().parameter_count() - 30
        );
    }

    #[test]
    fn rejects_overcomplete_bottleneck() {
        let spec = ModelSpec::new(3, 9, CodeMode::FreeCode, 1);
        assert_eq!(
            ModelParams::init(spec, &mut seeded(0)).unwrap_err(),
            ModelError::Bottleneck { k: 9, dim: 9 }
        );
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let spec = ModelSpec::new(5, 3, CodeMode::Lifting, 0);
        let params = zeroed(ModelParams::init(spec, &mut seeded(2)).unwrap());
        assert_eq!(params.decode(&[0.3, -1.0, 2.0]).unwrap().points, Matrix::zeros(3, 5));
        assert_eq!(params.encode(&Matrix::filled(3, 5, 1.5)).unwrap(), alloc::vec![0.0; 3]);
        let frame = NormalizedFrame {
            keypoints: Matrix::filled(2, 5, 0.2),
            visibility: crate::geometry::Visibility::full(5),
            scale: 1.0,
            centroid: [0.0, 0.0],
            frame_id: 0,
        };
        assert_eq!(params.lift(&frame).unwrap(), alloc::vec![0.0; 3]);
    }

    #[test]
    fn decoding_is_deterministic() {
        let spec = ModelSpec::new(6, 4, CodeMode::FreeCode, 2);
        let a = ModelParams::init(spec.clone(), &mut seeded(3)).unwrap();
        let b = ModelParams::init(spec, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let code = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(a.decode(&code).unwrap(), a.decode(&code).unwrap());
    }

    #[test]
    fn untouched_free_code_is_initial_vector() {
        let spec = ModelSpec::new(4, 2, CodeMode::FreeCode, 3);
        let params = ModelParams::init(spec, &mut seeded(4)).unwrap();
        let frame = NormalizedFrame {
            keypoints: Matrix::zeros(2, 4),
            visibility: crate::geometry::Visibility::full(4),
            scale: 1.0,
            centroid: [0.0, 0.0],
            frame_id: 2,
        };
        assert_eq!(params.code_for(2, &frame).unwrap(), alloc::vec![0.0, 0.0]);
        assert!(matches!(
            params.code_for(3, &frame),
            Err(ModelError::FrameOutOfRange { id: 3, frames: 3 })
        ));
    }
}
