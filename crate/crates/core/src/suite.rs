//! The finite-difference gradient suite: every differentiable tape operation
//! plus the complete training objective on a toy problem.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::data::{generate_synthetic, SynthSpec};
use crate::error::{AutodiffError, TrainError};
use crate::geometry::{normalize_frame, AdaptiveScheme, NormalizedFrame};
use crate::gradcheck::{check, GradCheck, SuiteEntry, DEFAULT_STEP};
use crate::matrix::Matrix;
use crate::networks::{decoder_forward, encoder_forward, CodeMode, ModelParams, ModelSpec};
use crate::rng::{normal_matrix, seeded};
use crate::trainer::{batch_loss, Mode, TrainConfig};

pub const ELEMENTARY_TOLERANCE: f64 = 1e-5;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

/// Toy problem size for the end-to-end checks.
pub const TOY_POINTS: usize = 4;
pub const TOY_FRAMES: usize = 3;
pub const TOY_BOTTLENECK: usize = 2;
const TOY_HIDDEN: [usize; 2] = [6, 5];
const TOY_LIFTING_WIDTH: usize = 6;

/// Random fixed weights turn any node into a scalar with a generic adjoint.
fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> Result<Var, AutodiffError> {
    let (r, c) = t.shape(x);
    let w = t.constant(normal_matrix(&mut seeded(seed ^ 0x5EED), r, c, 1.0));
    let flat_x = t.view(x, 0, 1, r * c)?;
    let flat_w = t.view(w, 0, r * c, 1)?;
    t.matmul(flat_x, flat_w)
}

fn over_seeds<F>(name: &str, tolerance: f64, seeds: u64, shapes: &[(usize, usize)], build: F) -> SuiteEntry
where
    F: Fn(&mut Tape, &[Var], u64) -> Result<Var, AutodiffError>,
{
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = seeded(seed);
        let inputs: Vec<Matrix> = shapes
            .iter()
            .map(|&(r, c)| normal_matrix(&mut rng, r, c, 1.0))
            .collect();
        let err = match check(&inputs, DEFAULT_STEP, |t, v| build(t, v, seed)) {
            Ok(res) => res.max_relative_error(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    SuiteEntry {
        name: String::from(name),
        max_relative_error: worst,
        tolerance,
        trials: seeds as usize,
    }
}

/// A toy configuration with narrow layers so every parameter can be
/// perturbed in reasonable time.
pub fn toy_config(mode: Mode, code_mode: CodeMode) -> TrainConfig {
    TrainConfig {
        mode,
        code_mode,
        bottleneck: TOY_BOTTLENECK,
        hidden: TOY_HIDDEN.to_vec(),
        lifting_width: TOY_LIFTING_WIDTH,
        ..TrainConfig::default()
    }
}

/// Toy frames and freshly initialized parameters for `seed`. Free codes are
/// drawn at random so that frames differ.
pub fn toy_problem(config: &TrainConfig, seed: u64, occlusion: f64) -> (ModelParams, Vec<NormalizedFrame>) {
    let mut spec = SynthSpec::new(TOY_POINTS, TOY_FRAMES, 1, seed);
    spec.occlusion_rate = occlusion;
    let data = generate_synthetic(&spec).expect("toy spec is valid");
    let frames: Vec<NormalizedFrame> = data
        .frames()
        .iter()
        .map(|f| normalize_frame(f).expect("toy frames have spread"))
        .collect();
    let model = config.model_spec(TOY_POINTS, TOY_FRAMES);
    let mut rng = seeded(seed ^ 0xA11CE);
    let mut params = ModelParams::init(model, &mut rng).expect("toy spec is valid");
    if let Some(codes) = params.codes_mut() {
        *codes = normal_matrix(&mut rng, TOY_FRAMES, TOY_BOTTLENECK, 0.5);
    }
    (params, frames)
}

/// Gradient check of the full step objective with respect to every
/// parameter array, using the global relative error.
pub fn check_step_loss(config: &TrainConfig, seed: u64, occlusion: f64) -> Result<GradCheck, TrainError> {
    let (params, frames) = toy_problem(config, seed, occlusion);
    let spec: ModelSpec = params.spec().clone();
    let inputs: Vec<Matrix> = params.arrays().iter().map(|a| a.value.clone()).collect();
    check(&inputs, DEFAULT_STEP, |t, vars| {
        let bound = spec.bind_vars(vars.to_vec());
        Ok(batch_loss(t, &bound, &spec, config, &frames)?.total)
    })
}

fn step_entry(name: &str, config: &TrainConfig, seeds: u64, occlusion: f64) -> SuiteEntry {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let err = check_step_loss(config, seed, occlusion).map_or(f64::INFINITY, |r| r.global_relative_error());
        worst = worst.max(err);
    }
    SuiteEntry {
        name: String::from(name),
        max_relative_error: worst,
        tolerance: COMPOSITE_TOLERANCE,
        trials: seeds as usize,
    }
}

fn network_entries(seeds: u64) -> Vec<SuiteEntry> {
    let spec = ModelSpec {
        hidden: TOY_HIDDEN.to_vec(),
        ..ModelSpec::new(TOY_POINTS, TOY_BOTTLENECK, CodeMode::Lifting, TOY_FRAMES)
    };
    let mut out = Vec::new();
    let mut worst_dec: f64 = 0.0;
    let mut worst_enc: f64 = 0.0;
    for seed in 0..seeds {
        let params = ModelParams::init(spec.clone(), &mut seeded(seed)).expect("toy spec");
        let code = normal_matrix(&mut seeded(seed + 1000), 1, TOY_BOTTLENECK, 1.0);
        let res = check::<_, AutodiffError>(&[code], DEFAULT_STEP, |t, v| {
            let bound = params.bind(t, &[]);
            let s = decoder_forward(t, &bound, v[0])?;
            weighted_sum(t, s, seed)
        });
        worst_dec = worst_dec.max(res.map_or(f64::INFINITY, |r| r.max_relative_error()));

        let shape = normal_matrix(&mut seeded(seed + 2000), 1, 3 * TOY_POINTS, 1.0);
        let enc_arrays: Vec<Matrix> = params
            .arrays()
            .iter()
            .take(2 * (TOY_HIDDEN.len() + 1))
            .map(|a| a.value.clone())
            .collect();
        let res = check::<_, AutodiffError>(&enc_arrays, DEFAULT_STEP, |t, v| {
            let mut vars = v.to_vec();
            for a in params.arrays().iter().skip(v.len()) {
                vars.push(t.constant(a.value.clone()));
            }
            let bound = spec.bind_vars(vars);
            let x = t.constant(shape.clone());
            let code = encoder_forward(t, &bound, x)?;
            let sq = t.square(code);
            Ok(t.sum(sq))
        });
        worst_enc = worst_enc.max(res.map_or(f64::INFINITY, |r| r.global_relative_error()));
    }
    out.push(SuiteEntry {
        name: "decoder jacobian wrt code".into(),
        max_relative_error: worst_dec,
        tolerance: ELEMENTARY_TOLERANCE,
        trials: seeds as usize,
    });
    out.push(SuiteEntry {
        name: "encoder weights on toy loss".into(),
        max_relative_error: worst_enc,
        tolerance: ELEMENTARY_TOLERANCE,
        trials: seeds as usize,
    });
    out
}

/// Every elementary operation over `seeds` random inputs.
pub fn elementary_entries(seeds: u64) -> Vec<SuiteEntry> {
    let e = ELEMENTARY_TOLERANCE;
    alloc::vec![
        over_seeds("matmul", e, seeds, &[(3, 4), (4, 5)], |t, v, s| {
            let p = t.matmul(v[0], v[1])?;
            weighted_sum(t, p, s)
        }),
        over_seeds("sum of product", e, seeds, &[(2, 3), (3, 6)], |t, v, _| {
            let p = t.matmul(v[0], v[1])?;
            Ok(t.sum(p))
        }),
        over_seeds("elementwise", e, seeds, &[(3, 4), (3, 4)], |t, v, s| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(a, v[1])?;
            let c = t.scale(b, -1.7);
            let d = t.square(c);
            let l = t.leaky(v[1]);
            let m = t.add(d, l)?;
            weighted_sum(t, m, s)
        }),
        over_seeds("structural", e, seeds, &[(4, 6), (1, 6), (2, 6)], |t, v, s| {
            let b = t.add_row_broadcast(v[0], v[1])?;
            let tr = t.transpose(b);
            let back = t.transpose(tr);
            let st = t.vstack(back, v[2])?;
            let g = t.gather_rows(st, &[5, 0, 0, 3])?;
            let r = t.row_as(g, 1, 2, 3)?;
            let a = weighted_sum(t, g, s)?;
            let b2 = weighted_sum(t, r, s + 1)?;
            t.add(a, b2)
        }),
        over_seeds("frobenius norm", e, seeds, &[(5, 7)], |t, v, _| Ok(
            t.frobenius_norm(v[0])
        )),
        over_seeds("squared norm", e, seeds, &[(5, 7)], |t, v, _| Ok(t.squared_norm(v[0]))),
        over_seeds("ridge + inverse3", e, seeds, &[(3, 3)], |t, v, s| {
            let shift = t.constant(Matrix::identity(3).scaled(3.0));
            let a = t.add(v[0], shift)?;
            let r = t.ridge(a)?;
            let inv = t.inverse3(r)?;
            weighted_sum(t, inv, s)
        }),
        over_seeds("svd 2x3", COMPOSITE_TOLERANCE, seeds, &[(2, 3)], |t, v, s| {
            let (u, sigma, vv) = t.svd_small(v[0])?;
            let a = weighted_sum(t, u, s)?;
            let b = weighted_sum(t, sigma, s + 1)?;
            let c = weighted_sum(t, vv, s + 2)?;
            let ab = t.add(a, b)?;
            t.add(ab, c)
        }),
        over_seeds(
            "rotation projection",
            COMPOSITE_TOLERANCE,
            seeds,
            &[(2, 3)],
            |t, v, s| {
                let (u, _, vv) = t.svd_small(v[0])?;
                let vt = t.transpose(vv);
                let rxy = t.matmul(u, vt)?;
                let r = t.complete_rotation(rxy)?;
                weighted_sum(t, r, s)
            }
        ),
        over_seeds("nuclear norm", e, seeds, &[(3, 8)], |t, v, _| t.nuclear_norm(v[0])),
    ]
}

/// The training objective in every mode on the toy problem.
pub fn objective_entries(seeds: u64) -> Vec<SuiteEntry> {
    let paul = toy_config(Mode::Paul, CodeMode::FreeCode);
    let lifting = toy_config(Mode::Paul, CodeMode::Lifting);
    let adl = toy_config(Mode::Adl, CodeMode::FreeCode);
    let low_rank = toy_config(Mode::AdlLowrank, CodeMode::FreeCode);
    let visible_mean = TrainConfig {
        adaptive_scheme: AdaptiveScheme::VisibleMean,
        ..paul.clone()
    };
    let free_fill = TrainConfig {
        occluded_free_variable: true,
        ..paul.clone()
    };
    alloc::vec![
        step_entry("paul step loss (free codes)", &paul, seeds, 0.0),
        step_entry("paul step loss (lifting)", &lifting, seeds, 0.0),
        step_entry("adl step loss", &adl, seeds, 0.0),
        step_entry("adl + low-rank step loss", &low_rank, seeds, 0.0),
        step_entry("paul step loss (occluded)", &paul, seeds, 0.25),
        step_entry("paul step loss (occluded, visible-mean)", &visible_mean, seeds, 0.25),
        step_entry("paul step loss (occluded, free fill)", &free_fill, seeds, 0.25),
    ]
}

/// The complete suite.
pub fn run(seeds: u64) -> Vec<SuiteEntry> {
    let mut out = elementary_entries(seeds);
    out.extend(network_entries(seeds));
    out.extend(objective_entries(seeds));
    out
}
