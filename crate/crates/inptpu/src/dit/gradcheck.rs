//! Finite-difference verification of the hand-derived backward pass.
//! Runs in 64-bit regardless of the training precision.

use super::loss::{build_training_input, FlowDraw, LossOpts};
use super::model::{backward_inner, forward_inner, positional_encoding, DiTConfig, ModelBundle};
use super::params::ParamStore;
use crate::inp_tpu::ConditionBundle;
use crate::tokenizer::{TokenGrid, TokenSequence};
use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_slot: String,
    pub checked: usize,
    pub per_slot: Vec<(String, f64)>,
}

/// Relative error with an absolute floor: where both gradients are smaller
/// than 1e-6 the difference is compared against 1e-6 instead, so vanishing
/// gradients cannot blow up the ratio on rounding noise.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

struct Problem {
    config: DiTConfig,
    x_in: Array2<f64>,
    pos: Array2<f64>,
    target: Array2<f64>,
    t: f64,
    skip_rows: usize,
}

impl Problem {
    fn loss(&self, params: &ParamStore<f64>) -> f64 {
        let (out, _) =
            forward_inner::<f64>(params, &self.config, &self.x_in, &self.pos, self.t, false);
        mse64(&out, &self.target, self.skip_rows)
    }

    fn loss_and_grads(&self, params: &ParamStore<f64>) -> (f64, ParamStore<f64>) {
        let (out, tape) =
            forward_inner::<f64>(params, &self.config, &self.x_in, &self.pos, self.t, true);
        let loss = mse64(&out, &self.target, self.skip_rows);
        let rows = out.nrows() - self.skip_rows;
        let count = (rows * out.ncols()) as f64;
        let mut d_out = &out - &self.target;
        d_out *= 2.0 / count;
        if self.skip_rows > 0 {
            d_out.slice_mut(ndarray::s![0..self.skip_rows, ..]).fill(0.0);
        }
        let grads = backward_inner(params, &self.config, &tape.unwrap(), &d_out);
        (loss, grads)
    }
}

fn mse64(pred: &Array2<f64>, target: &Array2<f64>, skip_rows: usize) -> f64 {
    let rows = pred.nrows() - skip_rows;
    let count = (rows * pred.ncols()) as f64;
    let mut acc = 0.0;
    for i in skip_rows..pred.nrows() {
        for (a, b) in pred.row(i).iter().zip(target.row(i).iter()) {
            acc += (a - b) * (a - b);
        }
    }
    acc / count
}

fn synthetic_problem(config: &DiTConfig, grid: TokenGrid, seed: u64) -> Problem {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let x_in =
        Array2::from_shape_fn((n, config.d_input()), |_| rng.random::<f64>() * 2.0 - 1.0);
    let target =
        Array2::from_shape_fn((n, config.d_patch()), |_| rng.random::<f64>() * 2.0 - 1.0);
    let pos = positional_encoding::<f64>(config, &grid);
    Problem { config: config.clone(), x_in, pos, target, t: rng.random::<f64>(), skip_rows: 0 }
}

/// Checks analytic gradients against central finite differences
/// (`(L(p+h) - L(p-h)) / 2h`) for parameter elements of every slot.
/// `elements_per_slot = None` checks every element.
pub fn check_all_slots(
    config: &DiTConfig,
    seed: u64,
    h: f64,
    elements_per_slot: Option<usize>,
) -> GradCheckReport {
    let model = ModelBundle::init_random(config.clone(), crate::inp_tpu::Stage::Image, seed, 0.08)
        .expect("valid config");
    let mut params: ParamStore<f64> = model.params.cast();
    let grid = TokenGrid { frames: 2, rows: 2, cols: 2 };
    let problem = synthetic_problem(config, grid, seed ^ 0xabcd);

    let (_, grads) = problem.loss_and_grads(&params);

    let names: Vec<String> = params.names().cloned().collect();
    let mut per_slot = Vec::new();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for name in names {
        let len = params.get(&name).len();
        let stride = match elements_per_slot {
            Some(k) if k < len => (len / k).max(1),
            _ => 1,
        };
        let mut slot_max = 0.0f64;
        let mut idx = 0;
        while idx < len {
            let original = params.get(&name).as_slice().unwrap()[idx];
            params.get_mut(&name).as_slice_mut().unwrap()[idx] = original + h;
            let lp = problem.loss(&params);
            params.get_mut(&name).as_slice_mut().unwrap()[idx] = original - h;
            let lm = problem.loss(&params);
            params.get_mut(&name).as_slice_mut().unwrap()[idx] = original;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(&name).as_slice().unwrap()[idx];
            let re = rel_err(fd, an);
            slot_max = slot_max.max(re);
            checked += 1;
            idx += stride;
        }
        if slot_max > max_rel {
            max_rel = slot_max;
            worst = name.clone();
        }
        per_slot.push((name, slot_max));
    }
    GradCheckReport { max_rel_err: max_rel, worst_slot: worst, checked, per_slot }
}

/// Spot check of the full training-loss gradient path (input assembly
/// included) for an existing f32 model, evaluated in f64.
pub fn check_model_gradients(
    model: &ModelBundle,
    clean: &TokenSequence,
    bundle: &ConditionBundle,
    draw: &FlowDraw,
    elements_per_slot: usize,
) -> GradCheckReport {
    let (x_in32, target32) =
        build_training_input(model, clean, bundle, draw, LossOpts::default()).unwrap();
    let problem = Problem {
        config: model.config.clone(),
        x_in: x_in32.mapv(|v| v as f64),
        pos: positional_encoding::<f64>(&model.config, &clean.grid),
        target: target32.mapv(|v| v as f64),
        t: draw.t as f64,
        skip_rows: 0,
    };
    let mut params: ParamStore<f64> = model.params.cast();
    let (_, grads) = problem.loss_and_grads(&params);

    let h = 1e-5;
    let names: Vec<String> = params.names().cloned().collect();
    let mut per_slot = Vec::new();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for name in names {
        let len = params.get(&name).len();
        let stride = (len / elements_per_slot).max(1);
        let mut slot_max = 0.0f64;
        let mut idx = 0;
        while idx < len {
            let original = params.get(&name).as_slice().unwrap()[idx];
            params.get_mut(&name).as_slice_mut().unwrap()[idx] = original + h;
            let lp = problem.loss(&params);
            params.get_mut(&name).as_slice_mut().unwrap()[idx] = original - h;
            let lm = problem.loss(&params);
            params.get_mut(&name).as_slice_mut().unwrap()[idx] = original;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(&name).as_slice().unwrap()[idx];
            let re = rel_err(fd, an);
            if re > slot_max {
                slot_max = re;
            }
            checked += 1;
            idx += stride;
        }
        if slot_max > max_rel {
            max_rel = slot_max;
            worst = name.clone();
        }
        per_slot.push((name, slot_max));
    }
    GradCheckReport { max_rel_err: max_rel, worst_slot: worst, checked, per_slot }
}
