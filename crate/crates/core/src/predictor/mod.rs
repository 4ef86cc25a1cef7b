//! Per-frame elevation and uncertainty estimation.
//!
//! [`GatedNet`] is a shallow encoder-decoder whose final elevation is a
//! per-cell convex blend of a raw estimate and the input scan. It is trained
//! with the beta-weighted Gaussian NLL under total-variation batch weights.
//! [`baseline_predict`] is a training-free nearest-neighbor fallback.

mod net;

pub use net::{
    Adam, Net, NetConfig, Real, Tape, GATE, INPUT_CHANNELS, LOGVAR, OUTPUT_CHANNELS, RAW,
};

use rand::seq::SliceRandom;

use crate::rng::stream;
use crate::sensing::{GridGeometry, LocalGrid};
use crate::{Error, Result};

/// Lower clamp of predicted log-variance, `ln(1e-4)`.
pub const LOG_VARIANCE_MIN: f64 = -9.210_340_371_976_184;
/// Upper clamp of predicted log-variance, `ln(25)`.
pub const LOG_VARIANCE_MAX: f64 = 3.218_875_824_868_200_7;

/// Variance assigned to observed cells by the baseline (m^2).
pub const BASELINE_OBSERVED_STD: f64 = 0.1;
pub const VARIANCE_CAP: f64 = 25.0;

pub type GatedNet = Net<f32>;

/// Base-relative mean elevations and log-variances on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationEstimate {
    rows: usize,
    cols: usize,
    mean: Vec<f64>,
    log_variance: Vec<f64>,
}

impl ElevationEstimate {
    /// Log-variances are clamped into the supported range.
    pub fn new(
        rows: usize,
        cols: usize,
        mean: Vec<f64>,
        mut log_variance: Vec<f64>,
    ) -> Result<Self> {
        if mean.len() != rows * cols || log_variance.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                got: (mean.len(), log_variance.len()),
            });
        }
        log_variance
            .iter_mut()
            .for_each(|v| *v = v.clamp(LOG_VARIANCE_MIN, LOG_VARIANCE_MAX));
        Ok(Self {
            rows,
            cols,
            mean,
            log_variance,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_variance(&self) -> &[f64] {
        &self.log_variance
    }

    #[inline]
    pub fn variance(&self, i: usize) -> f64 {
        self.log_variance[i].exp()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_variance.iter().map(|v| v.exp()).collect()
    }
}

/// Loss value and its gradients with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaNll {
    pub loss: f64,
    pub grad_mean: Vec<f64>,
    pub grad_log_variance: Vec<f64>,
}

/// Beta-weighted Gaussian NLL averaged over valid label cells.
///
/// Each cell contributes `w * (lv / 2 + (y - mu)^2 / (2 exp(lv)))` with
/// `w = exp(beta * lv)` held constant under differentiation.
pub fn beta_nll(pred: &ElevationEstimate, label: &LocalGrid, beta: f64) -> Result<BetaNll> {
    if pred.shape() != label.shape() {
        return Err(Error::ShapeMismatch {
            expected: label.shape(),
            got: pred.shape(),
        });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
    }
    let n = pred.len();
    let mut grad_mean = vec![0.0; n];
    let mut grad_log_variance = vec![0.0; n];
    let loss = beta_nll_cells(
        &pred.mean,
        &pred.log_variance,
        label.elevations(),
        label.valid(),
        beta,
        1.0,
        &mut grad_mean,
        &mut grad_log_variance,
    );
    Ok(BetaNll {
        loss,
        grad_mean,
        grad_log_variance,
    })
}

/// Core of [`beta_nll`] on raw slices; gradients are scaled by `scale` and
/// written (not accumulated).
#[allow(clippy::too_many_arguments)]
fn beta_nll_cells(
    mean: &[f64],
    log_variance: &[f64],
    label: &[f64],
    valid: &[bool],
    beta: f64,
    scale: f64,
    grad_mean: &mut [f64],
    grad_log_variance: &mut [f64],
) -> f64 {
    let count = valid.iter().filter(|v| **v).count();
    if count == 0 {
        grad_mean.iter_mut().for_each(|g| *g = 0.0);
        grad_log_variance.iter_mut().for_each(|g| *g = 0.0);
        return 0.0;
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for i in 0..mean.len() {
        if !valid[i] {
            grad_mean[i] = 0.0;
            grad_log_variance[i] = 0.0;
            continue;
        }
        let lv = log_variance[i];
        let s = lv.exp();
        let w = if beta == 0.0 { 1.0 } else { (beta * lv).exp() };
        let r = mean[i] - label[i];
        let q = r * r / (2.0 * s);
        total += w * (0.5 * lv + q);
        grad_mean[i] = scale * inv * w * r / s;
        grad_log_variance[i] = scale * inv * w * (0.5 - q);
    }
    total * inv
}

/// Mean absolute forward difference over both axes, divided by the cell
/// count. Differences touching an invalid cell are skipped.
pub fn total_variation(grid: &LocalGrid) -> f64 {
    let (rows, cols) = grid.shape();
    let mut tv = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let Some(z) = grid.get(r, c) else { continue };
            if r + 1 < rows {
                if let Some(n) = grid.get(r + 1, c) {
                    tv += (n - z).abs();
                }
            }
            if c + 1 < cols {
                if let Some(n) = grid.get(r, c + 1) {
                    tv += (n - z).abs();
                }
            }
        }
    }
    tv / (rows * cols) as f64
}

/// Batch weights `TV_b / (sum TV + epsilon)`.
pub fn tv_weights(labels: &[&LocalGrid], epsilon: f64) -> Vec<f64> {
    let tv: Vec<f64> = labels.iter().map(|l| total_variation(l)).collect();
    let denom = tv.iter().sum::<f64>() + epsilon;
    tv.iter().map(|t| t / denom).collect()
}

/// Training-free estimate: observed cells pass through with 0.1 m std,
/// empty cells copy the nearest observed cell with std `0.1 + distance`,
/// capped at 25 m^2.
pub fn baseline_predict(input: &LocalGrid) -> ElevationEstimate {
    let g = input.geometry();
    let (rows, cols) = g.shape();
    let observed: Vec<(usize, usize, f64)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter_map(|(r, c)| input.get(r, c).map(|z| (r, c, z)))
        .collect();
    let mut mean = vec![0.0; g.len()];
    let mut log_variance = vec![VARIANCE_CAP.ln(); g.len()];
    if observed.is_empty() {
        return ElevationEstimate::new(rows, cols, mean, log_variance).expect("shape");
    }
    for r in 0..rows {
        for c in 0..cols {
            let i = g.index(r, c);
            let (z, d2) = observed
                .iter()
                .map(|&(rr, cc, z)| {
                    let dr = rr as f64 - r as f64;
                    let dc = cc as f64 - c as f64;
                    (z, dr * dr + dc * dc)
                })
                .fold((0.0, f64::INFINITY), |best, cand| {
                    if cand.1 < best.1 {
                        cand
                    } else {
                        best
                    }
                });
            let std = BASELINE_OBSERVED_STD + d2.sqrt() * g.resolution;
            mean[i] = z;
            log_variance[i] = (std * std).min(VARIANCE_CAP).ln();
        }
    }
    ElevationEstimate::new(rows, cols, mean, log_variance).expect("shape")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Maps the log-variance head output smoothly into
/// `[LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]`. Returns the log-variance and its
/// derivative. A hard clamp would leave the head unbounded and let a poor
/// fit push it outward without limit.
pub fn head_log_variance(z: f64) -> (f64, f64) {
    let span = LOG_VARIANCE_MAX - LOG_VARIANCE_MIN;
    let s = sigmoid(z);
    let lv = (LOG_VARIANCE_MIN + span * s).clamp(LOG_VARIANCE_MIN, LOG_VARIANCE_MAX);
    (lv, span * s * (1.0 - s))
}

/// Head output that yields log-variance `lv`; inverse of [`head_log_variance`].
pub fn head_log_variance_logit(lv: f64) -> f64 {
    let span = LOG_VARIANCE_MAX - LOG_VARIANCE_MIN;
    let s = ((lv - LOG_VARIANCE_MIN) / span).clamp(1e-12, 1.0 - 1e-12);
    (s / (1.0 - s)).ln()
}

/// Blend weight of the raw head. Cells without a measurement have nothing
/// to keep, so the gate is fully open there.
fn gate_value(logit: f64, observed: bool) -> f64 {
    if observed {
        sigmoid(logit)
    } else {
        1.0
    }
}

/// Stacks grids into the two-channel network input (elevation with the
/// sentinel, validity mask).
pub fn encode_inputs<T: Real>(grids: &[&LocalGrid]) -> Vec<T> {
    let b = grids.len();
    let n = grids.first().map_or(0, |g| g.geometry().len());
    let mut x = vec![T::zero(); INPUT_CHANNELS * b * n];
    for (k, g) in grids.iter().enumerate() {
        for i in 0..n {
            x[k * n + i] = T::of(g.elevations()[i]);
            x[(b + k) * n + i] = if g.valid()[i] { T::one() } else { T::zero() };
        }
    }
    x
}

fn check_shape<T: Real>(net: &Net<T>, grid: &LocalGrid) -> Result<()> {
    let c = net.config();
    if grid.shape() != (c.rows, c.cols) {
        return Err(Error::ShapeMismatch {
            expected: (c.rows, c.cols),
            got: grid.shape(),
        });
    }
    Ok(())
}

/// Gated blend of one sample from a head-output tape.
fn decode<T: Real>(
    out: &[T],
    cells: usize,
    k: usize,
    n: usize,
    input: &LocalGrid,
) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; n];
    let mut lv = vec![0.0; n];
    for i in 0..n {
        let raw = out[RAW * cells + k * n + i].f64();
        let g = gate_value(out[GATE * cells + k * n + i].f64(), input.valid()[i]);
        mean[i] = g * raw + (1.0 - g) * input.elevations()[i];
        lv[i] = head_log_variance(out[LOGVAR * cells + k * n + i].f64()).0;
    }
    (mean, lv)
}

/// Runs the network on one scan.
pub fn predict<T: Real>(net: &Net<T>, input: &LocalGrid) -> Result<ElevationEstimate> {
    Ok(predict_batch(net, &[input])?.pop().expect("one output"))
}

pub fn predict_batch<T: Real>(
    net: &Net<T>,
    inputs: &[&LocalGrid],
) -> Result<Vec<ElevationEstimate>> {
    for g in inputs {
        check_shape(net, g)?;
    }
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let (rows, cols) = inputs[0].shape();
    let n = rows * cols;
    let tape = net.forward(&encode_inputs(inputs), inputs.len());
    let cells = tape.cells();
    Ok(inputs
        .iter()
        .enumerate()
        .map(|(k, input)| {
            let (mean, lv) = decode(&tape.out, cells, k, n, input);
            ElevationEstimate::new(rows, cols, mean, lv).expect("shape")
        })
        .collect())
}

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: LocalGrid,
    pub label: LocalGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tv_epsilon: f64,
    pub grad_clip: f64,
    pub channels: (usize, usize, usize),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            learning_rate: 3e-3,
            final_lr_fraction: 0.05,
            batch_size: 32,
            epochs: 20,
            tv_epsilon: 1e-6,
            grad_clip: 5.0,
            channels: (12, 24, 32),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.tv_epsilon > 0.0) {
            return Err(Error::Config("tv_epsilon must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(
                "learning rate and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Unweighted mean per-sample loss over the epoch's training batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: GatedNet,
    pub curve: Vec<EpochLoss>,
}

/// Mini-batch Adam on the TV-weighted beta-NLL. `validation` is only
/// evaluated for the loss curve.
pub fn train(samples: &[Sample], validation: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(samples, validation, cfg, |_| {})
}

pub fn train_with_progress(
    samples: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let geometry: GridGeometry = *first.label.geometry();
    for s in samples.iter().chain(validation) {
        if s.input.shape() != geometry.shape() || s.label.shape() != geometry.shape() {
            return Err(Error::ShapeMismatch {
                expected: geometry.shape(),
                got: s.input.shape(),
            });
        }
    }
    let (c1, c2, c3) = cfg.channels;
    let net_cfg = NetConfig {
        c1,
        c2,
        c3,
        ..NetConfig::new(geometry.rows, geometry.cols)
    };
    let mut rng = stream(cfg.seed, 0x7261_696e);
    let mut net = GatedNet::init(net_cfg, &mut rng)?;
    let mut opt = Adam::new(net.parameter_count(), cfg.learning_rate, cfg.grad_clip);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut grads = vec![0.0f32; net.parameter_count()];
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut seen = 0.0;
        let mut sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let progress_frac = step as f64 / total_steps as f64;
            let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress_frac).cos());
            opt.learning_rate = cfg.learning_rate
                * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cosine);
            let (objective, mean_loss) = batch_gradient(&net, &batch, cfg, &mut grads);
            if !objective.is_finite() || !mean_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: bi,
                    loss: objective,
                });
            }
            opt.step(net.params_mut(), &grads);
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step: bi,
                    loss: f64::NAN,
                });
            }
            sum += mean_loss * batch.len() as f64;
            seen += batch.len() as f64;
            step += 1;
        }
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate(&net, validation, cfg.beta)?)
        };
        let entry = EpochLoss {
            epoch,
            train_loss: sum / seen,
            val_loss,
        };
        progress(&entry);
        curve.push(entry);
    }
    Ok(TrainOutcome { net, curve })
}

/// Writes the parameter gradient of the TV-weighted batch objective into
/// `grads`. Returns `(objective, unweighted mean per-sample loss)`.
fn batch_gradient<T: Real>(
    net: &Net<T>,
    batch: &[&Sample],
    cfg: &TrainConfig,
    grads: &mut [T],
) -> (f64, f64) {
    let inputs: Vec<&LocalGrid> = batch.iter().map(|s| &s.input).collect();
    let labels: Vec<&LocalGrid> = batch.iter().map(|s| &s.label).collect();
    let weights = tv_weights(&labels, cfg.tv_epsilon);
    let tape = net.forward(&encode_inputs(&inputs), batch.len());
    let cells = tape.cells();
    let n = cells / batch.len();
    let mut dout = vec![T::zero(); tape.out.len()];
    let mut gm = vec![0.0; n];
    let mut glv = vec![0.0; n];
    let mut objective = 0.0;
    let mut mean_loss = 0.0;
    for (k, s) in batch.iter().enumerate() {
        let (mean, lv) = decode(&tape.out, cells, k, n, &s.input);
        let loss = beta_nll_cells(
            &mean,
            &lv,
            s.label.elevations(),
            s.label.valid(),
            cfg.beta,
            weights[k],
            &mut gm,
            &mut glv,
        );
        objective += weights[k] * loss;
        mean_loss += loss;
        for i in 0..n {
            let raw = tape.out[RAW * cells + k * n + i].f64();
            let g = gate_value(tape.out[GATE * cells + k * n + i].f64(), s.input.valid()[i]);
            let x = s.input.elevations()[i];
            dout[RAW * cells + k * n + i] = T::of(g * gm[i]);
            dout[GATE * cells + k * n + i] = T::of((raw - x) * gm[i] * g * (1.0 - g));
            let slope = head_log_variance(tape.out[LOGVAR * cells + k * n + i].f64()).1;
            dout[LOGVAR * cells + k * n + i] = T::of(glv[i] * slope);
        }
    }
    grads.iter_mut().for_each(|g| *g = T::zero());
    net.backward_into(&tape, &dout, grads);
    (objective, mean_loss / batch.len() as f64)
}

/// Mean per-sample beta-NLL of the network over `samples`.
pub fn evaluate<T: Real>(net: &Net<T>, samples: &[Sample], beta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(64) {
        let inputs: Vec<&LocalGrid> = chunk.iter().map(|s| &s.input).collect();
        for (est, s) in predict_batch(net, &inputs)?.iter().zip(chunk) {
            total += beta_nll(est, &s.label, beta)?.loss;
        }
    }
    Ok(total / samples.len() as f64)
}

/// Mean per-sample beta-NLL of [`baseline_predict`] over `samples`.
pub fn evaluate_baseline(samples: &[Sample], beta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        total += beta_nll(&baseline_predict(&s.input), &s.label, beta)?.loss;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RobotProfile;
    use rand::Rng;

    fn grid(rows: usize, cols: usize, cells: &[Option<f64>]) -> LocalGrid {
        LocalGrid::from_cells(GridGeometry::new(rows, cols, 0.04, (0.0, 0.0)), cells).unwrap()
    }

    #[test]
    fn perfect_unit_variance_prediction_has_zero_loss() {
        let label = grid(2, 2, &[Some(0.1), Some(-0.2), Some(0.3), Some(0.0)]);
        let est = ElevationEstimate::new(2, 2, label.elevations().to_vec(), vec![0.0; 4]).unwrap();
        assert_eq!(beta_nll(&est, &label, 0.5).unwrap().loss, 0.0);
    }

    #[test]
    fn unit_log_variance_gives_half() {
        let label = grid(2, 2, &[Some(0.1); 4]);
        let est = ElevationEstimate::new(2, 2, vec![0.1; 4], vec![1.0; 4]).unwrap();
        assert!((beta_nll(&est, &label, 0.0).unwrap().loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_label_cells_are_masked() {
        let label = grid(1, 2, &[Some(0.0), None]);
        let est = ElevationEstimate::new(1, 2, vec![0.0, 100.0], vec![0.0, 0.0]).unwrap();
        let out = beta_nll(&est, &label, 0.5).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad_mean[1], 0.0);
    }

    #[test]
    fn loss_shape_mismatch() {
        let label = grid(2, 2, &[Some(0.0); 4]);
        let est = ElevationEstimate::new(1, 4, vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert!(matches!(
            beta_nll(&est, &label, 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn log_variance_is_clamped() {
        let est = ElevationEstimate::new(1, 2, vec![0.0; 2], vec![-50.0, 50.0]).unwrap();
        assert_eq!(est.log_variance(), &[LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]);
        assert!((est.variance(0) - 1e-4).abs() < 1e-16);
        assert!((est.variance(1) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn tv_hand_case() {
        let y = grid(2, 2, &[Some(0.0), Some(1.0), Some(0.0), Some(1.0)]);
        assert!((total_variation(&y) - 0.5).abs() < 1e-12);
        let w = tv_weights(&[&y, &y], 1e-9);
        assert_eq!(w[0], w[1]);
        let flat = grid(2, 2, &[Some(0.3); 4]);
        assert_eq!(tv_weights(&[&flat, &flat], 1e-6), vec![0.0, 0.0]);
    }

    #[test]
    fn baseline_full_input_passes_through() {
        let input = grid(
            2,
            3,
            &[
                Some(0.1),
                Some(0.2),
                Some(0.3),
                Some(0.4),
                Some(0.5),
                Some(0.6),
            ],
        );
        let est = baseline_predict(&input);
        assert_eq!(est.mean(), input.elevations());
        assert!(est.variances().iter().all(|v| (v - 0.01).abs() < 1e-12));
    }

    #[test]
    fn baseline_all_invalid() {
        let est = baseline_predict(&grid(3, 3, &[None; 9]));
        assert!(est.mean().iter().all(|m| *m == 0.0));
        assert!(est.variances().iter().all(|v| (v - 25.0).abs() < 1e-9));
    }

    #[test]
    fn baseline_single_cell_fills_everything() {
        let mut cells = vec![None; 25];
        cells[7] = Some(-0.42);
        let est = baseline_predict(&grid(5, 5, &cells));
        assert!(est.mean().iter().all(|m| *m == -0.42));
        // Variance grows with distance.
        assert!(est.variance(7) < est.variance(8));
        assert!(est.variance(8) < est.variance(24));
    }

    fn tiny_net(gate: f64) -> GatedNet {
        let mut net = GatedNet::init(
            NetConfig {
                c1: 2,
                c2: 2,
                c3: 2,
                ..NetConfig::new(5, 4)
            },
            &mut stream(1, 1),
        )
        .unwrap();
        net.set_head_constant(0.75, gate, head_log_variance_logit(-2.0));
        net
    }

    fn rough(rows: usize, cols: usize, seed: u64) -> LocalGrid {
        let mut r = stream(seed, 2);
        let cells: Vec<Option<f64>> = (0..rows * cols)
            .map(|_| r.gen_bool(0.8).then(|| r.gen_range(-0.8..0.3)))
            .collect();
        grid(rows, cols, &cells)
    }

    #[test]
    fn closed_gate_returns_input_where_observed() {
        let input = rough(5, 4, 3);
        let est = predict(&tiny_net(-1e4), &input).unwrap();
        assert!(input.valid().iter().any(|v| !v));
        for i in 0..input.elevations().len() {
            let expect = if input.valid()[i] {
                input.elevations()[i]
            } else {
                0.75
            };
            assert_eq!(est.mean()[i], expect);
        }
    }

    #[test]
    fn open_gate_returns_raw() {
        let est = predict(&tiny_net(1e4), &rough(5, 4, 4)).unwrap();
        assert!(est.mean().iter().all(|m| *m == 0.75));
        assert!(est.log_variance().iter().all(|v| (*v + 2.0).abs() < 1e-5));
    }

    #[test]
    fn predict_rejects_wrong_shape() {
        let err = predict(&tiny_net(0.0), &rough(4, 4, 5)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn predict_is_deterministic() {
        let net = GatedNet::init(NetConfig::new(31, 31), &mut stream(2, 2)).unwrap();
        let input = rough(31, 31, 6);
        assert_eq!(
            predict(&net, &input).unwrap(),
            predict(&net, &input).unwrap()
        );
    }

    fn toy_samples(count: usize, seed: u64) -> Vec<Sample> {
        (0..count)
            .map(|k| {
                let label = rough(8, 8, seed + k as u64);
                let mut input = label.clone();
                for i in (0..64).step_by(5) {
                    input.set_index(i, None);
                }
                Sample { input, label }
            })
            .collect()
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            batch_size: 1,
            channels: (4, 4, 4),
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_sample_overfits() {
        let data = toy_samples(1, 10);
        let cfg = toy_cfg();
        let init = GatedNet::init(
            NetConfig {
                c1: 4,
                c2: 4,
                c3: 4,
                ..NetConfig::new(8, 8)
            },
            &mut stream(cfg.seed, 0x7261_696e),
        )
        .unwrap();
        let before = evaluate(&init, &data, 0.5).unwrap();
        let out = train(&data, &[], &cfg).unwrap();
        let after = evaluate(&out.net, &data, 0.5).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert_eq!(out.curve.len(), 60);
        assert!(out.curve.iter().all(|e| e.val_loss.is_none()));
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_samples(4, 20);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..toy_cfg()
        };
        let a = train(&data, &data[..1], &cfg).unwrap();
        let b = train(&data, &data[..1], &cfg).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train(&[], &[], &toy_cfg()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy_samples(2, 30);
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            grad_clip: f64::INFINITY,
            epochs: 2,
            ..toy_cfg()
        };
        assert!(matches!(
            train(&data, &[], &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn profile_grids_fit_the_net() {
        for p in RobotProfile::ALL {
            let g = GridGeometry::local_for(p);
            let net = GatedNet::init(NetConfig::new(g.rows, g.cols), &mut stream(0, 0)).unwrap();
            let est = predict(&net, &LocalGrid::empty(g)).unwrap();
            assert_eq!(est.shape(), g.shape());
        }
    }

    #[test]
    fn head_log_variance_is_bounded_and_invertible() {
        for z in [-1e3, -5.0, 0.0, 2.5, 1e3] {
            let (lv, d) = head_log_variance(z);
            assert!((LOG_VARIANCE_MIN..=LOG_VARIANCE_MAX).contains(&lv));
            let h = 1e-6;
            let fd = (head_log_variance(z + h).0 - head_log_variance(z - h).0) / (2.0 * h);
            assert!((fd - d).abs() < 1e-6);
        }
        for lv in [-8.0, -2.0, 0.0, 3.0] {
            assert!((head_log_variance(head_log_variance_logit(lv)).0 - lv).abs() < 1e-9);
        }
    }
}
