use super::{AnnConfig, AnnError, AnnModel, Sample, Scaler};

/// Full-batch gradient descent with a fixed learning rate.
///
/// The input scaler is fit on `train_set` only. Descent runs on a z-scored
/// target; the target mean and std are folded into the output layer once
/// training ends, so the returned model emits native units.
/// `training_history[0]` is the MSE (native units) of the initial weights and
/// entry `e` is the MSE after `e` epochs. Training stops early once the best
/// MSE has improved by less than `early_stop.min_delta` across the last
/// `early_stop.window` epochs.
///
/// The returned weights are those with the lowest training MSE seen, not the
/// last ones: at larger learning rates the loss can settle, then spike when
/// the step outgrows the sharpening curvature, and the last epoch may sit on
/// such a spike.
pub fn train(config: &AnnConfig, train_set: &[Sample]) -> Result<AnnModel, AnnError> {
    if train_set.is_empty() {
        return Err(AnnError::EmptyDataset);
    }
    let mut model = AnnModel::init(config.clone(), config.seed)?;
    for s in train_set {
        if s.inputs.len() != config.n_inputs {
            return Err(AnnError::ArityMismatch {
                expected: config.n_inputs,
                got: s.inputs.len(),
            });
        }
    }
    model.input_scaler = Scaler::fit(train_set, config.n_inputs);
    let xs: Vec<Vec<f64>> = train_set.iter().map(|s| model.input_scaler.apply(&s.inputs)).collect();
    let (t_mean, t_std) = target_moments(train_set);
    let ts: Vec<f64> = train_set.iter().map(|s| (s.target - t_mean) / t_std).collect();
    let to_native = t_std * t_std;

    let window = config.early_stop.window;
    let mut history = Vec::with_capacity(config.max_epochs + 1);
    let mut best_so_far: Vec<f64> = Vec::with_capacity(config.max_epochs + 1);
    let mut best = f64::INFINITY;
    let mut best_weights = (model.w_hidden.clone(), model.w_out.clone());

    for epoch in 0..=config.max_epochs {
        let (grad, scaled_mse) = model.gradient_scaled(&xs, &ts);
        let mse = scaled_mse * to_native;
        if !mse.is_finite() {
            return Err(AnnError::DivergenceDetected { epoch });
        }
        history.push(mse);
        if mse < best {
            best = mse;
            best_weights.0.clone_from(&model.w_hidden);
            best_weights.1.clone_from(&model.w_out);
        }
        best_so_far.push(best);
        if epoch == config.max_epochs {
            break;
        }
        if window > 0 && epoch >= window && best_so_far[epoch - window] - best < config.early_stop.min_delta {
            break;
        }
        model.apply_step(&grad, config.learning_rate);
    }

    (model.w_hidden, model.w_out) = best_weights;
    // y = mean + std * (w . h + b)
    model.w_out.iter_mut().for_each(|w| *w *= t_std);
    let nh = config.n_hidden;
    model.w_out[nh] += t_mean;
    if model.w_out.iter().any(|w| !w.is_finite()) {
        return Err(AnnError::DivergenceDetected { epoch: history.len() - 1 });
    }

    let first = history[0];
    let last = *history.last().expect("at least one epoch recorded");
    if last > first {
        // the returned (best) weights are never worse than the initial ones,
        // but a run that ends above where it began did not converge
        tracing::warn!(first, last, "training ended above its initial mse");
        model.warning = Some(format!(
            "non-convergence: final epoch mse {last:.6e} exceeds initial mse {first:.6e}"
        ));
    }
    model.training_history = history;
    Ok(model)
}

fn target_moments(rows: &[Sample]) -> (f64, f64) {
    let m = rows.len() as f64;
    let mean = rows.iter().map(|s| s.target).sum::<f64>() / m;
    let var = rows.iter().map(|s| (s.target - mean).powi(2)).sum::<f64>() / m;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}
