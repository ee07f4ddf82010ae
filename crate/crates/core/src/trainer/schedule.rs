use super::config::TrainConfig;

/// Linear warmup from `warmup_start_lr` to `base_lr` over the first
/// `warmup_epochs` of training, then `base_lr · decay^floor(epoch / every)`.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, config: &TrainConfig) -> f64 {
    let spe = steps_per_epoch.max(1);
    let warm = (config.warmup_epochs * spe as f64).round() as usize;
    if step < warm {
        let t = step as f64 / warm as f64;
        return config.warmup_start_lr + (config.base_lr - config.warmup_start_lr) * t;
    }
    let epoch = step / spe;
    config.base_lr
        * config
            .decay_factor
            .powi((epoch / config.decay_every) as i32)
}
