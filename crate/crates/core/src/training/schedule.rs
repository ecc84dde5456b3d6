use std::f64::consts::PI;

/// Linear warmup from 0 to `base_lr` over `warmup` epochs, then cosine decay
/// to 0 at `epochs`. `epoch` may be fractional and is clamped to
/// `[0, epochs]`.
pub fn lr_at(epoch: f64, base_lr: f64, warmup: f64, epochs: f64) -> f64 {
    let e = epoch.clamp(0.0, epochs);
    if e < warmup {
        base_lr * e / warmup
    } else {
        let span = epochs - warmup;
        if span <= 0.0 {
            return base_lr;
        }
        base_lr * 0.5 * (1.0 + (PI * (e - warmup) / span).cos())
    }
}
