//! Single-cycle cosine annealing over epochs.

/// `lr_min + (lr0 - lr_min)(1 + cos(pi e / (E - 1))) / 2`; a one-epoch run stays at `lr0`.
pub fn lr_at(epoch: usize, epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    if epochs <= 1 {
        return lr0;
    }
    let progress = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}
