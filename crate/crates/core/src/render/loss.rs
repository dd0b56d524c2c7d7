/// Mean over rays of the squared RGB error.
pub fn photometric_loss<T: crate::Real>(rendered: &[[T; 3]], target: &[[T; 3]]) -> T {
    assert_eq!(rendered.len(), target.len(), "batch sizes differ");
    if rendered.is_empty() {
        return T::zero();
    }
    let sum: T = rendered
        .iter()
        .zip(target)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<T>())
        .sum();
    sum / T::from_usize_lossy(rendered.len())
}

/// `∂L/∂C` for one ray of a batch of `batch` rays.
#[inline]
pub fn photometric_loss_grad<T: crate::Real>(rendered: [T; 3], target: [T; 3], batch: usize) -> [T; 3] {
    let s = T::two() / T::from_usize_lossy(batch);
    [(rendered[0] - target[0]) * s, (rendered[1] - target[1]) * s, (rendered[2] - target[2]) * s]
}
