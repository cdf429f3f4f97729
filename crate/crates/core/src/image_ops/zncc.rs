use super::ImageError;

/// Zero-mean normalized cross-correlation over the entries where `mask` is
/// set (all entries when `mask` is `None`).
pub fn zncc(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> Result<f64, ImageError> {
    if a.len() != b.len() {
        return Err(ImageError::LengthMismatch(a.len(), b.len()));
    }
    if let Some(m) = mask {
        if m.len() != a.len() {
            return Err(ImageError::LengthMismatch(a.len(), m.len()));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let mut n = 0usize;
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in (0..a.len()).filter(|&i| keep(i)) {
        n += 1;
        sa += a[i];
        sb += b[i];
    }
    if n < 2 {
        return Err(ImageError::UndefinedCorrelation);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in (0..a.len()).filter(|&i| keep(i)) {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    // Relative guard: a flat signal leaves only rounding noise in the sums.
    let flat = |var: f64, mean: f64| var <= 1e-20 * n as f64 * (1.0 + mean * mean);
    if flat(va, ma) || flat(vb, mb) {
        return Err(ImageError::UndefinedCorrelation);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}
