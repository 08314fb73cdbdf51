//! Column statistics shared across modules. Variances are population variances (divide by n).

use ndarray::{ArrayView1, ArrayView2, Axis};

pub fn mean(x: ArrayView1<'_, f64>) -> f64 {
    x.sum() / x.len() as f64
}

pub fn variance(x: ArrayView1<'_, f64>) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Pearson correlation. Returns `None` when either input is constant.
pub fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if is_flat(a, saa) || is_flat(b, sbb) {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

// sum of squared deviations indistinguishable from rounding noise
fn is_flat(x: ArrayView1<'_, f64>, ss: f64) -> bool {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ss == 0.0 || ss <= x.len() as f64 * (1e-13 * scale).powi(2)
}

/// Column-wise Pearson correlation; constant columns yield `None`.
pub fn column_pearson(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Vec<Option<f64>> {
    a.axis_iter(Axis(1))
        .zip(b.axis_iter(Axis(1)))
        .map(|(x, y)| pearson(x, y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn pearson_basics() {
        let a = arr1(&[1.0, 2.0, 3.0, 4.0]);
        let b = arr1(&[2.0, 4.0, 6.0, 8.5]);
        assert!(pearson(a.view(), b.view()).unwrap() > 0.99);
        assert!((pearson(a.view(), (-&a).view()).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(a.view(), arr1(&[3.0; 4]).view()).is_none());
        assert_eq!(variance(arr1(&[1.0, 2.0, 3.0]).view()), 2.0 / 3.0);
    }
}
