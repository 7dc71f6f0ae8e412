//! Built-in reference classifier: six colour/texture features fed through a
//! logistic model whose weights were fitted once on phantom patches and then
//! frozen here.

use crate::augment::rgb_to_hsv;
use crate::error::{Error, Result};
use crate::raster::{luminance, RgbBlock};

pub const FEATURE_DIM: usize = 6;

/// Version tag of the frozen weights below.
pub const WEIGHTS_VERSION: &str = "phantom-v1";

/// Order: mean R, mean G, mean B, luminance variance, gradient energy,
/// saturation mean.
pub const FROZEN_WEIGHTS: [f64; FEATURE_DIM] = [
    0.2806996200055456,
    -9.546323868170658,
    2.200526629224062,
    71.89172833608559,
    387.87281240992803,
    22.06783436281968,
];
pub const FROZEN_BIAS: f64 = -7.607680509771045;

/// Hand-crafted features of an RGB patch:
///
/// 0..3. mean R, G, B over 255
/// 3. variance of luminance / 255
/// 4. mean squared forward difference of luminance / 255 (both axes)
/// 5. mean HSV saturation
pub fn patch_features(img: &RgbBlock) -> [f64; FEATURE_DIM] {
    let (w, h) = img.dimensions();
    let n = f64::from(w) * f64::from(h);
    let lum: Vec<f64> = img.pixels().map(|p| luminance(p.0) / 255.0).collect();

    let mut sums = [0.0f64; 3];
    let mut sat = 0.0;
    for p in img.pixels() {
        for (s, &c) in sums.iter_mut().zip(&p.0) {
            *s += f64::from(c);
        }
        sat += rgb_to_hsv(p.0).1;
    }

    let mean_l = lum.iter().sum::<f64>() / n;
    let var_l = lum.iter().map(|l| (l - mean_l).powi(2)).sum::<f64>() / n;

    let (w, h) = (w as usize, h as usize);
    let mut grad = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = lum[y * w + x];
            if x + 1 < w {
                grad += (lum[y * w + x + 1] - v).powi(2);
            }
            if y + 1 < h {
                grad += (lum[(y + 1) * w + x] - v).powi(2);
            }
        }
    }

    [
        sums[0] / (255.0 * n),
        sums[1] / (255.0 * n),
        sums[2] / (255.0 * n),
        var_l,
        grad / n,
        sat / n,
    ]
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `logistic(weights . features + bias)`.
pub fn heuristic_probability(features: &[f64], weights: &[f64], bias: f64) -> Result<f64> {
    if features.len() != weights.len() {
        return Err(Error::Input(format!(
            "{} features against {} weights",
            features.len(),
            weights.len()
        )));
    }
    if !bias.is_finite() || features.iter().chain(weights).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite heuristic input".into()));
    }
    let z = features.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>() + bias;
    Ok(logistic(z))
}

/// Probability from the frozen weights.
pub fn classify_patch(img: &RgbBlock) -> f64 {
    heuristic_probability(&patch_features(img), &FROZEN_WEIGHTS, FROZEN_BIAS)
        .expect("features are finite")
}

/// L2-regularised logistic regression by full-batch gradient descent on
/// standardised features; returns weights and bias in raw feature units.
/// Targets may be soft (any value in [0,1]). Deterministic. This is how the
/// frozen constants were produced.
pub fn fit_logistic(samples: &[([f64; FEATURE_DIM], f64)], iterations: usize, learning_rate: f64, l2: f64) -> ([f64; FEATURE_DIM], f64) {
    assert!(!samples.is_empty(), "no samples to fit");
    let n = samples.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for (f, _) in samples {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut sd = [0.0; FEATURE_DIM];
    for (f, _) in samples {
        for k in 0..FEATURE_DIM {
            sd[k] += (f[k] - mean[k]).powi(2) / n;
        }
    }
    let sd = sd.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let z: Vec<([f64; FEATURE_DIM], f64)> = samples
        .iter()
        .map(|(f, y)| {
            let mut s = [0.0; FEATURE_DIM];
            for k in 0..FEATURE_DIM {
                s[k] = (f[k] - mean[k]) / sd[k];
            }
            (s, y.clamp(0.0, 1.0))
        })
        .collect();

    let mut w = [0.0; FEATURE_DIM];
    let mut b = 0.0;
    for _ in 0..iterations {
        let mut gw = [0.0; FEATURE_DIM];
        let mut gb = 0.0;
        for (x, y) in &z {
            let p = logistic(x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b);
            let e = p - y;
            for k in 0..FEATURE_DIM {
                gw[k] += e * x[k] / n;
            }
            gb += e / n;
        }
        for k in 0..FEATURE_DIM {
            w[k] -= learning_rate * (gw[k] + l2 * w[k]);
        }
        b -= learning_rate * gb;
    }

    let mut raw_w = [0.0; FEATURE_DIM];
    let mut raw_b = b;
    for k in 0..FEATURE_DIM {
        raw_w[k] = w[k] / sd[k];
        raw_b -= w[k] * mean[k] / sd[k];
    }
    (raw_w, raw_b)
}
