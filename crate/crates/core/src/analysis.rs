//! Time averages, trajectory comparison and self-intersection counting.

use std::collections::HashMap;

use crate::error::{PlimError, Result};

/// `(1/t)∫₀ᵗ f` at every sample by the trapezoid rule; the first sample is `f(0)`.
pub fn running_average(times: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if times.is_empty() || times.len() != values.len() {
        return Err(PlimError::EmptySeries);
    }
    let mut out = Vec::with_capacity(values.len());
    out.push(values[0]);
    let mut integral = 0.0;
    for i in 1..times.len() {
        integral += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
        let span = times[i] - times[0];
        out.push(if span > 0.0 { integral / span } else { values[i] });
    }
    Ok(out)
}

/// Linear interpolation of `(times, values)` at `at`, clamped to the end values.
pub fn resample(times: &[f64], values: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    if times.is_empty() || times.len() != values.len() {
        return Err(PlimError::EmptySeries);
    }
    let mut out = Vec::with_capacity(at.len());
    let mut j = 0;
    for &t in at {
        if t <= times[0] {
            out.push(values[0]);
            continue;
        }
        while j + 1 < times.len() && times[j + 1] < t {
            j += 1;
        }
        if j + 1 >= times.len() {
            out.push(values[times.len() - 1]);
            continue;
        }
        let (t0, t1) = (times[j], times[j + 1]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        out.push(values[j] + w * (values[j + 1] - values[j]));
    }
    Ok(out)
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Relative L2 error of several components at once.
pub fn relative_l2_multi(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
        .sum();
    let den: f64 = b.iter().flat_map(|y| y.iter().map(|q| q * q)).sum();
    (num / den).sqrt()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Transversal crossing point of segments `pq` and `rs`, if any.
fn crossing(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> Option<[f64; 2]> {
    let d1 = cross(r, s, p);
    let d2 = cross(r, s, q);
    let d3 = cross(p, q, r);
    let d4 = cross(p, q, s);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        let t = d1 / (d1 - d2);
        Some([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])])
    } else {
        None
    }
}

/// Number of transversal self-crossings of a polyline.
pub fn self_intersections(points: &[[f64; 2]]) -> usize {
    let n_seg = points.len().saturating_sub(1);
    if n_seg < 3 {
        return 0;
    }
    let total: f64 = points
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum();
    let cell = (4.0 * total / n_seg as f64).max(1e-12);
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for i in 0..n_seg {
        let (a, b) = (points[i], points[i + 1]);
        let (x0, y0) = key(a[0].min(b[0]), a[1].min(b[1]));
        let (x1, y1) = key(a[0].max(b[0]), a[1].max(b[1]));
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                buckets.entry((cx, cy)).or_default().push(i);
            }
        }
    }
    let mut count = 0;
    for (&cell_key, segs) in &buckets {
        for (k, &i) in segs.iter().enumerate() {
            for &j in &segs[k + 1..] {
                if j <= i + 1 {
                    continue;
                }
                if let Some(x) = crossing(points[i], points[i + 1], points[j], points[j + 1]) {
                    if key(x[0], x[1]) == cell_key {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_of_constant_and_ramp() {
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let c = running_average(&t, &vec![3.0; 11]).unwrap();
        assert!(c.iter().all(|v| (v - 3.0).abs() < 1e-15));
        let r = running_average(&t, &t).unwrap();
        for (ti, ri) in t.iter().zip(&r).skip(1) {
            assert!((ri - ti / 2.0).abs() < 1e-14);
        }
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn average_of_sine_over_period() {
        let n = 10_000;
        let t: Vec<f64> = (0..=n).map(|i| i as f64 * std::f64::consts::TAU / n as f64).collect();
        let s: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        assert!(running_average(&t, &s).unwrap().last().unwrap().abs() < 1e-9);
    }

    #[test]
    fn empty_series_rejected() {
        assert!(matches!(running_average(&[], &[]), Err(PlimError::EmptySeries)));
    }

    #[test]
    fn resample_interpolates() {
        let v = resample(&[0.0, 1.0, 2.0], &[0.0, 10.0, 0.0], &[-1.0, 0.5, 1.5, 3.0]).unwrap();
        assert_eq!(v, vec![0.0, 5.0, 5.0, 0.0]);
    }

    #[test]
    fn figure_eight_crosses_once() {
        let pts: Vec<[f64; 2]> = (0..=400)
            .map(|i| {
                let t = 0.1 + i as f64 / 400.0 * 6.2;
                [t.sin(), (2.0 * t).sin() / 2.0]
            })
            .collect();
        assert_eq!(self_intersections(&pts), 1);
    }

    #[test]
    fn damped_spiral_never_crosses() {
        let pts: Vec<[f64; 2]> = (0..2000)
            .map(|i| {
                let t = i as f64 * 0.01;
                let r = (-0.1 * t).exp();
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        assert_eq!(self_intersections(&pts), 0);
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_l2(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_l2(&[0.0, 0.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
    }
}
