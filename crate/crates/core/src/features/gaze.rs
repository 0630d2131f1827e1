/// Side length of a gaze heatmap.
pub const GAZE_SIZE: usize = 64;
pub const GAZE_CELLS: usize = GAZE_SIZE * GAZE_SIZE;

/// Synthetic gaze heatmap for a target point in a `width x height` frame.
///
/// The point is mapped to grid coordinates `(x / width * 64, y / height * 64)`
/// and compared against cell centers `(c + 0.5)`. With no target the map
/// is uniform at `1 / 4096`.
pub fn synth_gaze(target: Option<(f64, f64)>, frame: (f64, f64), sigma: f64, peak: f64) -> Vec<f64> {
    let Some((x, y)) = target else {
        return vec![1.0 / GAZE_CELLS as f64; GAZE_CELLS];
    };
    let gx = x / frame.0 * GAZE_SIZE as f64;
    let gy = y / frame.1 * GAZE_SIZE as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = vec![0.0; GAZE_CELLS];
    for r in 0..GAZE_SIZE {
        let dy = r as f64 + 0.5 - gy;
        for c in 0..GAZE_SIZE {
            let dx = c as f64 + 0.5 - gx;
            out[r * GAZE_SIZE + c] = peak * (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    out
}

/// Mirror a heatmap along the x axis.
pub fn mirror_gaze(map: &[f64]) -> Vec<f64> {
    map.chunks(GAZE_SIZE)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(v: &[f64]) -> (usize, usize) {
        let i = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
        (i / GAZE_SIZE, i % GAZE_SIZE)
    }

    #[test]
    fn centered_target_peaks_at_center() {
        let m = synth_gaze(Some((320.0, 240.0)), (640.0, 480.0), 3.0, 1.0);
        let (r, c) = argmax(&m);
        assert!((31..=32).contains(&r) && (31..=32).contains(&c));
    }

    #[test]
    fn absent_target_is_uniform() {
        let m = synth_gaze(None, (640.0, 480.0), 3.0, 1.0);
        assert!(m.iter().all(|v| *v == 1.0 / 4096.0));
    }

    #[test]
    fn bump_mass_matches_gaussian_integral() {
        // far from the borders the lattice sum equals 2 pi sigma^2 up to
        // terms of order exp(-2 pi^2 sigma^2)
        let m = synth_gaze(Some((320.0, 240.0)), (640.0, 480.0), 3.0, 1.0);
        let sum: f64 = m.iter().sum();
        let closed = 2.0 * std::f64::consts::PI * 9.0;
        assert!((sum - closed).abs() < 1e-6, "{sum} vs {closed}");
    }

    #[test]
    fn peak_value_on_cell_center() {
        // x = 10.5 / 64 * W lands exactly on the center of column 10
        let m = synth_gaze(Some((10.5 * 10.0, 20.5 * 10.0)), (640.0, 640.0), 3.0, 0.8);
        assert_eq!(m[20 * GAZE_SIZE + 10], 0.8);
    }

    #[test]
    fn mirroring_matches_mirrored_target() {
        let (w, h) = (640.0, 360.0);
        let m = synth_gaze(Some((100.0, 200.0)), (w, h), 3.0, 1.0);
        let flipped = synth_gaze(Some((w - 100.0, 200.0)), (w, h), 3.0, 1.0);
        for (a, b) in mirror_gaze(&m).iter().zip(&flipped) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(mirror_gaze(&mirror_gaze(&m)), m);
    }
}
