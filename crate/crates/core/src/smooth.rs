//! Action-chunk smoothing and frequency-aware interpolation.
//!
//! Chunks are upsampled to twice their temporal resolution, smoothed with a
//! Savitzky-Golay filter, and downsampled back; afterwards the sequence is
//! interpolated by the ratio between the model action frequency and the
//! low-level control frequency so the predicted velocity profile survives
//! execution.

use crate::chunk::{ActionChunk, ACTION_DIM};
use crate::error::{Error, Result};

/// Savitzky-Golay window/order pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SavGolConfig {
    /// Odd, ≥ 3.
    pub window: usize,
    /// ≥ 0, < window.
    pub polyorder: usize,
}

impl Default for SavGolConfig {
    fn default() -> Self {
        // Smallest config that attenuates jitter without flattening grasps.
        Self {
            window: 5,
            polyorder: 2,
        }
    }
}

impl SavGolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::invalid(format!(
                "savgol window must be odd and ≥ 3, got {}",
                self.window
            )));
        }
        if self.polyorder >= self.window {
            return Err(Error::invalid(format!(
                "savgol polyorder must be < window, got {} ≥ {}",
                self.polyorder, self.window
            )));
        }
        Ok(())
    }
}

/// Least-squares polynomial filter weights evaluated at offset `tau` from
/// the window center. `tau = 0` is the classic smoothing filter.
///
/// Weights come from fitting a degree-`polyorder` polynomial over the
/// window offsets `-h..=h` and evaluating the fit at `tau`; the math is the
/// normal-equation solve, small enough to do directly.
pub fn savgol_weights_at(window: usize, polyorder: usize, tau: f64) -> Result<Vec<f64>> {
    SavGolConfig { window, polyorder }.validate()?;
    let h = (window / 2) as i64;
    let n = polyorder + 1;

    // Gram matrix G[r][c] = Σ_j j^(r+c) over the window offsets.
    let mut moments = vec![0.0f64; 2 * n];
    for j in -h..=h {
        let mut p = 1.0;
        for m in moments.iter_mut() {
            *m += p;
            p *= j as f64;
        }
    }
    let mut g = vec![vec![0.0f64; n]; n];
    for r in 0..n {
        for c in 0..n {
            g[r][c] = moments[r + c];
        }
    }
    // Right-hand side: powers of the evaluation offset.
    let mut rhs = vec![0.0f64; n];
    let mut p = 1.0;
    for r in rhs.iter_mut() {
        *r = p;
        p *= tau;
    }
    let coeffs = solve_dense(&mut g, &mut rhs)?;

    // Weight for offset j is the fitted value of the j-th unit impulse.
    let mut weights = Vec::with_capacity(window);
    for j in -h..=h {
        let mut w = 0.0;
        let mut p = 1.0;
        for c in &coeffs {
            w += c * p;
            p *= j as f64;
        }
        weights.push(w);
    }
    Ok(weights)
}

/// Smoothing weights of the least-squares fit evaluated at the center.
/// They sum to 1 within 1e-12.
pub fn savgol_coefficients(window: usize, polyorder: usize) -> Result<Vec<f64>> {
    savgol_weights_at(window, polyorder, 0.0)
}

/// Gaussian elimination with partial pivoting; `a` and `b` are clobbered.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::invalid("singular normal equations"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Mirror index without repeating the edge sample (…, 2, 1, 0, 1, 2, …).
fn mirror(i: i64, len: usize) -> usize {
    let n = len as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Double the temporal resolution with linear midpoints: `2H-1` samples,
/// original samples stay on-grid, `model_hz` doubles.
pub fn upsample_2x(chunk: &ActionChunk) -> Result<ActionChunk> {
    let h = chunk.horizon();
    if h < 2 {
        return Err(Error::invalid(format!(
            "upsample_2x needs at least 2 actions, got {h}"
        )));
    }
    let mut out = Vec::with_capacity(2 * h - 1);
    for i in 0..h {
        out.push(chunk.actions[i]);
        if i + 1 < h {
            let mut mid = [0.0; ACTION_DIM];
            for d in 0..ACTION_DIM {
                mid[d] = 0.5 * (chunk.actions[i][d] + chunk.actions[i + 1][d]);
            }
            out.push(mid);
        }
    }
    ActionChunk::new(out, chunk.model_hz * 2.0)
}

/// Upsample → Savitzky-Golay → downsample, per dimension, mirror-padded.
///
/// Midpoints are produced by the same least-squares fit evaluated at the
/// half-step (exact for polynomials up to `polyorder`, unlike a linear
/// midpoint), so the round trip preserves every polynomial sequence of
/// degree ≤ `polyorder` away from the borders.
///
/// Returns the smoothed chunk and whether smoothing was applied; a chunk
/// too short for the window is returned unchanged with `false`.
pub fn smooth_chunk(chunk: &ActionChunk, cfg: &SavGolConfig) -> Result<(ActionChunk, bool)> {
    cfg.validate()?;
    let h = chunk.horizon();
    if 2 * h.saturating_sub(1) + 1 <= cfg.window {
        // 2H-1 < window: too short to smooth.
        return Ok((chunk.clone(), false));
    }

    let center = savgol_weights_at(cfg.window, cfg.polyorder, 0.0)?;
    let halfstep = savgol_weights_at(cfg.window, cfg.polyorder, 0.5)?;
    let half = (cfg.window / 2) as i64;

    let mut out = vec![[0.0; ACTION_DIM]; h];
    let mut col = vec![0.0f64; h];
    let mut up = vec![0.0f64; 2 * h - 1];
    for d in 0..ACTION_DIM {
        for i in 0..h {
            col[i] = chunk.actions[i][d];
        }
        // Least-squares midpoints on the original grid.
        for i in 0..h {
            up[2 * i] = col[i];
        }
        for i in 0..h - 1 {
            let mut v = 0.0;
            for (k, w) in halfstep.iter().enumerate() {
                v += w * col[mirror(i as i64 + k as i64 - half, h)];
            }
            up[2 * i + 1] = v;
        }
        // Smooth on the doubled grid, sample back the original positions.
        let m = up.len();
        for i in 0..h {
            let c = 2 * i as i64;
            let mut v = 0.0;
            for (k, w) in center.iter().enumerate() {
                v += w * up[mirror(c + k as i64 - half, m)];
            }
            out[i][d] = v;
        }
    }
    Ok((ActionChunk::new(out, chunk.model_hz)?, true))
}

/// Resample a chunk onto the control-frequency grid by linear
/// interpolation. Output length is `round(H · control_hz / model_hz)`;
/// first and last actions are preserved exactly.
pub fn freq_interpolate(chunk: &ActionChunk, control_hz: f64) -> Result<ActionChunk> {
    if !(control_hz > 0.0) {
        return Err(Error::invalid(format!(
            "control_hz must be > 0, got {control_hz}"
        )));
    }
    let h = chunk.horizon();
    let m = ((h as f64) * control_hz / chunk.model_hz).round().max(1.0) as usize;
    if m == h && (control_hz - chunk.model_hz).abs() < 1e-12 {
        return ActionChunk::new(chunk.actions.clone(), control_hz);
    }
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let t = if m > 1 {
            k as f64 * (h - 1) as f64 / (m - 1) as f64
        } else {
            0.0
        };
        let i = (t.floor() as usize).min(h - 1);
        let frac = t - i as f64;
        let mut a = [0.0; ACTION_DIM];
        if frac.abs() < 1e-12 || i + 1 >= h {
            a = chunk.actions[i];
        } else {
            for d in 0..ACTION_DIM {
                a[d] = (1.0 - frac) * chunk.actions[i][d] + frac * chunk.actions[i + 1][d];
            }
        }
        out.push(a);
    }
    ActionChunk::new(out, control_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn chunk_of(cols: &[Vec<f64>], hz: f64) -> ActionChunk {
        // cols[d][i]: one column per dimension, same value pattern per dim
        // unless fewer than 10 provided (remaining dims zero).
        let h = cols[0].len();
        let mut actions = vec![[0.0; ACTION_DIM]; h];
        for (d, col) in cols.iter().enumerate() {
            for i in 0..h {
                actions[i][d] = col[i];
            }
        }
        ActionChunk::new(actions, hz).unwrap()
    }

    fn ramp_chunk(h: usize, hz: f64) -> ActionChunk {
        let col: Vec<f64> = (0..h).map(|i| 0.5 * i as f64 - 1.0).collect();
        chunk_of(&[col], hz)
    }

    // --- independent Savitzky-Golay oracle via Gram polynomials ---------

    fn gram_poly(i: i64, m: i64, k: i64, s: i64) -> f64 {
        if k > 0 {
            (4.0 * k as f64 - 2.0) / (k as f64 * (2.0 * m as f64 - k as f64 + 1.0))
                * (i as f64 * gram_poly(i, m, k - 1, s) + s as f64 * gram_poly(i, m, k - 1, s - 1))
                - ((k as f64 - 1.0) * (2.0 * m as f64 + k as f64))
                    / (k as f64 * (2.0 * m as f64 - k as f64 + 1.0))
                    * gram_poly(i, m, k - 2, s)
        } else if k == 0 && s == 0 {
            1.0
        } else {
            0.0
        }
    }

    fn gen_fact(a: i64, b: i64) -> f64 {
        let mut gf = 1.0;
        for j in (a - b + 1)..=a {
            gf *= j as f64;
        }
        gf
    }

    fn gram_weight(i: i64, t: i64, m: i64, n: i64) -> f64 {
        let mut w = 0.0;
        for k in 0..=n {
            w += (2.0 * k as f64 + 1.0) * (gen_fact(2 * m, k) / gen_fact(2 * m + k + 1, k + 1))
                * gram_poly(i, m, k, 0)
                * gram_poly(t, m, k, 0);
        }
        w
    }

    #[test]
    fn window3_order2_is_interpolating() {
        let w = savgol_coefficients(3, 2).unwrap();
        for (a, b) in w.iter().zip([0.0, 1.0, 0.0].iter()) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn window5_order2_matches_known_fraction() {
        let w = savgol_coefficients(5, 2).unwrap();
        let expect = [-3.0 / 35.0, 12.0 / 35.0, 17.0 / 35.0, 12.0 / 35.0, -3.0 / 35.0];
        for (a, b) in w.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn weights_match_gram_polynomial_oracle() {
        for (window, polyorder) in [(5usize, 2usize), (7, 2), (7, 3), (9, 4), (11, 3)] {
            let w = savgol_coefficients(window, polyorder).unwrap();
            let m = (window / 2) as i64;
            for (idx, wv) in w.iter().enumerate() {
                let oracle = gram_weight(idx as i64 - m, 0, m, polyorder as i64);
                assert!(
                    (wv - oracle).abs() < 1e-10,
                    "window={window} order={polyorder} idx={idx}: {wv} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for (window, polyorder) in [(3usize, 0usize), (5, 2), (7, 4), (9, 2), (15, 6)] {
            let w = savgol_coefficients(window, polyorder).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "{window}/{polyorder}: {sum}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(savgol_coefficients(4, 2).is_err());
        assert!(savgol_coefficients(1, 0).is_err());
        assert!(savgol_coefficients(5, 5).is_err());
    }

    #[test]
    fn upsample_two_points() {
        let chunk = chunk_of(&[vec![1.0, 3.0]], 10.0);
        let up = upsample_2x(&chunk).unwrap();
        assert_eq!(up.horizon(), 3);
        assert_eq!(up.model_hz, 20.0);
        assert_eq!(up.actions[0][0], 1.0);
        assert_eq!(up.actions[1][0], 2.0);
        assert_eq!(up.actions[2][0], 3.0);
    }

    #[test]
    fn upsample_constant_and_ramp() {
        let constant = chunk_of(&[vec![2.5; 6]], 10.0);
        let up = upsample_2x(&constant).unwrap();
        assert_eq!(up.horizon(), 11);
        assert!(up.actions.iter().all(|a| a[0] == 2.5));

        let ramp = ramp_chunk(8, 10.0);
        let up = upsample_2x(&ramp).unwrap();
        // Affine sequences stay affine with the same endpoints.
        assert_eq!(up.actions[0][0], ramp.actions[0][0]);
        assert_eq!(up.actions[14][0], ramp.actions[7][0]);
        for i in 0..up.horizon() {
            let expect = ramp.actions[0][0] + 0.25 * i as f64;
            assert!((up.actions[i][0] - expect).abs() < 1e-12);
        }
        assert!(upsample_2x(&chunk_of(&[vec![1.0]], 10.0)).is_err());
    }

    #[test]
    fn smooth_constant_is_identity() {
        let chunk = chunk_of(&[vec![0.75; 9]], 10.0);
        let (out, applied) = smooth_chunk(&chunk, &SavGolConfig::default()).unwrap();
        assert!(applied);
        for a in &out.actions {
            assert!((a[0] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_preserves_linear_ramp_on_interior() {
        let cfg = SavGolConfig::default();
        let chunk = ramp_chunk(16, 10.0);
        let (out, applied) = smooth_chunk(&chunk, &cfg).unwrap();
        assert!(applied);
        // Interior: far enough in that neither the smoothing window nor
        // the midpoint fits reach the mirror padding.
        for i in cfg.window..16 - cfg.window {
            assert!(
                (out.actions[i][0] - chunk.actions[i][0]).abs() < 1e-9,
                "interior index {i}"
            );
        }
    }

    #[test]
    fn smooth_preserves_polynomials_up_to_order() {
        for (window, polyorder) in [(5usize, 2usize), (7, 3), (9, 4)] {
            let cfg = SavGolConfig { window, polyorder };
            for degree in 0..=polyorder {
                let h = 24;
                let col: Vec<f64> = (0..h)
                    .map(|i| (0.3 * i as f64 - 2.0).powi(degree as i32))
                    .collect();
                let chunk = chunk_of(&[col.clone()], 10.0);
                let (out, _) = smooth_chunk(&chunk, &cfg).unwrap();
                let guard = window; // generous interior margin in original samples
                for i in guard..h - guard {
                    assert!(
                        (out.actions[i][0] - col[i]).abs() < 1e-9,
                        "w={window} p={polyorder} deg={degree} i={i}: {} vs {}",
                        out.actions[i][0],
                        col[i]
                    );
                }
            }
        }
    }

    #[test]
    fn smooth_matches_direct_convolution_on_interior_for_ramp() {
        // On a ramp the least-squares midpoints coincide with linear ones
        // away from the padding, so an independent direct convolution over
        // the explicit doubled grid must reproduce the pipeline there.
        let cfg = SavGolConfig::default();
        let h = 20;
        let chunk = ramp_chunk(h, 10.0);
        let up = upsample_2x(&chunk).unwrap();
        let weights = savgol_coefficients(cfg.window, cfg.polyorder).unwrap();
        let half = cfg.window / 2;
        let (out, _) = smooth_chunk(&chunk, &cfg).unwrap();
        let mut checked = 0;
        for i in cfg.window..h - cfg.window {
            let c = 2 * i;
            let mut direct = 0.0;
            for (k, w) in weights.iter().enumerate() {
                direct += w * up.actions[c + k - half][0];
            }
            assert!((out.actions[i][0] - direct).abs() < 1e-12, "index {i}");
            checked += 1;
        }
        assert!(checked >= 8);
    }

    #[test]
    fn smooth_attenuates_alternating_noise() {
        let h = 40;
        let ramp: Vec<f64> = (0..h).map(|i| 0.1 * i as f64).collect();
        let noisy: Vec<f64> = ramp
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 0.2 } else { -0.2 })
            .collect();
        let chunk = chunk_of(&[noisy.clone()], 10.0);
        let (out, _) = smooth_chunk(&chunk, &SavGolConfig::default()).unwrap();
        let energy = |xs: &[f64]| -> f64 {
            xs.iter()
                .zip(ramp.iter())
                .map(|(x, r)| (x - r).powi(2))
                .sum()
        };
        let before = energy(&noisy);
        let after = energy(&out.actions.iter().map(|a| a[0]).collect::<Vec<_>>());
        assert!(
            after < 0.5 * before,
            "noise energy not reduced: {before} -> {after}"
        );
    }

    #[test]
    fn smooth_too_short_returns_unchanged_with_flag() {
        let chunk = chunk_of(&[vec![1.0, 2.0]], 10.0);
        let (out, applied) = smooth_chunk(
            &chunk,
            &SavGolConfig {
                window: 7,
                polyorder: 2,
            },
        )
        .unwrap();
        assert!(!applied);
        assert_eq!(out, chunk);
    }

    #[test]
    fn smooth_keeps_length_and_rate() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..50 {
            let h = rng.gen_range(4..40);
            let col: Vec<f64> = (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let chunk = chunk_of(&[col], 10.0);
            let (out, _) = smooth_chunk(&chunk, &SavGolConfig::default()).unwrap();
            assert_eq!(out.horizon(), chunk.horizon());
            assert_eq!(out.model_hz, chunk.model_hz);
        }
    }

    #[test]
    fn smooth_is_dimension_wise_independent() {
        let mut rng = StdRng::seed_from_u64(32);
        let h = 20;
        let mut actions = vec![[0.0; ACTION_DIM]; h];
        for a in actions.iter_mut() {
            for v in a.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let chunk = ActionChunk::new(actions.clone(), 10.0).unwrap();
        let perm: [usize; ACTION_DIM] = [3, 1, 4, 0, 9, 5, 8, 6, 7, 2];
        let permuted = ActionChunk::new(
            actions
                .iter()
                .map(|a| std::array::from_fn(|d| a[perm[d]]))
                .collect(),
            10.0,
        )
        .unwrap();
        let cfg = SavGolConfig::default();
        let (s1, _) = smooth_chunk(&chunk, &cfg).unwrap();
        let (s2, _) = smooth_chunk(&permuted, &cfg).unwrap();
        for i in 0..h {
            for d in 0..ACTION_DIM {
                assert_eq!(s2.actions[i][d], s1.actions[i][perm[d]]);
            }
        }
    }

    #[test]
    fn interpolate_identity_at_same_rate() {
        let chunk = ramp_chunk(16, 10.0);
        let out = freq_interpolate(&chunk, 10.0).unwrap();
        assert_eq!(out, chunk);
    }

    #[test]
    fn interpolate_sixteen_at_ten_to_eighty_at_fifty() {
        let chunk = ramp_chunk(16, 10.0);
        let out = freq_interpolate(&chunk, 50.0).unwrap();
        assert_eq!(out.horizon(), 80);
        assert_eq!(out.model_hz, 50.0);
        assert_eq!(out.actions[0][0], chunk.actions[0][0]);
        assert_eq!(out.actions[79][0], chunk.actions[15][0]);
    }

    #[test]
    fn interpolate_keeps_ramps_linear() {
        let chunk = ramp_chunk(10, 8.0);
        for hz in [8.0, 12.5, 20.0, 40.0, 64.0] {
            let out = freq_interpolate(&chunk, hz).unwrap();
            let m = out.horizon();
            let a0 = out.actions[0][0];
            let a1 = out.actions[m - 1][0];
            for (k, a) in out.actions.iter().enumerate() {
                let expect = a0 + (a1 - a0) * k as f64 / (m - 1) as f64;
                assert!((a[0] - expect).abs() < 1e-9, "hz={hz} k={k}");
            }
            assert_eq!(a0, chunk.actions[0][0]);
            assert_eq!(a1, chunk.actions[9][0]);
        }
    }

    #[test]
    fn interpolate_preserves_duration_within_one_control_period() {
        let mut rng = StdRng::seed_from_u64(33);
        for _ in 0..1000 {
            let h = rng.gen_range(2..64);
            let model_hz = rng.gen_range(1.0..40.0);
            let control_hz = rng.gen_range(model_hz..200.0);
            let chunk = ramp_chunk(h, model_hz);
            let out = freq_interpolate(&chunk, control_hz).unwrap();
            let before = h as f64 / model_hz;
            let after = out.horizon() as f64 / control_hz;
            assert!(
                (before - after).abs() <= 1.0 / control_hz + 1e-12,
                "h={h} m={model_hz} c={control_hz}: {before} vs {after}"
            );
        }
    }
}
