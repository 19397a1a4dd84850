//! Counter-based Gaussian increment generation.
//!
//! Every draw is a pure function of (key, counter), so the increments for
//! path p at step k are identical no matter how work is scheduled across
//! threads or how many paths run in between. This is what makes common
//! random numbers across Picard sweeps and byte-identical reruns cheap:
//! there is no generator state to save or replay.
//!
//! The block cipher is Philox 2x64 with 10 rounds; keys are derived from
//! (base seed, stream id) through splitmix64 finalizers.

const PHILOX_M: u64 = 0xD2B7_4407_B1CE_6E93;
const PHILOX_W: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let w = (a as u128) * (b as u128);
    ((w >> 64) as u64, w as u64)
}

/// Splittable counter RNG; cloning or copying is free and safe because all
/// state is the immutable key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(base_seed: u64, stream: u64) -> Self {
        CounterRng {
            key: mix64(base_seed ^ mix64(stream)),
        }
    }

    /// Derives an independent child stream, e.g. one per grid node.
    pub fn substream(&self, id: u64) -> Self {
        CounterRng {
            key: mix64(self.key ^ mix64(!id)),
        }
    }

    /// Raw Philox 2x64-10 block at counter (c0, c1).
    pub fn block(&self, c0: u64, c1: u64) -> (u64, u64) {
        let (mut x0, mut x1) = (c0, c1);
        let mut k = self.key;
        for _ in 0..10 {
            let (hi, lo) = mulhilo(PHILOX_M, x0);
            x0 = hi ^ k ^ x1;
            x1 = lo;
            k = k.wrapping_add(PHILOX_W);
        }
        (x0, x1)
    }

    /// Uniform in (0, 1), open on both ends.
    pub fn uniform(&self, c0: u64, c1: u64) -> f64 {
        let (w, _) = self.block(c0, c1);
        ((w >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Two independent standard normals from one block (Box-Muller).
    pub fn normal_pair(&self, c0: u64, c1: u64) -> (f64, f64) {
        let (w0, w1) = self.block(c0, c1);
        let u1 = ((w0 >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        let u2 = ((w1 >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Standard normals for (path, step), one per component.
    ///
    /// Counter layout: c0 = path, c1 = step * 256 + pair index, so a step may
    /// request up to 512 components and steps up to 2^56 are addressable.
    pub fn fill_normals(&self, path: u64, step: u64, out: &mut [f64]) {
        debug_assert!(out.len() <= 512, "too many components per step");
        debug_assert!(step < 1 << 56, "step index out of counter range");
        let mut i = 0;
        let mut j = 0u64;
        while i < out.len() {
            let (z0, z1) = self.normal_pair(path, (step << 8) | j);
            out[i] = z0;
            if i + 1 < out.len() {
                out[i + 1] = z1;
            }
            i += 2;
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_reproduce_identical_normals() {
        let rng = CounterRng::new(42, 7);
        let mut a = [0.0; 5];
        let mut b = [0.0; 5];
        rng.fill_normals(3, 11, &mut a);
        CounterRng::new(42, 7).fill_normals(3, 11, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_paths_and_steps_decorrelate() {
        let rng = CounterRng::new(1, 0);
        let (a, _) = rng.normal_pair(0, 0);
        let (b, _) = CounterRng::new(1, 1).normal_pair(0, 0);
        let (c, _) = rng.normal_pair(1, 0);
        let (d, _) = rng.normal_pair(0, 1);
        assert!(a != b && a != c && a != d, "streams collide: {a} {b} {c} {d}");
        assert!(rng.substream(5) != rng.substream(6));
    }

    #[test]
    fn normals_pass_basic_moment_checks() {
        let rng = CounterRng::new(2024, 0);
        let n = 200_000u64;
        let (mut sum, mut sum2, mut sum4) = (0.0, 0.0, 0.0);
        let mut prev = 0.0;
        let mut lag = 0.0;
        for p in 0..n {
            let (z, _) = rng.normal_pair(p, 0);
            sum += z;
            sum2 += z * z;
            sum4 += z * z * z * z;
            lag += z * prev;
            prev = z;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = sum2 / nf - mean * mean;
        let kurt = sum4 / nf;
        let rho = lag / nf;
        // 5 sigma bands: se(mean) = 1/sqrt(n), se(var) ~ sqrt(2/n), kurtosis 3 +- sqrt(96/n)
        assert!(mean.abs() < 5.0 / nf.sqrt(), "mean off: {mean}");
        assert!((var - 1.0).abs() < 5.0 * (2.0 / nf).sqrt(), "variance off: {var}");
        assert!((kurt - 3.0).abs() < 5.0 * (96.0 / nf).sqrt(), "kurtosis off: {kurt}");
        assert!(rho.abs() < 5.0 / nf.sqrt(), "lag-1 correlation off: {rho}");
    }

    #[test]
    fn uniforms_stay_inside_open_interval() {
        let rng = CounterRng::new(9, 9);
        for i in 0..10_000 {
            let u = rng.uniform(i, 0);
            assert!(u > 0.0 && u < 1.0, "uniform escaped (0,1): {u}");
        }
    }
}
