//! Deterministic synthetic weather-like fields.
//!
//! Each variable is `mean + pattern + std * g` where `g` is a unit-variance
//! Gaussian random field with spectral amplitude falling off as `k^-1.5`
//! and `pattern` is a fixed smooth mean structure. The climatology is the
//! sample mean of a long independent pre-sample.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Climatology, FieldTensor, GridSpec};
use crate::rng::{self, tag};

/// Spectral slope of the field amplitude.
pub const SPECTRAL_EXPONENT: f64 = 1.5;
/// Number of draws averaged into the climatology.
pub const CLIMATOLOGY_DRAWS: usize = 1000;
/// Amplitude of the fixed mean structure relative to the variable std.
pub const PATTERN_AMPLITUDE: f64 = 0.8;

/// Gaussian random field generator for one grid size.
pub struct FieldSynthesizer {
    n_lat: usize,
    n_lon: usize,
    amplitude: Vec<f64>,
    norm: f64,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
}

impl FieldSynthesizer {
    pub fn new(n_lat: usize, n_lon: usize, exponent: f64) -> Self {
        let mut amplitude = vec![0.0; n_lat * n_lon];
        let mut total = 0.0;
        for p in 0..n_lat {
            let kp = wavenumber(p, n_lat);
            for q in 0..n_lon {
                let kq = wavenumber(q, n_lon);
                let k = (kp * kp + kq * kq).sqrt();
                if k > 0.0 {
                    let a = k.powf(-exponent);
                    amplitude[p * n_lon + q] = a;
                    total += a * a;
                }
            }
        }
        // real part of sum_k a_k c_k e^{ikr} has variance sum a_k^2 / 2
        let norm = (total / 2.0).sqrt();
        let mut planner = FftPlanner::new();
        Self {
            n_lat,
            n_lon,
            amplitude,
            norm,
            row_fft: planner.plan_fft_inverse(n_lon),
            col_fft: planner.plan_fft_inverse(n_lat),
        }
    }

    /// One unit-variance field, row-major `(lat, lon)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (n_lat, n_lon) = (self.n_lat, self.n_lon);
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let mut spec: Vec<Complex<f64>> = self
            .amplitude
            .iter()
            .map(|&a| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(a * re * half, a * im * half)
            })
            .collect();
        for row in spec.chunks_exact_mut(n_lon) {
            self.row_fft.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); n_lat];
        for q in 0..n_lon {
            for p in 0..n_lat {
                column[p] = spec[p * n_lon + q];
            }
            self.col_fft.process(&mut column);
            for p in 0..n_lat {
                spec[p * n_lon + q] = column[p];
            }
        }
        spec.iter().map(|c| c.re / self.norm).collect()
    }
}

fn wavenumber(p: usize, n: usize) -> f64 {
    if p <= n / 2 {
        p as f64
    } else {
        p as f64 - n as f64
    }
}

/// Evaluation fields and climatology for `seed`.
///
/// Field `t` has timestamp `t`. The climatology averages
/// [`CLIMATOLOGY_DRAWS`] draws from a separate stream.
pub fn synth_fields(seed: u64, grid: &Arc<GridSpec>, n_timestamps: usize) -> Result<(Vec<FieldTensor>, Climatology)> {
    if n_timestamps == 0 {
        return Err(Error::InvalidArgument("n_timestamps must be >= 1".into()));
    }
    let gen = FieldSampler::new(seed, grid);
    let fields = (0..n_timestamps)
        .map(|t| gen.sample(tag::FIELD, t as u64).with_timestamp(t as i64))
        .collect();
    Ok((fields, gen.climatology(CLIMATOLOGY_DRAWS)))
}

/// Draws fields for one seed; exposed for Monte-Carlo checks.
pub struct FieldSampler {
    seed: u64,
    grid: Arc<GridSpec>,
    synth: FieldSynthesizer,
    pattern: Vec<Vec<f64>>,
}

impl FieldSampler {
    pub fn new(seed: u64, grid: &Arc<GridSpec>) -> Self {
        let synth = FieldSynthesizer::new(grid.n_lat(), grid.n_lon(), SPECTRAL_EXPONENT);
        let pattern = (0..grid.n_vars())
            .map(|v| {
                let mut r = rng::stream(seed, tag::PATTERN, v as u64);
                synth.draw(&mut r)
            })
            .collect();
        Self {
            seed,
            grid: Arc::clone(grid),
            synth,
            pattern,
        }
    }

    /// Draw number `index` of stream `stream_tag`.
    pub fn sample(&self, stream_tag: u64, index: u64) -> FieldTensor {
        let mut r = rng::stream(self.seed, stream_tag, index);
        let mut values = Vec::with_capacity(self.grid.len());
        for (v, spec) in self.grid.variables().iter().enumerate() {
            let g = self.synth.draw(&mut r);
            values.extend(
                g.iter()
                    .zip(&self.pattern[v])
                    .map(|(z, p)| spec.mean + spec.std * (PATTERN_AMPLITUDE * p + z)),
            );
        }
        FieldTensor::from_values(&self.grid, values, index as i64).expect("synthetic field is finite")
    }

    /// Mean of `draws` samples from the climatology stream.
    pub fn climatology(&self, draws: usize) -> Climatology {
        let mut acc = vec![0.0; self.grid.len()];
        for d in 0..draws {
            let f = self.sample(tag::CLIMATOLOGY, d as u64);
            for (a, x) in acc.iter_mut().zip(f.values()) {
                *a += x;
            }
        }
        let n = draws.max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let field = FieldTensor::from_values(&self.grid, acc, -1).expect("finite climatology");
        Climatology::new(field).expect("finite climatology")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridConfig};

    fn autocorr(values: &[f64], n_lat: usize, n_lon: usize, lag: usize) -> f64 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        let mut acc = 0.0;
        let mut n = 0usize;
        for i in 0..n_lat {
            for j in 0..n_lon - lag {
                acc += (values[i * n_lon + j] - mean) * (values[i * n_lon + j + lag] - mean);
                n += 1;
            }
        }
        acc / n as f64 / var
    }

    #[test]
    fn unit_variance_on_average() {
        let s = FieldSynthesizer::new(36, 50, SPECTRAL_EXPONENT);
        let mut r = rng::stream(3, tag::SIMULATION, 0);
        let mut acc = 0.0;
        let draws = 200;
        for _ in 0..draws {
            let g = s.draw(&mut r);
            acc += g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        }
        let var = acc / draws as f64;
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn fields_are_smooth() {
        let g = make_grid(&GridConfig::default()).unwrap();
        let (fields, _) = synth_fields(7, &g, 5).unwrap();
        for f in &fields {
            let var0 = f.variable(0);
            let near = autocorr(var0, 36, 50, 1);
            let far = autocorr(var0, 36, 50, 10);
            assert!(near > far, "lag1 {near} lag10 {far}");
            assert!(near > 0.5);
        }
    }

    #[test]
    fn deterministic_from_seed() {
        let g = make_grid(&GridConfig::with_dims(8, 10, 2)).unwrap();
        let (a, ca) = synth_fields(7, &g, 4).unwrap();
        let (b, cb) = synth_fields(7, &g, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        let (c, _) = synth_fields(8, &g, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_timestamps_rejected() {
        let g = make_grid(&GridConfig::with_dims(8, 10, 2)).unwrap();
        assert!(synth_fields(1, &g, 0).is_err());
    }
}
