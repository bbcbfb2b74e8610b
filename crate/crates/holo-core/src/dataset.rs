//! Training-set synthesis and serialization.
//!
//! A dataset is `count` polynomial superpotentials with complex
//! coefficients drawn component-wise from a uniform distribution on
//! (-x, x), evaluated on a shared box and normalized per sample so the
//! joint channel maximum is 1. Raw coefficients and normalization scales
//! are kept alongside the grids so fits can be checked against the exact
//! generating parameters.
//!
//! Sampling is counter-based: every coefficient is a pure function of
//! (seed, sample index, coefficient index), so synthesis is reproducible
//! and order-independent under parallel evaluation.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{eval_polynomial_on_grid, normalize, BoxDomain, ComplexGrid, GridError};
use crate::rng::Stream;

const MAGIC: &[u8; 4] = b"HGRD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("count must be at least 1")]
    EmptyCount,
    #[error("coefficient half-range must be positive, got {0}")]
    BadCoeffRange(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes, not a dataset file")]
    BadMagic,
    #[error("unsupported dataset format version {0}")]
    VersionMismatch(u32),
    #[error("file truncated in sample {sample}")]
    Truncated { sample: usize },
}

/// Recipe for one training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialSpec {
    pub max_degree: u32,
    pub coeff_half_range: f64,
    pub domain: BoxDomain,
    pub count: u32,
    pub seed: u64,
}

impl PolynomialSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.count == 0 {
            return Err(DatasetError::EmptyCount);
        }
        if !(self.coeff_half_range > 0.0) {
            return Err(DatasetError::BadCoeffRange(self.coeff_half_range));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: PolynomialSpec,
    pub grids: Vec<ComplexGrid>,
    /// Coefficients before normalization, one vector per sample.
    pub coeffs: Vec<Vec<Complex64>>,
    /// Joint-channel normalization factor per sample.
    pub scales: Vec<f64>,
}

fn coefficients_at(spec: &PolynomialSpec, index: u32, salt: u64) -> Vec<Complex64> {
    let mut stream = Stream::substream(spec.seed, &[index as u64, salt]);
    (0..=spec.max_degree)
        .map(|_| {
            let re = stream.next_symmetric(spec.coeff_half_range);
            let im = stream.next_symmetric(spec.coeff_half_range);
            Complex64::new(re, im)
        })
        .collect()
}

/// Coefficient vector of sample `index`: each real and imaginary part
/// uniform on (-x, x), a deterministic function of (seed, index).
pub fn sample_coefficients(spec: &PolynomialSpec, index: u32) -> Vec<Complex64> {
    coefficients_at(spec, index, 0)
}

fn synthesize_one(
    spec: &PolynomialSpec,
    index: u32,
) -> Result<(ComplexGrid, Vec<Complex64>, f64), DatasetError> {
    let mut salt = 0;
    loop {
        let coeffs = coefficients_at(spec, index, salt);
        let raw = eval_polynomial_on_grid(&coeffs, spec.domain)?;
        match normalize(&raw) {
            Ok((grid, scale)) => return Ok((grid, coeffs, scale)),
            Err(GridError::DegenerateGrid) => {
                // Probability zero for continuous coefficients; resample
                // from a perturbed stream position.
                eprintln!(
                    "warning: sample {index} drew an identically zero polynomial, resampling"
                );
                salt += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Builds the full training set. Samples are evaluated in parallel; the
/// counter-based sampler makes the result independent of thread count.
pub fn synthesize(spec: &PolynomialSpec) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let samples: Vec<(ComplexGrid, Vec<Complex64>, f64)> = (0..spec.count)
        .into_par_iter()
        .map(|i| synthesize_one(spec, i))
        .collect::<Result<_, _>>()?;
    let mut grids = Vec::with_capacity(samples.len());
    let mut coeffs = Vec::with_capacity(samples.len());
    let mut scales = Vec::with_capacity(samples.len());
    for (g, c, s) in samples {
        grids.push(g);
        coeffs.push(c);
        scales.push(s);
    }
    Ok(Dataset {
        spec: *spec,
        grids,
        coeffs,
        scales,
    })
}

pub fn save_dataset<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(ds.spec.max_degree)?;
    w.write_f64::<LittleEndian>(ds.spec.coeff_half_range)?;
    w.write_f64::<LittleEndian>(ds.spec.domain.half_width())?;
    w.write_u32::<LittleEndian>(ds.spec.domain.n() as u32)?;
    w.write_u32::<LittleEndian>(ds.spec.count)?;
    w.write_u64::<LittleEndian>(ds.spec.seed)?;
    for i in 0..ds.grids.len() {
        for c in &ds.coeffs[i] {
            w.write_f64::<LittleEndian>(c.re)?;
            w.write_f64::<LittleEndian>(c.im)?;
        }
        w.write_f64::<LittleEndian>(ds.scales[i])?;
        for &x in ds.grids[i].u() {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
        for &x in ds.grids[i].v() {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    sample: usize,
) -> Result<(), DatasetError> {
    r.read_exact(buf)
        .map_err(|_| DatasetError::Truncated { sample })
}

pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset, DatasetError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch(version));
    }
    let max_degree = r.read_u32::<LittleEndian>()?;
    let coeff_half_range = r.read_f64::<LittleEndian>()?;
    let half_width = r.read_f64::<LittleEndian>()?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let count = r.read_u32::<LittleEndian>()?;
    let seed = r.read_u64::<LittleEndian>()?;
    let domain = BoxDomain::new(half_width, n)?;
    let spec = PolynomialSpec {
        max_degree,
        coeff_half_range,
        domain,
        count,
        seed,
    };
    spec.validate()?;

    let n_coeff = (max_degree + 1) as usize;
    let mut grids = Vec::with_capacity(count as usize);
    let mut coeffs = Vec::with_capacity(count as usize);
    let mut scales = Vec::with_capacity(count as usize);
    let mut scalars = vec![0u8; (2 * n_coeff + 1) * 8];
    let mut channel = vec![0u8; n * n * 4];
    for i in 0..count as usize {
        read_exact_or_truncated(&mut r, &mut scalars, i)?;
        let mut c = Vec::with_capacity(n_coeff);
        for j in 0..n_coeff {
            let re = f64::from_le_bytes(scalars[16 * j..16 * j + 8].try_into().unwrap());
            let im = f64::from_le_bytes(scalars[16 * j + 8..16 * j + 16].try_into().unwrap());
            c.push(Complex64::new(re, im));
        }
        let scale = f64::from_le_bytes(scalars[16 * n_coeff..16 * n_coeff + 8].try_into().unwrap());

        let mut read_channel = |r: &mut BufReader<File>| -> Result<Vec<f64>, DatasetError> {
            read_exact_or_truncated(r, &mut channel, i)?;
            Ok(channel
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect())
        };
        let u = read_channel(&mut r)?;
        let v = read_channel(&mut r)?;
        grids.push(ComplexGrid::from_channels(domain, u, v)?);
        coeffs.push(c);
        scales.push(scale);
    }
    Ok(Dataset {
        spec,
        grids,
        coeffs,
        scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::residual_stats;

    fn small_spec() -> PolynomialSpec {
        PolynomialSpec {
            max_degree: 2,
            coeff_half_range: 1.0,
            domain: BoxDomain::new(2.0, 16).unwrap(),
            count: 8,
            seed: 42,
        }
    }

    #[test]
    fn coefficients_stay_in_range() {
        let spec = PolynomialSpec {
            count: 200,
            ..small_spec()
        };
        for i in 0..spec.count {
            for c in sample_coefficients(&spec, i) {
                assert!(c.re > -1.0 && c.re < 1.0);
                assert!(c.im > -1.0 && c.im < 1.0);
            }
        }
    }

    #[test]
    fn coefficients_are_deterministic() {
        let spec = small_spec();
        assert_eq!(sample_coefficients(&spec, 3), sample_coefficients(&spec, 3));
        assert_ne!(sample_coefficients(&spec, 3), sample_coefficients(&spec, 4));
    }

    #[test]
    fn synthesized_grids_are_normalized_and_holomorphic() {
        let ds = synthesize(&small_spec()).unwrap();
        assert_eq!(ds.grids.len(), 8);
        assert_eq!(ds.coeffs.len(), 8);
        assert_eq!(ds.scales.len(), 8);
        for g in &ds.grids {
            assert!((g.max_abs_channel() - 1.0).abs() < 1e-12);
            let stats = residual_stats(g);
            assert!(stats.p95_e1 <= 1e-9);
            assert!(stats.p95_e2 <= 1e-9);
        }
    }

    #[test]
    fn degree_zero_single_sample_is_constant() {
        let spec = PolynomialSpec {
            max_degree: 0,
            count: 1,
            ..small_spec()
        };
        let ds = synthesize(&spec).unwrap();
        let g = &ds.grids[0];
        assert!((g.max_abs_channel() - 1.0).abs() < 1e-12);
        let first = (g.u()[0], g.v()[0]);
        assert!(g.u().iter().all(|&x| x == first.0));
        assert!(g.v().iter().all(|&x| x == first.1));
    }

    #[test]
    fn scales_reproduce_raw_grid() {
        let ds = synthesize(&small_spec()).unwrap();
        for i in 0..ds.grids.len() {
            let raw = eval_polynomial_on_grid(&ds.coeffs[i], ds.spec.domain).unwrap();
            assert!((raw.max_abs_channel() - ds.scales[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small_spec();
        spec.count = 0;
        assert!(matches!(synthesize(&spec), Err(DatasetError::EmptyCount)));
        let mut spec = small_spec();
        spec.coeff_half_range = 0.0;
        assert!(matches!(
            synthesize(&spec),
            Err(DatasetError::BadCoeffRange(_))
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = synthesize(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.scales, ds.scales);
        assert_eq!(back.coeffs, ds.coeffs);
        // Grid channels round-trip through f32 storage; saving the loaded
        // dataset again must be byte-identical.
        let path2 = dir.path().join("ds2.bin");
        save_dataset(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        for (a, b) in ds.grids.iter().zip(&back.grids) {
            for (x, y) in a.u().iter().zip(b.u()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(load_dataset(&path), Err(DatasetError::BadMagic)));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let ds = synthesize(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DatasetError::VersionMismatch(99))
        ));
    }

    #[test]
    fn truncation_names_the_sample() {
        let ds = synthesize(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Cut inside the third sample's grid payload.
        let header = 4 + 4 + 4 + 8 + 8 + 4 + 4 + 8;
        let per_sample = 3 * 16 + 8 + 2 * 16 * 16 * 4;
        std::fs::write(&path, &bytes[..header + 2 * per_sample + 100]).unwrap();
        match load_dataset(&path) {
            Err(DatasetError::Truncated { sample }) => assert_eq!(sample, 2),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
