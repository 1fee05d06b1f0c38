//! Rotated-Gaussian classification domains.
//!
//! Every domain shares the same class means. Domain `t` applies a Givens
//! rotation by `alpha_t` to each coordinate pair `(0,1), (2,3), ...`, so the
//! rotation angle acts as a domain-shift dial.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const CLASS_MEAN_SCALE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_index: usize,
    pub rotation_deg: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub n_classes: usize,
    pub input_dim: usize,
    /// Master seed; the domain's own streams are derived from it and the index.
    pub seed: u64,
}

impl DomainSpec {
    /// Default schedule: 25 degrees per stage, 2000/200/500 samples for the
    /// first domain and 500/200/500 afterwards.
    pub fn standard(domain_index: usize, seed: u64) -> Self {
        let n_train = if domain_index == 0 { 2000 } else { 500 };
        DomainSpec {
            domain_index,
            rotation_deg: (25.0 * domain_index as f64).rem_euclid(360.0),
            n_train,
            n_dev: 200,
            n_test: 500,
            noise_sigma: 0.5,
            n_classes: 4,
            input_dim: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            problems.push(format!("domain {}: split sizes must be positive", self.domain_index));
        }
        if self.input_dim == 0 || !self.input_dim.is_multiple_of(2) {
            problems.push(format!("input_dim must be even and positive, got {}", self.input_dim));
        }
        if self.n_classes < 2 || self.n_classes > u8::MAX as usize {
            problems.push(format!("n_classes must lie in 2..=255, got {}", self.n_classes));
        }
        if !(0.0..360.0).contains(&self.rotation_deg) {
            problems.push(format!("rotation {} outside [0, 360)", self.rotation_deg));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            problems.push(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigList(problems))
        }
    }

    pub fn id(&self) -> String {
        format!("d{}-rot{}", self.domain_index, self.rotation_deg)
    }
}

/// Row-major samples of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub dim: usize,
    pub x: Vec<f32>,
    pub y: Vec<u8>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Concatenation in argument order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Split>) -> Split {
        let mut out: Option<Split> = None;
        for p in parts {
            match out.as_mut() {
                None => out = Some(p.clone()),
                Some(o) => {
                    assert_eq!(o.dim, p.dim, "dimension mismatch");
                    o.x.extend_from_slice(&p.x);
                    o.y.extend_from_slice(&p.y);
                }
            }
        }
        out.expect("at least one split")
    }

    /// CSV with columns `x0..x{d-1},y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        writeln!(w, "{},y", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.sample(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", row.join(","), self.y[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Split> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Empty("dataset CSV has no header".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 2 || cols.last() != Some(&"y") {
            return Err(Error::Config(format!("unexpected dataset CSV header {header:?}")));
        }
        let dim = cols.len() - 1;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::Config(format!("dataset CSV line {}: {line:?}", lineno + 2));
            if fields.len() != dim + 1 {
                return Err(bad());
            }
            for f in &fields[..dim] {
                let v: f32 = f.parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                x.push(v);
            }
            y.push(fields[dim].parse().map_err(|_| bad())?);
        }
        Ok(Split { dim, x, y })
    }
}

/// Generated domain with train/dev/test splits. Reads of the training split
/// are counted so callers can verify which sources a stage touched.
#[derive(Debug)]
pub struct DomainDataset {
    spec: DomainSpec,
    train: Split,
    dev: Split,
    test: Split,
    train_reads: AtomicUsize,
}

impl DomainDataset {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    /// Training split; every call is counted.
    pub fn train(&self) -> &Split {
        self.train_reads.fetch_add(1, Ordering::SeqCst);
        &self.train
    }

    pub fn dev(&self) -> &Split {
        &self.dev
    }

    pub fn test(&self) -> &Split {
        &self.test
    }

    pub fn train_reads(&self) -> usize {
        self.train_reads.load(Ordering::SeqCst)
    }
}

/// Class means shared by every domain of a run: standard normal draws scaled
/// by [`CLASS_MEAN_SCALE`], one row per class.
pub fn class_means(seed: u64, n_classes: usize, dim: usize) -> Vec<f64> {
    let mut rng = seed::stream(seed, "class-means", 0);
    (0..n_classes * dim)
        .map(|_| CLASS_MEAN_SCALE * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Applies the per-plane Givens rotation in place.
pub fn rotate(v: &mut [f64], degrees: f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    for pair in v.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

fn gen_split(spec: &DomainSpec, means: &[f64], name: &str, n: usize) -> Split {
    let dim = spec.input_dim;
    let mut rng = seed::stream(spec.seed, &format!("data/{}/{name}", spec.domain_index), 0);
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    let mut v = vec![0.0f64; dim];
    for _ in 0..n {
        let label = rng.gen_range(0..spec.n_classes);
        for (j, vj) in v.iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *vj = means[label * dim + j] + spec.noise_sigma * noise;
        }
        rotate(&mut v, spec.rotation_deg);
        x.extend(v.iter().map(|&a| a as f32));
        y.push(label as u8);
    }
    Split { dim, x, y }
}

pub fn gen_domain(spec: &DomainSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let means = class_means(spec.seed, spec.n_classes, spec.input_dim);
    Ok(DomainDataset {
        train: gen_split(spec, &means, "train", spec.n_train),
        dev: gen_split(spec, &means, "dev", spec.n_dev),
        test: gen_split(spec, &means, "test", spec.n_test),
        spec: spec.clone(),
        train_reads: AtomicUsize::new(0),
    })
}
