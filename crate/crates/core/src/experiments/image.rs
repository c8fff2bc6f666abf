//! Synthetic edge images, gradient orientations at a fixed pixel set, and
//! semi-supervised classification with a fitted sparse mixture.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{write_model_json, ComponentParams, Family, IndexSet, SparseMixture, WeightedSampleBatch};
use crate::rng::{derive_seed, stream_rng, streams, Rng};
use crate::selection::{select_and_fit, write_couplings_csv, FitReport, SelectionConfig};
use crate::torus::{arctan_star, bessel_ratio_inverse, weighted_circular_moments};

pub const IMAGE_ROWS: usize = 7;
pub const IMAGE_COLS: usize = 10;
pub const N_CLASSES: usize = 5;
/// Standard deviation of the additive pixel noise.
pub const PIXEL_NOISE: f64 = 0.2;

/// One-based pixel positions whose gradient orientation is observed.
pub const GRADIENT_POSITIONS: [(usize, usize); 12] = [
    (2, 2),
    (2, 3),
    (2, 6),
    (2, 7),
    (4, 4),
    (4, 5),
    (4, 8),
    (4, 9),
    (6, 2),
    (6, 3),
    (6, 6),
    (6, 7),
];

/// Where the single edge of a class lies: pixels with column (or row) index
/// at most the given one-based value take the level `a`, all others `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Column(usize),
    Row(usize),
}

/// Intensity levels `a ~ N(a_mean, a_sd²)`, `b ~ N(b_mean, b_sd²)` and the
/// edge position of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpec {
    pub a_mean: f64,
    pub a_sd: f64,
    pub b_mean: f64,
    pub b_sd: f64,
    pub edge: Edge,
}

/// The five classes, class 1 first.
pub const CLASSES: [ClassSpec; N_CLASSES] = [
    ClassSpec { a_mean: 0.1, a_sd: 0.05, b_mean: 0.9, b_sd: 0.1, edge: Edge::Column(2) },
    ClassSpec { a_mean: 0.9, a_sd: 0.1, b_mean: 0.1, b_sd: 0.05, edge: Edge::Column(4) },
    ClassSpec { a_mean: 0.2, a_sd: 0.025, b_mean: 0.6, b_sd: 0.05, edge: Edge::Column(6) },
    ClassSpec { a_mean: 0.7, a_sd: 0.1, b_mean: 0.1, b_sd: 0.05, edge: Edge::Column(8) },
    ClassSpec { a_mean: 0.2, a_sd: 0.1, b_mean: 0.9, b_sd: 0.025, edge: Edge::Row(4) },
];

/// A gray-value image of `IMAGE_ROWS × IMAGE_COLS` pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Vec<f64>,
}

impl Image {
    pub fn from_fn(f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(IMAGE_ROWS * IMAGE_COLS);
        for i in 1..=IMAGE_ROWS {
            for j in 1..=IMAGE_COLS {
                pixels.push(f(i, j));
            }
        }
        Self { pixels }
    }

    /// Pixel at one-based row `i` and column `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[(i - 1) * IMAGE_COLS + (j - 1)]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

fn class_spec(class: usize) -> Result<&'static ClassSpec> {
    if !(1..=N_CLASSES).contains(&class) {
        return Err(Error::InvalidParameter(format!("class id must be in 1..={N_CLASSES}, got {class}")));
    }
    Ok(&CLASSES[class - 1])
}

fn draw_levels(spec: &ClassSpec, rng: &mut Rng) -> (f64, f64) {
    let a = Normal::new(spec.a_mean, spec.a_sd).expect("valid level distribution").sample(rng);
    let b = Normal::new(spec.b_mean, spec.b_sd).expect("valid level distribution").sample(rng);
    (a, b)
}

fn render_noisy(spec: &ClassSpec, a: f64, b: f64, rng: &mut Rng) -> Image {
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid noise distribution");
    let mut img = render_clean(spec, a, b);
    for p in img.pixels.iter_mut() {
        *p += noise.sample(rng);
    }
    img
}

fn render_clean(spec: &ClassSpec, a: f64, b: f64) -> Image {
    Image::from_fn(|i, j| {
        let inside = match spec.edge {
            Edge::Column(c) => j <= c,
            Edge::Row(r) => i <= r,
        };
        if inside {
            a
        } else {
            b
        }
    })
}

/// Draws an image of `class` (one-based) from `rng`.
pub fn generate_image_with(class: usize, rng: &mut Rng) -> Result<Image> {
    let spec = class_spec(class)?;
    let (a, b) = draw_levels(spec, rng);
    Ok(render_noisy(spec, a, b, rng))
}

/// Draws an image of `class` (one-based) from the stream of `rng_seed`.
pub fn generate_image(class: usize, rng_seed: u64) -> Result<Image> {
    generate_image_with(class, &mut stream_rng(rng_seed, streams::IMAGE))
}

/// Orientations `arctan*(S/C) / 2π` of the central gradients at
/// [`GRADIENT_POSITIONS`], with `S = y[i+1,j] − y[i−1,j]` and
/// `C = y[i,j+1] − y[i,j−1]`.
pub fn gradient_orientations(image: &Image) -> Result<[f64; 12]> {
    let mut out = [0.0; 12];
    for (o, &(i, j)) in out.iter_mut().zip(&GRADIENT_POSITIONS) {
        let s = image.get(i + 1, j) - image.get(i - 1, j);
        let c = image.get(i, j + 1) - image.get(i, j - 1);
        let w = arctan_star(s, c)? / (2.0 * std::f64::consts::PI);
        *o = if w >= 1.0 { 0.0 } else { w };
    }
    Ok(out)
}

/// Orientation vector of a fresh image of `class`. The pixel noise is redrawn
/// while some gradient vanishes.
pub fn draw_observation(class: usize, rng: &mut Rng) -> Result<[f64; 12]> {
    let spec = class_spec(class)?;
    let (a, b) = draw_levels(spec, rng);
    loop {
        match gradient_orientations(&render_noisy(spec, a, b, rng)) {
            Err(Error::DegenerateDirection) => log::debug!("zero gradient; pixel noise redrawn"),
            other => return other,
        }
    }
}

/// `n` labeled observations with classes drawn from `priors`.
pub fn generate_dataset(n: usize, priors: &[f64; N_CLASSES], rng: &mut Rng) -> Result<(WeightedSampleBatch, Vec<usize>)> {
    let total: f64 = priors.iter().sum();
    if !(total > 0.0) || priors.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidParameter("class priors must be nonnegative with positive sum".into()));
    }
    let mut points = Vec::with_capacity(12 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut z = rng.random::<f64>() * total;
        let mut class = N_CLASSES;
        for (c, p) in priors.iter().enumerate() {
            if z < *p {
                class = c + 1;
                break;
            }
            z -= p;
        }
        points.extend_from_slice(&draw_observation(class, rng)?);
        labels.push(class);
    }
    Ok((WeightedSampleBatch::unit(12, points)?, labels))
}

/// `n` observations of every class, grouped by class.
pub fn generate_labeled(n: usize, rng: &mut Rng) -> Result<Vec<Vec<[f64; 12]>>> {
    (1..=N_CLASSES).map(|c| (0..n).map(|_| draw_observation(c, rng)).collect()).collect()
}

/// Class of each component: the class whose labeled samples have the largest
/// summed component log-density.
pub fn assign_components(model: &SparseMixture, labeled: &[Vec<[f64; 12]>]) -> Vec<usize> {
    let k = model.n_components();
    let mut scores = vec![vec![0.0; labeled.len()]; k];
    let mut buf = Vec::new();
    for (c, samples) in labeled.iter().enumerate() {
        for x in samples {
            model.component_log_densities(x, &mut buf);
            for (kk, v) in buf.iter().enumerate() {
                scores[kk][c] += v;
            }
        }
    }
    scores
        .iter()
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best + 1
        })
        .collect()
}

/// The class maximizing `Σ_{k: c_k = c} α_k p_k(x)`.
pub fn classify(model: &SparseMixture, classes: &[usize], x: &[f64]) -> usize {
    let mut buf = Vec::new();
    model.component_log_densities(x, &mut buf);
    let mut score = [0.0; N_CLASSES];
    for ((log_p, a), c) in buf.iter().zip(model.alpha()).zip(classes) {
        score[c - 1] += a * log_p.exp();
    }
    let mut best = 0;
    for c in 1..N_CLASSES {
        if score[c] > score[best] {
            best = c;
        }
    }
    best + 1
}

/// Fraction of `batch` rows whose predicted class matches `labels`.
pub fn accuracy(model: &SparseMixture, classes: &[usize], batch: &WeightedSampleBatch, labels: &[usize]) -> f64 {
    let hits = (0..batch.len()).filter(|&i| classify(model, classes, batch.point(i)) == labels[i]).count();
    hits as f64 / batch.len() as f64
}

/// One von Mises product over all coordinates per class, fitted by maximum
/// likelihood on the samples of that class, weighted by the class frequency.
pub fn oracle_model(batch: &WeightedSampleBatch, labels: &[usize], kappa_max: f64) -> Result<(SparseMixture, Vec<usize>)> {
    let d = batch.dim();
    let mut alpha = Vec::new();
    let mut comps = Vec::new();
    let mut classes = Vec::new();
    for c in 1..=N_CLASSES {
        let rows: Vec<usize> = (0..batch.len()).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let sub = batch.select(&rows);
        let mut mu = Vec::with_capacity(d);
        let mut kappa = Vec::with_capacity(d);
        for m in 0..d {
            let (mh, r) = weighted_circular_moments(&sub.column(m), sub.weights()).unwrap_or((0.5, 0.0));
            mu.push(mh);
            kappa.push(bessel_ratio_inverse(r.clamp(0.0, 1.0 - 1e-9)).unwrap_or(kappa_max).min(kappa_max));
        }
        alpha.push(rows.len() as f64 / batch.len() as f64);
        comps.push(ComponentParams::VonMises {
            u: IndexSet::new((0..d).collect())?,
            mu,
            kappa,
        });
        classes.push(c);
    }
    Ok((SparseMixture::new(d, alpha, comps)?, classes))
}

/// Settings of the classification experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Labeled samples per class used to assign components to classes.
    pub n_labeled: usize,
    /// Class probabilities of the generator, hidden from the classifier.
    pub priors: [f64; N_CLASSES],
    pub selection: SelectionConfig,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_test: 1_000,
            n_labeled: 3,
            priors: [0.2; N_CLASSES],
            selection: SelectionConfig {
                d_s: 4,
                ..SelectionConfig::default()
            },
        }
    }
}

/// Result of one classification run.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub family: Family,
    pub accuracy: f64,
    /// Accuracy of the fully supervised per-class von Mises product.
    pub oracle_accuracy: f64,
    /// Class of every fitted component.
    pub component_classes: Vec<usize>,
    /// Classes to which no component was assigned.
    pub unassigned_classes: Vec<usize>,
    pub model: SparseMixture,
    pub report: FitReport,
    pub seconds: f64,
}

impl ImageOutcome {
    /// Writes `accuracy.txt`, `components.csv`, `couplings.csv`, `trace.csv`
    /// and `model.json` into `dir`.
    pub fn write_results(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut acc = fs::File::create(dir.join("accuracy.txt"))?;
        writeln!(acc, "accuracy {}", crate::mixture::format_decimal(self.accuracy))?;
        writeln!(acc, "oracle_accuracy {}", crate::mixture::format_decimal(self.oracle_accuracy))?;
        let unassigned: Vec<String> = self.unassigned_classes.iter().map(|c| c.to_string()).collect();
        writeln!(acc, "unassigned_classes {}", unassigned.join(","))?;
        let mut comp = csv::Writer::from_path(dir.join("components.csv")).map_err(|e| Error::Io(e.to_string()))?;
        comp.write_record(["component", "coupling_label", "alpha", "class"]).map_err(|e| Error::Io(e.to_string()))?;
        for (k, (c, a)) in self.model.components().iter().zip(self.model.alpha()).enumerate() {
            comp.write_record([
                k.to_string(),
                c.u().to_string(),
                crate::mixture::format_decimal(*a),
                self.component_classes[k].to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        comp.flush()?;
        write_couplings_csv(&self.report.couplings, fs::File::create(dir.join("couplings.csv"))?)?;
        self.report.write_trace_csv(std::io::BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?;
        write_model_json(&self.model, fs::File::create(dir.join("model.json"))?)?;
        Ok(())
    }
}

/// Fits on unlabeled training orientations, assigns components to classes
/// from `n_labeled` samples per class, and reports the test accuracy together
/// with that of a supervised oracle trained on the labeled training set.
pub fn run_image_experiment(cfg: &ImageConfig, seed: u64) -> Result<ImageOutcome> {
    let start = std::time::Instant::now();
    let mut rng = stream_rng(seed, streams::IMAGE);
    let (train, train_labels) = generate_dataset(cfg.n_train, &cfg.priors, &mut rng)?;
    let (test, test_labels) = generate_dataset(cfg.n_test, &cfg.priors, &mut rng)?;
    let labeled = generate_labeled(cfg.n_labeled, &mut rng)?;
    let (model, report) = select_and_fit(&train, &cfg.selection, derive_seed(seed, streams::SELECTION))?;
    let component_classes = assign_components(&model, &labeled);
    let unassigned_classes: Vec<usize> = (1..=N_CLASSES).filter(|c| !component_classes.contains(c)).collect();
    if !unassigned_classes.is_empty() {
        log::warn!("classes without a component: {unassigned_classes:?}");
    }
    let acc = accuracy(&model, &component_classes, &test, &test_labels);
    let (oracle, oracle_classes) = oracle_model(&train, &train_labels, cfg.selection.em.kappa_max)?;
    let oracle_accuracy = accuracy(&oracle, &oracle_classes, &test, &test_labels);
    log::info!(
        "image {}: accuracy {acc:.4}, oracle {oracle_accuracy:.4}, {} components",
        cfg.selection.family.name(),
        model.n_components()
    );
    Ok(ImageOutcome {
        family: cfg.selection.family,
        accuracy: acc,
        oracle_accuracy,
        component_classes,
        unassigned_classes,
        model,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}
