//! Evaluation metrics, the post-hoc discriminator probe, MMD estimation and
//! the sweep runner that writes CSV reports.
//!
//! The probe is the operational test of "the discriminator cannot tell SD
//! features from SI features": a fresh discriminator of fixed capacity is
//! trained from scratch on held-out representations labeled by origin, and
//! its balanced accuracy on an eval split is reported. Accuracy near 0.5
//! means the two feature distributions are indistinguishable at probe
//! capacity; accuracy near 1.0 means the SD model has drifted into its own
//! regime.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;

use crate::adapt::{adapt, argmax, AdaptConfig, Method};
use crate::datagen::{load_acoustic_model, load_dataset, validate_model_dataset, FrameDataset};
use crate::error::{Error, Result};
use crate::models::{classify_senones, extract_features, AcousticModel, Discriminator};
use crate::nn::{self, rng_stream};
use crate::tensor::Tensor2D;

/// Fraction of test frames whose argmax senone differs from the label.
/// Ties break toward the lowest index, the same rule as pseudo-labeling.
pub fn frame_error_rate(m: &AcousticModel, test: &FrameDataset) -> Result<f64> {
    validate_model_dataset(m, test)?;
    if test.is_empty() {
        return Err(Error::invalid("cannot score an empty test set"));
    }
    let post = classify_senones(m, &test.features)?;
    let mut wrong = 0usize;
    for t in 0..post.rows() {
        if argmax(post.row(t)) as u32 != test.labels.get(t) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / post.rows() as f64)
}

/// Capacity and budget of the post-hoc probe discriminator. Fixed across
/// methods so probe accuracies are comparable.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub mu: f64,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: vec![32, 32],
            epochs: 200,
            mu: 0.1,
            batch_size: 64,
        }
    }
}

/// Trains a fresh discriminator on `{f_sd -> 1, f_si -> 0}` over a train
/// split and returns balanced accuracy on the held-out eval split.
pub fn discriminator_probe(
    f_sd: &Tensor2D,
    f_si: &Tensor2D,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if f_sd.cols() != f_si.cols() {
        return Err(Error::invalid(format!(
            "probe inputs disagree on dimension: {} vs {}",
            f_sd.cols(),
            f_si.cols()
        )));
    }
    if f_sd.rows() < 2 || f_si.rows() < 2 {
        return Err(Error::invalid(
            "probe needs at least two rows per class to split train/eval",
        ));
    }
    if !(cfg.mu.is_finite() && cfg.mu >= 0.0) || cfg.batch_size == 0 {
        return Err(Error::invalid("bad probe hyperparameters"));
    }

    // Per-class shuffled halves keep both splits balanced.
    let mut rng = rng_stream(seed, 1);
    let split = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let train_n = n.div_ceil(2);
        let eval = idx.split_off(train_n);
        (idx, eval)
    };
    let (sd_train, sd_eval) = split(f_sd.rows(), &mut rng);
    let (si_train, si_eval) = split(f_si.rows(), &mut rng);

    let train_x = f_sd
        .select_rows(&sd_train)?
        .vstack(&f_si.select_rows(&si_train)?)?;
    let mut train_y = vec![1.0; sd_train.len()];
    train_y.extend(vec![0.0; si_train.len()]);

    let mut probe = Discriminator::init(f_sd.cols(), &cfg.hidden, seed)?;
    let n = train_x.rows();
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = train_x.select_rows(batch)?;
            let y: Vec<f64> = batch.iter().map(|&i| train_y[i]).collect();
            let (out, cache) = nn::forward(probe.net(), &x)?;
            let grad = bce_grad(out.data(), &y);
            let (grads, _) = nn::backward(probe.net(), &cache, &Tensor2D::column(&grad))?;
            nn::sgd_step(probe.net_mut(), &grads, cfg.mu)?;
        }
    }

    // Balanced accuracy on the eval split: predict SD iff p > 0.5.
    let score = |rows: &Tensor2D, want_sd: bool| -> Result<f64> {
        let p = crate::models::discriminate(&probe, rows)?;
        let hits = p
            .iter()
            .filter(|&&v| (v > 0.5) == want_sd)
            .count();
        Ok(hits as f64 / p.len() as f64)
    };
    let tpr = score(&f_sd.select_rows(&sd_eval)?, true)?;
    let tnr = score(&f_si.select_rows(&si_eval)?, false)?;
    Ok(0.5 * (tpr + tnr))
}

/// Mean binary cross-entropy gradient w.r.t. the probe outputs.
fn bce_grad(p: &[f64], y: &[f64]) -> Vec<f64> {
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(nn::PROB_EPS, 1.0 - nn::PROB_EPS);
            (-(y / p) + (1.0 - y) / (1.0 - p)) / n
        })
        .collect()
}

/// Unbiased squared maximum mean discrepancy with a Gaussian kernel
/// `k(x, y) = exp(-||x - y||^2 / (2 * bandwidth^2))`.
///
/// The estimator excludes diagonal terms, so it can dip slightly below zero
/// for close distributions. Arguments are ordered canonically inside, which
/// makes the result bitwise symmetric.
pub fn mmd(f_a: &Tensor2D, f_b: &Tensor2D, bandwidth: f64) -> Result<f64> {
    if f_a.cols() != f_b.cols() {
        return Err(Error::invalid(format!(
            "mmd inputs disagree on dimension: {} vs {}",
            f_a.cols(),
            f_b.cols()
        )));
    }
    if f_a.rows() < 2 || f_b.rows() < 2 {
        return Err(Error::invalid("mmd needs at least two rows per sample"));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let (a, b) = if tensor_le(f_a, f_b) { (f_a, f_b) } else { (f_b, f_a) };
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let kernel = |x: &[f64], y: &[f64]| -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
        (-gamma * d2).exp()
    };
    let within = |t: &Tensor2D| -> f64 {
        let m = t.rows();
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sum += kernel(t.row(i), t.row(j));
                }
            }
        }
        sum / (m * (m - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            cross += kernel(a.row(i), b.row(j));
        }
    }
    cross /= (a.rows() * b.rows()) as f64;
    Ok(within(a) + within(b) - 2.0 * cross)
}

/// Deterministic total order on tensors so `mmd(a, b)` and `mmd(b, a)` run
/// identical float operations.
fn tensor_le(a: &Tensor2D, b: &Tensor2D) -> bool {
    (a.rows(), a.cols())
        .cmp(&(b.rows(), b.cols()))
        .then_with(|| {
            for (x, y) in a.data().iter().zip(b.data()) {
                let c = x.total_cmp(y);
                if c != std::cmp::Ordering::Equal {
                    return c;
                }
            }
            std::cmp::Ordering::Equal
        })
        .is_le()
}

/// One sweep cell: a method configuration crossed with an adaptation-set
/// size. Seeds come from the plan.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub method: Method,
    pub lambda: f64,
    pub rho: f64,
    pub adapt_frames: usize,
}

/// A full experiment grid over one SI model and one target speaker.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub cells: Vec<SweepCell>,
    pub seeds: Vec<u64>,
    pub si_checkpoint: PathBuf,
    /// Adaptation dataset file per set size.
    pub adapt_datasets: BTreeMap<usize, PathBuf>,
    pub test_dataset: PathBuf,
    /// Shared hyperparameters; per-cell method, lambda, rho and seed
    /// override it.
    pub base: AdaptConfig,
    pub probe: ProbeConfig,
    pub bandwidth: f64,
    /// Worker threads for cell execution.
    pub jobs: usize,
    /// Suppresses the timestamp header so reruns are byte-identical.
    pub deterministic: bool,
}

/// One evaluated run (or a per-cell aggregate when `seed` is `None`).
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: String,
    pub lambda: f64,
    pub rho: f64,
    pub adapt_frames: usize,
    pub seed: Option<u64>,
    pub fer: f64,
    pub probe_accuracy: f64,
    pub mmd: f64,
}

impl EvalReport {
    fn csv_row(&self) -> String {
        let seed = match self.seed {
            Some(s) => s.to_string(),
            None => "mean".to_string(),
        };
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.method,
            self.lambda,
            self.rho,
            self.adapt_frames,
            seed,
            self.fer,
            self.probe_accuracy,
            self.mmd
        )
    }
}

pub const CSV_HEADER: &str = "method,lambda,rho,adapt_frames,seed,fer,probe_acc,mmd";

/// Per-run rows plus per-cell aggregates (seed-averaged), in plan order.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<EvalReport>,
    pub aggregates: Vec<EvalReport>,
}

/// The representation the probe and MMD diagnostics compare for a method:
/// deep features for feature-space methods, posterior vectors for asa-sp.
fn diagnostic_representations(
    method: Method,
    sd: &AcousticModel,
    si: &AcousticModel,
    frames: &Tensor2D,
) -> Result<(Tensor2D, Tensor2D)> {
    match method {
        Method::AsaSp => Ok((
            classify_senones(sd, frames)?,
            classify_senones(si, frames)?,
        )),
        _ => Ok((
            extract_features(sd, frames)?,
            extract_features(si, frames)?,
        )),
    }
}

fn run_cell(
    cell: &SweepCell,
    seed: u64,
    si: &AcousticModel,
    adapt_data: &FrameDataset,
    test: &FrameDataset,
    plan: &SweepPlan,
) -> Result<EvalReport> {
    let cfg = AdaptConfig {
        method: cell.method,
        lambda: cell.lambda,
        rho: cell.rho,
        seed,
        ..plan.base.clone()
    };
    let outcome = adapt(si, adapt_data, &cfg)?;
    let fer = frame_error_rate(&outcome.model, test)?;
    let (rep_sd, rep_si) = diagnostic_representations(cell.method, &outcome.model, si, &test.features)?;
    let probe_accuracy = discriminator_probe(&rep_sd, &rep_si, &plan.probe, seed)?;
    let divergence = mmd(&rep_sd, &rep_si, plan.bandwidth)?.max(0.0);
    Ok(EvalReport {
        method: cell.method.as_str().to_string(),
        lambda: cell.lambda,
        rho: cell.rho,
        adapt_frames: cell.adapt_frames,
        seed: Some(seed),
        fer,
        probe_accuracy,
        mmd: divergence,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs every `(cell, seed)` pair of the plan, writes the CSV report to
/// `out_path` and returns the rows. Inputs are validated before any
/// training starts; cells run on a bounded worker pool and the CSV is
/// assembled in plan order afterwards.
pub fn run_experiment(plan: &SweepPlan, out_path: &Path) -> Result<SweepReport> {
    if plan.cells.is_empty() || plan.seeds.is_empty() {
        return Err(Error::invalid("sweep plan has no cells or no seeds"));
    }
    // Validate all referenced files up front.
    if !plan.si_checkpoint.is_file() {
        return Err(Error::invalid(format!(
            "missing SI checkpoint: {}",
            plan.si_checkpoint.display()
        )));
    }
    if !plan.test_dataset.is_file() {
        return Err(Error::invalid(format!(
            "missing test dataset: {}",
            plan.test_dataset.display()
        )));
    }
    for cell in &plan.cells {
        let path = plan.adapt_datasets.get(&cell.adapt_frames).ok_or_else(|| {
            Error::invalid(format!(
                "plan has no dataset for adaptation size {}",
                cell.adapt_frames
            ))
        })?;
        if !path.is_file() {
            return Err(Error::invalid(format!(
                "missing adaptation dataset: {}",
                path.display()
            )));
        }
    }

    let si = Arc::new(load_acoustic_model(&plan.si_checkpoint)?);
    let test = Arc::new(load_dataset(&plan.test_dataset)?);
    validate_model_dataset(&si, &test)?;
    let mut adapt_sets: BTreeMap<usize, Arc<FrameDataset>> = BTreeMap::new();
    for (size, path) in &plan.adapt_datasets {
        let data = load_dataset(path)?;
        validate_model_dataset(&si, &data)?;
        if data.len() != *size {
            return Err(Error::invalid(format!(
                "{} holds {} frames, expected {}",
                path.display(),
                data.len(),
                size
            )));
        }
        adapt_sets.insert(*size, Arc::new(data));
    }

    let tasks: Vec<(usize, &SweepCell, u64)> = plan
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, cell)| plan.seeds.iter().map(move |&s| (i, cell, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("could not build worker pool: {e}")))?;
    let results: Vec<Result<EvalReport>> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|(_, cell, seed)| {
                let data = &adapt_sets[&cell.adapt_frames];
                run_cell(cell, *seed, &si, data, &test, plan)
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }

    // SI baseline: evaluate the frozen reference once per seed, probing its
    // own features against themselves (chance level by construction).
    let si_fer = frame_error_rate(&si, &test)?;
    let f_si = extract_features(&si, &test.features)?;
    let si_probe = mean(
        plan.seeds
            .iter()
            .map(|&s| discriminator_probe(&f_si, &f_si, &plan.probe, s).unwrap_or(f64::NAN)),
    );
    let si_mmd = mmd(&f_si, &f_si, plan.bandwidth)?.max(0.0);
    let mut aggregates = vec![EvalReport {
        method: "si".to_string(),
        lambda: 0.0,
        rho: 0.0,
        adapt_frames: 0,
        seed: None,
        fer: si_fer,
        probe_accuracy: si_probe,
        mmd: si_mmd,
    }];
    for (i, cell) in plan.cells.iter().enumerate() {
        let cell_runs: Vec<&EvalReport> = runs
            .iter()
            .skip(i * plan.seeds.len())
            .take(plan.seeds.len())
            .collect();
        aggregates.push(EvalReport {
            method: cell.method.as_str().to_string(),
            lambda: cell.lambda,
            rho: cell.rho,
            adapt_frames: cell.adapt_frames,
            seed: None,
            fer: mean(cell_runs.iter().map(|r| r.fer)),
            probe_accuracy: mean(cell_runs.iter().map(|r| r.probe_accuracy)),
            mmd: mean(cell_runs.iter().map(|r| r.mmd)),
        });
    }

    let mut out = String::new();
    if !plan.deterministic {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        out.push_str(&format!("# generated_unix {ts}\n"));
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &runs {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    for r in &aggregates {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(out_path, out)?;

    Ok(SweepReport { runs, aggregates })
}

/// Builds the cell grid for a sweep: one cell per method variant and
/// adaptation size. `finetune` ignores lambda and rho; `kld` spans the rho
/// list; the adversarial methods span the lambda list.
pub fn build_cells(
    methods: &[Method],
    lambdas: &[f64],
    rhos: &[f64],
    sizes: &[usize],
) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &method in methods {
        match method {
            Method::Finetune => {
                for &adapt_frames in sizes {
                    cells.push(SweepCell {
                        method,
                        lambda: 0.0,
                        rho: 0.0,
                        adapt_frames,
                    });
                }
            }
            Method::Kld => {
                for &rho in rhos {
                    for &adapt_frames in sizes {
                        cells.push(SweepCell {
                            method,
                            lambda: 0.0,
                            rho,
                            adapt_frames,
                        });
                    }
                }
            }
            Method::Asa | Method::AsaSp => {
                for &lambda in lambdas {
                    for &adapt_frames in sizes {
                        cells.push(SweepCell {
                            method,
                            lambda,
                            rho: 0.0,
                            adapt_frames,
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Convenience wrapper used by tests and the eval subcommand: probe and MMD
/// between one SD model and the SI reference on held-out frames.
pub fn distribution_diagnostics(
    method: Method,
    sd: &AcousticModel,
    si: &AcousticModel,
    frames: &Tensor2D,
    probe: &ProbeConfig,
    bandwidth: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let (rep_sd, rep_si) = diagnostic_representations(method, sd, si, frames)?;
    let acc = discriminator_probe(&rep_sd, &rep_si, probe, seed)?;
    let div = mmd(&rep_sd, &rep_si, bandwidth)?;
    Ok((acc, div))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{self, SiTrainConfig};
    use crate::datagen::{generate_corpus, SpeakerSpec};
    use crate::models::{init_acoustic_network, split_model};
    use crate::nn::Activation;

    fn toy_dataset(frames_per_class: usize, seed: u64) -> FrameDataset {
        let spec = SpeakerSpec {
            speaker_id: "h".into(),
            class_means: vec![
                vec![5.0, 0.0, 0.0, 0.0],
                vec![0.0, 5.0, 0.0, 0.0],
                vec![0.0, 0.0, 5.0, 0.0],
            ],
            class_scales: vec![1.0; 3],
            speaker_shift: vec![0.0; 4],
            speaker_rotation_angle: 0.0,
            frames_per_class,
        };
        generate_corpus(&[spec], seed).unwrap().remove(0)
    }

    fn gaussian_sample(n: usize, dim: usize, mean: f64, seed: u64) -> Tensor2D {
        use rand::Rng;
        let mut rng = rng_stream(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        // Box-Muller.
                        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                        let u2: f64 = rng.gen();
                        mean + (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect()
            })
            .collect();
        Tensor2D::from_rows(&rows).unwrap()
    }

    #[test]
    fn perfect_classifier_has_zero_fer() {
        let data = toy_dataset(50, 1);
        let (si, _) = adapt::train_si(
            &data,
            &SiTrainConfig {
                hidden: vec![10, 10],
                n_h: 2,
                epochs: 60,
                mu: 0.05,
                batch_size: 25,
                seed: 2,
            },
        )
        .unwrap();
        let fer = frame_error_rate(&si, &data).unwrap();
        assert_eq!(fer, 0.0);
    }

    #[test]
    fn constant_classifier_errs_on_all_but_one_class() {
        // Zero output weights give uniform posteriors; ties resolve to
        // senone 0, so on balanced data FER = (k-1)/k.
        let mut full = init_acoustic_network(4, &[6], 3, 5).unwrap();
        for v in full.layers_mut().last_mut().unwrap().weight_mut().data_mut() {
            *v = 0.0;
        }
        let m = split_model(full, 1).unwrap();
        let data = toy_dataset(30, 3);
        let fer = frame_error_rate(&m, &data).unwrap();
        assert!((fer - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fer_agrees_with_brute_force_recount() {
        let data = toy_dataset(40, 7);
        let full = init_acoustic_network(4, &[8, 8], 3, 11).unwrap();
        let m = split_model(full, 2).unwrap();
        let fer = frame_error_rate(&m, &data).unwrap();
        // Independent recount straight from posteriors.
        let post = classify_senones(&m, &data.features).unwrap();
        let mut correct = 0usize;
        for t in 0..post.rows() {
            let row = post.row(t);
            let mut best = 0usize;
            for s in 1..row.len() {
                if row[s] > row[best] {
                    best = s;
                }
            }
            if best as u32 == data.labels.get(t) {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / data.len() as f64;
        assert!((fer - (1.0 - accuracy)).abs() < 1e-15);
    }

    #[test]
    fn probe_on_identical_distributions_sits_at_chance() {
        let f_sd = gaussian_sample(200, 6, 0.0, 1);
        let f_si = gaussian_sample(200, 6, 0.0, 2);
        let acc = discriminator_probe(&f_sd, &f_si, &ProbeConfig::default(), 3).unwrap();
        assert!((0.40..=0.60).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn probe_separates_shifted_distributions() {
        let f_sd = gaussian_sample(200, 6, 3.0, 4);
        let f_si = gaussian_sample(200, 6, 0.0, 5);
        let acc = discriminator_probe(&f_sd, &f_si, &ProbeConfig::default(), 6).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn probe_is_deterministic_per_seed() {
        let f_sd = gaussian_sample(60, 4, 0.5, 8);
        let f_si = gaussian_sample(60, 4, 0.0, 9);
        let cfg = ProbeConfig {
            epochs: 30,
            ..ProbeConfig::default()
        };
        let a = discriminator_probe(&f_sd, &f_si, &cfg, 17).unwrap();
        let b = discriminator_probe(&f_sd, &f_si, &cfg, 17).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn probe_rejects_insufficient_rows() {
        let one = Tensor2D::zeros(1, 3);
        let many = Tensor2D::zeros(8, 3);
        assert!(discriminator_probe(&one, &many, &ProbeConfig::default(), 0).is_err());
    }

    #[test]
    fn mmd_of_duplicated_identical_rows_is_zero() {
        let row = vec![0.3, -1.0, 2.5];
        let t = Tensor2D::from_rows(&vec![row; 50]).unwrap();
        let v = mmd(&t, &t, 1.0).unwrap();
        assert!(v.abs() < 1e-9, "got {v}");
    }

    #[test]
    fn mmd_separated_gaussians_exceeds_half_and_matches_oracle() {
        let a = gaussian_sample(500, 1, 0.0, 21);
        let b = gaussian_sample(500, 1, 5.0, 22);
        let v = mmd(&a, &b, 1.0).unwrap();
        assert!(v > 0.5, "got {v}");

        // Brute-force kernel-sum oracle on the same sample.
        let k = |x: &[f64], y: &[f64]| {
            let d2: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
            (-d2 / 2.0).exp()
        };
        let m = a.rows() as f64;
        let mut aa = 0.0;
        let mut bb = 0.0;
        let mut ab = 0.0;
        for i in 0..a.rows() {
            for j in 0..a.rows() {
                if i != j {
                    aa += k(a.row(i), a.row(j));
                    bb += k(b.row(i), b.row(j));
                }
                ab += k(a.row(i), b.row(j));
            }
        }
        let oracle = aa / (m * (m - 1.0)) + bb / (m * (m - 1.0)) - 2.0 * ab / (m * m);
        assert!((v - oracle).abs() < 1e-9, "{v} vs oracle {oracle}");
    }

    #[test]
    fn mmd_is_bitwise_symmetric() {
        let a = gaussian_sample(40, 3, 0.0, 31);
        let b = gaussian_sample(35, 3, 1.0, 32);
        let x = mmd(&a, &b, 2.0).unwrap();
        let y = mmd(&b, &a, 2.0).unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn mmd_rejects_tiny_samples_and_bad_bandwidth() {
        let a = Tensor2D::zeros(1, 2);
        let b = Tensor2D::zeros(5, 2);
        assert!(mmd(&a, &b, 1.0).is_err());
        assert!(mmd(&b, &b, 0.0).is_err());
    }

    #[test]
    fn build_cells_spans_the_grid() {
        let cells = build_cells(
            &[Method::Finetune, Method::Kld, Method::Asa],
            &[1.0, 3.0],
            &[0.2, 0.5],
            &[50, 100],
        );
        // finetune: 2, kld: 2x2, asa: 2x2
        assert_eq!(cells.len(), 2 + 4 + 4);
    }

    #[test]
    fn activation_guard() {
        // Softmax heads stay softmax through the harness path.
        let full = init_acoustic_network(4, &[5], 3, 1).unwrap();
        assert_eq!(
            full.layers().last().unwrap().activation(),
            Activation::Softmax
        );
    }
}
