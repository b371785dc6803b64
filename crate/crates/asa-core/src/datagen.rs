//! Synthetic multi-speaker corpus generation and binary persistence.
//!
//! Frames are drawn class-conditionally from isotropic Gaussians around
//! well-separated class means, then pushed through a per-speaker affine
//! mismatch (a rotation in the first coordinate plane followed by a shift).
//! Speaker-independent training speakers get small mismatches; the held-out
//! target speaker gets a large one, which is what adaptation has to undo.
//!
//! Two file formats live here, both little-endian and bit-exact:
//! datasets (`ASAD`) and model checkpoints (`ASAM`).

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::LabelSeq;
use crate::models::{AcousticModel, Discriminator, ModelRole};
use crate::nn::{self, Activation, DenseLayer, Network};
use crate::tensor::Tensor2D;

pub const DATASET_MAGIC: &[u8; 4] = b"ASAD";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ASAM";
pub const FORMAT_VERSION: u32 = 1;

/// Feature frames with aligned senone labels for one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub features: Tensor2D,
    pub labels: LabelSeq,
    pub speaker_id: String,
    pub num_senones: usize,
}

impl FrameDataset {
    pub fn new(
        features: Tensor2D,
        labels: LabelSeq,
        speaker_id: String,
        num_senones: usize,
    ) -> Result<Self> {
        if num_senones == 0 {
            return Err(Error::invalid("a dataset needs at least one senone"));
        }
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} frames but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        labels.validate(num_senones)?;
        Ok(FrameDataset {
            features,
            labels,
            speaker_id,
            num_senones,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// First `n` frames as a new dataset. Frames are generated in
    /// round-robin class order, so prefixes stay close to class-balanced.
    pub fn prefix(&self, n: usize) -> Result<FrameDataset> {
        if n > self.len() {
            return Err(Error::invalid(format!(
                "prefix of {n} frames requested from {} available",
                self.len()
            )));
        }
        let indices: Vec<usize> = (0..n).collect();
        FrameDataset::new(
            self.features.select_rows(&indices)?,
            self.labels.select(&indices),
            self.speaker_id.clone(),
            self.num_senones,
        )
    }

    /// Concatenates several speakers' frames into one pooled dataset.
    pub fn concat(parts: &[FrameDataset]) -> Result<FrameDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot pool zero datasets"))?;
        let mut features = first.features.clone();
        let mut labels = first.labels.as_slice().to_vec();
        for part in &parts[1..] {
            if part.feature_dim() != first.feature_dim() || part.num_senones != first.num_senones
            {
                return Err(Error::invalid(
                    "pooled datasets must share feature dim and senone set",
                ));
            }
            features = features.vstack(&part.features)?;
            labels.extend_from_slice(part.labels.as_slice());
        }
        FrameDataset::new(
            features,
            LabelSeq::new(labels),
            "pooled".to_string(),
            first.num_senones,
        )
    }
}

/// Rejects a model/dataset pairing with mismatched dimensions before any
/// training or evaluation starts.
pub fn validate_model_dataset(m: &AcousticModel, d: &FrameDataset) -> Result<()> {
    if m.input_dim() != d.feature_dim() {
        return Err(Error::invalid(format!(
            "model expects {}-dim frames but the dataset has {}-dim frames",
            m.input_dim(),
            d.feature_dim()
        )));
    }
    if m.num_senones() != d.num_senones {
        return Err(Error::invalid(format!(
            "model has {} senones but the dataset has {}",
            m.num_senones(),
            d.num_senones
        )));
    }
    Ok(())
}

/// Recipe for one synthetic speaker.
#[derive(Debug, Clone)]
pub struct SpeakerSpec {
    pub speaker_id: String,
    /// One mean per senone class, all of the same dimension.
    pub class_means: Vec<Vec<f64>>,
    /// Isotropic standard deviation per class, all positive.
    pub class_scales: Vec<f64>,
    /// Additive speaker shift applied after rotation.
    pub speaker_shift: Vec<f64>,
    /// Rotation angle (radians) applied in the (0, 1) coordinate plane.
    pub speaker_rotation_angle: f64,
    pub frames_per_class: usize,
}

impl SpeakerSpec {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.class_means.first().map(|m| m.len()).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.class_means.is_empty() || self.frames_per_class == 0 {
            return Err(Error::invalid(
                "speaker spec needs at least one class and one frame per class",
            ));
        }
        let dim = self.feature_dim();
        if dim == 0 {
            return Err(Error::invalid("class means must be non-empty vectors"));
        }
        if self.class_means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("class means must share one dimension"));
        }
        if self.class_scales.len() != self.class_means.len() {
            return Err(Error::invalid("one scale per class is required"));
        }
        if self.class_scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("class scales must be positive"));
        }
        if self.speaker_shift.len() != dim {
            return Err(Error::invalid("speaker shift dimension mismatch"));
        }
        if self.speaker_rotation_angle != 0.0 && dim < 2 {
            return Err(Error::invalid(
                "rotation needs at least two feature dimensions",
            ));
        }
        // Separability margin: class means pairwise at least 4x the largest
        // class scale apart.
        let margin = 4.0 * self.class_scales.iter().cloned().fold(0.0, f64::max);
        for i in 0..self.class_means.len() {
            for j in (i + 1)..self.class_means.len() {
                let d2: f64 = self.class_means[i]
                    .iter()
                    .zip(&self.class_means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2.sqrt() < margin {
                    return Err(Error::invalid(format!(
                        "class means {i} and {j} are {:.3} apart, below the margin {margin:.3}",
                        d2.sqrt()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller, one draw per call.
    loop {
        let u1: f64 = rng.gen();
        if u1 > 0.0 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        }
    }
}

/// Generates one dataset per speaker spec. Deterministic per seed: speaker
/// `i` draws from its own RNG stream, so adding a speaker never perturbs the
/// others' frames.
pub fn generate_corpus(specs: &[SpeakerSpec], seed: u64) -> Result<Vec<FrameDataset>> {
    if specs.is_empty() {
        return Err(Error::invalid("no speaker specs given"));
    }
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| generate_speaker(spec, seed, 100 + i as u64))
        .collect()
}

fn generate_speaker(spec: &SpeakerSpec, seed: u64, stream: u64) -> Result<FrameDataset> {
    spec.validate()?;
    let mut rng = nn::rng_stream(seed, stream);
    let dim = spec.feature_dim();
    let classes = spec.num_classes();
    let total = classes * spec.frames_per_class;
    let (sin, cos) = spec.speaker_rotation_angle.sin_cos();
    let mut data = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for t in 0..total {
        let c = t % classes;
        let mean = &spec.class_means[c];
        let scale = spec.class_scales[c];
        let mut x: Vec<f64> = (0..dim)
            .map(|j| mean[j] + scale * standard_normal(&mut rng))
            .collect();
        if spec.speaker_rotation_angle != 0.0 {
            let (x0, x1) = (x[0], x[1]);
            x[0] = x0 * cos - x1 * sin;
            x[1] = x0 * sin + x1 * cos;
        }
        for (v, s) in x.iter_mut().zip(&spec.speaker_shift) {
            *v += s;
        }
        data.extend_from_slice(&x);
        labels.push(c as u32);
    }
    FrameDataset::new(
        Tensor2D::from_data(total, dim, data)?,
        LabelSeq::new(labels),
        spec.speaker_id.clone(),
        classes,
    )
}

/// Knobs for the default desk-scale corpus.
#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub feature_dim: usize,
    pub num_senones: usize,
    pub num_si_speakers: usize,
    pub frames_per_si_speaker: usize,
    pub adapt_sizes: Vec<usize>,
    pub test_frames: usize,
    /// Per-coordinate std of SI speakers' shifts.
    pub si_shift_scale: f64,
    /// SI speakers' rotation angles are uniform in +/- this bound.
    pub si_rotation: f64,
    /// Norm of the target speaker's shift vector.
    pub target_shift_norm: f64,
    pub target_rotation: f64,
    /// Class means are placed on a sphere of this radius.
    pub class_mean_radius: f64,
    pub class_scale: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            feature_dim: 20,
            num_senones: 10,
            num_si_speakers: 8,
            frames_per_si_speaker: 2000,
            adapt_sizes: vec![50, 100, 200, 400],
            test_frames: 2000,
            si_shift_scale: 0.2,
            si_rotation: 0.05,
            target_shift_norm: 3.0,
            target_rotation: 0.3,
            class_mean_radius: 7.0,
            class_scale: 1.0,
            seed: 7,
        }
    }
}

/// The generated corpus: SI training speakers, the target speaker's
/// adaptation superset (prefixes give the smaller sets) and a disjoint
/// target test set.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub si_speakers: Vec<FrameDataset>,
    pub adapt_full: FrameDataset,
    pub adapt_sizes: Vec<usize>,
    pub test: FrameDataset,
}

impl Corpus {
    pub fn pooled_si(&self) -> Result<FrameDataset> {
        FrameDataset::concat(&self.si_speakers)
    }

    pub fn adapt_set(&self, frames: usize) -> Result<FrameDataset> {
        self.adapt_full.prefix(frames)
    }
}

/// Builds the default multi-speaker corpus: shared class means, mildly
/// perturbed SI speakers and one strongly mismatched held-out target.
pub fn default_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.num_si_speakers < 2 {
        return Err(Error::invalid("need at least two SI training speakers"));
    }
    if cfg.adapt_sizes.is_empty() {
        return Err(Error::invalid("need at least one adaptation set size"));
    }
    if cfg.feature_dim < 2 {
        return Err(Error::invalid("need at least two feature dimensions"));
    }
    let means = place_class_means(cfg)?;
    let scales = vec![cfg.class_scale; cfg.num_senones];
    let per_class_si = div_ceil(cfg.frames_per_si_speaker, cfg.num_senones);

    let mut specs = Vec::new();
    let mut param_rng = nn::rng_stream(cfg.seed, 1_000);
    for i in 0..cfg.num_si_speakers {
        let shift: Vec<f64> = (0..cfg.feature_dim)
            .map(|_| cfg.si_shift_scale * standard_normal(&mut param_rng))
            .collect();
        let angle = param_rng.gen_range(-cfg.si_rotation..=cfg.si_rotation);
        specs.push(SpeakerSpec {
            speaker_id: format!("si{i:02}"),
            class_means: means.clone(),
            class_scales: scales.clone(),
            speaker_shift: shift,
            speaker_rotation_angle: angle,
            frames_per_class: per_class_si,
        });
    }

    // The held-out target speaker: one draw for the shift direction, shared
    // by the adaptation and test specs so both come from the same speaker.
    // The shift lives outside the rotation plane, so the rotation controls
    // how much the mismatch confuses classes while the shift displaces the
    // frames without moving them between classes.
    let mut target_rng = nn::rng_stream(cfg.seed, 2_000);
    let mut direction = vec![0.0; cfg.feature_dim];
    for v in direction.iter_mut().skip(2) {
        *v = standard_normal(&mut target_rng);
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for v in &mut direction {
        *v *= cfg.target_shift_norm / norm;
    }
    let max_adapt = *cfg.adapt_sizes.iter().max().unwrap();
    let target_spec = |frames_per_class: usize| SpeakerSpec {
        speaker_id: "target".to_string(),
        class_means: means.clone(),
        class_scales: scales.clone(),
        speaker_shift: direction.clone(),
        speaker_rotation_angle: cfg.target_rotation,
        frames_per_class,
    };
    specs.push(target_spec(div_ceil(max_adapt, cfg.num_senones)));
    specs.push(target_spec(div_ceil(cfg.test_frames, cfg.num_senones)));

    let mut datasets = generate_corpus(&specs, cfg.seed)?;
    let test = datasets.pop().unwrap().prefix(cfg.test_frames)?;
    let adapt_full = datasets.pop().unwrap().prefix(max_adapt)?;
    Ok(Corpus {
        si_speakers: datasets,
        adapt_full,
        adapt_sizes: cfg.adapt_sizes.clone(),
        test,
    })
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Places class means evenly on a circle in the (0, 1) rotation plane, with
/// small seeded jitter in the remaining coordinates.
///
/// This layout makes the speaker rotation a first-class mismatch: rotating
/// by a fraction of the class spacing slides every cluster toward its
/// neighbor's position, degrading an unadapted model smoothly with the
/// angle, while the rotated constellation stays on the same ring the clean
/// one occupies. The margin is checked and rejected if the radius is too
/// small for the class count.
fn place_class_means(cfg: &CorpusConfig) -> Result<Vec<Vec<f64>>> {
    let margin = 4.0 * cfg.class_scale;
    let k = cfg.num_senones;
    let mut rng = nn::rng_stream(cfg.seed, 3_000);
    let mut means = Vec::with_capacity(k);
    for c in 0..k {
        let angle = 2.0 * PI * c as f64 / k as f64;
        let mut m = vec![0.0; cfg.feature_dim];
        m[0] = cfg.class_mean_radius * angle.cos();
        m[1] = cfg.class_mean_radius * angle.sin();
        for v in m.iter_mut().skip(2) {
            *v = rng.gen_range(-1.0..1.0);
        }
        means.push(m);
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let d2: f64 = means[i]
                .iter()
                .zip(&means[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2.sqrt() < margin {
                return Err(Error::invalid(format!(
                    "class means {i} and {j} are {:.3} apart, below the margin {margin:.3}; \
                     increase the radius or lower the scale",
                    d2.sqrt()
                )));
            }
        }
    }
    Ok(means)
}

// ---------------------------------------------------------------------------
// Binary formats
// ---------------------------------------------------------------------------

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        let mut w = ByteWriter { buf };
        w.put_u32(FORMAT_VERSION);
        w
    }

    fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn put_str(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated file: needed {n} bytes for {what}"),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let pos = self.offset();
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(pos, format!("{what} is not valid UTF-8")))
    }

    fn check_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:02x?}, expected {:?}",
                    got,
                    std::str::from_utf8(magic).unwrap()
                ),
            ));
        }
        Ok(())
    }

    fn check_version(&mut self) -> Result<()> {
        let pos = self.offset();
        let found = self.u32("version")?;
        if found != FORMAT_VERSION {
            let _ = pos;
            return Err(Error::UnsupportedVersion {
                found,
                supported: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes after the payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Serializes a dataset to its canonical byte layout. Identical datasets
/// always produce identical bytes.
pub fn dataset_to_bytes(d: &FrameDataset) -> Vec<u8> {
    let mut w = ByteWriter::new(DATASET_MAGIC);
    w.put_u32(d.len() as u32);
    w.put_u32(d.feature_dim() as u32);
    w.put_u32(d.num_senones as u32);
    w.put_str(&d.speaker_id);
    for &v in d.features.data() {
        w.put_f64(v);
    }
    for &y in d.labels.as_slice() {
        w.put_u32(y);
    }
    w.buf
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<FrameDataset> {
    let mut r = ByteReader::new(bytes);
    r.check_magic(DATASET_MAGIC)?;
    r.check_version()?;
    let frames = r.u32("frame count")? as usize;
    let dim = r.u32("feature dim")? as usize;
    let senones = r.u32("senone count")? as usize;
    let speaker_id = r.string("speaker id")?;
    let feat_offset = r.offset();
    let mut data = Vec::with_capacity(frames * dim);
    for _ in 0..frames * dim {
        data.push(r.f64("feature value")?);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(feat_offset, "non-finite feature value"));
    }
    let mut labels = Vec::with_capacity(frames);
    for _ in 0..frames {
        labels.push(r.u32("label")?);
    }
    r.finish()?;
    FrameDataset::new(
        Tensor2D::from_data(frames, dim, data)?,
        LabelSeq::new(labels),
        speaker_id,
        senones,
    )
}

pub fn save_dataset(d: &FrameDataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(d))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<FrameDataset> {
    let bytes = std::fs::read(path)?;
    dataset_from_bytes(&bytes)
}

/// Either kind of model a checkpoint can hold.
#[derive(Debug, Clone)]
pub enum CheckpointModel {
    Acoustic(AcousticModel),
    Discriminator(Discriminator),
}

impl From<AcousticModel> for CheckpointModel {
    fn from(m: AcousticModel) -> Self {
        CheckpointModel::Acoustic(m)
    }
}

impl From<Discriminator> for CheckpointModel {
    fn from(d: Discriminator) -> Self {
        CheckpointModel::Discriminator(d)
    }
}

fn put_named_tensors(w: &mut ByteWriter, prefix: &str, net: &Network) {
    for (i, layer) in net.layers().iter().enumerate() {
        w.put_str(&format!("{prefix}.{i}.weight"));
        w.put_u32(2);
        w.put_u32(layer.out_dim() as u32);
        w.put_u32(layer.in_dim() as u32);
        for &v in layer.weight().data() {
            w.put_f64(v);
        }
        w.put_str(&format!("{prefix}.{i}.bias"));
        w.put_u32(1);
        w.put_u32(layer.out_dim() as u32);
        for &v in layer.bias() {
            w.put_f64(v);
        }
    }
}

pub fn checkpoint_to_bytes(model: &CheckpointModel) -> Vec<u8> {
    let mut w = ByteWriter::new(CHECKPOINT_MAGIC);
    match model {
        CheckpointModel::Acoustic(m) => {
            w.put_u32(0); // kind
            w.put_u32(match m.role() {
                ModelRole::Si => 0,
                ModelRole::Sd => 1,
            });
            w.put_u32(m.split_index() as u32);
            w.put_u32(m.num_senones() as u32);
            w.put_u32(m.input_dim() as u32);
            w.put_u32(m.feature_dim() as u32);
            let acts: Vec<u32> = m
                .feature_extractor()
                .layers()
                .iter()
                .chain(m.senone_classifier().layers())
                .map(|l| l.activation().code())
                .collect();
            w.put_u32(acts.len() as u32);
            for a in acts {
                w.put_u32(a);
            }
            let tensors =
                (m.feature_extractor().layers().len() + m.senone_classifier().layers().len()) * 2;
            w.put_u32(tensors as u32);
            put_named_tensors(&mut w, "extractor", m.feature_extractor());
            put_named_tensors(&mut w, "classifier", m.senone_classifier());
        }
        CheckpointModel::Discriminator(d) => {
            w.put_u32(1); // kind
            w.put_u32(0); // role: not meaningful
            w.put_u32(0); // n_h
            w.put_u32(0); // senones
            w.put_u32(d.input_dim() as u32);
            w.put_u32(0); // r_f
            let acts: Vec<u32> = d
                .net()
                .layers()
                .iter()
                .map(|l| l.activation().code())
                .collect();
            w.put_u32(acts.len() as u32);
            for a in acts {
                w.put_u32(a);
            }
            w.put_u32((d.net().layers().len() * 2) as u32);
            put_named_tensors(&mut w, "net", d.net());
        }
    }
    w.buf
}

struct NamedTensor {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn read_named_tensor(r: &mut ByteReader) -> Result<NamedTensor> {
    let name = r.string("tensor name")?;
    let rank = r.u32("tensor rank")? as usize;
    let rank_offset = r.offset();
    if rank == 0 || rank > 2 {
        return Err(Error::format(
            rank_offset - 4,
            format!("tensor '{name}' has unsupported rank {rank}"),
        ));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32("tensor dim")? as usize);
    }
    let count: usize = dims.iter().product();
    let values_offset = r.offset();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f64("tensor value")?);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(
            values_offset,
            format!("tensor '{name}' holds non-finite values"),
        ));
    }
    Ok(NamedTensor { name, dims, values })
}

/// Rebuilds a layer stack from `(prefix.i.weight, prefix.i.bias)` pairs.
fn layers_from_tensors(
    prefix: &str,
    tensors: &[NamedTensor],
    activations: &[Activation],
) -> Result<Vec<DenseLayer>> {
    let mut layers = Vec::new();
    for (i, act) in activations.iter().enumerate() {
        let wname = format!("{prefix}.{i}.weight");
        let bname = format!("{prefix}.{i}.bias");
        let weight = tensors
            .iter()
            .find(|t| t.name == wname)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor '{wname}'")))?;
        let bias = tensors
            .iter()
            .find(|t| t.name == bname)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor '{bname}'")))?;
        if weight.dims.len() != 2 || bias.dims.len() != 1 {
            return Err(Error::invalid(format!(
                "tensor ranks for layer {i} of '{prefix}' are wrong"
            )));
        }
        layers.push(DenseLayer::new(
            Tensor2D::from_data(weight.dims[0], weight.dims[1], weight.values.clone())?,
            bias.values.clone(),
            *act,
        )?);
    }
    Ok(layers)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<CheckpointModel> {
    let mut r = ByteReader::new(bytes);
    r.check_magic(CHECKPOINT_MAGIC)?;
    r.check_version()?;
    let kind = r.u32("model kind")?;
    let role = r.u32("model role")?;
    let n_h = r.u32("split index")? as usize;
    let num_senones = r.u32("senone count")? as usize;
    let r_x = r.u32("input dim")? as usize;
    let r_f = r.u32("feature dim")? as usize;
    let act_count = r.u32("activation count")? as usize;
    let mut activations = Vec::with_capacity(act_count);
    for _ in 0..act_count {
        let pos = r.offset();
        let code = r.u32("activation code")?;
        let act = Activation::from_code(code)
            .ok_or_else(|| Error::format(pos, format!("unknown activation code {code}")))?;
        activations.push(act);
    }
    let tensor_count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        tensors.push(read_named_tensor(&mut r)?);
    }
    r.finish()?;

    match kind {
        0 => {
            if n_h == 0 || n_h >= act_count {
                return Err(Error::invalid(format!(
                    "checkpoint split index {n_h} is inconsistent with {act_count} layers"
                )));
            }
            let extractor = Network::new(layers_from_tensors(
                "extractor",
                &tensors,
                &activations[..n_h],
            )?)?;
            let classifier = Network::new(layers_from_tensors(
                "classifier",
                &tensors,
                &activations[n_h..],
            )?)?;
            if extractor.input_dim() != r_x
                || extractor.output_dim() != r_f
                || classifier.output_dim() != num_senones
            {
                return Err(Error::invalid(
                    "checkpoint metadata disagrees with its tensors",
                ));
            }
            let role = if role == 0 { ModelRole::Si } else { ModelRole::Sd };
            let m = AcousticModel::from_parts(extractor, classifier, role)?;
            Ok(CheckpointModel::Acoustic(m))
        }
        1 => {
            let net = Network::new(layers_from_tensors("net", &tensors, &activations)?)?;
            if net.input_dim() != r_x {
                return Err(Error::invalid(
                    "checkpoint metadata disagrees with its tensors",
                ));
            }
            Ok(CheckpointModel::Discriminator(Discriminator::from_network(
                net,
            )?))
        }
        other => Err(Error::invalid(format!("unknown checkpoint kind {other}"))),
    }
}

pub fn save_checkpoint(model: &CheckpointModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointModel> {
    let bytes = std::fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}

/// Loads a checkpoint that must hold an acoustic model.
pub fn load_acoustic_model(path: &Path) -> Result<AcousticModel> {
    match load_checkpoint(path)? {
        CheckpointModel::Acoustic(m) => Ok(m),
        CheckpointModel::Discriminator(_) => Err(Error::invalid(format!(
            "{} holds a discriminator, not an acoustic model",
            path.display()
        ))),
    }
}

/// Loads a checkpoint that must hold a discriminator.
pub fn load_discriminator(path: &Path) -> Result<Discriminator> {
    match load_checkpoint(path)? {
        CheckpointModel::Discriminator(d) => Ok(d),
        CheckpointModel::Acoustic(_) => Err(Error::invalid(format!(
            "{} holds an acoustic model, not a discriminator",
            path.display()
        ))),
    }
}
