//! The model bundle: convolutional encoder, BNNeck head (batch norm followed
//! by a bias-free linear classifier), set aggregation and student
//! initialization.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{argument, config, Result};
use crate::nn::{BatchNorm, BnCache, BnStats, Conv2d, Linear, Param};
use crate::rng::{self, Stream};

/// Registered encoder architectures. Each has three 3×3 conv blocks with
/// strides 2, 2, 1; the final block's width is the embedding size and its
/// ReLU is dropped.
pub const ARCHITECTURES: &[&str] = &["tinyconv", "tinyconv-slim"];

/// Default embedding width of the toy encoders.
pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub id: String,
    pub widths: [usize; 3],
    pub strides: [usize; 3],
}

impl ArchSpec {
    /// Index of the block that student initialization re-draws.
    pub fn final_block(&self) -> usize {
        self.widths.len() - 1
    }
}

pub fn arch_spec(id: &str, embed_dim: usize) -> Result<ArchSpec> {
    if embed_dim == 0 {
        return config("embedding dimension must be >= 1");
    }
    let widths = match id {
        "tinyconv" => [16, 32, embed_dim],
        "tinyconv-slim" => [8, 16, embed_dim],
        other => {
            return config(format!(
                "unknown architecture `{other}` (known: {})",
                ARCHITECTURES.join(", ")
            ))
        }
    };
    Ok(ArchSpec {
        id: id.to_string(),
        widths,
        strides: [2, 2, 1],
    })
}

/// Per-channel input standardization, estimated on the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for InputNorm {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub relu: bool,
}

/// Which statistics the normalization layers use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Running statistics (evaluation).
    Eval,
    /// Statistics of the current batch, running statistics untouched.
    Batch,
}

struct BlockTape {
    col: Vec<f32>,
    in_hw: (usize, usize),
    bn: BnCache,
    activated: Option<Vec<f32>>,
}

/// Activations saved by a training forward pass of the encoder.
pub struct EncoderTape {
    blocks: Vec<BlockTape>,
    images: usize,
    final_hw: (usize, usize),
}

/// Activations saved by a training forward pass of the head.
pub struct HeadTape {
    rows: usize,
    inference: Vec<f32>,
    neck: BnCache,
}

/// Output of the head for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// Post-neck features, `rows × D`.
    pub inference: Vec<f32>,
    /// Classifier outputs, `rows × C`.
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch_id: String,
    pub embed_dim: usize,
    pub class_count: usize,
    pub image_size: usize,
    pub input_norm: InputNorm,
    pub blocks: Vec<ConvBlock>,
    pub neck: BatchNorm,
    pub classifier: Linear,
}

fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

impl ModelBundle {
    /// Freshly initialized bundle: fan-in scaled uniform weights, unit/zero
    /// normalization affine parameters.
    pub fn new(
        arch_id: &str,
        embed_dim: usize,
        class_count: usize,
        image_size: usize,
        input_norm: InputNorm,
        seed: u64,
    ) -> Result<Self> {
        let spec = arch_spec(arch_id, embed_dim)?;
        if class_count == 0 {
            return config("class count must be >= 1");
        }
        if image_size < 8 {
            return config("image size must be >= 8");
        }
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let mut c_in = 3;
        let mut blocks = Vec::new();
        for (i, (&width, &stride)) in spec.widths.iter().zip(&spec.strides).enumerate() {
            blocks.push(ConvBlock {
                conv: Conv2d::new(c_in, width, stride, &mut rng),
                bn: BatchNorm::new(width),
                relu: i != spec.final_block(),
            });
            c_in = width;
        }
        Ok(Self {
            arch_id: spec.id,
            embed_dim,
            class_count,
            image_size,
            input_norm,
            blocks,
            neck: BatchNorm::new(embed_dim),
            classifier: Linear::new(embed_dim, class_count, &mut rng),
        })
    }

    pub fn spec(&self) -> ArchSpec {
        arch_spec(&self.arch_id, self.embed_dim).expect("bundle holds a registered architecture")
    }

    fn image_pixels(&self) -> usize {
        self.image_size * self.image_size * 3
    }

    /// HWC images in `[0,1]` → standardized channel-major `[3][n][h][w]`.
    fn prepare_input(&self, images: &[f32], n: usize) -> Result<Vec<f32>> {
        if n == 0 {
            return argument("image batch is empty");
        }
        if images.len() != n * self.image_pixels() {
            return argument(format!(
                "expected {n} images of {0}x{0}x3 ({1} values), got {2} values",
                self.image_size,
                n * self.image_pixels(),
                images.len()
            ));
        }
        let hw = self.image_size * self.image_size;
        let mut x = vec![0.0f32; images.len()];
        for b in 0..n {
            let img = &images[b * self.image_pixels()..][..self.image_pixels()];
            for p in 0..hw {
                for c in 0..3 {
                    x[(c * n + b) * hw + p] = (img[p * 3 + c] - self.input_norm.mean[c]) / self.input_norm.std[c];
                }
            }
        }
        Ok(x)
    }

    fn encode(
        &self,
        images: &[f32],
        n: usize,
        mode: NormMode,
        keep: bool,
    ) -> Result<(Vec<f32>, Option<EncoderTape>, Vec<BnStats>)> {
        let mut x = self.prepare_input(images, n)?;
        let (mut h, mut w) = (self.image_size, self.image_size);
        let mut tapes = Vec::new();
        let mut stats = Vec::new();
        for block in &self.blocks {
            let (ho, wo) = block.conv.out_hw(h, w);
            let (y, col) = block.conv.forward(&x, n, h, w);
            let count = n * ho * wo;
            let (mut z, cache) = match mode {
                NormMode::Eval => (block.bn.forward_eval(&y, count), None),
                NormMode::Batch => {
                    let (z, cache, s) = block.bn.forward_batch(&y, count, keep);
                    stats.push(s);
                    (z, cache)
                }
            };
            if block.relu {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            if keep {
                tapes.push(BlockTape {
                    col,
                    in_hw: (h, w),
                    bn: cache.expect("batch statistics are kept in training"),
                    activated: block.relu.then(|| z.clone()),
                });
            }
            x = z;
            h = ho;
            w = wo;
        }
        // global average pooling: [D][n][h][w] → n × D
        let d = self.embed_dim;
        let plane = h * w;
        let mut raw = vec![0.0f32; n * d];
        for c in 0..d {
            for b in 0..n {
                let s: f32 = x[(c * n + b) * plane..][..plane].iter().sum();
                raw[b * d + c] = s / plane as f32;
            }
        }
        let tape = keep.then(|| EncoderTape {
            blocks: tapes,
            images: n,
            final_hw: (h, w),
        });
        Ok((raw, tape, stats))
    }

    /// Pre-neck features (`n × D`) using running statistics. Pure.
    pub fn embed_images(&self, images: &[f32], n: usize) -> Result<Vec<f32>> {
        Ok(self.encode(images, n, NormMode::Eval, false)?.0)
    }

    /// Pre-neck features using batch statistics without touching running
    /// statistics or parameters (the frozen teacher during distillation).
    pub fn embed_images_batch_stats(&self, images: &[f32], n: usize) -> Result<Vec<f32>> {
        Ok(self.encode(images, n, NormMode::Batch, false)?.0)
    }

    /// Training forward: batch statistics, running statistics updated, tape kept.
    pub fn embed_images_train(&mut self, images: &[f32], n: usize) -> Result<(Vec<f32>, EncoderTape)> {
        let (raw, tape, stats) = self.encode(images, n, NormMode::Batch, true)?;
        for (block, s) in self.blocks.iter_mut().zip(&stats) {
            block.bn.update_running(s);
        }
        Ok((raw, tape.expect("tape requested")))
    }

    /// Accumulates encoder parameter gradients from `d_raw` (`n × D`).
    pub fn backward_encoder(&mut self, tape: EncoderTape, d_raw: &[f32]) {
        let n = tape.images;
        let d = self.embed_dim;
        let (h, w) = tape.final_hw;
        let plane = h * w;
        let mut grad = vec![0.0f32; d * n * plane];
        for c in 0..d {
            for b in 0..n {
                let g = d_raw[b * d + c] / plane as f32;
                grad[(c * n + b) * plane..][..plane].iter_mut().for_each(|v| *v = g);
            }
        }
        let last = self.blocks.len() - 1;
        for (i, t) in tape.blocks.into_iter().enumerate().rev() {
            let block = &mut self.blocks[i];
            if let Some(act) = &t.activated {
                for (g, a) in grad.iter_mut().zip(act) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let dy = block.bn.backward(&t.bn, &grad);
            let (hi, wi) = t.in_hw;
            match block.conv.backward(&t.col, &dy, n, hi, wi, i > 0) {
                Some(dx) => grad = dx,
                None => debug_assert!(i == 0 || i > last),
            }
        }
    }

    /// Neck and classifier on `rows × D` features.
    pub fn head_forward(&self, raw: &[f32], rows: usize, mode: NormMode) -> Result<HeadOutput> {
        self.check_rows(raw, rows)?;
        let d = self.embed_dim;
        let t = transpose(raw, rows, d);
        let normed = match mode {
            NormMode::Eval => self.neck.forward_eval(&t, rows),
            NormMode::Batch => self.neck.forward_batch(&t, rows, false).0,
        };
        let inference = transpose(&normed, d, rows);
        let logits = self.classifier.forward(&inference, rows);
        Ok(HeadOutput { inference, logits })
    }

    pub fn head_forward_train(&mut self, raw: &[f32], rows: usize) -> Result<(HeadOutput, HeadTape)> {
        self.check_rows(raw, rows)?;
        let d = self.embed_dim;
        let t = transpose(raw, rows, d);
        let (normed, cache, stats) = self.neck.forward_batch(&t, rows, true);
        self.neck.update_running(&stats);
        let inference = transpose(&normed, d, rows);
        let logits = self.classifier.forward(&inference, rows);
        let tape = HeadTape {
            rows,
            inference: inference.clone(),
            neck: cache.expect("kept"),
        };
        Ok((HeadOutput { inference, logits }, tape))
    }

    /// Returns ∂L/∂raw given gradients on the inference features and logits.
    pub fn backward_head(&mut self, tape: HeadTape, d_inference: &[f32], d_logits: &[f32]) -> Vec<f32> {
        let rows = tape.rows;
        let d = self.embed_dim;
        let mut d_inf = self.classifier.backward(&tape.inference, d_logits, rows);
        for (a, b) in d_inf.iter_mut().zip(d_inference) {
            *a += b;
        }
        let d_norm = self.neck.backward(&tape.neck, &transpose(&d_inf, rows, d));
        transpose(&d_norm, d, rows)
    }

    fn check_rows(&self, raw: &[f32], rows: usize) -> Result<()> {
        if rows == 0 || raw.len() != rows * self.embed_dim {
            return argument(format!(
                "head expects rows x {} features, got {} values for {rows} rows",
                self.embed_dim,
                raw.len()
            ));
        }
        Ok(())
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for block in &mut self.blocks {
            out.push(&mut block.conv.weight);
            out.push(&mut block.bn.gamma);
            out.push(&mut block.bn.beta);
        }
        out.push(&mut self.neck.gamma);
        out.push(&mut self.neck.beta);
        out.push(&mut self.classifier.weight);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|(name, _)| !name.contains("running"))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Every stored tensor (parameters and normalization buffers) by name, in
    /// a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Vec<f32>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.conv.weight"), &b.conv.weight.value));
            out.push((format!("block{i}.bn.gamma"), &b.bn.gamma.value));
            out.push((format!("block{i}.bn.beta"), &b.bn.beta.value));
            out.push((format!("block{i}.bn.running_mean"), &b.bn.running_mean));
            out.push((format!("block{i}.bn.running_var"), &b.bn.running_var));
        }
        out.push(("neck.gamma".into(), &self.neck.gamma.value));
        out.push(("neck.beta".into(), &self.neck.beta.value));
        out.push(("neck.running_mean".into(), &self.neck.running_mean));
        out.push(("neck.running_var".into(), &self.neck.running_var));
        out.push(("classifier.weight".into(), &self.classifier.weight.value));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.conv.weight"), &mut b.conv.weight.value));
            out.push((format!("block{i}.bn.gamma"), &mut b.bn.gamma.value));
            out.push((format!("block{i}.bn.beta"), &mut b.bn.beta.value));
            out.push((format!("block{i}.bn.running_mean"), &mut b.bn.running_mean));
            out.push((format!("block{i}.bn.running_var"), &mut b.bn.running_var));
        }
        out.push(("neck.gamma".into(), &mut self.neck.gamma.value));
        out.push(("neck.beta".into(), &mut self.neck.beta.value));
        out.push(("neck.running_mean".into(), &mut self.neck.running_mean));
        out.push(("neck.running_var".into(), &mut self.neck.running_var));
        out.push(("classifier.weight".into(), &mut self.classifier.weight.value));
        out
    }

    /// SHA-256 over the architecture, normalization constants and every
    /// tensor's bit pattern, as lowercase hex.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.arch_id.as_bytes());
        for v in [self.embed_dim, self.class_count, self.image_size] {
            h.update((v as u64).to_le_bytes());
        }
        for v in self.input_norm.mean.iter().chain(&self.input_norm.std) {
            h.update(v.to_bits().to_le_bytes());
        }
        for (name, t) in self.tensors() {
            h.update(name.as_bytes());
            for v in t {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 15) as usize] as char);
    }
    s
}

/// Temporal average pooling of a non-empty list of equally sized features.
pub fn aggregate_set<F: AsRef<[f32]>>(features: &[F]) -> Result<Vec<f32>> {
    let first = features
        .first()
        .ok_or_else(|| crate::Error::Argument("cannot aggregate an empty set".into()))?;
    let d = first.as_ref().len();
    let mut acc = vec![0.0f64; d];
    for f in features {
        let f = f.as_ref();
        if f.len() != d {
            return argument("set members differ in dimension");
        }
        for (a, &v) in acc.iter_mut().zip(f) {
            *a += v as f64;
        }
    }
    let n = features.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Averages consecutive runs of rows: `sizes[i]` rows form set `i`.
pub fn aggregate_runs(raw: &[f32], dim: usize, sizes: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(sizes.len() * dim);
    let mut row = 0;
    for &len in sizes {
        let rows: Vec<&[f32]> = (row..row + len).map(|r| &raw[r * dim..(r + 1) * dim]).collect();
        out.extend(aggregate_set(&rows).expect("runs are non-empty"));
        row += len;
    }
    out
}

/// Gradient of [`aggregate_runs`]: each member receives `1/len` of its set's gradient.
pub fn aggregate_runs_backward(d_sets: &[f32], dim: usize, sizes: &[usize]) -> Vec<f32> {
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(total * dim);
    for (s, &len) in sizes.iter().enumerate() {
        let g = &d_sets[s * dim..(s + 1) * dim];
        for _ in 0..len {
            out.extend(g.iter().map(|v| v / len as f32));
        }
    }
    out
}

/// Builds the student.
///
/// With the teacher's architecture and width the student starts as a copy of
/// the teacher whose final convolutional block is re-drawn under `seed` (the
/// neck's running statistics are reset because its input distribution
/// changes). Any other architecture or width gives a fully fresh student.
pub fn init_student_from_teacher(
    teacher: &ModelBundle,
    student_arch: &str,
    student_embed_dim: usize,
    seed: u64,
) -> Result<ModelBundle> {
    let spec = arch_spec(student_arch, student_embed_dim)?;
    let fresh = ModelBundle::new(
        student_arch,
        student_embed_dim,
        teacher.class_count,
        teacher.image_size,
        teacher.input_norm,
        rng::derive(seed, Stream::StudentInit, 0),
    )?;
    if student_arch != teacher.arch_id || student_embed_dim != teacher.embed_dim {
        return Ok(fresh);
    }
    let mut student = teacher.clone();
    let last = spec.final_block();
    student.blocks[last] = fresh.blocks[last].clone();
    student.neck.running_mean = fresh.neck.running_mean.clone();
    student.neck.running_var = fresh.neck.running_var.clone();
    student.zero_grad();
    Ok(student)
}
