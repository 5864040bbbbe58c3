//! Frequency-aware encoder-decoder transformer for edit-sequence prediction.
//!
//! Data flow for one image `x`:
//!
//! ```text
//! f_cor = CNN(x)                                  C × H' × W'
//! f_spa = Flatten(f_cor + pos) · W_in             N × d
//! f_mid = SoftMax(Q Kᵀ/√d) V + V                  Q, K from f_spa; V from f_cor
//! f_s   = f_mid + MLP(f_mid)
//! f_f   = Conv(HighFreq(x));  M_f = Conv1x1(f_f)  N
//! dec   = SoftMax(Q Kᵀ/√d + M_f) V                Q from causal self-attended tokens
//! f_dec = dec + MLP(dec);  logits = MLP(f_dec)    L × 7
//! ```

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointFile, TrainingState, FORMAT_VERSION};
pub use config::{ModelConfig, Positional};
pub use params::{Param, ParamGroup, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frequency::extract_frequency_map;
use crate::labels::{AttributeLabel, EditSequence, Token, MAX_EDITS};
use crate::metrics::SequencePredictor;
use crate::numerics::{Tape, Tensor, Var};
use params::Init;

#[derive(Clone, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: Attention,
    mlp: (Linear, Linear),
    norms: Option<(Norm, Norm)>,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: Attention,
    cross_attn: Attention,
    mlp: (Linear, Linear),
    norms: Option<(Norm, Norm, Norm)>,
}

/// Parameter indices for every block.
#[derive(Clone, Debug)]
struct Layout {
    backbone: Vec<Conv>,
    learned_pos: Option<usize>,
    input_proj: Linear,
    encoder: Vec<EncoderLayer>,
    freq_convs: Vec<Conv>,
    freq_proj: Option<Conv>,
    token_embed: usize,
    decoder: Vec<DecoderLayer>,
    head: (Linear, Linear),
}

/// All learnable parameters and the architecture that uses them.
#[derive(Clone, Debug)]
pub struct FaithModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    spatial_pos: Tensor,
    /// `[N×d]` key-side table for cross-attention.
    key_pos: Tensor,
    token_pos: Tensor,
}

/// Encoder result with the attention maps of every layer and head.
pub struct EncoderOutput {
    pub f_s: Var,
    pub attention: Vec<Var>,
}

/// Parameters placed on a tape.
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl FaithModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let layout = {
            let mut init = Init {
                store: &mut store,
                rng: ChaCha8Rng::seed_from_u64(seed),
            };
            build_layout(&config, &mut init)?
        };
        let grid = config.grid();
        Ok(FaithModel {
            spatial_pos: sinusoidal_2d(config.backbone_out(), grid, grid),
            key_pos: sinusoidal_2d(config.d_model, grid, grid)
                .reshape(&[config.d_model, grid * grid])?
                .transpose()?,
            token_pos: sinusoidal_1d(MAX_EDITS + 1, config.d_model),
            config,
            params: store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Zeroes the weight and bias that produce the frequency bias `M_f`.
    pub fn zero_frequency_projection(&mut self) {
        if let Some(c) = self.layout.freq_proj.clone() {
            for i in [c.w, c.b] {
                self.params.tensor_mut(i).data_mut().fill(0.0);
            }
        }
    }

    /// Zeroes the final head layer so every position scores all outputs equally.
    pub fn zero_head(&mut self) {
        let l = self.layout.head.1.clone();
        for i in [l.w, l.b] {
            self.params.tensor_mut(i).data_mut().fill(0.0);
        }
    }

    /// Same weights with the frequency branch removed.
    pub fn without_frequency_branch(&self) -> FaithModel {
        let mut m = self.clone();
        m.config.frequency = None;
        m.layout.freq_proj = None;
        m.layout.freq_convs.clear();
        m
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        Bound(self.params.bind(tape, requires_grad))
    }

    pub fn bind_flat(&self, tape: &mut Tape, flat: Var) -> Result<Bound> {
        Ok(Bound(self.params.bind_flat(tape, flat)?))
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let (c, h, w) = image.dims3("image")?;
        let s = self.config.image_size;
        if c != 3 || h != s || w != s {
            return Err(Error::shape("image", image.shape(), &[3, s, s]));
        }
        Ok(())
    }

    fn linear(&self, tape: &mut Tape, p: &Bound, x: Var, l: &Linear) -> Result<Var> {
        let y = tape.matmul(x, p.0[l.w])?;
        tape.add_row(y, p.0[l.b])
    }

    fn mlp(&self, tape: &mut Tape, p: &Bound, x: Var, (a, b): &(Linear, Linear)) -> Result<Var> {
        let h = self.linear(tape, p, x, a)?;
        let h = tape.gelu(h);
        self.linear(tape, p, h, b)
    }

    fn norm(&self, tape: &mut Tape, p: &Bound, x: Var, n: &Norm) -> Result<Var> {
        let y = tape.layer_norm(x, 1e-5)?;
        let y = tape.mul_row(y, p.0[n.gain])?;
        tape.add_row(y, p.0[n.bias])
    }

    fn maybe_norm(&self, tape: &mut Tape, p: &Bound, x: Var, n: Option<&Norm>) -> Result<Var> {
        match n {
            Some(n) => self.norm(tape, p, x, n),
            None => Ok(x),
        }
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `key_bias[Lk]` is added to every logit row of every head; `mask[Lq×Lk]`
    /// is added as well (use `-inf` to block).
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        tape: &mut Tape,
        q: Var,
        k: Var,
        v: Var,
        key_bias: Option<Var>,
        mask: Option<Var>,
        maps: &mut Vec<Var>,
    ) -> Result<Var> {
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let mut s = tape.scale(s, scale);
            if let Some(m) = mask {
                s = tape.add(s, m)?;
            }
            if let Some(b) = key_bias {
                s = tape.add_row(s, b)?;
            }
            let a = tape.softmax(s, 1)?;
            maps.push(a);
            outs.push(tape.matmul(a, vh)?);
        }
        if heads == 1 {
            Ok(outs[0])
        } else {
            tape.concat_cols(&outs)
        }
    }

    /// Coarse spatial features `C×H'×W'` from a `3×H×W` image.
    pub fn backbone(&self, tape: &mut Tape, p: &Bound, image: Var) -> Result<Var> {
        let (_, h, w) = tape.value(image).dims3("backbone")?;
        let stride = self.config.total_stride();
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::invalid(format!(
                "image {h}x{w} is not divisible by backbone stride {stride}"
            )));
        }
        // pixels arrive in [0,1]; the first conv sees them centered on zero
        let mut x = tape.shift(image, -0.5);
        for c in &self.layout.backbone {
            x = tape.conv2d(x, p.0[c.w], 2, 1)?;
            x = tape.add_channel(x, p.0[c.b])?;
            x = tape.gelu(x);
        }
        Ok(x)
    }

    /// Transformer encoder over the flattened feature grid.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, f_cor: Var) -> Result<EncoderOutput> {
        let c = self.config.backbone_out();
        let g = self.config.grid();
        if tape.shape(f_cor) != [c, g, g] {
            return Err(Error::shape("encode", tape.shape(f_cor), &[c, g, g]));
        }
        let n = g * g;
        let pos = match self.layout.learned_pos {
            Some(i) => p.0[i],
            None => tape.constant(self.spatial_pos.clone()),
        };
        let with_pos = tape.add(f_cor, pos)?;
        let flat = |tape: &mut Tape, x: Var| -> Result<Var> {
            let r = tape.reshape(x, &[c, n])?;
            tape.transpose(r)
        };
        let spa = flat(tape, with_pos)?;
        let spa = self.linear(tape, p, spa, &self.layout.input_proj)?;
        let cor = flat(tape, f_cor)?;
        let cor = self.linear(tape, p, cor, &self.layout.input_proj)?;

        let mut maps = Vec::new();
        let (mut qk_in, mut v_in) = (spa, cor);
        for layer in &self.layout.encoder {
            let (n1, n2) = match &layer.norms {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            };
            let qk_src = self.maybe_norm(tape, p, qk_in, n1)?;
            let v_src = if v_in == qk_in {
                qk_src
            } else {
                self.maybe_norm(tape, p, v_in, n1)?
            };
            let q = self.linear(tape, p, qk_src, &layer.attn.q)?;
            let k = self.linear(tape, p, qk_src, &layer.attn.k)?;
            let v = self.linear(tape, p, v_src, &layer.attn.v)?;
            let a = self.attend(tape, q, k, v, None, None, &mut maps)?;
            let mid = tape.add(a, v)?;
            let mlp_in = self.maybe_norm(tape, p, mid, n2)?;
            let m = self.mlp(tape, p, mlp_in, &layer.mlp)?;
            let out = tape.add(mid, m)?;
            qk_in = out;
            v_in = out;
        }
        Ok(EncoderOutput {
            f_s: qk_in,
            attention: maps,
        })
    }

    /// Frequency features `f_f` and the per-location bias `M_f[N]`.
    /// `None` when the model has no frequency branch.
    pub fn frequency_branch(
        &self,
        tape: &mut Tape,
        p: &Bound,
        image: &Tensor,
    ) -> Result<Option<(Var, Var)>> {
        let (Some(method), Some(proj)) = (self.config.frequency, &self.layout.freq_proj) else {
            return Ok(None);
        };
        let map = extract_frequency_map(image, method)?;
        let mut x = tape.constant(map);
        // k×k kernels at stride k: 2×2 patches per stage, or one 1×1 stage
        let stride = if self.config.freq_stages()? == 0 { 1 } else { 2 };
        for c in &self.layout.freq_convs {
            x = tape.conv2d(x, p.0[c.w], stride, 0)?;
            x = tape.add_channel(x, p.0[c.b])?;
            x = tape.gelu(x);
        }
        let g = self.config.grid();
        if tape.shape(x)[1..] != [g, g] {
            return Err(Error::shape("frequency_branch", tape.shape(x), &[self.config.freq_channels, g, g]));
        }
        let m = tape.conv2d(x, p.0[proj.w], 1, 0)?;
        let m = tape.add_channel(m, p.0[proj.b])?;
        let m = tape.reshape(m, &[g * g])?;
        Ok(Some((x, m)))
    }

    /// Per-position logits `[L×7]` for decoder inputs `tokens`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        p: &Bound,
        tokens: &[Token],
        f_s: Var,
        m_f: Option<Var>,
    ) -> Result<Var> {
        let l = tokens.len();
        if l == 0 || tokens[0] != Token::Sos {
            return Err(Error::invalid("decoder input must start with SOS"));
        }
        if l > MAX_EDITS + 1 {
            return Err(Error::invalid(format!(
                "decoder input of {l} tokens exceeds {}",
                MAX_EDITS + 1
            )));
        }
        let d = self.config.d_model;
        let idx: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
        let emb = tape.embedding(p.0[self.layout.token_embed], &idx)?;
        let pos = Tensor::new(vec![l, d], self.token_pos.data()[..l * d].to_vec())?;
        let pos = tape.constant(pos);
        let mut x = tape.add(emb, pos)?;
        let mask = tape.constant(causal_mask(l));
        let keys = if self.config.cross_key_pos {
            let pos = tape.constant(self.key_pos.clone());
            tape.add(f_s, pos)?
        } else {
            f_s
        };

        let mut maps = Vec::new();
        for layer in &self.layout.decoder {
            let (n1, n2, n3) = match &layer.norms {
                Some((a, b, c)) => (Some(a), Some(b), Some(c)),
                None => (None, None, None),
            };
            let h = self.maybe_norm(tape, p, x, n1)?;
            let q = self.linear(tape, p, h, &layer.self_attn.q)?;
            let k = self.linear(tape, p, h, &layer.self_attn.k)?;
            let v = self.linear(tape, p, h, &layer.self_attn.v)?;
            let a = self.attend(tape, q, k, v, None, Some(mask), &mut maps)?;
            let x_self = tape.add(x, a)?;

            let h = self.maybe_norm(tape, p, x_self, n2)?;
            let q = self.linear(tape, p, h, &layer.cross_attn.q)?;
            let k = self.linear(tape, p, keys, &layer.cross_attn.k)?;
            let v = self.linear(tape, p, f_s, &layer.cross_attn.v)?;
            let mid = self.attend(tape, q, k, v, m_f, None, &mut maps)?;

            let h = self.maybe_norm(tape, p, mid, n3)?;
            let m = self.mlp(tape, p, h, &layer.mlp)?;
            x = tape.add(mid, m)?;
        }
        self.mlp(tape, p, x, &self.layout.head)
    }

    /// Image-side features: encoder output and the optional frequency bias.
    pub fn encode_image(&self, tape: &mut Tape, p: &Bound, image: &Tensor) -> Result<(Var, Option<Var>)> {
        self.check_image(image)?;
        let x = tape.constant(image.clone());
        let f_cor = self.backbone(tape, p, x)?;
        let enc = self.encode(tape, p, f_cor)?;
        let m_f = self.frequency_branch(tape, p, image)?.map(|(_, m)| m);
        Ok((enc.f_s, m_f))
    }

    /// Teacher-forced mean cross-entropy over the `L+1` target positions.
    pub fn training_loss(&self, tape: &mut Tape, p: &Bound, image: &Tensor, gt: &EditSequence) -> Result<Var> {
        let (f_s, m_f) = self.encode_image(tape, p, image)?;
        let logits = self.decode(tape, p, &gt.decoder_inputs(), f_s, m_f)?;
        let targets: Vec<usize> = gt.decoder_targets().iter().map(|t| t.index()).collect();
        tape.cross_entropy(logits, &targets)
    }

    /// Loss value and gradient for every parameter, in registration order.
    pub fn loss_and_grads(&self, image: &Tensor, gt: &EditSequence) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, true);
        let loss = self.training_loss(&mut tape, &p, image, gt)?;
        tape.backward(loss)?;
        let grads = p
            .0
            .iter()
            .zip(self.params.iter())
            .map(|(&v, param)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(param.tensor.shape()))
            })
            .collect();
        Ok((tape.value(loss).item()?, grads))
    }

    /// Greedy decoding from SOS until EOS or four attributes; ties go to the
    /// lowest token index.
    pub fn predict_sequence(&self, image: &Tensor) -> Result<EditSequence> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let (f_s, m_f) = self.encode_image(&mut tape, &p, image)?;
        let mut tokens = vec![Token::Sos];
        let mut attrs = Vec::new();
        while attrs.len() < MAX_EDITS {
            let logits = self.decode(&mut tape, &p, &tokens, f_s, m_f)?;
            let row = &tape.value(logits).data()[(tokens.len() - 1) * Token::OUTPUTS..];
            let best = argmax(&row[..Token::OUTPUTS]);
            match Token::from_index(best) {
                Some(Token::Attr(a)) => {
                    attrs.push(a);
                    tokens.push(Token::Attr(a));
                }
                _ => break,
            }
        }
        EditSequence::new(attrs)
    }

    /// Logits for given decoder inputs, with an explicit frequency bias override.
    pub fn logits_with_bias(&self, image: &Tensor, tokens: &[Token], m_f: Option<&Tensor>) -> Result<Tensor> {
        self.check_image(image)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let f_cor = self.backbone(&mut tape, &p, x)?;
        let f_s = self.encode(&mut tape, &p, f_cor)?.f_s;
        let m = m_f.map(|m| tape.constant(m.clone()));
        let out = self.decode(&mut tape, &p, tokens, f_s, m)?;
        Ok(tape.value(out).clone())
    }

    /// Logits for given decoder inputs.
    pub fn logits(&self, image: &Tensor, tokens: &[Token]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let (f_s, m_f) = self.encode_image(&mut tape, &p, image)?;
        let out = self.decode(&mut tape, &p, tokens, f_s, m_f)?;
        Ok(tape.value(out).clone())
    }

    /// Tensor-level backbone pass.
    pub fn backbone_forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let out = self.backbone(&mut tape, &p, x)?;
        Ok(tape.value(out).clone())
    }

    /// Tensor-level encoder pass, returning `f_s` and all attention maps.
    pub fn encode_forward(&self, f_cor: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(f_cor.clone());
        let out = self.encode(&mut tape, &p, x)?;
        let maps = out.attention.iter().map(|&a| tape.value(a).clone()).collect();
        Ok((tape.value(out.f_s).clone(), maps))
    }

    /// Tensor-level frequency branch: `(f_f, M_f)`.
    pub fn frequency_forward(&self, image: &Tensor) -> Result<Option<(Tensor, Tensor)>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        Ok(self
            .frequency_branch(&mut tape, &p, image)?
            .map(|(f, m)| (tape.value(f).clone(), tape.value(m).clone())))
    }

    /// Tensor-level decoder pass.
    pub fn decoder_forward(&self, tokens: &[Token], f_s: &Tensor, m_f: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let fs = tape.constant(f_s.clone());
        let m = m_f.map(|m| tape.constant(m.clone()));
        let out = self.decode(&mut tape, &p, tokens, fs, m)?;
        Ok(tape.value(out).clone())
    }
}

impl SequencePredictor for FaithModel {
    fn predict(&self, image: &Tensor) -> Result<EditSequence> {
        self.predict_sequence(image)
    }
}

/// Index of the largest value; the first one wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decoded attribute for an output index, if it is one.
pub fn output_attribute(index: usize) -> Option<AttributeLabel> {
    match Token::from_index(index) {
        Some(Token::Attr(a)) => Some(a),
        _ => None,
    }
}

fn causal_mask(l: usize) -> Tensor {
    let mut m = Tensor::zeros(&[l, l]);
    for i in 0..l {
        for j in i + 1..l {
            m.set(&[i, j], f64::NEG_INFINITY);
        }
    }
    m
}

fn sinusoidal_1d(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            t.set(&[pos, i], if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    t
}

/// First half of the channels encode the row, second half the column.
fn sinusoidal_2d(channels: usize, h: usize, w: usize) -> Tensor {
    let half = (channels / 2).max(1);
    let mut t = Tensor::zeros(&[channels, h, w]);
    for ch in 0..channels {
        let (use_row, i) = if ch < half { (true, ch) } else { (false, ch - half) };
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / half as f64);
        for y in 0..h {
            for x in 0..w {
                let a = if use_row { y } else { x } as f64 * freq;
                t.set(&[ch, y, x], if i % 2 == 0 { a.sin() } else { a.cos() });
            }
        }
    }
    t
}

fn linear(init: &mut Init<'_>, name: &str, fan_in: usize, fan_out: usize) -> Linear {
    let group = ParamGroup::Transformer;
    Linear {
        w: init.randn(format!("{name}.w"), &[fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), group),
        b: init.fill(format!("{name}.b"), &[fan_out], 0.0, group),
    }
}

fn norm(init: &mut Init<'_>, name: &str, d: usize) -> Norm {
    Norm {
        gain: init.fill(format!("{name}.gain"), &[d], 1.0, ParamGroup::Transformer),
        bias: init.fill(format!("{name}.bias"), &[d], 0.0, ParamGroup::Transformer),
    }
}

fn conv(init: &mut Init<'_>, name: &str, cin: usize, cout: usize, k: usize, group: ParamGroup) -> Conv {
    let fan_in = cin * k * k;
    Conv {
        w: init.randn(format!("{name}.w"), &[cout, cin, k, k], (2.0 / fan_in as f64).sqrt(), group),
        b: init.fill(format!("{name}.b"), &[cout], 0.0, group),
    }
}

fn attention(init: &mut Init<'_>, name: &str, d: usize) -> Attention {
    Attention {
        q: linear(init, &format!("{name}.q"), d, d),
        k: linear(init, &format!("{name}.k"), d, d),
        v: linear(init, &format!("{name}.v"), d, d),
    }
}

fn build_layout(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Layout> {
    let d = cfg.d_model;
    let mlp = |init: &mut Init<'_>, name: &str| {
        (
            linear(init, &format!("{name}.mlp.0"), d, cfg.mlp_hidden),
            linear(init, &format!("{name}.mlp.1"), cfg.mlp_hidden, d),
        )
    };

    let mut backbone = Vec::new();
    let mut cin = 3;
    for (i, &cout) in cfg.backbone_channels.iter().enumerate() {
        backbone.push(conv(init, &format!("backbone.{i}"), cin, cout, 3, ParamGroup::Backbone));
        cin = cout;
    }
    let c = cfg.backbone_out();
    let g = cfg.grid();
    let learned_pos = match cfg.positional {
        Positional::Learned => {
            Some(init.randn("pos.table".into(), &[c, g, g], 0.02, ParamGroup::Transformer))
        }
        Positional::Sinusoidal => None,
    };
    let input_proj = linear(init, "input_proj", c, d);

    let mut encoder = Vec::new();
    for i in 0..cfg.encoder_layers {
        let name = format!("encoder.{i}");
        let attn = attention(init, &format!("{name}.attn"), d);
        let mlp = mlp(init, &name);
        let norms = cfg
            .pre_norm
            .then(|| (norm(init, &format!("{name}.norm.0"), d), norm(init, &format!("{name}.norm.1"), d)));
        encoder.push(EncoderLayer { attn, mlp, norms });
    }

    let mut freq_convs = Vec::new();
    let mut freq_proj = None;
    if cfg.frequency.is_some() {
        let cf = cfg.freq_channels;
        let stages = cfg.freq_stages()?;
        if stages == 0 {
            freq_convs.push(conv(init, "freq.0", 3, cf, 1, ParamGroup::Transformer));
        }
        for i in 0..stages {
            let cin = if i == 0 { 3 } else { cf };
            freq_convs.push(conv(init, &format!("freq.{i}"), cin, cf, 2, ParamGroup::Transformer));
        }
        freq_proj = Some(Conv {
            w: init.randn("freq.proj.w".into(), &[1, cf, 1, 1], (1.0 / cf as f64).sqrt(), ParamGroup::Transformer),
            b: init.fill("freq.proj.b".into(), &[1], 0.0, ParamGroup::Transformer),
        });
    }

    let token_embed = init.randn("token_embed".into(), &[Token::EMBEDDINGS, d], 1.0, ParamGroup::Transformer);
    let mut decoder = Vec::new();
    for i in 0..cfg.decoder_layers {
        let name = format!("decoder.{i}");
        let self_attn = attention(init, &format!("{name}.self"), d);
        let cross_attn = attention(init, &format!("{name}.cross"), d);
        let mlp = mlp(init, &name);
        let norms = cfg.pre_norm.then(|| {
            (
                norm(init, &format!("{name}.norm.0"), d),
                norm(init, &format!("{name}.norm.1"), d),
                norm(init, &format!("{name}.norm.2"), d),
            )
        });
        decoder.push(DecoderLayer { self_attn, cross_attn, mlp, norms });
    }
    let head = (
        linear(init, "head.0", d, cfg.mlp_hidden),
        linear(init, "head.1", cfg.mlp_hidden, Token::OUTPUTS),
    );
    Ok(Layout {
        backbone,
        learned_pos,
        input_proj,
        encoder,
        freq_convs,
        freq_proj,
        token_embed,
        decoder,
        head,
    })
}
