//! W-shaped encoder: two skip-less U-Nets chained through a residual layer.
//!
//! The first U-Net reconstructs the expected frame; the residual (input minus
//! that reconstruction) feeds the second U-Net, which reconstructs the
//! surprising content. The two 1-channel bottlenecks adjoin into the
//! embedding. A single-U-Net baseline shares the same building blocks.

use apfrl_nn::{io, Algorithm, LayerSpec, Network32, Optimizer32, Tensor32};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::envs::GameFrame;
use crate::error::{CoreError, Result};

/// Skip-less U-Net: 4 stride-2 encoder stages, a 1-channel bottleneck, and 4
/// mirrored stride-2 decoder stages (final stage linear).
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Output channels of the four encoder stages; the decoder mirrors them.
    pub enc_widths: [usize; 4],
}

impl UNetConfig {
    /// Desk-scale default sized to train in minutes on a couple of cores.
    pub fn desk(height: usize, width: usize) -> Self {
        Self {
            in_channels: 3,
            height,
            width,
            enc_widths: [8, 16, 16, 8],
        }
    }

    /// Frame geometry used by the original full-size experiments (3x208x160).
    pub fn paper_scale() -> Self {
        Self {
            in_channels: 3,
            height: 208,
            width: 160,
            enc_widths: [16, 32, 32, 16],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(CoreError::Config(format!(
                "frame dims {}x{} must be positive and divisible by 16",
                self.height, self.width
            )));
        }
        if self.in_channels == 0 || self.enc_widths.contains(&0) {
            return Err(CoreError::Config("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial dims of the bottleneck: exactly `(H/16, W/16)`.
    pub fn bottleneck_hw(&self) -> (usize, usize) {
        (self.height / 16, self.width / 16)
    }

    pub fn bottleneck_len(&self) -> usize {
        let (h, w) = self.bottleneck_hw();
        h * w
    }

    fn encoder_specs(&self) -> Vec<LayerSpec> {
        let w = self.enc_widths;
        let mut specs = Vec::new();
        let mut c_in = self.in_channels;
        for c_out in w {
            specs.push(LayerSpec::Conv2d {
                in_channels: c_in,
                out_channels: c_out,
                kernel: 3,
                stride: 2,
                pad: 1,
            });
            specs.push(LayerSpec::Relu);
            c_in = c_out;
        }
        // linear projection to the 1-channel bottleneck
        specs.push(LayerSpec::Conv2d {
            in_channels: c_in,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            pad: 1,
        });
        specs
    }

    fn decoder_specs(&self) -> Vec<LayerSpec> {
        let w = self.enc_widths;
        let mut specs = vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: w[3],
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
        ];
        let chain = [w[3], w[2], w[1], w[0], self.in_channels];
        for i in 0..4 {
            specs.push(LayerSpec::ConvTranspose2d {
                in_channels: chain[i],
                out_channels: chain[i + 1],
                kernel: 3,
                stride: 2,
                pad: 1,
                out_pad: 1,
            });
            if i < 3 {
                specs.push(LayerSpec::Relu);
            } // final stage stays linear
        }
        specs
    }
}

/// One skip-less U-Net (encoder to a 1-channel bottleneck plus decoder).
#[derive(Debug, Clone)]
pub struct UNet {
    pub cfg: UNetConfig,
    pub encoder: Network32,
    pub decoder: Network32,
}

impl UNet {
    pub fn build(cfg: UNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            encoder: Network32::build(&cfg.encoder_specs(), rng)?,
            decoder: Network32::build(&cfg.decoder_specs(), rng)?,
            cfg,
        })
    }

    /// Bottleneck feature map `[N, 1, H/16, W/16]` (inference mode).
    pub fn bottleneck(&self, x: &Tensor32) -> Result<Tensor32> {
        Ok(self.encoder.forward(x)?)
    }

    /// Full reconstruction pass: `(bottleneck, output)`.
    pub fn forward(&self, x: &Tensor32) -> Result<(Tensor32, Tensor32)> {
        let b = self.encoder.forward(x)?;
        let y = self.decoder.forward(&b)?;
        Ok((b, y))
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    /// Cached training pass; pair with [`Self::backward_from`].
    fn forward_train(&mut self, x: &Tensor32, rng: &mut ChaCha8Rng) -> Result<(Tensor32, Tensor32)> {
        let b = self.encoder.forward_train(x, rng)?;
        let y = self.decoder.forward_train(&b, rng)?;
        Ok((b, y))
    }

    fn backward_from(&mut self, d_out: &Tensor32) -> Result<()> {
        let d_b = self.decoder.backward(d_out)?;
        // frames (or the detached residual) are leaves; skip their gradient
        self.encoder.backward_no_input_grad(&d_b)?;
        Ok(())
    }
}

/// Two chained U-Nets plus the residual layer between them.
#[derive(Debug, Clone)]
pub struct WNet {
    pub u1: UNet,
    pub u2: UNet,
}

/// Intermediate and output layers of one full W-Net pass.
pub struct WNetForward {
    pub out_u1: Tensor32,
    pub residual: Tensor32,
    pub out_u2: Tensor32,
    /// Adjoined flattened bottlenecks, `[N, 2*(H/16)*(W/16)]`.
    pub embedding: Tensor32,
}

impl WNet {
    pub fn build(cfg: UNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            u1: UNet::build(cfg.clone(), rng)?,
            u2: UNet::build(cfg, rng)?,
        })
    }

    pub fn cfg(&self) -> &UNetConfig {
        &self.u1.cfg
    }

    /// Length of the adjoined embedding: `2*(H/16)*(W/16)`.
    pub fn embedding_len(&self) -> usize {
        2 * self.cfg().bottleneck_len()
    }

    pub fn param_count(&self) -> usize {
        self.u1.param_count() + self.u2.param_count()
    }

    /// Inference pass through both U-Nets. `residual = frame - out_u1`
    /// exactly; the embedding adjoins the two bottlenecks.
    pub fn forward_full(&self, frames: &Tensor32) -> Result<WNetForward> {
        let (b1, out_u1) = self.u1.forward(frames)?;
        let residual = frames.sub(&out_u1)?;
        let (b2, out_u2) = self.u2.forward(&residual)?;
        let embedding = adjoin_bottlenecks(&b1, &b2)?;
        Ok(WNetForward {
            out_u1,
            residual,
            out_u2,
            embedding,
        })
    }

    /// Embedding only (still requires the first U-Net's reconstruction to form
    /// the residual; the second decoder is skipped).
    pub fn encode(&self, frames: &Tensor32) -> Result<Tensor32> {
        let (b1, out_u1) = self.u1.forward(frames)?;
        let residual = frames.sub(&out_u1)?;
        let b2 = self.u2.bottleneck(&residual)?;
        adjoin_bottlenecks(&b1, &b2)
    }

    pub fn save(&self, path: &Path, mut meta: Vec<(String, String)>) -> Result<()> {
        meta.push(("arch".into(), "wnet".into()));
        push_cfg_meta(&mut meta, self.cfg());
        let mut entries = Vec::new();
        collect_entries(&mut entries, "u1.encoder.", &self.u1.encoder);
        collect_entries(&mut entries, "u1.decoder.", &self.u1.decoder);
        collect_entries(&mut entries, "u2.encoder.", &self.u2.encoder);
        collect_entries(&mut entries, "u2.decoder.", &self.u2.decoder);
        let borrowed: Vec<(String, &Tensor32)> = entries.iter().map(|(n, t)| (n.clone(), *t)).collect();
        Ok(io::save_entries(path, &borrowed, &meta)?)
    }

    pub fn load(cfg: UNetConfig, path: &Path) -> Result<Self> {
        let loaded = io::load_entries(path)?;
        check_cfg_meta(&loaded.meta, "wnet", &cfg)?;
        let mut wnet = WNet::build(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        io::load_into(&loaded, "u1.encoder.", wnet.u1.encoder.param_entries_mut())?;
        io::load_into(&loaded, "u1.decoder.", wnet.u1.decoder.param_entries_mut())?;
        io::load_into(&loaded, "u2.encoder.", wnet.u2.encoder.param_entries_mut())?;
        io::load_into(&loaded, "u2.decoder.", wnet.u2.decoder.param_entries_mut())?;
        Ok(wnet)
    }
}

fn collect_entries<'a>(
    out: &mut Vec<(String, &'a Tensor32)>,
    prefix: &str,
    net: &'a Network32,
) {
    for (name, t) in net.param_entries() {
        out.push((format!("{prefix}{name}"), t));
    }
}

fn push_cfg_meta(meta: &mut Vec<(String, String)>, cfg: &UNetConfig) {
    meta.push(("in_channels".into(), cfg.in_channels.to_string()));
    meta.push(("height".into(), cfg.height.to_string()));
    meta.push(("width".into(), cfg.width.to_string()));
    let widths: Vec<String> = cfg.enc_widths.iter().map(|w| w.to_string()).collect();
    meta.push(("widths".into(), widths.join(",")));
}

fn check_cfg_meta(
    meta: &std::collections::BTreeMap<String, String>,
    arch: &str,
    cfg: &UNetConfig,
) -> Result<()> {
    if meta.get("arch").map(String::as_str) != Some(arch) {
        return Err(CoreError::Data(format!(
            "weight file arch {:?} does not match requested {arch}",
            meta.get("arch")
        )));
    }
    let widths: Vec<String> = cfg.enc_widths.iter().map(|w| w.to_string()).collect();
    let expect = [
        ("height", cfg.height.to_string()),
        ("width", cfg.width.to_string()),
        ("widths", widths.join(",")),
    ];
    for (k, v) in expect {
        if meta.get(k) != Some(&v) {
            return Err(CoreError::Data(format!(
                "weight file {k}={:?} does not match config {v}",
                meta.get(k)
            )));
        }
    }
    Ok(())
}

/// `[N,1,h,w] + [N,1,h,w] -> [N, 2*h*w]` (channel 0 = first bottleneck).
fn adjoin_bottlenecks(b1: &Tensor32, b2: &Tensor32) -> Result<Tensor32> {
    if b1.shape() != b2.shape() || b1.shape().len() != 4 {
        return Err(CoreError::Config(format!(
            "bottleneck shapes {:?} vs {:?}",
            b1.shape(),
            b2.shape()
        )));
    }
    let n = b1.shape()[0];
    let hw = b1.len() / n;
    let mut data = Vec::with_capacity(2 * b1.len());
    for i in 0..n {
        data.extend_from_slice(&b1.data()[i * hw..(i + 1) * hw]);
        data.extend_from_slice(&b2.data()[i * hw..(i + 1) * hw]);
    }
    Ok(Tensor32::from_vec(&[n, 2 * hw], data)?)
}

/// Joint pretraining step loss terms.
#[derive(Debug, Clone, Copy)]
pub struct PretrainLoss {
    pub recon_u1: f64,
    pub recon_u2: f64,
}

impl PretrainLoss {
    pub fn total(&self) -> f64 {
        self.recon_u1 + self.recon_u2
    }
}

/// Pretrains a W-Net on a frame corpus.
///
/// Joint loss per batch: `mse(out_u1, input) + mse(out_u2, residual)` where
/// the residual is a fixed target within the step — no gradient flows from the
/// second U-Net into the first. Returns the mean total loss per epoch.
pub fn pretrain(
    wnet: &mut WNet,
    corpus: &[GameFrame],
    epochs: usize,
    batch_size: usize,
    optimizer: &mut Optimizer32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(CoreError::Usage("pretraining corpus is empty".into()));
    }
    if batch_size == 0 {
        return Err(CoreError::Config("batch size must be positive".into()));
    }
    let mut history = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..epochs {
        shuffle(&mut order, rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(batch_size) {
            let x = stack_frames(corpus, chunk)?;
            let loss = pretrain_step(wnet, &x, optimizer, rng)?;
            epoch_loss += loss.total() * chunk.len() as f64;
        }
        history.push(epoch_loss / corpus.len() as f64);
    }
    Ok(history)
}

/// One joint gradient step on a prepared `[N,3,H,W]` batch.
pub fn pretrain_step(
    wnet: &mut WNet,
    x: &Tensor32,
    optimizer: &mut Optimizer32,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainLoss> {
    let (_, out1) = wnet.u1.forward_train(x, rng)?;
    let residual = x.sub(&out1)?;
    let (_, out2) = wnet.u2.forward_train(&residual, rng)?;

    let loss = PretrainLoss {
        recon_u1: out1.mse_f64(x)?,
        recon_u2: out2.mse_f64(&residual)?,
    };

    let scale = 2.0 / x.len() as f32;
    let d_out1 = out1.sub(x)?.scale(scale);
    let d_out2 = out2.sub(&residual)?.scale(scale);

    wnet.u1.zero_grad();
    wnet.u2.zero_grad();
    wnet.u1.backward_from(&d_out1)?;
    wnet.u2.backward_from(&d_out2)?;

    let mut pairs = wnet.u1.encoder.param_grad_pairs();
    pairs.extend(wnet.u1.decoder.param_grad_pairs());
    pairs.extend(wnet.u2.encoder.param_grad_pairs());
    pairs.extend(wnet.u2.decoder.param_grad_pairs());
    optimizer.step(pairs)?;
    Ok(loss)
}

/// Default pretraining optimizer (Adam).
pub fn pretrain_optimizer(lr: f64) -> Result<Optimizer32> {
    Ok(Optimizer32::new(Algorithm::adam(), lr)?)
}

/// Single skip-less U-Net baseline; the embedding is the flattened 1-channel
/// bottleneck and training minimizes plain reconstruction error.
#[derive(Debug, Clone)]
pub struct SingleUNet {
    pub unet: UNet,
}

impl SingleUNet {
    pub fn build(cfg: UNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            unet: UNet::build(cfg, rng)?,
        })
    }

    pub fn cfg(&self) -> &UNetConfig {
        &self.unet.cfg
    }

    pub fn embedding_len(&self) -> usize {
        self.cfg().bottleneck_len()
    }

    pub fn param_count(&self) -> usize {
        self.unet.param_count()
    }

    /// Flattened bottleneck `[N, (H/16)*(W/16)]`.
    pub fn encode(&self, frames: &Tensor32) -> Result<Tensor32> {
        let b = self.unet.bottleneck(frames)?;
        let n = b.shape()[0];
        let hw = b.len() / n;
        Ok(b.reshaped(&[n, hw])?)
    }

    pub fn save(&self, path: &Path, mut meta: Vec<(String, String)>) -> Result<()> {
        meta.push(("arch".into(), "unet".into()));
        push_cfg_meta(&mut meta, self.cfg());
        let mut entries = Vec::new();
        collect_entries(&mut entries, "unet.encoder.", &self.unet.encoder);
        collect_entries(&mut entries, "unet.decoder.", &self.unet.decoder);
        let borrowed: Vec<(String, &Tensor32)> = entries.iter().map(|(n, t)| (n.clone(), *t)).collect();
        Ok(io::save_entries(path, &borrowed, &meta)?)
    }

    pub fn load(cfg: UNetConfig, path: &Path) -> Result<Self> {
        let loaded = io::load_entries(path)?;
        check_cfg_meta(&loaded.meta, "unet", &cfg)?;
        let mut net = SingleUNet::build(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        io::load_into(&loaded, "unet.encoder.", net.unet.encoder.param_entries_mut())?;
        io::load_into(&loaded, "unet.decoder.", net.unet.decoder.param_entries_mut())?;
        Ok(net)
    }
}

/// Pretrains the single-U-Net baseline with `mse(output, input)`.
pub fn pretrain_single(
    net: &mut SingleUNet,
    corpus: &[GameFrame],
    epochs: usize,
    batch_size: usize,
    optimizer: &mut Optimizer32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(CoreError::Usage("pretraining corpus is empty".into()));
    }
    if batch_size == 0 {
        return Err(CoreError::Config("batch size must be positive".into()));
    }
    let mut history = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..epochs {
        shuffle(&mut order, rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(batch_size) {
            let x = stack_frames(corpus, chunk)?;
            let (_, out) = net.unet.forward_train(&x, rng)?;
            let loss = out.mse_f64(&x)?;
            let d_out = out.sub(&x)?.scale(2.0 / x.len() as f32);
            net.unet.zero_grad();
            net.unet.backward_from(&d_out)?;
            let mut pairs = net.unet.encoder.param_grad_pairs();
            pairs.extend(net.unet.decoder.param_grad_pairs());
            optimizer.step(pairs)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        history.push(epoch_loss / corpus.len() as f64);
    }
    Ok(history)
}

/// Stacks corpus frames by index into a `[N,3,H,W]` batch tensor.
pub fn stack_frames(corpus: &[GameFrame], idx: &[usize]) -> Result<Tensor32> {
    let first = &corpus[idx[0]];
    let frame_len = 3 * first.height * first.width;
    let mut data = Vec::with_capacity(idx.len() * frame_len);
    for &i in idx {
        let f = &corpus[i];
        if f.height != first.height || f.width != first.width {
            return Err(CoreError::Data("corpus frames must share dimensions".into()));
        }
        data.extend_from_slice(&f.data);
    }
    Ok(Tensor32::from_vec(&[idx.len(), 3, first.height, first.width], data)?)
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    order.shuffle(rng);
}

/// 8-bit RGB raster (interleaved), used for reconstruction grids.
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

const GUTTER: usize = 2;

/// Renders the 4-row reconstruction grid: input, out_u1, residual, out_u2
/// (one column per sample frame). The residual rows are shifted from
/// `[-1, 1]` to `[0, 1]` for display.
pub fn recon_report(wnet: &WNet, frames: &[GameFrame]) -> Result<RgbImage> {
    if frames.is_empty() {
        return Err(CoreError::Usage("reconstruction grid needs at least one frame".into()));
    }
    let x = stack_frames(frames, &(0..frames.len()).collect::<Vec<_>>())?;
    let f = wnet.forward_full(&x)?;
    let rows: Vec<(&Tensor32, bool)> = vec![
        (&x, false),
        (&f.out_u1, false),
        (&f.residual, true),
        (&f.out_u2, true),
    ];
    render_grid(&rows, frames.len(), frames[0].height, frames[0].width)
}

/// 2-row grid (input, reconstruction) for the single-U-Net baseline.
pub fn recon_report_single(net: &SingleUNet, frames: &[GameFrame]) -> Result<RgbImage> {
    if frames.is_empty() {
        return Err(CoreError::Usage("reconstruction grid needs at least one frame".into()));
    }
    let x = stack_frames(frames, &(0..frames.len()).collect::<Vec<_>>())?;
    let (_, out) = net.unet.forward(&x)?;
    let rows: Vec<(&Tensor32, bool)> = vec![(&x, false), (&out, false)];
    render_grid(&rows, frames.len(), frames[0].height, frames[0].width)
}

fn render_grid(
    rows: &[(&Tensor32, bool)],
    cols: usize,
    h: usize,
    w: usize,
) -> Result<RgbImage> {
    let grid_h = rows.len() * h + (rows.len() - 1) * GUTTER;
    let grid_w = cols * w + (cols - 1) * GUTTER;
    let mut img = RgbImage {
        height: grid_h,
        width: grid_w,
        data: vec![255u8; grid_h * grid_w * 3],
    };
    for (ri, (tensor, rescale)) in rows.iter().enumerate() {
        let hw = h * w;
        for ci in 0..cols {
            let base = ci * 3 * hw;
            for y in 0..h {
                for x in 0..w {
                    let gy = ri * (h + GUTTER) + y;
                    let gx = ci * (w + GUTTER) + x;
                    let at = (gy * grid_w + gx) * 3;
                    for ch in 0..3 {
                        let mut v = tensor.data()[base + ch * hw + y * w + x];
                        if *rescale {
                            v = (v + 1.0) / 2.0;
                        }
                        img.data[at + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Writes a binary PPM (P6) with an optional `#` comment line.
pub fn write_ppm(img: &RgbImage, path: &Path, comment: Option<&str>) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "P6")?;
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{} {}", img.width, img.height)?;
    writeln!(w, "255")?;
    w.write_all(&img.data)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{PixelEnv, PelletPursuit};
    use rand::Rng;

    fn desk_cfg() -> UNetConfig {
        UNetConfig::desk(96, 80)
    }

    fn random_frames(count: usize, seed: u64) -> Vec<GameFrame> {
        let mut env = PelletPursuit::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = vec![env.reset(seed)];
        while frames.len() < count {
            if env.is_terminal() {
                frames.push(env.reset(seed + frames.len() as u64));
            } else {
                frames.push(env.step(rng.gen_range(0..4)).unwrap().frame);
            }
        }
        frames
    }

    #[test]
    fn desk_scale_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wnet = WNet::build(desk_cfg(), &mut rng).unwrap();
        assert_eq!(wnet.cfg().bottleneck_hw(), (6, 5));
        assert_eq!(wnet.embedding_len(), 60);
        let frames = random_frames(2, 0);
        let x = stack_frames(&frames, &[0, 1]).unwrap();
        let f = wnet.forward_full(&x).unwrap();
        assert_eq!(f.embedding.shape(), &[2, 60]);
        assert_eq!(f.out_u1.shape(), x.shape());
        assert_eq!(f.out_u2.shape(), x.shape());
    }

    #[test]
    fn residual_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wnet = WNet::build(desk_cfg(), &mut rng).unwrap();
        let frames = random_frames(1, 3);
        let x = stack_frames(&frames, &[0]).unwrap();
        let f = wnet.forward_full(&x).unwrap();
        for ((&xv, &o1), &r) in x
            .data()
            .iter()
            .zip(f.out_u1.data())
            .zip(f.residual.data())
        {
            assert_eq!(xv - o1, r); // bit-exact by construction
        }
    }

    #[test]
    fn encode_matches_forward_full_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wnet = WNet::build(desk_cfg(), &mut rng).unwrap();
        let frames = random_frames(1, 5);
        let x = stack_frames(&frames, &[0]).unwrap();
        let a = wnet.encode(&x).unwrap();
        let b = wnet.forward_full(&x).unwrap().embedding;
        assert_eq!(a, b);
        assert_eq!(a, wnet.encode(&x).unwrap());
    }

    #[test]
    fn single_unet_embedding_is_one_bottleneck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = SingleUNet::build(desk_cfg(), &mut rng).unwrap();
        assert_eq!(net.embedding_len(), 30);
        let frames = random_frames(1, 7);
        let x = stack_frames(&frames, &[0]).unwrap();
        assert_eq!(net.encode(&x).unwrap().shape(), &[1, 30]);
        let (_, out) = net.unet.forward(&x).unwrap();
        assert_eq!(out.shape(), x.shape()); // autoencoder contract
    }

    #[test]
    fn paper_scale_bottleneck_is_13x10() {
        let cfg = UNetConfig::paper_scale();
        assert_eq!(cfg.bottleneck_hw(), (13, 10));
        assert_eq!(2 * cfg.bottleneck_len(), 260);
        assert_eq!(cfg.bottleneck_len(), 130);
    }

    #[test]
    fn single_constant_frame_overfits() {
        // one constant frame: the first U-Net drives its reconstruction error
        // toward zero and the residual collapses
        let cfg = UNetConfig {
            in_channels: 3,
            height: 32,
            width: 32,
            enc_widths: [4, 8, 8, 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut wnet = WNet::build(cfg, &mut rng).unwrap();
        let mut frame = GameFrame::new(32, 32);
        frame.fill_rect(0, 0, 32, 32, [0.6, 0.3, 0.8]);
        let corpus = vec![frame];
        let mut opt = pretrain_optimizer(3e-3).unwrap();
        let history = pretrain(&mut wnet, &corpus, 300, 1, &mut opt, &mut rng).unwrap();
        assert_eq!(history.len(), 300);
        let x = stack_frames(&corpus, &[0]).unwrap();
        let f = wnet.forward_full(&x).unwrap();
        let mse_u1 = f.out_u1.mse_f64(&x).unwrap();
        assert!(mse_u1 < 1e-3, "u1 reconstruction mse {mse_u1}");
        let res_mass: f64 =
            f.residual.data().iter().map(|v| v.abs() as f64).sum::<f64>() / f.residual.len() as f64;
        assert!(res_mass < 0.05, "residual mean magnitude {res_mass}");
    }

    #[test]
    fn pretrain_loss_decreases_on_a_small_corpus() {
        let cfg = UNetConfig {
            in_channels: 3,
            height: 96,
            width: 80,
            enc_widths: [4, 8, 8, 4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut wnet = WNet::build(cfg, &mut rng).unwrap();
        let corpus = random_frames(64, 9);
        let mut opt = pretrain_optimizer(1e-3).unwrap();
        let history = pretrain(&mut wnet, &corpus, 4, 16, &mut opt, &mut rng).unwrap();
        assert_eq!(history.len(), 4);
        assert!(
            history.last().unwrap() < history.first().unwrap(),
            "loss did not improve: {history:?}"
        );
    }

    #[test]
    fn empty_corpus_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wnet = WNet::build(desk_cfg(), &mut rng).unwrap();
        let mut opt = pretrain_optimizer(1e-3).unwrap();
        assert!(matches!(
            pretrain(&mut wnet, &[], 1, 8, &mut opt, &mut rng),
            Err(CoreError::Usage(_))
        ));
    }

    #[test]
    fn recon_grid_has_four_rows_and_requested_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let wnet = WNet::build(desk_cfg(), &mut rng).unwrap();
        let frames = random_frames(5, 2);
        let img = recon_report(&wnet, &frames).unwrap();
        assert_eq!(img.height, 4 * 96 + 3 * GUTTER);
        assert_eq!(img.width, 5 * 80 + 4 * GUTTER);
    }

    #[test]
    fn weights_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wnet.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let wnet = WNet::build(desk_cfg(), &mut rng).unwrap();
        wnet.save(&path, vec![("config".into(), "aa".into())]).unwrap();
        let restored = WNet::load(desk_cfg(), &path).unwrap();
        let frames = random_frames(1, 1);
        let x = stack_frames(&frames, &[0]).unwrap();
        assert_eq!(wnet.encode(&x).unwrap(), restored.encode(&x).unwrap());
        // mismatched config is rejected
        assert!(WNet::load(UNetConfig::desk(64, 80), &path).is_err());
    }
}
