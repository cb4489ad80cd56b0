//! The noise predictor: patch embedding, timestep/style embedding, a stack of
//! token-mixing blocks with a spline (or MLP) residual nonlinearity, and a
//! transposed-conv head. Features are kept channel-last as `[F, N, C]` rows.

use std::ops::Range;

use crate::asd::{KanLayerCache, KanSpec};
use crate::config::{Config, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::numerics::{
    matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, silu, silu_deriv, ConvGeom, Rng, Tensor,
};
use crate::params::ParamLayout;
use crate::pda::{
    add_channel_bias, align_rows, align_rows_backward, channel_bias_grad, channels_first,
    channels_last, ChannelStats, ConditionBundle, DepthCache, DepthEncoderSpec, StyleCache,
    StyleEncoderSpec, ALIGN_EPS,
};
use crate::spline::KnotGrid;

/// Raw conditioning inputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    /// Depth sequence `[F, 1, H, W]` in `[0, 1]`.
    pub depth: Tensor,
    /// Reference frame `[1, H, W]` for the style vector; zero style if absent.
    pub style_frame: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct BlockOffsets {
    spatial_w: Range<usize>,
    spatial_b: Range<usize>,
    temporal_w: Range<usize>,
    temporal_b: Range<usize>,
    film_w: Range<usize>,
    film_b: Range<usize>,
    mix: Range<usize>,
}

#[derive(Debug, Clone)]
struct CondOffsets {
    style_proj: Range<usize>,
    depth: Range<usize>,
    gamma: Range<usize>,
    style: Range<usize>,
}

#[derive(Debug, Clone)]
struct Offsets {
    patch_w: Range<usize>,
    patch_b: Range<usize>,
    temb_w: Range<usize>,
    temb_b: Range<usize>,
    blocks: Vec<BlockOffsets>,
    head_w: Range<usize>,
    head_b: Range<usize>,
    cond: Option<CondOffsets>,
}

#[derive(Debug, Clone)]
enum MixCache {
    Kan(KanLayerCache),
    Mlp { pre: Vec<f64>, act: Vec<f64> },
}

#[derive(Debug, Clone)]
struct BlockCache {
    x: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    film: Vec<f64>,
    cf: Vec<f64>,
    mix: MixCache,
}

#[derive(Debug, Clone)]
struct DepthPath {
    cache: DepthCache,
    z_rows: Vec<f64>,
    stats: ChannelStats,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    t_sin: Vec<f64>,
    t_pre: Vec<f64>,
    emb: Vec<f64>,
    style: Option<(Vec<f64>, StyleCache)>,
    depth: Option<DepthPath>,
    blocks: Vec<BlockCache>,
    head_in: Vec<f64>,
}

impl ForwardCache {
    /// Backbone statistics used by the alignment, if a condition was given.
    pub fn align_stats(&self) -> Option<&ChannelStats> {
        self.depth.as_ref().map(|d| &d.stats)
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: ModelConfig,
    variant: Variant,
    max_t: usize,
    layout: ParamLayout,
    tokens: usize,
    embed: ConvGeom,
    kan: KanSpec,
    mlp_hidden: usize,
    depth: DepthEncoderSpec,
    style: StyleEncoderSpec,
    off: Offsets,
}

fn sl<'a>(p: &'a [f64], r: &Range<usize>) -> &'a [f64] {
    &p[r.start..r.end]
}

fn sl_mut<'a>(p: &'a mut [f64], r: &Range<usize>) -> &'a mut [f64] {
    &mut p[r.start..r.end]
}

fn fill_gauss(rng: &mut Rng, out: &mut [f64], std: f64) {
    out.iter_mut().for_each(|v| *v = std * rng.gaussian());
}

/// Sinusoidal features of the timestep.
pub fn timestep_features(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

impl Denoiser {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Self::new(&cfg.model, cfg.variant, cfg.diffusion.steps)
    }

    pub fn new(cfg: &ModelConfig, variant: Variant, max_t: usize) -> Result<Self> {
        cfg.validate()?;
        let (f, c, e, p) = (cfg.frames, cfg.channels, cfg.time_dim, cfg.patch);
        let embed = ConvGeom::new(&cfg.clip_shape(), &[c, 1, p, p], p, 0)?;
        let tokens = embed.out_h * embed.out_w;
        let grid = KnotGrid::try_from(cfg.grid)?;
        let kan = KanSpec {
            n_in: c,
            n_out: c,
            grid,
        };
        // parameter-matched replacement: 2·C·h + h + C ≈ C·C·(G+k+2)
        let mlp_hidden = ((kan.param_len() - c) as f64 / (2 * c + 1) as f64).round() as usize;
        let depth = DepthEncoderSpec {
            frames: f,
            height: cfg.height,
            width: cfg.width,
            hidden: cfg.depth_hidden,
            channels: c,
        };
        let style = StyleEncoderSpec {
            height: cfg.height,
            width: cfg.width,
            patch: p,
            dim: cfg.style_dim,
        };

        let mut l = ParamLayout::new();
        let patch_w = l.push("patch.w", &[c, 1, p, p]);
        let patch_b = l.push("patch.b", &[c]);
        let temb_w = l.push("temb.w", &[e, e]);
        let temb_b = l.push("temb.b", &[e]);
        let style_proj = variant
            .uses_pda()
            .then(|| l.push("style.proj.w", &[e, cfg.style_dim]));
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let spatial_w = l.push(format!("block{b}.spatial.w"), &[tokens, tokens]);
            let spatial_b = l.push(format!("block{b}.spatial.b"), &[tokens]);
            let temporal_w = l.push(format!("block{b}.temporal.w"), &[f, f]);
            let temporal_b = l.push(format!("block{b}.temporal.b"), &[f]);
            let film_w = l.push(format!("block{b}.film.w"), &[2 * c, e]);
            let film_b = l.push(format!("block{b}.film.b"), &[2 * c]);
            let mix = if variant.uses_asd() {
                l.push_group(kan.param_names(b))
            } else {
                l.push_group(vec![
                    (format!("asd.layer{b}.mlp.w1"), vec![mlp_hidden, c]),
                    (format!("asd.layer{b}.mlp.b1"), vec![mlp_hidden]),
                    (format!("asd.layer{b}.mlp.w2"), vec![c, mlp_hidden]),
                    (format!("asd.layer{b}.mlp.b2"), vec![c]),
                ])
            };
            blocks.push(BlockOffsets {
                spatial_w,
                spatial_b,
                temporal_w,
                temporal_b,
                film_w,
                film_b,
                mix,
            });
        }
        let head_w = l.push("head.w", &[c, 1, p, p]);
        let head_b = l.push("head.b", &[1]);
        let cond = style_proj.map(|style_proj| CondOffsets {
            style_proj,
            depth: l.push_group(depth.tensors()),
            gamma: l.push("align.gamma", &[c]),
            style: l.push_group(style.tensors()),
        });
        Ok(Denoiser {
            cfg: cfg.clone(),
            variant,
            max_t,
            layout: l,
            tokens,
            embed,
            kan,
            mlp_hidden,
            depth,
            style,
            off: Offsets {
                patch_w,
                patch_b,
                temb_w,
                temb_b,
                blocks,
                head_w,
                head_b,
                cond,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_hidden
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        self.cfg.clip_shape()
    }

    /// Shape of the depth embedding at the injection point.
    pub fn embedding_shape(&self) -> [usize; 4] {
        [self.cfg.frames, self.cfg.channels, self.embed.out_h, self.embed.out_w]
    }

    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let (c, e, p) = (self.cfg.channels, self.cfg.time_dim, self.cfg.patch);
        let mut v = vec![0.0; self.layout.len()];
        let o = &self.off;
        fill_gauss(rng, sl_mut(&mut v, &o.patch_w), 1.0 / p as f64);
        fill_gauss(rng, sl_mut(&mut v, &o.temb_w), 1.0 / (e as f64).sqrt());
        let inv_c = 1.0 / (c as f64).sqrt();
        for b in &o.blocks {
            let mix = sl_mut(&mut v, &b.mix);
            if self.variant.uses_asd() {
                self.kan
                    .init_params(rng, mix, |r| inv_c * r.gaussian(), 1.0, 0.1);
            } else {
                let h = self.mlp_hidden;
                let (w1, rest) = mix.split_at_mut(h * c);
                let (_, rest) = rest.split_at_mut(h);
                let (w2, _) = rest.split_at_mut(c * h);
                fill_gauss(rng, w1, inv_c);
                fill_gauss(rng, w2, 1.0 / (h as f64).sqrt());
            }
        }
        if let Some(co) = &o.cond {
            self.depth.init(rng, sl_mut(&mut v, &co.depth));
            self.style.init(rng, sl_mut(&mut v, &co.style));
        }
        crate::numerics::quantize_f32(&mut v);
        v
    }

    fn check_inputs(&self, params: &[f64], zt: &Tensor, t: usize) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::InvalidShape(format!(
                "parameter vector has {} values, model needs {}",
                params.len(),
                self.layout.len()
            )));
        }
        zt.expect_shape(&self.clip_shape(), "noisy clip")?;
        if t == 0 || t > self.max_t {
            return Err(Error::InvalidTimestep { t, max: self.max_t });
        }
        Ok(())
    }

    /// `ε_θ(z_t, c, t)`.
    pub fn predict_noise(
        &self,
        params: &[f64],
        zt: &Tensor,
        cond: Option<&Condition>,
        t: usize,
    ) -> Result<Tensor> {
        Ok(self.forward(params, zt, cond, t)?.0)
    }

    pub fn forward(
        &self,
        params: &[f64],
        zt: &Tensor,
        cond: Option<&Condition>,
        t: usize,
    ) -> Result<(Tensor, ForwardCache)> {
        self.forward_with_stats(params, zt, cond, t, None)
    }

    /// Like [`Denoiser::forward`], optionally overriding the backbone
    /// statistics used by the alignment (they are constants to backprop, so a
    /// finite-difference check must hold them fixed too).
    pub fn forward_with_stats(
        &self,
        params: &[f64],
        zt: &Tensor,
        cond: Option<&Condition>,
        t: usize,
        stats: Option<&ChannelStats>,
    ) -> Result<(Tensor, ForwardCache)> {
        self.check_inputs(params, zt, t)?;
        let cond_off = match (cond, &self.off.cond) {
            (None, _) => None,
            (Some(c), Some(o)) => Some((c, o)),
            (Some(_), None) => {
                return Err(Error::InvalidInput(format!(
                    "variant {} takes no condition",
                    self.variant.name()
                )))
            }
        };
        let (f, c, e, n) = (self.cfg.frames, self.cfg.channels, self.cfg.time_dim, self.tokens);
        let rows = f * n;
        let o = &self.off;

        // patch embedding
        let mut pre = vec![0.0; self.embed.output_len()];
        add_channel_bias(&mut pre, sl(params, &o.patch_b), n);
        self.embed.forward(zt.data(), sl(params, &o.patch_w), &mut pre);
        let mut x = channels_last(&pre, f, c, n);

        // timestep (+ style) embedding
        let t_sin = timestep_features(t, e);
        let mut t_pre = sl(params, &o.temb_b).to_vec();
        matmul_acc(sl(params, &o.temb_w), &t_sin, &mut t_pre, e, e, 1);
        let mut emb: Vec<f64> = t_pre.iter().map(|&v| silu(v)).collect();

        let mut style = None;
        let mut depth = None;
        if let Some((cond, co)) = cond_off {
            if let Some(frame) = &cond.style_frame {
                let (sv, sc) = self.style.forward(sl(params, &co.style), frame)?;
                matmul_acc(sl(params, &co.style_proj), &sv, &mut emb, e, self.cfg.style_dim, 1);
                style = Some((sv, sc));
            }
            let (zd, dc) = self.depth.forward(sl(params, &co.depth), &cond.depth)?;
            let z_rows = channels_last(&zd, f, c, n);
            let stats = match stats {
                Some(s) => s.clone(),
                None => ChannelStats::of_rows(&x, c),
            };
            let aligned = align_rows(&z_rows, &stats, sl(params, &co.gamma), ALIGN_EPS);
            for (xv, a) in x.iter_mut().zip(&aligned) {
                *xv += a;
            }
            depth = Some(DepthPath {
                cache: dc,
                z_rows,
                stats,
            });
        }

        let mut blocks = Vec::with_capacity(o.blocks.len());
        for bo in &o.blocks {
            let (y, cache) = self.block_forward(params, bo, x, &emb)?;
            blocks.push(cache);
            x = y;
        }

        // head: transposed patch conv back to pixels
        let head_in = channels_first(&x, f, c, n);
        let mut out = vec![sl(params, &o.head_b)[0]; self.embed.input_len()];
        self.embed.backward_input(sl(params, &o.head_w), &head_in, &mut out);
        debug_assert_eq!(out.len(), rows * self.cfg.patch * self.cfg.patch);
        let out = Tensor::new(self.clip_shape().to_vec(), out)?;
        Ok((
            out,
            ForwardCache {
                input: zt.data().to_vec(),
                t_sin,
                t_pre,
                emb,
                style,
                depth,
                blocks,
                head_in,
            },
        ))
    }

    fn block_forward(
        &self,
        params: &[f64],
        bo: &BlockOffsets,
        x: Vec<f64>,
        emb: &[f64],
    ) -> Result<(Vec<f64>, BlockCache)> {
        let (f, c, e, n) = (self.cfg.frames, self.cfg.channels, self.cfg.time_dim, self.tokens);
        let rows = f * n;

        // spatial: A_f = X_f + S X_f + b_s
        let s_w = sl(params, &bo.spatial_w);
        let s_b = sl(params, &bo.spatial_b);
        let mut a = x.clone();
        for (r, row) in a.chunks_exact_mut(c).enumerate() {
            let bias = s_b[r % n];
            row.iter_mut().for_each(|v| *v += bias);
        }
        for fr in 0..f {
            let span = fr * n * c..(fr + 1) * n * c;
            matmul_acc(s_w, &x[span.clone()], &mut a[span], n, n, c);
        }

        // temporal: B = A + T A + b_t, frames as rows of width N·C
        let mut b = a.clone();
        let t_b = sl(params, &bo.temporal_b);
        for (fr, chunk) in b.chunks_exact_mut(n * c).enumerate() {
            chunk.iter_mut().for_each(|v| *v += t_b[fr]);
        }
        matmul_acc(sl(params, &bo.temporal_w), &a, &mut b, f, f, n * c);

        // FiLM from the embedding
        let mut film = sl(params, &bo.film_b).to_vec();
        matmul_acc(sl(params, &bo.film_w), emb, &mut film, 2 * c, e, 1);
        let mut cf = b.clone();
        for row in cf.chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = row[ch] * (1.0 + film[ch]) + film[c + ch];
            }
        }

        let mp = sl(params, &bo.mix);
        let (delta, mix) = if self.variant.uses_asd() {
            let (out, cache) = self.kan.forward(mp, &cf, rows)?;
            (out, MixCache::Kan(cache))
        } else {
            let h = self.mlp_hidden;
            let (w1, rest) = mp.split_at(h * c);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut pre = Vec::with_capacity(rows * h);
            for _ in 0..rows {
                pre.extend_from_slice(b1);
            }
            matmul_a_bt_acc(&cf, w1, &mut pre, rows, c, h);
            let act: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
            let mut out = Vec::with_capacity(rows * c);
            for _ in 0..rows {
                out.extend_from_slice(b2);
            }
            matmul_a_bt_acc(&act, w2, &mut out, rows, h, c);
            (out, MixCache::Mlp { pre, act })
        };
        let y: Vec<f64> = cf.iter().zip(&delta).map(|(u, d)| u + d).collect();
        Ok((
            y,
            BlockCache {
                x,
                a,
                b,
                film,
                cf,
                mix,
            },
        ))
    }

    /// Accumulates `∂L/∂params` into `grads` given `∂L/∂output`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        grad_out: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        if grad_out.len() != self.embed.input_len() || grads.len() != self.layout.len() {
            return Err(Error::InvalidShape("gradient buffers do not match the model".into()));
        }
        let (f, c, e, n) = (self.cfg.frames, self.cfg.channels, self.cfg.time_dim, self.tokens);
        let o = &self.off;

        // head
        sl_mut(grads, &o.head_b)[0] += grad_out.iter().sum::<f64>();
        self.embed
            .backward_kernel(grad_out, &cache.head_in, sl_mut(grads, &o.head_w));
        let mut g_cf = vec![0.0; self.embed.output_len()];
        self.embed.forward(grad_out, sl(params, &o.head_w), &mut g_cf);
        let mut gx = channels_last(&g_cf, f, c, n);

        let mut g_emb = vec![0.0; e];
        for (bo, bc) in o.blocks.iter().zip(&cache.blocks).rev() {
            gx = self.block_backward(params, bo, bc, &cache.emb, &gx, &mut g_emb, grads)?;
        }

        if let (Some(dp), Some(co)) = (&cache.depth, &o.cond) {
            let (gamma, ggamma_range) = (sl(params, &co.gamma).to_vec(), co.gamma.clone());
            let g_z = align_rows_backward(
                &dp.z_rows,
                &dp.stats,
                &gamma,
                ALIGN_EPS,
                &gx,
                sl_mut(grads, &ggamma_range),
            );
            let g_zd = channels_first(&g_z, f, c, n);
            self.depth
                .backward(sl(params, &co.depth), &dp.cache, &g_zd, sl_mut(grads, &co.depth));
        }

        // embedding path
        if let (Some((sv, sc)), Some(co)) = (&cache.style, &o.cond) {
            let sd = self.cfg.style_dim;
            matmul_acc(&g_emb, sv, sl_mut(grads, &co.style_proj), e, 1, sd);
            let mut g_sv = vec![0.0; sd];
            matmul_at_b_acc(sl(params, &co.style_proj), &g_emb, &mut g_sv, e, sd, 1);
            self.style
                .backward(sl(params, &co.style), sc, &g_sv, sl_mut(grads, &co.style));
        }
        let g_tpre: Vec<f64> = g_emb
            .iter()
            .zip(&cache.t_pre)
            .map(|(g, &p)| g * silu_deriv(p))
            .collect();
        for (gb, g) in sl_mut(grads, &o.temb_b).iter_mut().zip(&g_tpre) {
            *gb += g;
        }
        matmul_acc(&g_tpre, &cache.t_sin, sl_mut(grads, &o.temb_w), e, 1, e);

        // patch embedding
        let g_pre = channels_first(&gx, f, c, n);
        channel_bias_grad(&g_pre, sl_mut(grads, &o.patch_b), n);
        self.embed
            .backward_kernel(&cache.input, &g_pre, sl_mut(grads, &o.patch_w));
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        params: &[f64],
        bo: &BlockOffsets,
        bc: &BlockCache,
        emb: &[f64],
        g_y: &[f64],
        g_emb: &mut [f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        let (f, c, e, n) = (self.cfg.frames, self.cfg.channels, self.cfg.time_dim, self.tokens);
        let rows = f * n;

        // y = cf + mix(cf)
        let mp = sl(params, &bo.mix);
        let mut g_cf = g_y.to_vec();
        match &bc.mix {
            MixCache::Kan(cache) => {
                let gin = self
                    .kan
                    .backward(mp, cache, g_y, sl_mut(grads, &bo.mix))?;
                for (g, d) in g_cf.iter_mut().zip(&gin) {
                    *g += d;
                }
            }
            MixCache::Mlp { pre, act } => {
                let h = self.mlp_hidden;
                let w1 = &mp[..h * c];
                let w2 = &mp[h * c + h..h * c + h + c * h];
                let gm = sl_mut(grads, &bo.mix);
                let (gw1, rest) = gm.split_at_mut(h * c);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                for row in g_y.chunks_exact(c) {
                    for (gb, g) in gb2.iter_mut().zip(row) {
                        *gb += g;
                    }
                }
                matmul_at_b_acc(g_y, act, gw2, rows, c, h);
                let mut g_act = vec![0.0; rows * h];
                matmul_acc(g_y, w2, &mut g_act, rows, c, h);
                for (g, &p) in g_act.iter_mut().zip(pre) {
                    *g *= silu_deriv(p);
                }
                for row in g_act.chunks_exact(h) {
                    for (gb, g) in gb1.iter_mut().zip(row) {
                        *gb += g;
                    }
                }
                matmul_at_b_acc(&g_act, &bc.cf, gw1, rows, h, c);
                matmul_acc(&g_act, w1, &mut g_cf, rows, h, c);
            }
        }

        // FiLM
        let film = &bc.film;
        let mut g_film = vec![0.0; 2 * c];
        let mut g_b = vec![0.0; rows * c];
        for ((gc_row, b_row), gb_row) in g_cf
            .chunks_exact(c)
            .zip(bc.b.chunks_exact(c))
            .zip(g_b.chunks_exact_mut(c))
        {
            for ch in 0..c {
                gb_row[ch] = gc_row[ch] * (1.0 + film[ch]);
                g_film[ch] += gc_row[ch] * b_row[ch];
                g_film[c + ch] += gc_row[ch];
            }
        }
        for (gb, g) in sl_mut(grads, &bo.film_b).iter_mut().zip(&g_film) {
            *gb += g;
        }
        matmul_acc(&g_film, emb, sl_mut(grads, &bo.film_w), 2 * c, 1, e);
        matmul_at_b_acc(sl(params, &bo.film_w), &g_film, g_emb, 2 * c, e, 1);

        // temporal
        let mut g_a = g_b.clone();
        matmul_at_b_acc(sl(params, &bo.temporal_w), &g_b, &mut g_a, f, f, n * c);
        matmul_a_bt_acc(&g_b, &bc.a, sl_mut(grads, &bo.temporal_w), f, n * c, f);
        for (gb, chunk) in sl_mut(grads, &bo.temporal_b)
            .iter_mut()
            .zip(g_b.chunks_exact(n * c))
        {
            *gb += chunk.iter().sum::<f64>();
        }

        // spatial
        let mut g_x = g_a.clone();
        let s_w = sl(params, &bo.spatial_w);
        for fr in 0..f {
            let span = fr * n * c..(fr + 1) * n * c;
            matmul_at_b_acc(s_w, &g_a[span.clone()], &mut g_x[span.clone()], n, n, c);
            matmul_a_bt_acc(&g_a[span.clone()], &bc.x[span], sl_mut(grads, &bo.spatial_w), n, c, n);
        }
        let gsb = sl_mut(grads, &bo.spatial_b);
        for (r, row) in g_a.chunks_exact(c).enumerate() {
            gsb[r % n] += row.iter().sum::<f64>();
        }
        Ok(g_x)
    }

    /// Mean-squared-error loss against `noise`; adds `scale · ∂loss/∂params`
    /// into `grads` and returns the loss.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        zt: &Tensor,
        noise: &Tensor,
        cond: Option<&Condition>,
        t: usize,
        scale: f64,
        grads: &mut [f64],
    ) -> Result<f64> {
        let (pred, cache) = self.forward(params, zt, cond, t)?;
        let loss = crate::diffusion::training_loss(noise, &pred)?;
        let k = 2.0 * scale / noise.numel() as f64;
        let g: Vec<f64> = pred
            .data()
            .iter()
            .zip(noise.data())
            .map(|(p, y)| k * (p - y))
            .collect();
        self.backward(params, &cache, &g, grads)?;
        Ok(loss)
    }

    /// The condition bundle the backbone sees for these inputs.
    pub fn condition_bundle(
        &self,
        params: &[f64],
        zt: &Tensor,
        cond: Option<&Condition>,
        t: usize,
    ) -> Result<ConditionBundle> {
        let shape = self.embedding_shape();
        let null = ConditionBundle::null(&shape, self.cfg.style_dim);
        let Some(cond) = cond else { return Ok(null) };
        let (_, cache) = self.forward(params, zt, Some(cond), t)?;
        let co = self.off.cond.as_ref().expect("conditioned forward implies offsets");
        let (f, c, n) = (self.cfg.frames, self.cfg.channels, self.tokens);
        let dp = cache.depth.as_ref().expect("conditioned forward caches depth");
        let aligned = align_rows(&dp.z_rows, &dp.stats, sl(params, &co.gamma), ALIGN_EPS);
        let style = cache.style.as_ref().map(|(sv, _)| sv.clone());
        Ok(ConditionBundle {
            aligned_depth: Tensor::new(shape.to_vec(), channels_first(&aligned, f, c, n))?,
            style: match style {
                Some(sv) => Tensor::new(vec![self.cfg.style_dim], sv)?,
                None => null.style,
            },
            null: false,
        })
    }
}
