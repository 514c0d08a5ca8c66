//! Layers with hand-written forward/backward passes.
//!
//! Convention: activations are (seq_len x dim) tensors; rows at or beyond
//! `valid` are padding and are kept exactly zero through every layer (bias
//! terms are only added to valid rows), so padding never leaks into the
//! pooled representation and receives no gradient.

use super::tensor::Tensor;

/// y rows < valid = x W + b; padding rows stay zero.
fn affine_valid(x: &Tensor, w: &Tensor, b: &Tensor, valid: usize) -> Tensor {
    let mut y = x.matmul(w);
    for r in 0..valid {
        let row = y.row_mut(r);
        for (o, &bias) in row.iter_mut().zip(b.row(0).iter()) {
            *o += bias;
        }
    }
    y
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor, // 1 x d
    pub beta: Tensor,  // 1 x d
}

pub struct LnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    valid: usize,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        let mut gamma = Tensor::zeros(1, dim);
        gamma.fill(1.0);
        LayerNorm { gamma, beta: Tensor::zeros(1, dim) }
    }

    pub fn zeros_like(&self) -> LayerNorm {
        LayerNorm { gamma: self.gamma.zeroed_like(), beta: self.beta.zeroed_like() }
    }

    pub fn forward(&self, x: &Tensor, valid: usize) -> (Tensor, LnCache) {
        let d = x.cols;
        let mut y = Tensor::zeros(x.rows, d);
        let mut xhat = Tensor::zeros(x.rows, d);
        let mut inv_std = vec![0.0; x.rows];
        for r in 0..valid {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                *xhat.at_mut(r, c) = h;
                *y.at_mut(r, c) = self.gamma.at(0, c) * h + self.beta.at(0, c);
            }
        }
        (y, LnCache { xhat, inv_std, valid })
    }

    pub fn backward(&self, dy: &Tensor, cache: &LnCache, grads: &mut LayerNorm) -> Tensor {
        let d = dy.cols as f64;
        let mut dx = Tensor::zeros(dy.rows, dy.cols);
        for r in 0..cache.valid {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            // Parameter gradients.
            for c in 0..dy.cols {
                *grads.gamma.at_mut(0, c) += dyr[c] * xh[c];
                *grads.beta.at_mut(0, c) += dyr[c];
            }
            // dxhat = dy * gamma; then the two mean-removal terms.
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            let gamma = self.gamma.row(0);
            for c in 0..dy.cols {
                let dxh = dyr[c] * gamma[c];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh[c];
            }
            let inv = cache.inv_std[r];
            for c in 0..dy.cols {
                let dxh = dyr[c] * gamma[c];
                *dx.at_mut(r, c) = inv * (dxh - sum_dxhat / d - xh[c] * sum_dxhat_xhat / d);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Windowed multi-head self-attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Tensor, // d x d
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor, // 1 x d
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
    pub heads: usize,
    /// Key j is visible to query i iff |i - j| <= window (within valid
    /// rows). 0 means self-only; >= seq_len - 1 is full attention.
    pub window: usize,
}

pub struct AttnCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head (s x s) attention probabilities; zero outside the window.
    probs: Vec<Tensor>,
    /// Concatenated head outputs before the output projection.
    a: Tensor,
    valid: usize,
}

impl Attention {
    pub fn new<R: rand::Rng>(dim: usize, heads: usize, window: usize, rng: &mut R) -> Attention {
        let std = 1.0 / (dim as f64).sqrt();
        Attention {
            wq: Tensor::randn(dim, dim, std, rng),
            wk: Tensor::randn(dim, dim, std, rng),
            wv: Tensor::randn(dim, dim, std, rng),
            wo: Tensor::randn(dim, dim, std, rng),
            bq: Tensor::zeros(1, dim),
            bk: Tensor::zeros(1, dim),
            bv: Tensor::zeros(1, dim),
            bo: Tensor::zeros(1, dim),
            heads,
            window,
        }
    }

    pub fn zeros_like(&self) -> Attention {
        Attention {
            wq: self.wq.zeroed_like(),
            wk: self.wk.zeroed_like(),
            wv: self.wv.zeroed_like(),
            wo: self.wo.zeroed_like(),
            bq: self.bq.zeroed_like(),
            bk: self.bk.zeroed_like(),
            bv: self.bv.zeroed_like(),
            bo: self.bo.zeroed_like(),
            heads: self.heads,
            window: self.window,
        }
    }

    pub fn forward(&self, x: &Tensor, valid: usize) -> (Tensor, AttnCache) {
        let d = x.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = affine_valid(x, &self.wq, &self.bq, valid);
        let k = affine_valid(x, &self.wk, &self.bk, valid);
        let v = affine_valid(x, &self.wv, &self.bv, valid);
        let mut probs: Vec<Tensor> = (0..self.heads).map(|_| Tensor::zeros(x.rows, x.rows)).collect();
        let mut a = Tensor::zeros(x.rows, d);
        for h in 0..self.heads {
            let c0 = h * dh;
            let p = &mut probs[h];
            for i in 0..valid {
                let lo = i.saturating_sub(self.window);
                let hi = (i + self.window).min(valid - 1);
                // Stable softmax over the visible window.
                let mut maxl = f64::NEG_INFINITY;
                let mut logits = Vec::with_capacity(hi - lo + 1);
                for j in lo..=hi {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q.at(i, c0 + c) * k.at(j, c0 + c);
                    }
                    let l = dot * scale;
                    maxl = maxl.max(l);
                    logits.push(l);
                }
                let mut denom = 0.0;
                for l in logits.iter_mut() {
                    *l = (*l - maxl).exp();
                    denom += *l;
                }
                for (j, e) in (lo..=hi).zip(logits.iter()) {
                    let pij = e / denom;
                    *p.at_mut(i, j) = pij;
                    for c in 0..dh {
                        *a.at_mut(i, c0 + c) += pij * v.at(j, c0 + c);
                    }
                }
            }
        }
        let out = affine_valid(&a, &self.wo, &self.bo, valid);
        (out, AttnCache { x: x.clone(), q, k, v, probs, a, valid })
    }

    pub fn backward(&self, dout: &Tensor, cache: &AttnCache, grads: &mut Attention) -> Tensor {
        let d = dout.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let valid = cache.valid;
        // Output projection.
        grads.wo.add_scaled(&cache.a.t_matmul(dout), 1.0);
        for (g, s) in grads.bo.row_mut(0).iter_mut().zip(dout.col_sums()) {
            *g += s;
        }
        let da = dout.matmul_t(&self.wo);
        // Per-head attention backward.
        let mut dq = Tensor::zeros(dout.rows, d);
        let mut dk = Tensor::zeros(dout.rows, d);
        let mut dv = Tensor::zeros(dout.rows, d);
        for h in 0..self.heads {
            let c0 = h * dh;
            let p = &cache.probs[h];
            for i in 0..valid {
                let lo = i.saturating_sub(self.window);
                let hi = (i + self.window).min(valid - 1);
                // dp_j = da_i . v_j ; softmax jacobian -> dlogit.
                let mut dot_p_dp = 0.0;
                let mut dps = Vec::with_capacity(hi - lo + 1);
                for j in lo..=hi {
                    let mut dp = 0.0;
                    for c in 0..dh {
                        dp += da.at(i, c0 + c) * cache.v.at(j, c0 + c);
                        // dv accumulates p * da.
                        *dv.at_mut(j, c0 + c) += p.at(i, j) * da.at(i, c0 + c);
                    }
                    dot_p_dp += p.at(i, j) * dp;
                    dps.push(dp);
                }
                for (j, dp) in (lo..=hi).zip(dps) {
                    let dlogit = p.at(i, j) * (dp - dot_p_dp) * scale;
                    for c in 0..dh {
                        *dq.at_mut(i, c0 + c) += dlogit * cache.k.at(j, c0 + c);
                        *dk.at_mut(j, c0 + c) += dlogit * cache.q.at(i, c0 + c);
                    }
                }
            }
        }
        // Projections back to the input.
        grads.wq.add_scaled(&cache.x.t_matmul(&dq), 1.0);
        grads.wk.add_scaled(&cache.x.t_matmul(&dk), 1.0);
        grads.wv.add_scaled(&cache.x.t_matmul(&dv), 1.0);
        for (g, s) in grads.bq.row_mut(0).iter_mut().zip(dq.col_sums()) {
            *g += s;
        }
        for (g, s) in grads.bk.row_mut(0).iter_mut().zip(dk.col_sums()) {
            *g += s;
        }
        for (g, s) in grads.bv.row_mut(0).iter_mut().zip(dv.col_sums()) {
            *g += s;
        }
        let mut dx = dq.matmul_t(&self.wq);
        dx.add_scaled(&dk.matmul_t(&self.wk), 1.0);
        dx.add_scaled(&dv.matmul_t(&self.wv), 1.0);
        dx
    }
}

// ---------------------------------------------------------------------------
// Feed-forward block
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Tensor, // d x 4d
    pub b1: Tensor,
    pub w2: Tensor, // 4d x d
    pub b2: Tensor,
}

pub struct FfCache {
    x: Tensor,
    h: Tensor, // post-ReLU
    valid: usize,
}

impl FeedForward {
    pub fn new<R: rand::Rng>(dim: usize, rng: &mut R) -> FeedForward {
        let hidden = dim * 4;
        FeedForward {
            w1: Tensor::randn(dim, hidden, 1.0 / (dim as f64).sqrt(), rng),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::randn(hidden, dim, 1.0 / (hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(1, dim),
        }
    }

    pub fn zeros_like(&self) -> FeedForward {
        FeedForward {
            w1: self.w1.zeroed_like(),
            b1: self.b1.zeroed_like(),
            w2: self.w2.zeroed_like(),
            b2: self.b2.zeroed_like(),
        }
    }

    pub fn forward(&self, x: &Tensor, valid: usize) -> (Tensor, FfCache) {
        let mut h = affine_valid(x, &self.w1, &self.b1, valid);
        for v in h.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let y = affine_valid(&h, &self.w2, &self.b2, valid);
        (y, FfCache { x: x.clone(), h, valid })
    }

    pub fn backward(&self, dy: &Tensor, cache: &FfCache, grads: &mut FeedForward) -> Tensor {
        grads.w2.add_scaled(&cache.h.t_matmul(dy), 1.0);
        for (g, s) in grads.b2.row_mut(0).iter_mut().zip(dy.col_sums()) {
            *g += s;
        }
        let mut dhh = dy.matmul_t(&self.w2);
        for (dv, &hv) in dhh.data.iter_mut().zip(cache.h.data.iter()) {
            if hv <= 0.0 {
                *dv = 0.0;
            }
        }
        grads.w1.add_scaled(&cache.x.t_matmul(&dhh), 1.0);
        for (g, s) in grads.b1.row_mut(0).iter_mut().zip(dhh.col_sums()) {
            *g += s;
        }
        let _ = cache.valid;
        dhh.matmul_t(&self.w1)
    }
}

// ---------------------------------------------------------------------------
// Pre-norm encoder layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

pub struct EncoderCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ff: FfCache,
}

impl EncoderLayer {
    pub fn new<R: rand::Rng>(dim: usize, heads: usize, window: usize, rng: &mut R) -> EncoderLayer {
        EncoderLayer {
            ln1: LayerNorm::new(dim),
            attn: Attention::new(dim, heads, window, rng),
            ln2: LayerNorm::new(dim),
            ff: FeedForward::new(dim, rng),
        }
    }

    pub fn zeros_like(&self) -> EncoderLayer {
        EncoderLayer {
            ln1: self.ln1.zeros_like(),
            attn: self.attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            ff: self.ff.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Tensor, valid: usize) -> (Tensor, EncoderCache) {
        let (n1, c_ln1) = self.ln1.forward(x, valid);
        let (att, c_attn) = self.attn.forward(&n1, valid);
        let mut x2 = x.clone();
        x2.add_scaled(&att, 1.0);
        let (n2, c_ln2) = self.ln2.forward(&x2, valid);
        let (f, c_ff) = self.ff.forward(&n2, valid);
        let mut y = x2;
        y.add_scaled(&f, 1.0);
        (y, EncoderCache { ln1: c_ln1, attn: c_attn, ln2: c_ln2, ff: c_ff })
    }

    pub fn backward(&self, dy: &Tensor, cache: &EncoderCache, grads: &mut EncoderLayer) -> Tensor {
        // y = x2 + ff(ln2(x2)); x2 = x + attn(ln1(x)).
        let dn2 = self.ff.backward(dy, &cache.ff, &mut grads.ff);
        let mut dx2 = self.ln2.backward(&dn2, &cache.ln2, &mut grads.ln2);
        dx2.add_scaled(dy, 1.0);
        let dn1 = self.attn.backward(&dx2, &cache.attn, &mut grads.attn);
        let mut dx = self.ln1.backward(&dn1, &cache.ln1, &mut grads.ln1);
        dx.add_scaled(&dx2, 1.0);
        dx
    }
}

// ---------------------------------------------------------------------------
// MLP head over [pooled ; constraint]
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `head_layers` hidden affine+ReLU stages, all of width `in_dim`.
    pub hidden: Vec<(Tensor, Tensor)>,
    pub final_w: Tensor,
    pub final_b: Tensor,
}

pub struct HeadCache {
    /// Input to each hidden stage (so zs[0] is the head input), plus the
    /// input to the final affine.
    zs: Vec<Tensor>,
}

impl Head {
    pub fn new<R: rand::Rng>(in_dim: usize, layers: usize, out_dim: usize, rng: &mut R) -> Head {
        let std = 1.0 / (in_dim as f64).sqrt();
        let hidden = (0..layers)
            .map(|_| (Tensor::randn(in_dim, in_dim, std, rng), Tensor::zeros(1, in_dim)))
            .collect();
        Head {
            hidden,
            final_w: Tensor::randn(in_dim, out_dim, std, rng),
            final_b: Tensor::zeros(1, out_dim),
        }
    }

    pub fn zeros_like(&self) -> Head {
        Head {
            hidden: self
                .hidden
                .iter()
                .map(|(w, b)| (w.zeroed_like(), b.zeroed_like()))
                .collect(),
            final_w: self.final_w.zeroed_like(),
            final_b: self.final_b.zeroed_like(),
        }
    }

    pub fn forward(&self, z0: &Tensor) -> (Tensor, HeadCache) {
        let mut zs = vec![z0.clone()];
        let mut z = z0.clone();
        for (w, b) in &self.hidden {
            let mut a = affine_valid(&z, w, b, 1);
            for v in a.data.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            zs.push(a.clone());
            z = a;
        }
        let y = affine_valid(&z, &self.final_w, &self.final_b, 1);
        (y, HeadCache { zs })
    }

    pub fn backward(&self, dy: &Tensor, cache: &HeadCache, grads: &mut Head) -> Tensor {
        let z_last = &cache.zs[cache.zs.len() - 1];
        grads.final_w.add_scaled(&z_last.t_matmul(dy), 1.0);
        for (g, s) in grads.final_b.row_mut(0).iter_mut().zip(dy.col_sums()) {
            *g += s;
        }
        let mut dz = dy.matmul_t(&self.final_w);
        for li in (0..self.hidden.len()).rev() {
            let post = &cache.zs[li + 1];
            for (dv, &pv) in dz.data.iter_mut().zip(post.data.iter()) {
                if pv <= 0.0 {
                    *dv = 0.0;
                }
            }
            let (w, _b) = &self.hidden[li];
            let (gw, gb) = &mut grads.hidden[li];
            gw.add_scaled(&cache.zs[li].t_matmul(&dz), 1.0);
            for (g, s) in gb.row_mut(0).iter_mut().zip(dz.col_sums()) {
                *g += s;
            }
            dz = dz.matmul_t(w);
        }
        dz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layernorm_output_is_normalized() {
        let ln = LayerNorm::new(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(4, 8, 3.0, &mut rng);
        let (y, _) = ln.forward(&x, 3);
        for r in 0..3 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // Padding row untouched.
        assert!(y.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn self_only_window_passes_values_through() {
        // With window = 0, Wq = Wk = 0 and Wv = Wo = I, attention is the
        // identity on valid rows.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut attn = Attention::new(4, 2, 0, &mut rng);
        attn.wq.fill(0.0);
        attn.wk.fill(0.0);
        attn.wv.fill(0.0);
        attn.wo.fill(0.0);
        for i in 0..4 {
            *attn.wv.at_mut(i, i) = 1.0;
            *attn.wo.at_mut(i, i) = 1.0;
        }
        let x = Tensor::randn(5, 4, 1.0, &mut rng);
        let (y, _) = attn.forward(&x, 4);
        for r in 0..4 {
            for c in 0..4 {
                assert!((y.at(r, c) - x.at(r, c)).abs() < 1e-12);
            }
        }
        assert!(y.row(4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_scores_attend_uniformly_over_window() {
        // Wq = Wk = 0 makes every visible logit equal, so each output row is
        // the mean of visible value rows.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut attn = Attention::new(4, 2, 1, &mut rng);
        attn.wq.fill(0.0);
        attn.wk.fill(0.0);
        attn.wv.fill(0.0);
        attn.wo.fill(0.0);
        for i in 0..4 {
            *attn.wv.at_mut(i, i) = 1.0;
            *attn.wo.at_mut(i, i) = 1.0;
        }
        let x = Tensor::from_rows(vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 3.0, 0.0],
        ])
        .unwrap();
        let (y, _) = attn.forward(&x, 3);
        // Row 0 sees rows {0,1}; row 1 sees {0,1,2}; row 2 sees {1,2}.
        let expect = [
            [0.5, 1.0, 0.0, 0.0],
            [1.0 / 3.0, 2.0 / 3.0, 1.0, 0.0],
            [0.0, 1.0, 1.5, 0.0],
        ];
        for r in 0..3 {
            for c in 0..4 {
                assert!(
                    (y.at(r, c) - expect[r][c]).abs() < 1e-12,
                    "row {r} col {c}: {} vs {}",
                    y.at(r, c),
                    expect[r][c]
                );
            }
        }
    }

    #[test]
    fn wide_window_matches_full_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let narrow = Attention::new(8, 2, 7, &mut rng); // window >= s-1
        let mut full = narrow.clone();
        full.window = 1000;
        let x = Tensor::randn(8, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        let (ya, _) = narrow.forward(&x, 8);
        let (yb, _) = full.forward(&x, 8);
        for (a, b) in ya.data.iter().zip(yb.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
