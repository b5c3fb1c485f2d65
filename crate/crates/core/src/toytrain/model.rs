use rand_distr::{Distribution, Normal};

use crate::error::{EcrError, Result};
use crate::rng::seeded;

/// Start-of-sequence token; every sequence begins with it.
pub const BOS: u32 = 0;

// Independent init streams so the base rows do not depend on the control vocabulary size.
const CTRL_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const OUT_STREAM: u64 = 0xd1b5_4a32_d192_ed03;

/// Embedding table, mean pooling, and a bias-free output projection.
///
/// Rows `0..v_base` embed ordinary tokens and rows `v_base..v_base + n_ctrl`
/// embed control tokens. The prediction for position `t + 1` is
/// `softmax(Wᵀ · mean(E[x[0..=t]]))` over the `v_base` ordinary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    v_base: usize,
    n_ctrl: usize,
    d: usize,
    /// Embedding rows (`(v_base + n_ctrl) × d`) followed by `W` (`d × v_base`).
    params: Vec<f64>,
}

impl ToyModel {
    pub fn new(v_base: usize, n_ctrl: usize, d: usize, seed: u64, init_scale: f64) -> Result<Self> {
        if v_base < 2 || d == 0 {
            return Err(EcrError::invalid("model needs v_base >= 2 and d >= 1"));
        }
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(EcrError::invalid(format!("bad init scale {init_scale}")));
        }
        let emb = Normal::new(0.0, init_scale).expect("valid scale");
        let out = Normal::new(0.0, init_scale / (d as f64).sqrt()).expect("valid scale");
        let mut params = Vec::with_capacity((v_base + n_ctrl) * d + d * v_base);
        let mut rng = seeded(seed);
        params.extend((0..v_base * d).map(|_| emb.sample(&mut rng)));
        let mut rng = seeded(seed ^ CTRL_STREAM);
        params.extend((0..n_ctrl * d).map(|_| emb.sample(&mut rng)));
        let mut rng = seeded(seed ^ OUT_STREAM);
        params.extend((0..d * v_base).map(|_| out.sample(&mut rng)));
        Ok(Self {
            v_base,
            n_ctrl,
            d,
            params,
        })
    }

    pub fn v_base(&self) -> usize {
        self.v_base
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn vocab(&self) -> usize {
        self.v_base + self.n_ctrl
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w_offset(&self) -> usize {
        self.vocab() * self.d
    }

    pub fn embedding(&self, token: u32) -> &[f64] {
        let t = token as usize;
        &self.params[t * self.d..(t + 1) * self.d]
    }

    pub fn embedding_mut(&mut self, token: u32) -> &mut [f64] {
        let t = token as usize;
        &mut self.params[t * self.d..(t + 1) * self.d]
    }

    /// Row `j` of `W`: the weights from hidden unit `j` to every output token.
    pub fn out_row_mut(&mut self, j: usize) -> &mut [f64] {
        let o = self.w_offset() + j * self.v_base;
        &mut self.params[o..o + self.v_base]
    }

    /// Extended-vocabulary id of control token `ctrl`.
    pub fn control_token(&self, ctrl: u32) -> u32 {
        self.v_base as u32 + ctrl
    }

    pub fn is_control(&self, token: u32) -> bool {
        token as usize >= self.v_base
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(EcrError::invalid("empty token sequence"));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.vocab()) {
            return Err(EcrError::invalid(format!(
                "token {t} outside vocabulary of {}",
                self.vocab()
            )));
        }
        Ok(())
    }

    /// Mean embedding of the non-control tokens.
    pub fn embed_sequence(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let mut h = vec![0.0; self.d];
        let mut n = 0usize;
        for &t in tokens.iter().filter(|&&t| !self.is_control(t)) {
            for (a, e) in h.iter_mut().zip(self.embedding(t)) {
                *a += e;
            }
            n += 1;
        }
        if n == 0 {
            return Err(EcrError::invalid("sequence holds only control tokens"));
        }
        h.iter_mut().for_each(|a| *a /= n as f64);
        Ok(h)
    }

    /// Output logits for pooled representation `r`.
    pub fn logits(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.v_base];
        let w = &self.params[self.w_offset()..];
        for (j, &rj) in r.iter().enumerate() {
            for (zv, wv) in z.iter_mut().zip(&w[j * self.v_base..(j + 1) * self.v_base]) {
                *zv += rj * wv;
            }
        }
        z
    }

    /// Logits predicting `input[pos]` from `input[..pos]`.
    pub fn predict_at(&self, input: &[u32], pos: usize) -> Result<Vec<f64>> {
        if pos == 0 || pos > input.len() {
            return Err(EcrError::invalid(format!("cannot predict position {pos}")));
        }
        self.check_tokens(input)?;
        let mut r = vec![0.0; self.d];
        for &t in &input[..pos] {
            for (a, e) in r.iter_mut().zip(self.embedding(t)) {
                *a += e;
            }
        }
        r.iter_mut().for_each(|a| *a /= pos as f64);
        Ok(self.logits(&r))
    }

    /// Targets are `input[n_prefix + 1..]`; all must be ordinary tokens.
    fn check_targets(&self, input: &[u32], n_prefix: usize) -> Result<()> {
        self.check_tokens(input)?;
        if input.len() < n_prefix + 2 {
            return Err(EcrError::invalid("sequence has no prediction targets"));
        }
        if let Some(&t) = input[n_prefix + 1..].iter().find(|&&t| self.is_control(t)) {
            return Err(EcrError::invalid(format!(
                "control token {t} in a target position"
            )));
        }
        Ok(())
    }

    /// Per-target negative log-likelihoods of `input[n_prefix + 1..]`.
    pub fn target_nll(&self, input: &[u32], n_prefix: usize) -> Result<Vec<f64>> {
        self.check_targets(input, n_prefix)?;
        let mut sum = vec![0.0; self.d];
        let mut out = Vec::with_capacity(input.len() - n_prefix - 1);
        for (t, &tok) in input[..input.len() - 1].iter().enumerate() {
            for (a, e) in sum.iter_mut().zip(self.embedding(tok)) {
                *a += e;
            }
            if t < n_prefix {
                continue;
            }
            let r: Vec<f64> = sum.iter().map(|s| s / (t + 1) as f64).collect();
            let z = self.logits(&r);
            out.push(log_sum_exp(&z) - z[input[t + 1] as usize]);
        }
        Ok(out)
    }

    /// Adds `scale ·` the gradient of the summed target NLL to `grad`; returns the summed NLL.
    pub fn accumulate_grad(
        &self,
        input: &[u32],
        n_prefix: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_targets(input, n_prefix)?;
        let d = self.d;
        let v = self.v_base;
        let len = input.len();
        let w_off = self.w_offset();
        let w = &self.params[w_off..];

        // Gradient w.r.t. each pooled representation, indexed by position t.
        let mut dr = vec![0.0; len * d];
        let mut sum = vec![0.0; d];
        let mut nll = 0.0;
        for t in 0..len - 1 {
            for (a, e) in sum.iter_mut().zip(self.embedding(input[t])) {
                *a += e;
            }
            if t < n_prefix {
                continue;
            }
            let r: Vec<f64> = sum.iter().map(|s| s / (t + 1) as f64).collect();
            let z = self.logits(&r);
            let lse = log_sum_exp(&z);
            let y = input[t + 1] as usize;
            nll += lse - z[y];
            let mut g: Vec<f64> = z.iter().map(|zv| (zv - lse).exp()).collect();
            g[y] -= 1.0;
            for j in 0..d {
                let wrow = &w[j * v..(j + 1) * v];
                let grow = &mut grad[w_off + j * v..w_off + (j + 1) * v];
                let rj = r[j] * scale;
                let mut acc = 0.0;
                for k in 0..v {
                    grow[k] += rj * g[k];
                    acc += wrow[k] * g[k];
                }
                dr[t * d + j] = acc * scale / (t + 1) as f64;
            }
        }
        // E[input[i]] feeds every representation at t >= i: suffix sums.
        let mut suffix = vec![0.0; d];
        for i in (0..len - 1).rev() {
            for (s, x) in suffix.iter_mut().zip(&dr[i * d..(i + 1) * d]) {
                *s += x;
            }
            let tok = input[i] as usize;
            for (gv, s) in grad[tok * d..(tok + 1) * d].iter_mut().zip(&suffix) {
                *gv += s;
            }
        }
        Ok(nll)
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
