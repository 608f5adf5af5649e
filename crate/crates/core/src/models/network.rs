//! The reference encoder-decoder: a bidirectional GRU encoder, a GRU
//! decoder with additive attention over the encoder states, and a full
//! softmax output layer. All parameters live in one flat vector; gradients
//! are computed by hand-written backpropagation into a vector of the same
//! layout.

use rand::Rng;

use super::vocab::EOS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
enum RegionKind {
    Embedding,
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy)]
struct Gru {
    w: usize,
    u: usize,
    b: usize,
    input: usize,
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub arch: Arch,
    src_emb: usize,
    enc_f: Gru,
    enc_b: Gru,
    init_w: usize,
    init_b: usize,
    tgt_emb: usize,
    dec: Gru,
    att_w: usize,
    att_u: usize,
    att_v: usize,
    comb_w: usize,
    comb_b: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
    regions: Vec<(usize, usize, usize, RegionKind)>,
}

struct Builder {
    next: usize,
    regions: Vec<(usize, usize, usize, RegionKind)>,
}

impl Builder {
    fn take(&mut self, rows: usize, cols: usize, kind: RegionKind) -> usize {
        let at = self.next;
        self.next += rows * cols;
        self.regions.push((at, rows, cols, kind));
        at
    }

    fn gru(&mut self, input: usize, hidden: usize) -> Gru {
        Gru {
            w: self.take(3 * hidden, input, RegionKind::Weight),
            u: self.take(3 * hidden, hidden, RegionKind::Weight),
            b: self.take(3 * hidden, 1, RegionKind::Bias),
            input,
        }
    }
}

impl Layout {
    pub fn new(arch: Arch) -> Self {
        let (v, e, h) = (arch.vocab, arch.embed, arch.hidden);
        let mut b = Builder {
            next: 0,
            regions: Vec::new(),
        };
        let src_emb = b.take(v, e, RegionKind::Embedding);
        let enc_f = b.gru(e, h);
        let enc_b = b.gru(e, h);
        let init_w = b.take(h, 2 * h, RegionKind::Weight);
        let init_b = b.take(h, 1, RegionKind::Bias);
        let tgt_emb = b.take(v, e, RegionKind::Embedding);
        let dec = b.gru(e, h);
        let att_w = b.take(h, h, RegionKind::Weight);
        let att_u = b.take(h, 2 * h, RegionKind::Weight);
        let att_v = b.take(h, 1, RegionKind::Weight);
        let comb_w = b.take(h, 3 * h, RegionKind::Weight);
        let comb_b = b.take(h, 1, RegionKind::Bias);
        let out_w = b.take(v, h, RegionKind::Weight);
        let out_b = b.take(v, 1, RegionKind::Bias);
        Self {
            arch,
            src_emb,
            enc_f,
            enc_b,
            init_w,
            init_b,
            tgt_emb,
            dec,
            att_w,
            att_u,
            att_v,
            comb_w,
            comb_b,
            out_w,
            out_b,
            total: b.next,
            regions: b.regions,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.total
    }

    /// Uniform(-1/√fan_in, 1/√fan_in) weights, uniform(-0.5, 0.5)
    /// embeddings, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.total];
        for &(at, rows, cols, kind) in &self.regions {
            let bound = match kind {
                RegionKind::Embedding => 0.5,
                RegionKind::Weight => 1.0 / (cols as f64).sqrt(),
                RegionKind::Bias => continue,
            };
            for p in &mut params[at..at + rows * cols] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        params
    }
}

fn block(p: &[f64], at: usize, len: usize) -> &[f64] {
    &p[at..at + len]
}

fn block_mut(p: &mut [f64], at: usize, len: usize) -> &mut [f64] {
    &mut p[at..at + len]
}

/// out += W x, W row-major with `out.len()` rows.
fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += Wᵀ y
fn matvec_t_acc(out: &mut [f64], w: &[f64], y: &[f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), y.len() * cols);
    for (&yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }
}

/// G += y xᵀ
fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), y.len() * cols);
    for (&yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if yi != 0.0 {
            for (gi, xi) in row.iter_mut().zip(x) {
                *gi += yi * xi;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for l in logits.iter_mut() {
        *l -= lse;
    }
}

#[derive(Debug, Clone)]
struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    un: Vec<f64>,
    h: Vec<f64>,
}

fn gru_forward(p: &[f64], g: Gru, hidden: usize, x: &[f64], h_prev: &[f64]) -> GruCache {
    let mut wx = block(p, g.b, 3 * hidden).to_vec();
    matvec_acc(&mut wx, block(p, g.w, 3 * hidden * g.input), x);
    let mut uh = vec![0.0; 3 * hidden];
    matvec_acc(&mut uh, block(p, g.u, 3 * hidden * hidden), h_prev);

    let mut z = vec![0.0; hidden];
    let mut r = vec![0.0; hidden];
    let mut n = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for i in 0..hidden {
        z[i] = sigmoid(wx[i] + uh[i]);
        r[i] = sigmoid(wx[hidden + i] + uh[hidden + i]);
        n[i] = (wx[2 * hidden + i] + r[i] * uh[2 * hidden + i]).tanh();
        h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
    GruCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        un: uh[2 * hidden..].to_vec(),
        h,
    }
}

/// Backpropagates `dh` through one GRU step; adds into `dx` and `dh_prev`.
fn gru_backward(
    p: &[f64],
    grad: &mut [f64],
    g: Gru,
    hidden: usize,
    c: &GruCache,
    dh: &[f64],
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let mut dpre_w = vec![0.0; 3 * hidden];
    let mut dpre_u = vec![0.0; 3 * hidden];
    for i in 0..hidden {
        let dz = dh[i] * (c.h_prev[i] - c.n[i]);
        let dn = dh[i] * (1.0 - c.z[i]);
        dh_prev[i] += dh[i] * c.z[i];
        let dn_pre = dn * (1.0 - c.n[i] * c.n[i]);
        let dr = dn_pre * c.un[i];
        let dr_pre = dr * c.r[i] * (1.0 - c.r[i]);
        let dz_pre = dz * c.z[i] * (1.0 - c.z[i]);
        dpre_w[i] = dz_pre;
        dpre_w[hidden + i] = dr_pre;
        dpre_w[2 * hidden + i] = dn_pre;
        dpre_u[i] = dz_pre;
        dpre_u[hidden + i] = dr_pre;
        dpre_u[2 * hidden + i] = dn_pre * c.r[i];
    }
    outer_acc(block_mut(grad, g.w, 3 * hidden * g.input), &dpre_w, &c.x);
    for (gb, d) in block_mut(grad, g.b, 3 * hidden).iter_mut().zip(&dpre_w) {
        *gb += d;
    }
    outer_acc(block_mut(grad, g.u, 3 * hidden * hidden), &dpre_u, &c.h_prev);
    matvec_t_acc(dx, block(p, g.w, 3 * hidden * g.input), &dpre_w);
    matvec_t_acc(dh_prev, block(p, g.u, 3 * hidden * hidden), &dpre_u);
}

/// Encoder output for one source sequence.
pub struct Encoded {
    ids: Vec<u32>,
    /// L × 2H annotations `[forward; backward]`.
    states: Vec<f64>,
    /// L × H precomputed `U_a h_j`.
    keys: Vec<f64>,
    mean: Vec<f64>,
    init: Vec<f64>,
    fwd: Vec<GruCache>,
    bwd: Vec<GruCache>,
}

impl Encoded {
    fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.init
    }
}

/// One decoder step's activations.
pub struct Step {
    gru: GruCache,
    att_tanh: Vec<f64>,
    alpha: Vec<f64>,
    concat: Vec<f64>,
    out: Vec<f64>,
    /// log-probabilities over the vocabulary.
    pub logp: Vec<f64>,
}

impl Step {
    pub fn state(&self) -> &[f64] {
        &self.gru.h
    }
}

pub struct Network<'a> {
    layout: &'a Layout,
    p: &'a [f64],
}

impl<'a> Network<'a> {
    pub fn new(layout: &'a Layout, params: &'a [f64]) -> Self {
        debug_assert_eq!(params.len(), layout.total);
        Self { layout, p: params }
    }

    fn hidden(&self) -> usize {
        self.layout.arch.hidden
    }

    fn embed(&self) -> usize {
        self.layout.arch.embed
    }

    fn embedding(&self, table: usize, id: u32) -> &[f64] {
        let e = self.embed();
        block(self.p, table + id as usize * e, e)
    }

    /// Encodes `src` followed by an end-of-sequence marker, so the encoder
    /// never sees an empty input.
    pub fn encode(&self, src: &[u32]) -> Encoded {
        let h = self.hidden();
        let l = self.layout;
        let mut ids = src.to_vec();
        ids.push(EOS);
        let len = ids.len();

        let mut fwd: Vec<GruCache> = Vec::with_capacity(len);
        let mut prev = vec![0.0; h];
        for &id in &ids {
            let c = gru_forward(self.p, l.enc_f, h, self.embedding(l.src_emb, id), &prev);
            prev.clone_from(&c.h);
            fwd.push(c);
        }
        let mut bwd: Vec<Option<GruCache>> = vec![None; len];
        let mut prev = vec![0.0; h];
        for j in (0..len).rev() {
            let c = gru_forward(self.p, l.enc_b, h, self.embedding(l.src_emb, ids[j]), &prev);
            prev.clone_from(&c.h);
            bwd[j] = Some(c);
        }
        let bwd: Vec<GruCache> = bwd.into_iter().map(Option::unwrap).collect();

        let mut states = vec![0.0; len * 2 * h];
        for j in 0..len {
            states[j * 2 * h..j * 2 * h + h].copy_from_slice(&fwd[j].h);
            states[j * 2 * h + h..(j + 1) * 2 * h].copy_from_slice(&bwd[j].h);
        }
        let mut keys = vec![0.0; len * h];
        let att_u = block(self.p, l.att_u, h * 2 * h);
        for j in 0..len {
            matvec_acc(
                &mut keys[j * h..(j + 1) * h],
                att_u,
                &states[j * 2 * h..(j + 1) * 2 * h],
            );
        }
        let mut mean = vec![0.0; 2 * h];
        for row in states.chunks_exact(2 * h) {
            for (m, s) in mean.iter_mut().zip(row) {
                *m += s;
            }
        }
        for m in &mut mean {
            *m /= len as f64;
        }
        let mut init = block(self.p, l.init_b, h).to_vec();
        matvec_acc(&mut init, block(self.p, l.init_w, h * 2 * h), &mean);
        for v in &mut init {
            *v = v.tanh();
        }
        Encoded {
            ids,
            states,
            keys,
            mean,
            init,
            fwd,
            bwd,
        }
    }

    /// Advances the decoder from state `s_prev` after emitting `prev_token`.
    pub fn step(&self, enc: &Encoded, s_prev: &[f64], prev_token: u32) -> Step {
        let h = self.hidden();
        let l = self.layout;
        let v = l.arch.vocab;
        let gru = gru_forward(self.p, l.dec, h, self.embedding(l.tgt_emb, prev_token), s_prev);
        let s = &gru.h;

        let mut query = vec![0.0; h];
        matvec_acc(&mut query, block(self.p, l.att_w, h * h), s);
        let att_v = block(self.p, l.att_v, h);
        let len = enc.len();
        let mut att_tanh = vec![0.0; len * h];
        let mut scores = vec![0.0; len];
        for j in 0..len {
            let t = &mut att_tanh[j * h..(j + 1) * h];
            let key = &enc.keys[j * h..(j + 1) * h];
            let mut score = 0.0;
            for i in 0..h {
                t[i] = (query[i] + key[i]).tanh();
                score += att_v[i] * t[i];
            }
            scores[j] = score;
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = alpha.iter().sum();
        for a in &mut alpha {
            *a /= z;
        }

        let mut concat = vec![0.0; 3 * h];
        concat[..h].copy_from_slice(s);
        for (j, a) in alpha.iter().enumerate() {
            for (c, x) in concat[h..].iter_mut().zip(&enc.states[j * 2 * h..(j + 1) * 2 * h]) {
                *c += a * x;
            }
        }
        let mut out = block(self.p, l.comb_b, h).to_vec();
        matvec_acc(&mut out, block(self.p, l.comb_w, h * 3 * h), &concat);
        for o in &mut out {
            *o = o.tanh();
        }
        let mut logp = block(self.p, l.out_b, v).to_vec();
        matvec_acc(&mut logp, block(self.p, l.out_w, v * h), &out);
        log_softmax(&mut logp);
        Step {
            gru,
            att_tanh,
            alpha,
            concat,
            out,
            logp,
        }
    }

    /// log p(tgt, EOS | src).
    pub fn logprob(&self, src: &[u32], tgt: &[u32]) -> f64 {
        let enc = self.encode(src);
        let mut state = enc.init.clone();
        let mut prev = EOS;
        let mut total = 0.0;
        for &y in tgt.iter().chain(std::iter::once(&EOS)) {
            let step = self.step(&enc, &state, prev);
            total += step.logp[y as usize];
            state = step.gru.h;
            prev = y;
        }
        total
    }

    /// Adds `w · ∇ log p(tgt, EOS | src)` into `grad`, where `w` is
    /// `weight(log p)`, and returns the log-probability.
    pub fn accumulate_gradient<F: FnOnce(f64) -> f64>(
        &self,
        src: &[u32],
        tgt: &[u32],
        weight: F,
        grad: &mut [f64],
    ) -> f64 {
        let h = self.hidden();
        let e = self.embed();
        let l = self.layout;
        let v = l.arch.vocab;
        let enc = self.encode(src);
        let len = enc.len();

        let mut steps = Vec::with_capacity(tgt.len() + 1);
        let mut state = enc.init.clone();
        let mut prev = EOS;
        let mut total = 0.0;
        let targets: Vec<u32> = tgt.iter().copied().chain(std::iter::once(EOS)).collect();
        let mut inputs = Vec::with_capacity(targets.len());
        for &y in &targets {
            let step = self.step(&enc, &state, prev);
            total += step.logp[y as usize];
            state.clone_from(&step.gru.h);
            inputs.push(prev);
            prev = y;
            steps.push(step);
        }
        let weight = weight(total);
        if weight == 0.0 {
            return total;
        }

        let mut d_states = vec![0.0; len * 2 * h];
        // Σ_t ∂/∂(U_a h_j), applied once after the time loop.
        let mut d_keys = vec![0.0; len * h];
        let mut ds_next = vec![0.0; h];
        let mut dlogits = vec![0.0; v];
        let att_v = block(self.p, l.att_v, h).to_vec();

        for (t, step) in steps.iter().enumerate().rev() {
            let y = targets[t] as usize;
            for (k, d) in dlogits.iter_mut().enumerate() {
                *d = -weight * step.logp[k].exp();
            }
            dlogits[y] += weight;

            outer_acc(block_mut(grad, l.out_w, v * h), &dlogits, &step.out);
            for (g, d) in block_mut(grad, l.out_b, v).iter_mut().zip(&dlogits) {
                *g += d;
            }
            let mut dout = vec![0.0; h];
            matvec_t_acc(&mut dout, block(self.p, l.out_w, v * h), &dlogits);
            for (d, o) in dout.iter_mut().zip(&step.out) {
                *d *= 1.0 - o * o;
            }
            outer_acc(block_mut(grad, l.comb_w, h * 3 * h), &dout, &step.concat);
            for (g, d) in block_mut(grad, l.comb_b, h).iter_mut().zip(&dout) {
                *g += d;
            }
            let mut dconcat = vec![0.0; 3 * h];
            matvec_t_acc(&mut dconcat, block(self.p, l.comb_w, h * 3 * h), &dout);

            let mut ds = ds_next.clone();
            for (a, b) in ds.iter_mut().zip(&dconcat[..h]) {
                *a += b;
            }
            let dc = &dconcat[h..];

            // attention
            let mut dalpha = vec![0.0; len];
            for j in 0..len {
                let hj = &enc.states[j * 2 * h..(j + 1) * 2 * h];
                dalpha[j] = dc.iter().zip(hj).map(|(a, b)| a * b).sum();
                let a = step.alpha[j];
                for (ds_j, d) in d_states[j * 2 * h..(j + 1) * 2 * h].iter_mut().zip(dc) {
                    *ds_j += a * d;
                }
            }
            let dot: f64 = step.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            let mut dquery = vec![0.0; h];
            let mut dv = vec![0.0; h];
            for j in 0..len {
                let dscore = step.alpha[j] * (dalpha[j] - dot);
                if dscore == 0.0 {
                    continue;
                }
                let t = &step.att_tanh[j * h..(j + 1) * h];
                let dk = &mut d_keys[j * h..(j + 1) * h];
                for i in 0..h {
                    dv[i] += dscore * t[i];
                    let dpre = dscore * att_v[i] * (1.0 - t[i] * t[i]);
                    dquery[i] += dpre;
                    dk[i] += dpre;
                }
            }
            for (g, d) in block_mut(grad, l.att_v, h).iter_mut().zip(&dv) {
                *g += d;
            }
            outer_acc(block_mut(grad, l.att_w, h * h), &dquery, &step.gru.h);
            matvec_t_acc(&mut ds, block(self.p, l.att_w, h * h), &dquery);

            let mut dx = vec![0.0; e];
            let mut dh_prev = vec![0.0; h];
            gru_backward(self.p, grad, l.dec, h, &step.gru, &ds, &mut dx, &mut dh_prev);
            let emb = l.tgt_emb + inputs[t] as usize * e;
            for (g, d) in block_mut(grad, emb, e).iter_mut().zip(&dx) {
                *g += d;
            }
            ds_next = dh_prev;
        }

        // keys = U_a h_j
        for j in 0..len {
            let dk = &d_keys[j * h..(j + 1) * h];
            let hj = &enc.states[j * 2 * h..(j + 1) * 2 * h];
            outer_acc(block_mut(grad, l.att_u, h * 2 * h), dk, hj);
            matvec_t_acc(
                &mut d_states[j * 2 * h..(j + 1) * 2 * h],
                block(self.p, l.att_u, h * 2 * h),
                dk,
            );
        }

        // init = tanh(W mean + b)
        let dpre: Vec<f64> = ds_next
            .iter()
            .zip(&enc.init)
            .map(|(d, s)| d * (1.0 - s * s))
            .collect();
        outer_acc(block_mut(grad, l.init_w, h * 2 * h), &dpre, &enc.mean);
        for (g, d) in block_mut(grad, l.init_b, h).iter_mut().zip(&dpre) {
            *g += d;
        }
        let mut dmean = vec![0.0; 2 * h];
        matvec_t_acc(&mut dmean, block(self.p, l.init_w, h * 2 * h), &dpre);
        for row in d_states.chunks_exact_mut(2 * h) {
            for (r, m) in row.iter_mut().zip(&dmean) {
                *r += m / len as f64;
            }
        }

        // encoder, forward direction: state j feeds j + 1
        let mut carry = vec![0.0; h];
        for j in (0..len).rev() {
            let mut dh: Vec<f64> = d_states[j * 2 * h..j * 2 * h + h].to_vec();
            for (a, b) in dh.iter_mut().zip(&carry) {
                *a += b;
            }
            let mut dx = vec![0.0; e];
            let mut dh_prev = vec![0.0; h];
            gru_backward(self.p, grad, l.enc_f, h, &enc.fwd[j], &dh, &mut dx, &mut dh_prev);
            let emb = l.src_emb + enc.ids[j] as usize * e;
            for (g, d) in block_mut(grad, emb, e).iter_mut().zip(&dx) {
                *g += d;
            }
            carry = dh_prev;
        }
        // backward direction: state j feeds j - 1
        let mut carry = vec![0.0; h];
        for j in 0..len {
            let mut dh: Vec<f64> = d_states[j * 2 * h + h..(j + 1) * 2 * h].to_vec();
            for (a, b) in dh.iter_mut().zip(&carry) {
                *a += b;
            }
            let mut dx = vec![0.0; e];
            let mut dh_prev = vec![0.0; h];
            gru_backward(self.p, grad, l.enc_b, h, &enc.bwd[j], &dh, &mut dx, &mut dh_prev);
            let emb = l.src_emb + enc.ids[j] as usize * e;
            for (g, d) in block_mut(grad, emb, e).iter_mut().zip(&dx) {
                *g += d;
            }
            carry = dh_prev;
        }
        total
    }
}
