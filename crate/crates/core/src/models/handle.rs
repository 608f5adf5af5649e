use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Arch, Layout, Network};
use super::vocab::{Vocabulary, EOS};
use super::{ModelError, Role, SampleResult, SamplingParams, Seq2Seq};

pub const DEFAULT_MAX_LEN: usize = 128;
const MAX_WIDTH: usize = 64;
const CHECKPOINT_MAGIC: &str = "locco-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed: usize,
    pub hidden: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed: 32,
            hidden: 32,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("embed", self.embed), ("hidden", self.hidden)] {
            if v == 0 || v > MAX_WIDTH {
                return Err(ModelError::InvalidArchitecture(format!(
                    "{name} size must lie in 1..={MAX_WIDTH}, got {v}"
                )));
            }
        }
        if self.max_len == 0 {
            return Err(ModelError::InvalidArchitecture("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// The reference encoder-decoder model.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    config: ModelConfig,
    layout: Layout,
    vocab: Vocabulary,
    params: Vec<f64>,
    role: Role,
    frozen: bool,
    version: u32,
}

impl PartialEq for ModelHandle {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab == other.vocab
            && self.role == other.role
            && self.frozen == other.frozen
            && self.version == other.version
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ModelHandle {
    /// Freshly initialized parameters drawn from `seed`.
    pub fn new(vocab: Vocabulary, config: ModelConfig, role: Role, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(Self::arch(&vocab, &config));
        let params = layout.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            config,
            layout,
            vocab,
            params,
            role,
            frozen: false,
            version: 0,
        })
    }

    /// Builds a handle around an explicit parameter vector.
    pub fn from_parameters(
        vocab: Vocabulary,
        config: ModelConfig,
        role: Role,
        params: Vec<f64>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(Self::arch(&vocab, &config));
        if params.len() != layout.num_parameters() {
            return Err(ModelError::ParameterCount {
                expected: layout.num_parameters(),
                got: params.len(),
            });
        }
        Ok(Self {
            config,
            layout,
            vocab,
            params,
            role,
            frozen: false,
            version: 0,
        })
    }

    fn arch(vocab: &Vocabulary, config: &ModelConfig) -> Arch {
        Arch {
            vocab: vocab.len(),
            embed: config.embed,
            hidden: config.hidden,
        }
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Overwrites the parameter vector (same length required).
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if self.frozen {
            return Err(ModelError::FrozenModel);
        }
        if params.len() != self.params.len() {
            return Err(ModelError::ParameterCount {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn network(&self) -> Network<'_> {
        Network::new(&self.layout, &self.params)
    }

    /// Next-token probabilities after `prefix` given `condition`.
    pub fn next_token_distribution(&self, condition: &str, prefix: &str) -> Vec<f64> {
        let net = self.network();
        let enc = net.encode(&self.vocab.encode(condition));
        let mut state = enc.initial_state().to_vec();
        let mut prev = EOS;
        for y in self.vocab.encode(prefix) {
            state = net.step(&enc, &state, prev).state().to_vec();
            prev = y;
        }
        net.step(&enc, &state, prev).logp.iter().map(|l| l.exp()).collect()
    }

    fn decode<F: FnMut(&[f64]) -> u32>(&self, condition: &str, mut choose: F) -> SampleResult {
        let net = self.network();
        let enc = net.encode(&self.vocab.encode(condition));
        let mut state = enc.initial_state().to_vec();
        let mut prev = EOS;
        let mut ids = Vec::new();
        let mut logq = 0.0;
        let mut truncated = true;
        for _ in 0..self.config.max_len {
            let step = net.step(&enc, &state, prev);
            let y = choose(&step.logp);
            logq += step.logp[y as usize];
            if y == EOS {
                truncated = false;
                break;
            }
            ids.push(y);
            state = step.state().to_vec();
            prev = y;
        }
        SampleResult {
            tokens: self.vocab.decode(&ids),
            logq,
            truncated,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "role {}", self.role.as_str())?;
        writeln!(out, "frozen {}", self.frozen)?;
        writeln!(out, "version {}", self.version)?;
        writeln!(out, "embed {}", self.config.embed)?;
        writeln!(out, "hidden {}", self.config.hidden)?;
        writeln!(out, "max_len {}", self.config.max_len)?;
        writeln!(out, "vocab {}", self.vocab.len())?;
        for t in self.vocab.tokens() {
            writeln!(out, "{t}")?;
        }
        writeln!(out, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(out, "{p:?}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, ModelError> {
        let mut lines = input.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), ModelError> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(ModelError::Checkpoint {
                    line: 0,
                    reason: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let bad = |line: usize, reason: String| ModelError::Checkpoint { line, reason };

        let (n, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad(n, format!("not a checkpoint (header {magic:?})")));
        }
        let mut field = |key: &str| -> Result<(usize, String), ModelError> {
            let (n, line) = next(key)?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok((n, v.to_string())),
                _ => Err(bad(n, format!("expected `{key} <value>`, got {line:?}"))),
            }
        };
        fn num<T: std::str::FromStr>(n: usize, v: &str) -> Result<T, ModelError> {
            v.parse().map_err(|_| ModelError::Checkpoint {
                line: n,
                reason: format!("invalid number {v:?}"),
            })
        }
        let (n, v) = field("role")?;
        let role: Role = v.parse().map_err(|e| bad(n, e))?;
        let (n, v) = field("frozen")?;
        let frozen: bool = v.parse().map_err(|_| bad(n, format!("invalid flag {v:?}")))?;
        let (n, v) = field("version")?;
        let version: u32 = num(n, &v)?;
        let (n, v) = field("embed")?;
        let embed: usize = num(n, &v)?;
        let (n, v) = field("hidden")?;
        let hidden: usize = num(n, &v)?;
        let (n, v) = field("max_len")?;
        let max_len: usize = num(n, &v)?;
        let (n, v) = field("vocab")?;
        let vocab_len: usize = num(n, &v)?;
        let mut tokens = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            tokens.push(next("vocabulary token")?.1);
        }
        let vocab = Vocabulary::from_tokens(tokens).map_err(|e| bad(n, e))?;
        let (n, line) = next("params")?;
        let count: usize = match line.split_once(' ') {
            Some(("params", v)) => num(n, v)?,
            _ => return Err(bad(n, format!("expected `params <count>`, got {line:?}"))),
        };
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, v) = next("parameter")?;
            params.push(num::<f64>(n, &v)?);
        }
        if let Some((i, _)) = lines.next() {
            return Err(bad(i + 1, "trailing content".into()));
        }
        let config = ModelConfig {
            embed,
            hidden,
            max_len,
        };
        let mut handle = Self::from_parameters(vocab, config, role, params)?;
        handle.version = version;
        handle.frozen = frozen;
        Ok(handle)
    }
}

fn nucleus_choice<R: Rng>(logp: &[f64], params: &SamplingParams, rng: &mut R) -> u32 {
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logp
        .iter()
        .map(|l| ((l - max) / params.temperature).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..logp.len()).collect();
    // stable: ties keep the lower id first
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        kept += 1;
        mass += weights[i];
        if mass / z >= params.top_p {
            break;
        }
    }
    let mut u = rng.gen::<f64>() * mass;
    for &i in &order[..kept] {
        u -= weights[i];
        if u < 0.0 {
            return i as u32;
        }
    }
    order[kept - 1] as u32
}

fn argmax(logp: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logp.iter().enumerate() {
        if l > logp[best] {
            best = i;
        }
    }
    best as u32
}

impl Seq2Seq for ModelHandle {
    fn role(&self) -> Role {
        self.role
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn num_parameters(&self) -> usize {
        self.params.len()
    }

    fn version(&self) -> u32 {
        self.version
    }

    fn set_version(&mut self, version: u32) {
        self.version = version;
    }

    fn logprob(&self, condition: &str, target: &str) -> f64 {
        self.network()
            .logprob(&self.vocab.encode(condition), &self.vocab.encode(target))
    }

    fn sample(
        &self,
        condition: &str,
        n: usize,
        params: &SamplingParams,
        seed: u64,
    ) -> Result<Vec<SampleResult>, ModelError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| self.decode(condition, |logp| nucleus_choice(logp, params, &mut rng)))
            .collect())
    }

    fn greedy(&self, condition: &str) -> SampleResult {
        self.decode(condition, argmax)
    }

    fn accumulate_gradient(
        &self,
        condition: &str,
        target: &str,
        weight: &mut dyn FnMut(f64) -> f64,
        grad: &mut [f64],
    ) -> f64 {
        self.network().accumulate_gradient(
            &self.vocab.encode(condition),
            &self.vocab.encode(target),
            weight,
            grad,
        )
    }

    fn apply_delta(&mut self, delta: &[f64]) -> Result<(), ModelError> {
        if self.frozen {
            return Err(ModelError::FrozenModel);
        }
        if delta.len() != self.params.len() {
            return Err(ModelError::ParameterCount {
                expected: self.params.len(),
                got: delta.len(),
            });
        }
        for (p, d) in self.params.iter_mut().zip(delta) {
            *p += d;
        }
        Ok(())
    }

    fn clone_frozen(&self) -> Self {
        Self {
            frozen: true,
            ..self.clone()
        }
    }

    fn with_role(&self, role: Role) -> Self {
        Self {
            role,
            frozen: false,
            version: 0,
            ..self.clone()
        }
    }

    fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    fn load(path: &Path) -> Result<Self, ModelError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Example;

    fn tiny(seed: u64) -> ModelHandle {
        let vocab = Vocabulary::build(["a b c"]);
        let config = ModelConfig {
            embed: 3,
            hidden: 3,
            max_len: 8,
        };
        ModelHandle::new(vocab, config, Role::Parser, seed).unwrap()
    }

    #[test]
    fn tiny_model_is_fd_checkable() {
        assert!(tiny(0).num_parameters() <= 500, "{}", tiny(0).num_parameters());
    }

    #[test]
    fn step_distribution_sums_to_one() {
        for seed in 0..5 {
            let m = tiny(seed);
            for prefix in ["", "a", "c b a a"] {
                let p = m.next_token_distribution("b a", prefix);
                assert_eq!(p.len(), 5);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_target_is_end_probability() {
        let m = tiny(3);
        let p = m.next_token_distribution("a c", "");
        assert!((m.logprob("a c", "") - p[EOS as usize].ln()).abs() < 1e-12);
    }

    #[test]
    fn logprob_is_chain_of_step_probabilities() {
        let m = tiny(4);
        let mut expected = 0.0;
        let mut prefix: Vec<&str> = Vec::new();
        for tok in ["b", "a", "c"] {
            let p = m.next_token_distribution("c c", &prefix.join(" "));
            expected += p[m.vocabulary().id(tok) as usize].ln();
            prefix.push(tok);
        }
        expected += m.next_token_distribution("c c", "b a c")[EOS as usize].ln();
        assert!((m.logprob("c c", "b a c") - expected).abs() < 1e-10);
    }

    #[test]
    fn frozen_rejects_updates_without_mutation() {
        let frozen = tiny(5).clone_frozen();
        let before: Vec<u64> = frozen.parameters().iter().map(|p| p.to_bits()).collect();
        let mut f = frozen.clone();
        for _ in 0..3 {
            let batch = [Example::new("a", "b", 1.0)];
            assert!(matches!(f.weighted_update(&batch, 0.1), Err(ModelError::FrozenModel)));
            assert!(f.apply_delta(&vec![1.0; f.num_parameters()]).is_err());
            assert!(f.set_parameters(&vec![0.0; f.num_parameters()]).is_err());
        }
        let after: Vec<u64> = f.parameters().iter().map(|p| p.to_bits()).collect();
        assert_eq!(before, after);
        assert_eq!(frozen.clone_frozen(), frozen.clone_frozen());
        assert_eq!(frozen.logprob("a b", "c"), tiny(5).logprob("a b", "c"));
    }

    #[test]
    fn zero_weights_leave_parameters() {
        let mut m = tiny(6);
        let before = m.clone();
        m.weighted_update(&[Example::new("a", "b c", 0.0), Example::new("b", "", 0.0)], 1.0)
            .unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn small_steps_ascend() {
        let base = tiny(7);
        let start = base.logprob("a b", "c a");
        for lr in [1e-3, 1e-2, 1e-1] {
            let mut m = base.clone();
            m.weighted_update(&[Example::new("a b", "c a", 1.0)], lr).unwrap();
            assert!(m.logprob("a b", "c a") > start, "lr {lr}");
        }
    }

    #[test]
    fn greedy_matches_collapsed_nucleus() {
        let m = tiny(8);
        let params = SamplingParams {
            temperature: 1.0,
            top_p: 1e-12,
        };
        for cond in ["", "a", "b c a"] {
            let g = m.greedy(cond);
            for seed in 0..5 {
                assert_eq!(m.sample(cond, 1, &params, seed).unwrap()[0], g);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let m = tiny(9);
        let p = SamplingParams::default();
        assert_eq!(m.sample("a", 5, &p, 11).unwrap(), m.sample("a", 5, &p, 11).unwrap());
        let logq_hot: Vec<f64> = m
            .sample("a", 5, &SamplingParams { temperature: 3.0, top_p: 1.0 }, 2)
            .unwrap()
            .into_iter()
            .map(|s| {
                if !s.truncated {
                    assert!((s.logq - m.logprob("a", &s.text())).abs() < 1e-10);
                }
                s.logq
            })
            .collect();
        assert!(logq_hot.iter().all(|&l| l <= 0.0));
    }

    #[test]
    fn invalid_sampling_rejected() {
        let m = tiny(1);
        let bad = SamplingParams { temperature: 1.0, top_p: 0.0 };
        assert!(m.sample("a", 1, &bad, 0).is_err());
        let bad = SamplingParams { temperature: 0.0, top_p: 0.5 };
        assert!(m.sample("a", 1, &bad, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = tiny(10);
        m.weighted_update(&[Example::new("a", "b", 1.0)], 0.37).unwrap();
        m.set_version(2);
        let m = m.clone_frozen();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = ModelHandle::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.fingerprint(), m.fingerprint());

        let text = String::from_utf8(buf).unwrap().replace("hidden 3", "hidden 4");
        assert!(ModelHandle::read_from(text.as_bytes()).is_err());
    }

    #[test]
    fn oov_and_empty_inputs_do_not_crash() {
        let m = tiny(11);
        assert!(m.logprob("zzz qqq", "a zzz").is_finite());
        let g = m.greedy("");
        assert!(g.logq <= 0.0);
        assert!(g.tokens.len() <= 8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pairs = [("a b", "c"), ("c", "a b b"), ("", "b"), ("b c a", "")];
        let mut worst: f64 = 0.0;
        for point in 0..20 {
            let m = tiny(1000 + point);
            let (cond, tgt) = pairs[point as usize % pairs.len()];
            let mut grad = vec![0.0; m.num_parameters()];
            m.accumulate_gradient(cond, tgt, &mut |_| 1.0, &mut grad);
            let h = 1e-5;
            for _ in 0..40 {
                let i = rng.gen_range(0..m.num_parameters());
                let mut plus = m.parameters().to_vec();
                plus[i] += h;
                let mut minus = m.parameters().to_vec();
                minus[i] -= h;
                let f = |p: Vec<f64>| {
                    ModelHandle::from_parameters(m.vocabulary().clone(), m.config(), Role::Parser, p)
                        .unwrap()
                        .logprob(cond, tgt)
                };
                let fd = (f(plus) - f(minus)) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-5);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }
}
