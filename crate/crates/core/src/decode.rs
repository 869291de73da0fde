//! Decoding-time combination of trait simulators.
//!
//! [`decode_turn`] mixes the next-token distributions of several models at
//! every step (mTAD). [`decode_turn_level_aware`] draws the intent token
//! from a mixture of dialogue-level models and the words from a mixture of
//! utterance-level models (mTAD-LA). [`decode_turn_sampling_baseline`] picks
//! one model per turn.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{detokenize, is_reserved, ModelLabel, NGramModel, TokenId, EOS_TOKEN};
use crate::types::{DistributionError, Intent, TokenDistribution, Turn, UserProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("a mixture needs at least one model")]
    NoModels,
    #[error("weight {0} is negative or not finite")]
    InvalidWeight(f64),
    #[error("weights sum to zero")]
    ZeroWeights,
    #[error("{dists} distributions but {weights} weights")]
    LengthMismatch { dists: usize, weights: usize },
    #[error("distributions of sizes {0} and {1} cannot be mixed")]
    VocabularyMismatch(usize, usize),
    #[error("models `{0}` and `{1}` use different vocabularies")]
    ModelVocabularyMismatch(String, String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Models with convex mixture weights. Weights are normalized on
/// construction; all models must share one vocabulary.
#[derive(Debug, Clone)]
pub struct ProfileWeights {
    entries: Vec<(Arc<NGramModel>, f64)>,
}

impl ProfileWeights {
    pub fn new(entries: Vec<(Arc<NGramModel>, f64)>) -> Result<Self, DecodeError> {
        let first = entries.first().ok_or(DecodeError::NoModels)?.0.clone();
        for (m, w) in &entries {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(DecodeError::InvalidWeight(*w));
            }
            if m.vocab().tokens() != first.vocab().tokens() {
                return Err(DecodeError::ModelVocabularyMismatch(
                    first.label().to_string(),
                    m.label().to_string(),
                ));
            }
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(DecodeError::ZeroWeights);
        }
        if (total - 1.0).abs() > 1e-9 {
            log::warn!("mixture weights sum to {total}; normalizing");
        }
        Ok(Self {
            entries: entries.into_iter().map(|(m, w)| (m, w / total)).collect(),
        })
    }

    pub fn uniform(models: Vec<Arc<NGramModel>>) -> Result<Self, DecodeError> {
        Self::new(models.into_iter().map(|m| (m, 1.0)).collect())
    }

    pub fn single(model: Arc<NGramModel>) -> Self {
        Self {
            entries: vec![(model, 1.0)],
        }
    }

    pub fn entries(&self) -> &[(Arc<NGramModel>, f64)] {
        &self.entries
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, w)| *w).collect()
    }

    pub fn labels(&self) -> Vec<ModelLabel> {
        self.entries.iter().map(|(m, _)| m.label()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Upper bound on generated tokens per turn, intent and end token
    /// included.
    pub max_response_tokens: usize,
    pub temperature: f64,
    /// Take the most probable token instead of sampling.
    pub greedy: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            max_response_tokens: 32,
            temperature: 1.0,
            greedy: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.max_response_tokens < 2 {
            return Err(DecodeError::InvalidConfig("max_response_tokens must be at least 2".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(DecodeError::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Which distribution produced one generated token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSource {
    /// The single mixture of every model.
    Mixture,
    /// Mixture of dialogue-level models.
    DialogueMixture,
    /// Mixture of utterance-level models.
    UtteranceMixture,
    /// One model chosen for the whole turn.
    Selected(ModelLabel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    /// The parsed intent, or `Fallback` for degenerate output without one.
    pub intent: Intent,
    pub utterance: String,
    pub tokens: Vec<String>,
    pub degenerate: bool,
    pub provenance: Vec<StepSource>,
}

/// Pointwise convex combination `Σ λ_i P_i`. Zero weights are skipped; a
/// single unit weight returns that distribution unchanged.
pub fn mix_distributions(
    dists: &[&TokenDistribution],
    lambdas: &[f64],
) -> Result<TokenDistribution, DecodeError> {
    if dists.is_empty() {
        return Err(DecodeError::NoModels);
    }
    if dists.len() != lambdas.len() {
        return Err(DecodeError::LengthMismatch {
            dists: dists.len(),
            weights: lambdas.len(),
        });
    }
    let n = dists[0].len();
    if let Some(d) = dists.iter().find(|d| d.len() != n) {
        return Err(DecodeError::VocabularyMismatch(n, d.len()));
    }
    if let Some(w) = lambdas.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(DecodeError::InvalidWeight(*w));
    }
    let active: Vec<usize> = (0..dists.len()).filter(|&i| lambdas[i] > 0.0).collect();
    if active.is_empty() {
        return Err(DecodeError::ZeroWeights);
    }
    if let [only] = active[..] {
        if lambdas[only] == 1.0 {
            return Ok(dists[only].clone());
        }
    }
    let mut out = vec![0.0; n];
    for &i in &active {
        let w = lambdas[i];
        for (o, p) in out.iter_mut().zip(dists[i].as_slice()) {
            *o += w * p;
        }
    }
    Ok(TokenDistribution::new(out)?)
}

/// True when the first token is not an intent token, or a reserved token
/// appears inside the utterance. A final end token is allowed.
pub fn detect_degeneration<S: AsRef<str>>(tokens: &[S]) -> bool {
    let Some(first) = tokens.first() else {
        return true;
    };
    if Intent::from_token(first.as_ref()).is_none() {
        return true;
    }
    let mut body = &tokens[1..];
    if body.last().map(|t| t.as_ref()) == Some(EOS_TOKEN) {
        body = &body[..body.len() - 1];
    }
    body.iter().any(|t| is_reserved(t.as_ref()))
}

/// Profile a model's input is conditioned on: a specialized or Regular
/// model gets the profile it was trained on, the joint model the target
/// profile.
pub fn conditioning_profile(model: &NGramModel, target: &UserProfile) -> UserProfile {
    model.label().profile().unwrap_or(*target)
}

struct Mixer<'a> {
    models: Vec<&'a NGramModel>,
    lambdas: Vec<f64>,
    contexts: Vec<Vec<TokenId>>,
}

impl<'a> Mixer<'a> {
    fn new(weights: &'a ProfileWeights, history: &[Turn], profile: &UserProfile) -> Self {
        let active = weights.entries.iter().filter(|(_, w)| *w > 0.0);
        let (models, lambdas): (Vec<&NGramModel>, Vec<f64>) =
            active.map(|(m, w)| (m.as_ref(), *w)).unzip();
        let contexts = models
            .iter()
            .map(|m| m.context_for(history, &conditioning_profile(m, profile)))
            .collect();
        Self {
            models,
            lambdas,
            contexts,
        }
    }

    fn distribution(&self) -> Result<TokenDistribution, DecodeError> {
        let dists: Vec<TokenDistribution> = self
            .models
            .iter()
            .zip(&self.contexts)
            .map(|(m, c)| m.next_token_distribution(c))
            .collect();
        let refs: Vec<&TokenDistribution> = dists.iter().collect();
        mix_distributions(&refs, &self.lambdas)
    }

    fn push(&mut self, token: TokenId) {
        for c in &mut self.contexts {
            c.push(token);
        }
    }
}

fn draw<R: Rng + ?Sized>(dist: &TokenDistribution, config: &DecoderConfig, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    if config.greedy {
        dist.argmax()
    } else {
        dist.with_temperature(config.temperature).sample_with(u)
    }
}

fn finish(vocab_tokens: Vec<String>, provenance: Vec<StepSource>) -> GenerationOutput {
    let degenerate = detect_degeneration(&vocab_tokens);
    let intent = vocab_tokens.first().and_then(|t| Intent::from_token(t));
    let words = match intent {
        Some(_) => &vocab_tokens[1..],
        None => &vocab_tokens[..],
    };
    GenerationOutput {
        intent: if degenerate { Intent::Fallback } else { intent.unwrap_or(Intent::Fallback) },
        utterance: detokenize(words),
        tokens: vocab_tokens,
        degenerate,
        provenance,
    }
}

/// Generates tokens until the end token or the length limit. `pick` gives
/// the mixer and provenance tag for each step.
fn run<R: Rng + ?Sized>(
    mixers: &mut [Mixer<'_>],
    pick: impl Fn(usize) -> (usize, StepSource),
    vocab: &crate::lm::Vocabulary,
    config: &DecoderConfig,
    rng: &mut R,
) -> Result<GenerationOutput, DecodeError> {
    config.validate()?;
    let mut tokens = Vec::new();
    let mut provenance = Vec::new();
    for step in 0..config.max_response_tokens {
        let (which, source) = pick(step);
        let dist = mixers[which].distribution()?;
        let id = draw(&dist, config, rng) as TokenId;
        for m in mixers.iter_mut() {
            m.push(id);
        }
        let token = vocab.token(id).to_string();
        tokens.push(token);
        provenance.push(source);
        if id == crate::lm::EOS_ID {
            break;
        }
    }
    Ok(finish(tokens, provenance))
}

/// mTAD: every step samples from the mixture of all weighted models.
pub fn decode_turn<R: Rng + ?Sized>(
    weights: &ProfileWeights,
    history: &[Turn],
    profile: &UserProfile,
    config: &DecoderConfig,
    rng: &mut R,
) -> Result<GenerationOutput, DecodeError> {
    let vocab = weights.entries[0].0.vocab().clone();
    let mut mixers = [Mixer::new(weights, history, profile)];
    run(&mut mixers, |_| (0, StepSource::Mixture), &vocab, config, rng)
}

/// mTAD-LA: the intent token comes from the dialogue-level mixture, every
/// later token from the utterance-level mixture.
pub fn decode_turn_level_aware<R: Rng + ?Sized>(
    dialogue_weights: &ProfileWeights,
    utterance_weights: &ProfileWeights,
    history: &[Turn],
    profile: &UserProfile,
    config: &DecoderConfig,
    rng: &mut R,
) -> Result<GenerationOutput, DecodeError> {
    let a = dialogue_weights.entries[0].0.vocab().clone();
    let b = utterance_weights.entries[0].0.vocab();
    if a.tokens() != b.tokens() {
        return Err(DecodeError::ModelVocabularyMismatch(
            dialogue_weights.entries[0].0.label().to_string(),
            utterance_weights.entries[0].0.label().to_string(),
        ));
    }
    let mut mixers = [
        Mixer::new(dialogue_weights, history, profile),
        Mixer::new(utterance_weights, history, profile),
    ];
    let pick = |step: usize| {
        if step == 0 {
            (0, StepSource::DialogueMixture)
        } else {
            (1, StepSource::UtteranceMixture)
        }
    };
    run(&mut mixers, pick, &a, config, rng)
}

/// Sampling baseline: one model, chosen uniformly, decodes the whole turn.
pub fn decode_turn_sampling_baseline<R: Rng + ?Sized>(
    models: &[Arc<NGramModel>],
    history: &[Turn],
    profile: &UserProfile,
    config: &DecoderConfig,
    rng: &mut R,
) -> Result<GenerationOutput, DecodeError> {
    if models.is_empty() {
        return Err(DecodeError::NoModels);
    }
    // A single model needs no draw, which keeps the stream aligned with
    // `decode_turn`.
    let chosen = if models.len() == 1 { 0 } else { rng.gen_range(0..models.len()) };
    let model = models[chosen].clone();
    let label = model.label();
    let vocab = model.vocab().clone();
    let weights = ProfileWeights::single(model);
    let mut mixers = [Mixer::new(&weights, history, profile)];
    run(&mut mixers, |_| (0, StepSource::Selected(label)), &vocab, config, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BalancedSet;
    use crate::lm::{train, NGramConfig, Vocabulary};
    use crate::seed;
    use crate::types::{Dialogue, Intensity, Trait};
    use proptest::prelude::*;

    fn model(label: ModelLabel, turns: &[(Intent, &str)], vocab: &Arc<Vocabulary>) -> Arc<NGramModel> {
        let profile = label.profile().unwrap_or_default();
        let d = Dialogue {
            task_id: "t".into(),
            task_title: "T".into(),
            profile,
            seed: 0,
            turns: turns.iter().map(|(i, u)| Turn::new(*i, *u, "ok")).collect(),
        };
        Arc::new(
            train(label, &BalancedSet::unbalanced(vec![d]), vocab.clone(), &NGramConfig::default())
                .unwrap(),
        )
    }

    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::from_words(
            "next step please go on stop now what is a whisk thanks".split(' '),
        ))
    }

    fn dist(v: &[f64]) -> TokenDistribution {
        TokenDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mixture_identities() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(mix_distributions(&[&p], &[1.0]).unwrap(), p);
        let a = dist(&[1.0, 0.0]);
        let b = dist(&[0.0, 1.0]);
        assert_eq!(mix_distributions(&[&a, &b], &[0.5, 0.5]).unwrap(), dist(&[0.5, 0.5]));
        assert_eq!(mix_distributions(&[&a, &b], &[0.0, 1.0]).unwrap(), b);
        assert!(matches!(
            mix_distributions(&[&a, &p], &[0.5, 0.5]),
            Err(DecodeError::VocabularyMismatch(2, 3))
        ));
        assert!(mix_distributions(&[&a], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn degeneration_rules() {
        assert!(!detect_degeneration(&["<next>", "next", "step", "<eos>"]));
        assert!(detect_degeneration(&["next", "step", "<eos>"]));
        assert!(detect_degeneration(&["<next>", "next", "<user>", "step", "<eos>"]));
        assert!(detect_degeneration(&["<next>", "<eos>", "<eos>"]));
        assert!(!detect_degeneration(&["<stop>", "<eos>"]));
        assert!(detect_degeneration::<&str>(&[]));
    }

    #[test]
    fn greedy_reproduces_training_continuation() {
        let v = vocab();
        let m = model(ModelLabel::Regular, &[(Intent::NextStep, "next step please")], &v);
        let cfg = DecoderConfig {
            greedy: true,
            ..Default::default()
        };
        let mut rng = seed::rng(1);
        let out = decode_turn(&ProfileWeights::single(m), &[], &UserProfile::regular(), &cfg, &mut rng)
            .unwrap();
        assert_eq!(out.tokens, vec!["<next>", "next", "step", "please", "<eos>"]);
        assert_eq!(out.intent, Intent::NextStep);
        assert_eq!(out.utterance, "next step please");
        assert!(!out.degenerate);
    }

    #[test]
    fn decoding_is_deterministic_per_seed() {
        let v = vocab();
        let m = model(ModelLabel::Regular, &[(Intent::NextStep, "next"), (Intent::Stop, "stop now")], &v);
        let w = ProfileWeights::single(m);
        let cfg = DecoderConfig::default();
        let a = decode_turn(&w, &[], &UserProfile::regular(), &cfg, &mut seed::rng(5)).unwrap();
        let b = decode_turn(&w, &[], &UserProfile::regular(), &cfg, &mut seed::rng(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.degenerate, detect_degeneration(&a.tokens));
        assert!(a.tokens.len() <= cfg.max_response_tokens);
    }

    #[test]
    fn level_aware_routing_and_collapse() {
        let v = vocab();
        let eng = model(
            ModelLabel::Specialized(Trait::Engagement, Intensity::High),
            &[(Intent::NextStep, "next")],
            &v,
        );
        let verb = model(
            ModelLabel::Specialized(Trait::Verbosity, Intensity::High),
            &[(Intent::Question, "what is a whisk please")],
            &v,
        );
        let dw = ProfileWeights::single(eng.clone());
        let uw = ProfileWeights::single(verb.clone());
        let profile = UserProfile::regular()
            .with(Trait::Engagement, Intensity::High)
            .with(Trait::Verbosity, Intensity::High);
        let cfg = DecoderConfig::default();
        for s in 0..50 {
            let out = decode_turn_level_aware(&dw, &uw, &[], &profile, &cfg, &mut seed::rng(s)).unwrap();
            assert_eq!(out.provenance[0], StepSource::DialogueMixture);
            assert!(out.provenance[1..].iter().all(|p| *p == StepSource::UtteranceMixture));
        }
        let both = ProfileWeights::uniform(vec![eng, verb]).unwrap();
        for s in 0..20 {
            let la = decode_turn_level_aware(&both, &both, &[], &profile, &cfg, &mut seed::rng(s)).unwrap();
            let plain = decode_turn(&both, &[], &profile, &cfg, &mut seed::rng(s)).unwrap();
            assert_eq!(la.tokens, plain.tokens);
        }
    }

    #[test]
    fn sampling_baseline_choice() {
        let v = vocab();
        let a = model(ModelLabel::Regular, &[(Intent::NextStep, "next")], &v);
        let b = model(
            ModelLabel::Specialized(Trait::Emotion, Intensity::High),
            &[(Intent::Stop, "thanks")],
            &v,
        );
        let cfg = DecoderConfig::default();
        let p = UserProfile::regular();
        let single = decode_turn_sampling_baseline(std::slice::from_ref(&a), &[], &p, &cfg, &mut seed::rng(3)).unwrap();
        let plain = decode_turn(&ProfileWeights::single(a.clone()), &[], &p, &cfg, &mut seed::rng(3)).unwrap();
        assert_eq!(single.tokens, plain.tokens);

        let mut rng = seed::rng(9);
        let models = [a, b];
        let mut first = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let out = decode_turn_sampling_baseline(&models, &[], &p, &cfg, &mut rng).unwrap();
            let tag = out.provenance[0];
            assert!(out.provenance.iter().all(|s| *s == tag));
            first += (tag == StepSource::Selected(ModelLabel::Regular)) as usize;
        }
        let share = first as f64 / n as f64;
        assert!((share - 0.5).abs() < 0.02, "{share}");
    }

    #[test]
    fn weights_are_validated_and_normalized() {
        let v = vocab();
        let a = model(ModelLabel::Regular, &[(Intent::NextStep, "next")], &v);
        let w = ProfileWeights::new(vec![(a.clone(), 2.0), (a.clone(), 6.0)]).unwrap();
        assert_eq!(w.lambdas(), vec![0.25, 0.75]);
        assert!(ProfileWeights::new(vec![]).is_err());
        assert!(ProfileWeights::new(vec![(a.clone(), -1.0)]).is_err());
        assert!(ProfileWeights::new(vec![(a.clone(), 0.0)]).is_err());
        let other = Arc::new(Vocabulary::from_words(["different"]));
        let b = model(ModelLabel::Regular, &[(Intent::NextStep, "different")], &other);
        assert!(matches!(
            ProfileWeights::new(vec![(a, 1.0), (b, 1.0)]),
            Err(DecodeError::ModelVocabularyMismatch(..))
        ));
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("positive mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn mixture_is_convex(p in simplex(6), q in simplex(6), r in simplex(6), w in simplex(3)) {
            let (p, q, r) = (dist(&p), dist(&q), dist(&r));
            let m = mix_distributions(&[&p, &q, &r], &w).unwrap();
            let s: f64 = m.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            for k in 0..6 {
                let vals = [p.get(k), q.get(k), r.get(k)];
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m.get(k) >= lo - 1e-12 && m.get(k) <= hi + 1e-12);
            }
        }

        #[test]
        fn nested_mixture_flattens(p in simplex(5), q in simplex(5), r in simplex(5), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (p, q, r) = (dist(&p), dist(&q), dist(&r));
            let inner = mix_distributions(&[&p, &q], &[a, 1.0 - a]).unwrap();
            let nested = mix_distributions(&[&inner, &r], &[b, 1.0 - b]).unwrap();
            let flat = mix_distributions(&[&p, &q, &r], &[a * b, (1.0 - a) * b, 1.0 - b]).unwrap();
            for k in 0..5 {
                prop_assert!((nested.get(k) - flat.get(k)).abs() < 1e-9);
            }
        }
    }
}
