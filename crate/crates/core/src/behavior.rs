//! Agent decision models.
//!
//! Human-like agents follow an entropy-gated herd rule: with probability
//! `1 - entropy` they keep their stance, otherwise they resample from a softmax
//! over `w_social * share(s) + w_inertia * [s == current]`. Shares come from the
//! feed, with each post weighted by its persuasion weight and Laplace smoothing.
//! AI agents post a fixed target stance on a schedule.

use rand::Rng;

use crate::config::{AgentProfile, BehaviorParams, InterventionConfig};
use crate::post::Post;
use crate::stance::{Stance, StanceDistribution, StyleTag};

/// The posts a reader sees in one round together with their weighted shares.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedView<'a> {
    pub posts: Vec<&'a Post>,
    pub weighted_shares: StanceDistribution,
}

impl<'a> FeedView<'a> {
    pub fn new(posts: Vec<&'a Post>, reader_entropy: f64, params: &BehaviorParams) -> Self {
        let weighted_shares = weighted_shares(posts.iter().copied(), reader_entropy, params);
        Self {
            posts,
            weighted_shares,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanState {
    pub profile: AgentProfile,
    pub current_stance: Stance,
}

impl HumanState {
    pub fn new(profile: AgentProfile) -> Self {
        let current_stance = profile.initial_stance;
        Self {
            profile,
            current_stance,
        }
    }
}

/// Persuasion weight of `post` for a reader with the given entropy.
///
/// Compassionate framing is uniform across readers; condemnation grows as the
/// reader's entropy falls, so it lands hardest on committed agents.
pub fn post_weight(post: &Post, reader_entropy: f64, params: &BehaviorParams) -> f64 {
    if !post.is_ai {
        return 1.0;
    }
    match post.style {
        StyleTag::Neutral => 1.0,
        StyleTag::Compassionate => params.compassion_gain,
        StyleTag::Condemnation => {
            params.condemnation_base + params.condemnation_gain * (1.0 - reader_entropy)
        }
    }
}

pub fn weighted_shares<'a, I>(feed: I, reader_entropy: f64, params: &BehaviorParams) -> StanceDistribution
where
    I: IntoIterator<Item = &'a Post>,
{
    let mut mass = [params.smoothing; 3];
    for p in feed {
        mass[p.stance.index()] += post_weight(p, reader_entropy, params);
    }
    StanceDistribution::from_weights(mass).expect("smoothing > 0 keeps mass positive")
}

/// Softmax probabilities the agent resamples from once its entropy gate opens.
pub fn resample_probabilities(
    current: Stance,
    shares: &StanceDistribution,
    params: &BehaviorParams,
) -> [f64; 3] {
    let mut logits = shares.as_array().map(|s| params.w_social * s);
    logits[current.index()] += params.w_inertia;
    let logits = logits.map(|u| u / params.temperature);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|u| (u - max).exp());
    let z: f64 = e.iter().sum();
    e.map(|x| x / z)
}

/// One stance update. Consumes exactly one uniform draw when the gate stays
/// shut and two when it opens.
pub fn human_update<R: Rng + ?Sized>(
    state: &HumanState,
    feed: &FeedView<'_>,
    params: &BehaviorParams,
    rng: &mut R,
) -> Stance {
    let entropy = state.profile.entropy;
    // entropy 0 never opens the gate since the draw lies in [0, 1)
    let gate: f64 = rng.random();
    if gate >= entropy {
        return state.current_stance;
    }
    let probs = resample_probabilities(state.current_stance, &feed.weighted_shares, params);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Stance::ALL[i];
        }
    }
    // u landed in the rounding gap above the cumulative sum
    Stance::ALL[probs.iter().rposition(|&p| p > 0.0).unwrap_or(2)]
}

/// True iff the AI schedule posts in `round`.
pub fn ai_posts_in(config: &InterventionConfig, round: u32) -> bool {
    round >= config.activation_start
        && round < config.activation_end
        && (round - config.activation_start).is_multiple_of(config.post_period.max(1))
}

pub fn ai_policy(config: &InterventionConfig, round: u32, author_id: &str) -> Option<Post> {
    ai_posts_in(config, round)
        .then(|| Post::ai(author_id, round, config.target_stance, config.style))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    fn ai(stance: Stance, style: StyleTag) -> Post {
        Post::ai("ai-0", 1, stance, style)
    }

    fn human(stance: Stance) -> Post {
        Post::human("h", 1, stance)
    }

    fn state(stance: Stance, entropy: f64) -> HumanState {
        HumanState::new(AgentProfile {
            id: "u1".into(),
            topic: "t".into(),
            initial_stance: stance,
            entropy,
        })
    }

    #[test]
    fn post_weights() {
        let p = BehaviorParams::default();
        assert_eq!(post_weight(&human(Stance::Favor), 0.3, &p), 1.0);
        assert_eq!(post_weight(&ai(Stance::Against, StyleTag::Neutral), 0.3, &p), 1.0);
        assert_eq!(post_weight(&ai(Stance::Against, StyleTag::Compassionate), 0.9, &p), 1.5);
        assert_eq!(post_weight(&ai(Stance::Against, StyleTag::Condemnation), 0.0, &p), 2.5);
    }

    #[test]
    fn shares_examples() {
        let p = BehaviorParams::default();
        let empty = weighted_shares(&[], 0.5, &p);
        for s in empty.as_array() {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
        let three = vec![human(Stance::Favor); 3];
        let d = weighted_shares(&three, 0.5, &p);
        assert!((d.favor - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.ni - 1.0 / 6.0).abs() < 1e-12);
        assert!((d.against - 1.0 / 6.0).abs() < 1e-12);
        let one = vec![ai(Stance::Against, StyleTag::Compassionate)];
        let d = weighted_shares(&one, 0.5, &p);
        assert!((d.against - 2.5 / 4.5).abs() < 1e-12);
    }

    #[test]
    fn zero_entropy_never_moves() {
        let p = BehaviorParams::default();
        let st = state(Stance::NotInferrable, 0.0);
        let cond = ai(Stance::Against, StyleTag::Condemnation);
        let feed = FeedView::new(vec![&cond; 20], 0.0, &p);
        for r in 0..2000 {
            let mut rng = derive_stream(3, "u1", r);
            assert_eq!(human_update(&st, &feed, &p, &mut rng), Stance::NotInferrable);
        }
    }

    #[test]
    fn cold_limit_picks_argmax() {
        let p = BehaviorParams {
            w_inertia: 0.0,
            temperature: 1e-6,
            ..Default::default()
        };
        let st = state(Stance::Favor, 1.0);
        let feed = FeedView {
            posts: vec![],
            weighted_shares: StanceDistribution::point(Stance::Against),
        };
        for r in 0..1000 {
            let mut rng = derive_stream(5, "u1", r);
            assert_eq!(human_update(&st, &feed, &p, &mut rng), Stance::Against);
        }
    }

    #[test]
    fn sampled_frequencies_match_closed_form_softmax() {
        let p = BehaviorParams::default();
        let st = state(Stance::Favor, 1.0);
        let feed = FeedView {
            posts: vec![],
            weighted_shares: StanceDistribution::UNIFORM,
        };
        // closed form: U = (1/3 + 0.5, 1/3, 1/3), tau = 0.25
        let a = ((1.0 / 3.0 + 0.5) / 0.25f64).exp();
        let b = ((1.0 / 3.0) / 0.25f64).exp();
        let expected = [a / (a + 2.0 * b), b / (a + 2.0 * b), b / (a + 2.0 * b)];
        assert!((expected[0] - 2f64.exp() / (2f64.exp() + 2.0)).abs() < 1e-12);

        let n = 100_000;
        let mut counts = [0usize; 3];
        let mut rng = derive_stream(17, "mc", 0);
        for _ in 0..n {
            counts[human_update(&st, &feed, &p, &mut rng).index()] += 1;
        }
        for i in 0..3 {
            let freq = counts[i] as f64 / n as f64;
            assert!((freq - expected[i]).abs() < 0.01, "stance {i}: {freq} vs {}", expected[i]);
        }
    }

    #[test]
    fn ai_schedule() {
        let mut iv = InterventionConfig::sustained(80, Stance::Against, 50);
        assert_eq!(ai_policy(&iv, 7, "ai-0").unwrap().stance, Stance::Against);
        iv.post_period = 4;
        assert!(ai_policy(&iv, 6, "ai-0").is_none());
        assert!(ai_policy(&iv, 8, "ai-0").is_some());
        iv.post_period = 1;
        iv.activation_end = 10;
        assert!(ai_policy(&iv, 10, "ai-0").is_none());
        assert!(ai_policy(&iv, 9, "ai-0").is_some());
        iv.activation_start = 3;
        assert!(ai_policy(&iv, 2, "ai-0").is_none());
        iv.style = StyleTag::Compassionate;
        let post = ai_policy(&iv, 3, "ai-7").unwrap();
        assert!(post.is_ai);
        assert_eq!(post.style, StyleTag::Compassionate);
        assert_eq!(post.round, 3);
    }

    #[test]
    fn style_crossover_at_half_entropy_with_defaults() {
        let p = BehaviorParams::default();
        let threshold = 1.0 - (p.compassion_gain - p.condemnation_base) / p.condemnation_gain;
        assert!((threshold - 0.5).abs() < 1e-12);
    }

    fn stance_strategy() -> impl Strategy<Value = Stance> {
        (0usize..3).prop_map(|i| Stance::ALL[i])
    }

    fn style_strategy() -> impl Strategy<Value = StyleTag> {
        prop_oneof![
            Just(StyleTag::Neutral),
            Just(StyleTag::Compassionate),
            Just(StyleTag::Condemnation)
        ]
    }

    fn params_strategy() -> impl Strategy<Value = BehaviorParams> {
        (0.0f64..3.0, 0.0f64..2.0, 0.05f64..2.0, 0.1f64..3.0, 0.0f64..3.0, 0.0f64..3.0, 0.0f64..2.0)
            .prop_map(|(ws, wi, t, sm, cg, dg, db)| BehaviorParams {
                w_social: ws,
                w_inertia: wi,
                temperature: t,
                smoothing: sm,
                feed_size: 20,
                compassion_gain: cg,
                condemnation_gain: dg,
                condemnation_base: db,
            })
    }

    fn feed_strategy() -> impl Strategy<Value = Vec<Post>> {
        proptest::collection::vec(
            (stance_strategy(), any::<bool>(), style_strategy()).prop_map(|(s, is_ai, style)| {
                if is_ai {
                    ai(s, style)
                } else {
                    human(s)
                }
            }),
            0..40,
        )
    }

    proptest! {
        #[test]
        fn shares_always_normalized(feed in feed_strategy(), e in 0.0f64..=1.0, p in params_strategy()) {
            let d = weighted_shares(&feed, e, &p);
            prop_assert!(d.is_valid());
            prop_assert!((d.favor + d.ni + d.against - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn zero_entropy_immunity(
            feed in feed_strategy(), p in params_strategy(), s in stance_strategy(),
            seed in any::<u64>(), rounds in 1u64..30,
        ) {
            let st = state(s, 0.0);
            let view = FeedView::new(feed.iter().collect(), 0.0, &p);
            for r in 0..rounds {
                let mut rng = derive_stream(seed, "u1", r);
                prop_assert_eq!(human_update(&st, &view, &p, &mut rng), s);
            }
        }

        #[test]
        fn more_target_posts_never_lower_target_probability(
            feed in feed_strategy(), p in params_strategy(), current in stance_strategy(),
            target in stance_strategy(), e in 0.0f64..=1.0, extra in 1usize..10, is_ai in any::<bool>(),
            style in style_strategy(),
        ) {
            let before = resample_probabilities(current, &weighted_shares(&feed, e, &p), &p);
            let mut more = feed.clone();
            for _ in 0..extra {
                more.push(if is_ai { ai(target, style) } else { human(target) });
            }
            let after = resample_probabilities(current, &weighted_shares(&more, e, &p), &p);
            prop_assert!(after[target.index()] >= before[target.index()] - 1e-12);
        }

        #[test]
        fn condemnation_outweighs_compassion_below_crossover(e in 0.0f64..=1.0) {
            let p = BehaviorParams::default();
            let comp = post_weight(&ai(Stance::Against, StyleTag::Compassionate), e, &p);
            let cond = post_weight(&ai(Stance::Against, StyleTag::Condemnation), e, &p);
            if e < 0.5 - 1e-12 {
                prop_assert!(cond > comp);
            } else if e > 0.5 + 1e-12 {
                prop_assert!(cond < comp);
            }
        }

        #[test]
        fn update_is_pure_given_stream(
            feed in feed_strategy(), p in params_strategy(), s in stance_strategy(),
            e in 0.0f64..=1.0, seed in any::<u64>(),
        ) {
            let st = state(s, e);
            let view = FeedView::new(feed.iter().collect(), e, &p);
            let a = human_update(&st, &view, &p, &mut derive_stream(seed, "u1", 1));
            let b = human_update(&st, &view, &p, &mut derive_stream(seed, "u1", 1));
            prop_assert_eq!(a, b);
        }
    }
}
