mod common;

use proptest::prelude::*;

use common::shipped_lexicon;
use soceval::corpus::GroupKeys;
use soceval::lexicon::{Domain, Lexicon, TargetOptions};
use soceval::metrics::{aggregate_group, els, lmcs, par, ChoiceMass, MetricConfig, Policy, PromptMetrics};
use soceval::templates::validate_template;

fn metrics(i: usize, poor: f64, rich: f64, irr: f64) -> PromptMetrics {
    let l = lmcs(poor + rich, irr).unwrap();
    let p = par(poor, rich).unwrap();
    PromptMetrics {
        prompt_id: format!("{i:08x}"),
        template_id: "t".into(),
        term_id: "gender/women".into(),
        group_keys: GroupKeys {
            domain: Domain::Gender,
            subgroups: vec!["female".into()],
        },
        mass: ChoiceMass {
            relevant_mass: poor + rich,
            irrelevant_mass: irr,
            poor_mass: poor,
            rich_mass: rich,
        },
        lmcs: l,
        par: p,
        els: els(l, p, true),
    }
}

fn mass() -> impl Strategy<Value = f64> {
    1e-12f64..1e3
}

proptest! {
    #[test]
    fn metrics_stay_in_range(p in mass(), r in mass(), i in 0f64..1e3) {
        let a = par(p, r).unwrap();
        let l = lmcs(p + r, i).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((0.0..=1.0).contains(&l));
        let e = els(l, a, true);
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(e <= l + 1e-15);
        prop_assert!(els(l, a, false) <= 0.5 * l + 1e-15);
    }

    #[test]
    fn aggregation_ignores_input_order(
        masses in prop::collection::vec((mass(), mass(), 0f64..1e3), 1..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let items: Vec<PromptMetrics> = masses
            .iter()
            .enumerate()
            .map(|(i, (p, r, x))| metrics(i, *p, *r, *x))
            .collect();
        let mut refs: Vec<&PromptMetrics> = items.iter().collect();
        for policy in [Policy::Macro, Policy::Micro] {
            let cfg = MetricConfig { policy, els_normalizer: true };
            let a = aggregate_group("g", &refs, cfg).unwrap();
            refs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = aggregate_group("g", &refs, cfg).unwrap();
            prop_assert_eq!(a.par.to_bits(), b.par.to_bits());
            prop_assert_eq!(a.lmcs.to_bits(), b.lmcs.to_bits());
            prop_assert_eq!(a.els.to_bits(), b.els.to_bits());
        }
    }

    #[test]
    fn singleton_groups_agree_across_policies(p in mass(), r in mass(), x in 1e-6f64..1e3) {
        let m = metrics(0, p, r, x);
        let macro_ = aggregate_group("g", &[&m], MetricConfig { policy: Policy::Macro, els_normalizer: true }).unwrap();
        let micro = aggregate_group("g", &[&m], MetricConfig { policy: Policy::Micro, els_normalizer: true }).unwrap();
        prop_assert_eq!(macro_.par, micro.par);
        prop_assert_eq!(macro_.lmcs, micro.lmcs);
    }

    #[test]
    fn composite_counts_are_products(
        keep in prop::collection::vec(any::<bool>(), 38),
    ) {
        let full = shipped_lexicon();
        let mut slot = keep.iter();
        let terms: Vec<_> = full
            .terms()
            .iter()
            .filter(|t| match t.domain {
                Domain::Gender | Domain::Marital | Domain::Race | Domain::Religion => *slot.next().unwrap(),
                _ => true,
            })
            .cloned()
            .collect();
        let lex = Lexicon::new(terms, full.names().to_vec()).unwrap();
        let count = |d: Domain| lex.terms().iter().filter(|t| t.domain == d).count();
        let (g, m, r) = (count(Domain::Gender), count(Domain::Marital), count(Domain::Race));
        let targets = lex.target_terms(&TargetOptions::default()).unwrap();
        let composite = |d: Domain| targets.iter().filter(|t| t.domain == d).count();
        prop_assert_eq!(composite(Domain::RaceGender), r * g);
        prop_assert_eq!(composite(Domain::MaritalGender), m * g);
        prop_assert_eq!(composite(Domain::MaritalRaceGender), m * r * g);
    }

    #[test]
    fn well_separated_placeholders_validate(
        words in prop::collection::vec("[a-z]{1,8}", 1..6),
        tail in prop::collection::vec("[a-z]{1,8}", 0..4),
    ) {
        let text = format!("[TARGET] {} [MASK] {}.", words.join(" "), tail.join(" "));
        prop_assert!(validate_template(&text).violations.is_empty(), "{}", text);
        let adjacent = format!("{} [TARGET] [MASK].", words.join(" "));
        prop_assert!(!validate_template(&adjacent).violations.is_empty());
    }
}
