//! Property tests for the invariants of segmentation, equivalence, the
//! trajectory metrics, average precision and probe scoring.

use proptest::prelude::*;

use trajgate::metrics::{answer_switches, final_switch_index, hold_for_k, tokens_after};
use trajgate::probe::{average_precision, ProbeModel};
use trajgate::segment::{segment, SegmentationRules};
use trajgate::trace::{equivalent, normalize};
use trajgate::{AnswerLabel, EquivalenceConfig};

fn choices(s: &[u8]) -> Vec<AnswerLabel> {
    s.iter()
        .map(|b| AnswerLabel::Choice {
            label: ((b'A' + b) as char).to_string(),
        })
        .collect()
}

fn series() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 1..60)
}

fn query(v: Vec<f64>) -> Option<AnswerLabel> {
    normalize(v).ok().and_then(|e| AnswerLabel::query("q", e).ok())
}

proptest! {
    #[test]
    fn segmentation_is_lossless(
        text in "[a-z .!?\\n\"')é]{0,200}",
        blank in any::<bool>(),
    ) {
        let rules = SegmentationRules { break_on_blank_line: blank, ..SegmentationRules::default() };
        let spans = segment(&text, &rules);
        let mut at = 0;
        for s in &spans {
            prop_assert_eq!(s.start, at);
            prop_assert!(s.end > s.start);
            prop_assert!(text.is_char_boundary(s.end));
            at = s.end;
        }
        prop_assert_eq!(at, text.len());
        let joined: String = spans.iter().map(|s| &text[s.range()]).collect();
        prop_assert_eq!(joined, text);
    }

    #[test]
    fn equivalence_is_reflexive_and_symmetric(
        a in prop::collection::vec(-1.0f64..1.0, 6),
        b in prop::collection::vec(-1.0f64..1.0, 6),
        gamma in 0.0f64..=1.0,
    ) {
        let cfg = EquivalenceConfig::new(gamma).unwrap();
        let (Some(x), Some(y)) = (query(a), query(b)) else { return Ok(()) };
        prop_assert!(equivalent(&x, &x, &cfg).unwrap());
        prop_assert_eq!(equivalent(&x, &y, &cfg).unwrap(), equivalent(&y, &x, &cfg).unwrap());
    }

    #[test]
    fn hold_for_k_is_causal(a in series(), tail in series(), k in 1usize..6) {
        let eq = EquivalenceConfig::default();
        let mut longer = a.clone();
        longer.extend(&tail);
        let short = hold_for_k(&choices(&a), &eq, k);
        let long = hold_for_k(&choices(&longer), &eq, k);
        prop_assert_eq!(&long[..a.len()], &short[..]);
    }

    #[test]
    fn hold_for_k_is_conservative(a in series(), k in 1usize..6) {
        let eq = EquivalenceConfig::default();
        let raw = choices(&a);
        let smooth = hold_for_k(&raw, &eq, k);
        prop_assert_eq!(&smooth[0], &raw[0]);
        for i in 1..raw.len() {
            // A change is only adopted once it has held for k steps.
            if smooth[i] != smooth[i - 1] {
                prop_assert!(i + 1 >= k);
                prop_assert!((0..k).all(|j| raw[i - j] == smooth[i]));
            }
            // Every emitted label was seen in the raw series.
            prop_assert!(raw[..=i].contains(&smooth[i]));
        }
        prop_assert!(answer_switches(&smooth, &eq) <= answer_switches(&raw, &eq));
        if k == 1 {
            prop_assert_eq!(smooth, raw);
        }
    }

    #[test]
    fn no_switches_iff_no_final_switch(a in series()) {
        let eq = EquivalenceConfig::default();
        let l = choices(&a);
        prop_assert_eq!(answer_switches(&l, &eq) == 0, final_switch_index(&l, &eq) == -1);
    }

    #[test]
    fn tokens_after_is_non_increasing(gaps in prop::collection::vec(0usize..50, 0..40)) {
        let mut cum = vec![0];
        for g in gaps {
            cum.push(cum.last().unwrap() + g);
        }
        let n = cum.len() as isize - 1;
        let after: Vec<usize> = (-1..n).map(|t| tokens_after(&cum, t).unwrap()).collect();
        prop_assert_eq!(after[0], *cum.last().unwrap());
        prop_assert!(after.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(tokens_after(&cum, n).is_err());
    }

    #[test]
    fn ap_is_invariant_under_monotone_maps(
        pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..80),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let (scores, labels): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        prop_assume!(labels.iter().any(|l| *l));
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        for f in [
            Box::new(|x: f64| x * scale + shift) as Box<dyn Fn(f64) -> f64>,
            Box::new(|x: f64| x.powi(3)),
            Box::new(|x: f64| 1.0 / (1.0 + (-x).exp())),
        ] {
            let mapped: Vec<f64> = scores.iter().map(|x| f(*x)).collect();
            let other = average_precision(&mapped, &labels).unwrap();
            prop_assert!((ap - other).abs() < 1e-12, "{} vs {}", ap, other);
        }
    }

    #[test]
    fn probe_order_survives_scaling(
        w in prop::collection::vec(-1.0f64..1.0, 8),
        hs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 8), 2..20),
        c in 0.1f64..3.0,
    ) {
        let p = ProbeModel { weights: w.clone(), bias: 0.0, layer_index: 0, meta: None };
        let q = ProbeModel { weights: w.iter().map(|x| x * c).collect(), ..p.clone() };
        for a in &hs {
            for b in &hs {
                let (la, lb) = (p.logit(a).unwrap(), p.logit(b).unwrap());
                let (sa, sb) = (q.score(a).unwrap(), q.score(b).unwrap());
                if (la - lb).abs() > 1e-9 {
                    prop_assert_eq!(la < lb, sa < sb);
                }
            }
        }
    }

    #[test]
    fn probe_score_rises_with_bias(
        w in prop::collection::vec(-1.0f64..1.0, 8),
        h in prop::collection::vec(-1.0f32..1.0, 8),
        b in -10.0f64..10.0,
        step in 0.01f64..5.0,
    ) {
        let p = ProbeModel { weights: w, bias: b, layer_index: 0, meta: None };
        let q = ProbeModel { bias: b + step, ..p.clone() };
        prop_assert!(q.score(&h).unwrap() > p.score(&h).unwrap());
    }
}
