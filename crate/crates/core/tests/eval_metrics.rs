use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vizmet_core::eval::{
    average_rank, avg_instruction_count, lost_cause_rate, majority_vote, preference_proportions, presentation_order,
    rank1_distribution, EditAction, EditInstruction, Experiment, ExperimentItem, ExperimentKind, ImageVerdict,
    PairwiseAnnotation, Preference, RankingAnnotation, VerdictKind,
};
use vizmet_core::{Error, Exact};

const SYSTEMS: [&str; 5] = ["llm-dalle", "dalle", "llm-sd", "sd", "llm-sd-struct"];

fn systems() -> Vec<String> {
    SYSTEMS.iter().map(|s| s.to_string()).collect()
}

fn random_verdict(rng: &mut ChaCha8Rng) -> ImageVerdict {
    match rng.random_range(0..3) {
        0 => ImageVerdict::perfect(),
        1 => ImageVerdict::lost_cause(),
        _ => ImageVerdict::needs_edits(
            (0..rng.random_range(1..=5))
                .map(|i| EditInstruction { action: EditAction::AddObject, text: format!("add object {i}") })
                .collect(),
        ),
    }
}

/// 40 items × 5 raters = 200 ranking annotations.
fn ranking_fixture(seed: u64) -> Vec<RankingAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for item in 0..40 {
        for rater in 0..5 {
            let mut ranks: Vec<u32> = (1..=5).collect();
            ranks.shuffle(&mut rng);
            out.push(RankingAnnotation {
                experiment_id: "exp".into(),
                rater_id: format!("r{rater}"),
                item_id: format!("i{item}"),
                ranks: SYSTEMS.iter().zip(ranks).map(|(s, r)| (s.to_string(), r)).collect(),
                verdicts: SYSTEMS.iter().map(|s| (s.to_string(), random_verdict(&mut rng))).collect(),
            });
        }
    }
    out
}

struct Recount {
    rank_sum: i64,
    lost: i64,
    edits: i64,
    firsts: i64,
    n: i64,
}

fn recount(anns: &[RankingAnnotation], system: &str) -> Recount {
    let mut r = Recount { rank_sum: 0, lost: 0, edits: 0, firsts: 0, n: 0 };
    for a in anns {
        let rank = a.ranks[system] as i64;
        let v = &a.verdicts[system];
        r.n += 1;
        r.rank_sum += rank;
        r.firsts += i64::from(rank == 1);
        match v.kind {
            VerdictKind::Perfect => {}
            VerdictKind::LostCause => {
                r.lost += 1;
                r.edits += 5;
            }
            VerdictKind::NeedsEdits => r.edits += v.instructions.len() as i64,
        }
    }
    r
}

#[test]
fn ranking_metrics_equal_recount() {
    for seed in 0..3 {
        let anns = ranking_fixture(seed);
        assert_eq!(anns.len(), 200);
        let rank1_exact = rank1_distribution::<Exact>(&anns, &systems()).unwrap();
        let rank1_f64 = rank1_distribution::<f64>(&anns, &systems()).unwrap();
        for s in SYSTEMS {
            let o = recount(&anns, s);
            assert_eq!(average_rank::<Exact>(&anns, s).unwrap(), Exact::new(o.rank_sum, o.n));
            assert_eq!(lost_cause_rate::<Exact>(&anns, s).unwrap(), Exact::new(o.lost, o.n));
            assert_eq!(avg_instruction_count::<Exact>(&anns, s).unwrap(), Exact::new(o.edits, o.n));
            assert_eq!(rank1_exact[s], Exact::new(o.firsts, o.n));

            let close = |a: f64, num: i64| assert!((a - num as f64 / o.n as f64).abs() < 1e-12, "{s}: {a}");
            close(average_rank::<f64>(&anns, s).unwrap(), o.rank_sum);
            close(lost_cause_rate::<f64>(&anns, s).unwrap(), o.lost);
            close(avg_instruction_count::<f64>(&anns, s).unwrap(), o.edits);
            close(rank1_f64[s], o.firsts);
        }
        let total: Exact = rank1_exact.values().copied().sum();
        assert_eq!(total, Exact::from_integer(1));
        assert!((rank1_f64.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn instruction_mapping_fixed_case() {
    let verdicts = [
        ImageVerdict::perfect(),
        ImageVerdict::lost_cause(),
        ImageVerdict::needs_edits(vec![
            EditInstruction { action: EditAction::MoveObject, text: "move the moon left".into() },
            EditInstruction { action: EditAction::ChangeProperty, text: "make the sky red".into() },
        ]),
    ];
    let anns: Vec<RankingAnnotation> = verdicts
        .iter()
        .enumerate()
        .map(|(i, v)| RankingAnnotation {
            experiment_id: "e".into(),
            rater_id: format!("r{i}"),
            item_id: "i".into(),
            ranks: [("A".to_string(), 1), ("B".to_string(), 2)].into(),
            verdicts: [("A".to_string(), v.clone()), ("B".to_string(), ImageVerdict::perfect())].into(),
        })
        .collect();
    assert_eq!(avg_instruction_count::<Exact>(&anns, "A").unwrap(), Exact::new(7, 3));
    assert!((avg_instruction_count::<f64>(&anns, "A").unwrap() - 7.0 / 3.0).abs() < 1e-12);
    assert_eq!(lost_cause_rate::<f64>(&anns, "A").unwrap(), 1.0 / 3.0);
    assert!(matches!(average_rank::<f64>(&[], "A"), Err(Error::UndefinedMetric(_))));
}

const PREFS: [Preference; 3] = [Preference::PreferA, Preference::PreferB, Preference::Tie];

/// 40 items × 5 raters = 200 pairwise votes.
fn pairwise_fixture(seed: u64) -> (Vec<PairwiseAnnotation>, Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raters: Vec<String> = (0..5).map(|r| format!("r{r}")).collect();
    let items: Vec<String> = (0..40).map(|i| format!("i{i}")).collect();
    let mut anns = Vec::new();
    for item in &items {
        for rater in &raters {
            anns.push(PairwiseAnnotation {
                experiment_id: "p".into(),
                item_id: item.clone(),
                rater_id: rater.clone(),
                verdict: PREFS[rng.random_range(0..3)],
                verdict_a: random_verdict(&mut rng),
                verdict_b: random_verdict(&mut rng),
            });
        }
    }
    (anns, raters, items)
}

fn majority_oracle(votes: &[Preference]) -> Preference {
    PREFS.into_iter().find(|p| 2 * votes.iter().filter(|v| *v == p).count() > votes.len()).unwrap_or(Preference::Tie)
}

#[test]
fn preference_proportions_equal_recount() {
    for seed in 0..3 {
        let (anns, raters, items) = pairwise_fixture(seed);
        assert_eq!(anns.len(), 200);
        let mut by_item: HashMap<&str, Vec<Preference>> = HashMap::new();
        for a in &anns {
            by_item.entry(a.item_id.as_str()).or_default().push(a.verdict);
        }
        let mut tally = [0i64; 3];
        for votes in by_item.values() {
            let winner = majority_oracle(votes);
            tally[PREFS.iter().position(|p| *p == winner).unwrap()] += 1;
        }
        let n = items.len() as i64;
        let exact = preference_proportions::<Exact>(&anns, &raters, &items).unwrap();
        assert_eq!(
            (exact.prefer_a, exact.prefer_b, exact.tie),
            (Exact::new(tally[0], n), Exact::new(tally[1], n), Exact::new(tally[2], n))
        );
        assert_eq!(exact.prefer_a + exact.prefer_b + exact.tie, Exact::from_integer(1));
        let f = preference_proportions::<f64>(&anns, &raters, &items).unwrap();
        assert!((f.prefer_a - tally[0] as f64 / n as f64).abs() < 1e-12);
        assert!((f.prefer_a + f.prefer_b + f.tie - 1.0).abs() < 1e-12);
    }
}

#[test]
fn preference_examples_and_coverage() {
    let raters: Vec<String> = ["r1", "r2", "r3"].map(String::from).to_vec();
    let vote = |r: &str, v| PairwiseAnnotation {
        experiment_id: "p".into(),
        item_id: "i".into(),
        rater_id: r.into(),
        verdict: v,
        verdict_a: ImageVerdict::perfect(),
        verdict_b: ImageVerdict::perfect(),
    };
    let anns = vec![vote("r1", Preference::PreferA), vote("r2", Preference::PreferA), vote("r3", Preference::PreferB)];
    let p = preference_proportions::<Exact>(&anns, &raters, &["i".to_string()]).unwrap();
    assert_eq!(
        (p.prefer_a, p.prefer_b, p.tie),
        (Exact::from_integer(1), Exact::from_integer(0), Exact::from_integer(0))
    );
    match preference_proportions::<f64>(&anns[..2], &raters, &["i".to_string()]) {
        Err(Error::IncompleteData(missing)) => assert_eq!(missing, vec![("r3".to_string(), "i".to_string())]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn majority_vote_matches_exhaustive_oracle() {
    for a in PREFS {
        for b in PREFS {
            for c in PREFS {
                assert_eq!(majority_vote(&[a, b, c]).unwrap(), majority_oracle(&[a, b, c]));
            }
        }
    }
}

fn five_way(items: usize) -> Experiment {
    Experiment {
        id: "rank".into(),
        kind: ExperimentKind::Ranking,
        systems: systems(),
        items: (0..items)
            .map(|i| ExperimentItem {
                item_id: format!("m{i}"),
                images: SYSTEMS.iter().map(|s| (s.to_string(), format!("{s}-m{i}.png"))).collect(),
            })
            .collect(),
        raters: (0..10).map(|r| format!("rater{r}")).collect(),
        shuffle_seed: 42,
        open: true,
    }
}

#[test]
fn presentation_orders_are_uniform_over_permutations() {
    let exp = five_way(100);
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for rater in &exp.raters {
        for item in &exp.items {
            let order = presentation_order(&exp, rater, &item.item_id).unwrap();
            let perm: Vec<usize> = order
                .iter()
                .map(|s| SYSTEMS.iter().position(|sys| s.image.starts_with(&format!("{sys}-m"))).unwrap())
                .collect();
            assert_eq!(order, presentation_order(&exp, rater, &item.item_id).unwrap());
            *counts.entry(perm).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    assert_eq!(total, 1000);
    assert_eq!(counts.len(), 120, "not every permutation occurred");
    let expected = total as f64 / 120.0;
    let stat: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(119.0).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat}, p = {p}");
}

#[test]
fn blinded_payload_has_no_system_ids() {
    let mut exp = five_way(3);
    for item in &mut exp.items {
        for (i, img) in item.images.values_mut().enumerate() {
            *img = format!("blob{i}-{}.png", item.item_id);
        }
    }
    let order = presentation_order(&exp, "rater0", "m1").unwrap();
    let json = serde_json::to_string(&order).unwrap();
    for s in SYSTEMS {
        assert!(!json.contains(s), "{json}");
    }
    let pair = Experiment { kind: ExperimentKind::Pairwise, systems: systems()[..2].to_vec(), ..exp.clone() };
    let mut pair = pair;
    for item in &mut pair.items {
        item.images.retain(|k, _| k == SYSTEMS[0] || k == SYSTEMS[1]);
    }
    assert_eq!(presentation_order(&pair, "rater0", "m1").unwrap().len(), 2);
    assert!(matches!(presentation_order(&exp, "rater0", "nope"), Err(Error::NotFound { .. })));
}
