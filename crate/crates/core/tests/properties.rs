//! Property-based invariants: statements that must hold for *every* input.
//!
//! Model/diff properties drive structured generators from a seeded RNG so the
//! cases stay readable; bus properties use plain proptest collections.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use agility_core::{
    compute_divergence, diff, CepEngine, CepRule, CostMode, DiffOp, Difference, DivergencePolicy,
    Event, EventBus, EventSource, InstanceKey, NatureTable, OutputSource, RedesignLevel, Scalar,
    SeqCounter, SituationModel, WeightTable, WorkflowEngine,
};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn keys_with(differences: &[Difference], operation: DiffOp) -> Vec<InstanceKey> {
    differences
        .iter()
        .filter(|d| d.operation == operation)
        .map(|d| d.key.clone())
        .collect()
}

proptest! {
    // =======================================================================
    // structural diff
    // =======================================================================

    #[test]
    fn a_model_never_differs_from_itself(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r, 8);
        prop_assert!(diff(&model, &model).is_empty());
    }

    #[test]
    fn diff_always_agrees_with_the_brute_force_comparator(seed in any::<u64>()) {
        let mut r = rng(seed);
        let before = random_model(&mut r, 8);
        let after = mutated_model(&mut r, &before);
        prop_assert_eq!(diff(&before, &after), naive_diff(&before, &after));
    }

    #[test]
    fn reversing_a_diff_swaps_additions_and_deletions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_model(&mut r, 8);
        let b = mutated_model(&mut r, &a);
        let forward = diff(&a, &b);
        let backward = diff(&b, &a);

        prop_assert_eq!(keys_with(&forward, DiffOp::Added), keys_with(&backward, DiffOp::Deleted));
        prop_assert_eq!(keys_with(&forward, DiffOp::Deleted), keys_with(&backward, DiffOp::Added));
        // updates are direction-free: same keys, same changed set, same basis
        let updates = |diffs: &[Difference]| -> Vec<Difference> {
            diffs.iter().filter(|d| d.operation == DiffOp::Updated).cloned().collect()
        };
        prop_assert_eq!(updates(&forward), updates(&backward));
    }

    // =======================================================================
    // events: serialization and the bus
    // =======================================================================

    #[test]
    fn events_survive_a_jsonl_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut event = Event::new(
            ["alpha", "beta", "gamma"][r.gen_range(0..3)],
            r.gen_range(0..100_000),
            r.gen_range(0..10_000),
            [EventSource::Monitoring, EventSource::Field, EventSource::Cep][r.gen_range(0..3)],
        );
        for i in 0..r.gen_range(0..4usize) {
            event = event.with_payload_entry(format!("k{i}"), random_scalar(&mut r));
        }
        for _ in 0..r.gen_range(0..3usize) {
            let concept = CONCEPT_POOL[r.gen_range(0..CONCEPT_POOL.len())].clone();
            let key = InstanceKey::new(concept, format!("x{}", r.gen_range(0..4)));
            event.effects.push(random_effect(&mut r, key));
        }
        let line = event.to_jsonl();
        let parsed: Event = serde_json::from_str(&line).unwrap();
        prop_assert_eq!(parsed, event);
    }

    #[test]
    fn the_bus_delivers_each_event_exactly_once_and_never_replays(
        batch in prop::collection::vec((0..3u8, 0..5u64), 0..40)
    ) {
        let types = ["alpha", "beta", "gamma"];
        let mut bus = EventBus::new();
        let mut seqs = SeqCounter::new();
        bus.subscribe("narrow", "alpha").unwrap();
        bus.subscribe("wide", "alpha").unwrap();
        bus.subscribe("wide", "beta").unwrap();

        let mut ts = 0;
        for (type_idx, gap) in &batch {
            ts += gap;
            bus.publish(Event::new(types[*type_idx as usize], ts, seqs.next(), EventSource::Field));
        }

        let expect = |wanted: &[&str]| -> Vec<u64> {
            bus.log()
                .iter()
                .filter(|e| wanted.contains(&e.event_type.as_str()))
                .map(|e| e.seq)
                .collect()
        };
        let narrow_expected = expect(&["alpha"]);
        let wide_expected = expect(&["alpha", "beta"]);

        let seqs_of = |events: Vec<Event>| -> Vec<u64> { events.iter().map(|e| e.seq).collect() };
        prop_assert_eq!(seqs_of(bus.take_inbox("narrow")), narrow_expected);
        prop_assert_eq!(seqs_of(bus.take_inbox("wide")), wide_expected);

        // a drained inbox stays drained, and late subscribers see no history
        prop_assert!(bus.take_inbox("narrow").is_empty());
        bus.subscribe("latecomer", "alpha").unwrap();
        prop_assert!(bus.take_inbox("latecomer").is_empty());
    }

    // =======================================================================
    // event correlation
    // =======================================================================

    #[test]
    fn correlation_is_deterministic_and_consumes_each_event_at_most_once(seed in any::<u64>()) {
        let mut r = rng(seed);
        let alphabet = ["a", "b", "c"];
        let stream = random_stream(&mut r, 24, &alphabet);
        let (pattern, _, _) = random_pattern(&mut r, &alphabet);

        let run_once = || -> Vec<(u64, BTreeSet<u64>)> {
            let rule =
                CepRule::new("r", pattern.clone(), "out", OutputSource::Field, vec![]).unwrap();
            let mut engine = CepEngine::new();
            engine.register_rule(rule).unwrap();
            let mut seqs = SeqCounter::new();
            let mut emissions = Vec::new();
            for event in &stream {
                for emission in engine.feed(event, &mut seqs).unwrap() {
                    emissions.push((emission.timestamp, constituents_from_payload(&emission.payload)));
                }
            }
            emissions
        };

        let first = run_once();
        let second = run_once();
        prop_assert_eq!(&first, &second);

        let mut seen = BTreeSet::new();
        for (_, constituents) in &first {
            for seq in constituents {
                prop_assert!(seen.insert(*seq), "event seq {} consumed twice", seq);
            }
        }
    }

    // =======================================================================
    // workflow execution
    // =======================================================================

    #[test]
    fn interruption_is_final(seed in any::<u64>()) {
        let mut r = rng(seed);
        let field = SituationModel::new("field");
        let mut bus = EventBus::new();
        let mut seqs = SeqCounter::new();
        let mut engine = WorkflowEngine::new();
        engine.start_process(diamond_process(), 0, &field, |_| true, &mut bus, &mut seqs).unwrap();

        let mut now = 0;
        for _ in 0..r.gen_range(0..6) {
            now += r.gen_range(0..2000);
            engine.tick(now, &field, &mut bus, &mut seqs);
        }
        engine.interrupt_all(now, "halt", &mut bus, &mut seqs);

        let frozen: Vec<_> =
            engine.instances().map(|i| (i.activity_id.clone(), i.state)).collect();
        let log_len = bus.log().len();
        for _ in 0..4 {
            now += r.gen_range(1..3000);
            engine.tick(now, &field, &mut bus, &mut seqs);
        }
        let after: Vec<_> = engine.instances().map(|i| (i.activity_id.clone(), i.state)).collect();
        prop_assert_eq!(frozen, after);
        prop_assert_eq!(log_len, bus.log().len(), "ticking a halted process published events");
    }

    #[test]
    fn every_activity_runs_exactly_once_to_completion(seed in any::<u64>()) {
        let mut r = rng(seed);
        let field = SituationModel::new("field");
        let mut bus = EventBus::new();
        let mut seqs = SeqCounter::new();
        let mut engine = WorkflowEngine::new();
        engine.start_process(diamond_process(), 0, &field, |_| true, &mut bus, &mut seqs).unwrap();

        let mut now = 0;
        for _ in 0..50 {
            now += r.gen_range(1..2000);
            engine.tick(now, &field, &mut bus, &mut seqs);
            if engine.instances().all(|i| i.state.is_terminal()) {
                break;
            }
        }
        prop_assert!(engine.instances().all(|i| i.state.is_terminal()));
        prop_assert_eq!(engine.instances().count(), 4);

        // fold the log: per activity, exactly one invocation and one completion
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for event in bus.log() {
            if let (Some(Scalar::Str(activity)), Some(Scalar::Str(state))) =
                (event.payload.get("activity_id"), event.payload.get("state"))
            {
                *counts.entry((activity.clone(), state.clone())).or_default() += 1;
            }
        }
        for activity in ["a", "b", "c", "d"] {
            for state in ["invoked", "in_progress", "completed"] {
                prop_assert_eq!(
                    counts.get(&(activity.to_string(), state.to_string())).copied(),
                    Some(1),
                    "activity {} should reach {} exactly once", activity, state
                );
            }
        }
    }

    // =======================================================================
    // weighted divergence
    // =======================================================================

    #[test]
    fn divergence_is_zero_exactly_when_nothing_differs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let differences = random_differences(&mut r, 6);
        let policy = DivergencePolicy {
            weights: WeightTable::uniform(r.gen_range(1..=4) as f64).unwrap(),
            cost_mode: if r.gen_bool(0.5) { CostMode::Unit } else { CostMode::Proportional },
            nature: NatureTable::default(),
        };
        let report = compute_divergence(&differences, &policy, 0);
        prop_assert_eq!(report.total == 0.0, differences.is_empty());
        prop_assert_eq!(report.level == RedesignLevel::None, differences.is_empty());
        prop_assert!(!report.exceeds(report.total), "threshold comparison must be strict");
    }

    #[test]
    fn scaling_weights_by_powers_of_two_scales_totals_exactly(seed in any::<u64>()) {
        let mut r = rng(seed);
        let differences = random_differences(&mut r, 6);
        let (table, _) = random_integer_weights(&mut r);
        let mode = if r.gen_bool(0.5) { CostMode::Unit } else { CostMode::Proportional };
        let base = compute_divergence(
            &differences,
            &DivergencePolicy {
                weights: table.clone(),
                cost_mode: mode,
                nature: NatureTable::default(),
            },
            0,
        );
        for k in [0.25, 0.5, 2.0, 4.0, 8.0] {
            let scaled = compute_divergence(
                &differences,
                &DivergencePolicy {
                    weights: table.scaled(k).unwrap(),
                    cost_mode: mode,
                    nature: NatureTable::default(),
                },
                0,
            );
            prop_assert_eq!(scaled.total, k * base.total);
            // the decision is scale-free when the threshold scales too
            let threshold = 1.5;
            prop_assert_eq!(scaled.exceeds(k * threshold), base.exceeds(threshold));
        }
    }
}
