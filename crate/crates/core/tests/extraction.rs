mod support;

use std::collections::BTreeMap;

use loopskill_core::clock::FixedClock;
use loopskill_core::replay::{replay, ReplayOutcome};
use loopskill_core::skill::{
    collect_info, compile_skill, match_datetime, template_content, Candidate, DatetimeVariant,
};
use loopskill_core::template::Placeholder;
use loopskill_core::tools::MemoryTools;
use loopskill_core::{TimeFormat, Tool};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use regex::Regex;
use support::*;

#[test]
fn round_trip_identity_on_random_chains() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut seen = BTreeMap::<&str, usize>::new();
    for case in 0..200 {
        let rec = random_recording(&mut rng);
        let skill = compile_skill("loop_random_0000", &rec.chain, rec.now)
            .unwrap_or_else(|e| panic!("case {case}: {e}\n{:#?}", rec.chain));
        let (results, prev) = recorded_bindings(&rec.chain);
        for step in skill.steps.iter().filter(|s| s.tool == Tool::WriteFile) {
            let recorded = &rec.chain.get(step.original_step).unwrap().args["content"];
            let bindings = Bindings {
                now: rec.now,
                time_format: skill.time_format,
                results: &results,
                prev_content: prev[&step.original_step].as_deref(),
            };
            for token in ["{{current_time}}", "{{current_date}}", "{{prev_content}}", "_result}}"] {
                if step.args["content"].contains(token) {
                    *seen.entry(token).or_default() += 1;
                }
            }
            let expanded = oracle_expand(&step.args["content"], &bindings).expect("all bindings present");
            assert_eq!(
                &expanded, recorded,
                "case {case}: template {:?}",
                step.args["content"]
            );
        }
    }
    assert_eq!(seen.len(), 4, "generator must exercise every placeholder: {seen:?}");
    assert!(seen.values().all(|&n| n >= 20), "{seen:?}");
}

#[test]
fn replay_at_recording_time_rewrites_recorded_bytes() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    for case in 0..200 {
        let rec = random_recording(&mut rng);
        let skill = compile_skill("loop_random_0000", &rec.chain, rec.now).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let tools = MemoryTools::new();
        for call in &rec.chain.calls {
            match call.tool {
                Tool::Bash => tools.set_command(call.args["command"].clone(), call.result.clone()),
                Tool::ReadFile => tools.set_file(dir.path(), &call.args["path"], call.result.clone()),
                _ => {}
            }
        }
        let outcome = replay(&skill, &tools, &FixedClock(rec.now), dir.path()).unwrap();
        assert!(outcome.is_success(), "case {case}: {outcome:?}");
        let write = rec.chain.calls.iter().rfind(|c| c.tool == Tool::WriteFile).unwrap();
        assert_eq!(
            tools.file(dir.path(), &write.args["path"]).unwrap(),
            write.args["content"],
            "case {case}"
        );
    }
}

#[test]
fn nested_values_never_fragment() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    for case in 0..300 {
        let nested = nested_case(&mut rng);
        let skill = compile_skill("loop_nested_0000", &nested.chain, support::ts("2025-06-01T08:30:00")).unwrap();
        let write = skill.steps.iter().find(|s| s.tool == Tool::WriteFile).unwrap();
        assert_eq!(write.args["content"], nested_expected(&nested), "case {case}");
    }
}

/// Over every application order of a nested pair, only longer-first keeps
/// the longer value whole.
#[test]
fn brute_force_orders_show_shorter_first_fragments() {
    let long = "Beijing, sunny, 25C";
    let short = "sunny, 25C";
    let content = format!("{long} / {short}");
    let l = Candidate { slot: Placeholder::StepResult(2), value: long.into() };
    let s = Candidate { slot: Placeholder::StepResult(3), value: short.into() };
    let mut tf = None;
    let longer_first = template_content(&content, &[l.clone(), s.clone()], &mut tf);
    let shorter_first = template_content(&content, &[s, l], &mut tf);
    assert_eq!(longer_first, "{{step_2_result}} / {{step_3_result}}");
    assert_eq!(shorter_first, "Beijing, {{step_3_result}} / {{step_3_result}}");

    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    for _ in 0..50 {
        let nested = nested_case(&mut rng);
        let ctx = collect_info(&nested.chain);
        let write_step = nested.chain.len() as u32;
        let mut candidates: Vec<Candidate> = ctx
            .cleaned_results
            .range(..write_step)
            .map(|(n, v)| Candidate { slot: Placeholder::StepResult(*n), value: v.clone() })
            .collect();
        let content = nested.chain.get(write_step).unwrap().args["content"].clone();
        let expected = nested_expected(&nested);
        let used = |v: &str| nested.pieces.iter().any(|p| p == v);
        let mut total = 0;
        permute(&mut candidates, 0, &mut |order| {
            total += 1;
            // A written value must be applied before every value it contains.
            let respects_containment = order.iter().enumerate().all(|(i, outer)| {
                !used(&outer.value)
                    || order[..i]
                        .iter()
                        .all(|inner| !(outer.value.contains(&inner.value) && outer.value != inner.value))
            });
            let mut tf = None;
            let unfragmented = template_content(&content, order, &mut tf) == expected;
            assert_eq!(unfragmented, respects_containment, "order {order:?}");
        });
        assert!(total >= 1);
        candidates.sort_by_key(|c| std::cmp::Reverse(c.value.len()));
        let mut tf = None;
        assert_eq!(template_content(&content, &candidates, &mut tf), expected);
    }
}

fn permute(items: &mut Vec<Candidate>, k: usize, visit: &mut impl FnMut(&[Candidate])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn regex_datetimes(text: &str) -> Vec<(usize, usize, DatetimeVariant)> {
    // The regex crate has no lookarounds, so the digit boundaries are
    // checked by hand around each anchored candidate.
    let re = Regex::new(r"^[0-9]{4}-[0-9]{2}-[0-9]{2}(?:[T ][0-9]{2}:[0-9]{2}(?::[0-9]{2})?)?$").unwrap();
    let bytes = text.as_bytes();
    let digit_at = |i: usize| bytes.get(i).is_some_and(u8::is_ascii_digit);
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        // Try every alternative anchored at i, longest first, honouring the
        // digit boundary on both sides.
        let mut found = None;
        if text.is_char_boundary(i) && (i == 0 || !digit_at(i - 1)) {
            for len in [19usize, 16, 10] {
                if i + len > text.len() || !text.is_char_boundary(i + len) {
                    continue;
                }
                let slice = &text[i..i + len];
                if re.is_match(slice) && !digit_at(i + len) {
                    let variant = match (len, slice.as_bytes().get(10)) {
                        (10, _) => DatetimeVariant::DateOnly,
                        (19, Some(b'T')) => DatetimeVariant::Time(TimeFormat::IsoSecondsT),
                        (19, _) => DatetimeVariant::Time(TimeFormat::IsoSecondsSpace),
                        (16, Some(b'T')) => DatetimeVariant::Time(TimeFormat::IsoMinutesT),
                        _ => DatetimeVariant::Time(TimeFormat::IsoMinutesSpace),
                    };
                    found = Some((i, i + len, variant));
                    break;
                }
            }
        }
        match found {
            Some(m) => {
                out.push(m);
                i = m.1;
            }
            None => i += 1,
        }
    }
    out
}

fn datetime_text() -> impl Strategy<Value = String> {
    let atom = prop_oneof![
        Just("2025-06-01".to_string()),
        Just("T".to_string()),
        Just(" ".to_string()),
        Just("08:30".to_string()),
        Just(":00".to_string()),
        Just("7".to_string()),
        Just("x".to_string()),
        Just("-".to_string()),
        "[0-9:T -]{1,4}",
        "\\PC{1,3}",
    ];
    proptest::collection::vec(atom, 0..12).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn datetime_scanner_matches_regex_oracle(text in datetime_text()) {
        let ours: Vec<_> = match_datetime(&text).into_iter().map(|m| (m.start, m.end, m.variant)).collect();
        prop_assert_eq!(ours, regex_datetimes(&text));
    }
}

#[test]
fn weather_chain_compiles_to_documented_template() {
    let skill = compile_skill("loop_query_we_a3f2", &weather_chain(), support::ts("2025-06-01T08:30:00")).unwrap();
    let steps: Vec<_> = skill.steps.iter().map(|s| (s.original_step, s.tool)).collect();
    assert_eq!(steps, [(2, Tool::Bash), (3, Tool::WriteFile)]);
    assert_eq!(skill.steps[1].args["content"], "{{current_time}} {{step_2_result}}\n");
    assert_eq!(skill.time_format, TimeFormat::IsoSecondsT);

    let results: BTreeMap<u32, String> = [(2, "Beijing, rainy, 18C".to_string())].into();
    let expanded = oracle_expand(
        &skill.steps[1].args["content"],
        &Bindings {
            now: support::ts("2025-06-02T09:00:00"),
            time_format: skill.time_format,
            results: &results,
            prev_content: None,
        },
    )
    .unwrap();
    assert_eq!(expanded, "2025-06-02T09:00:00 Beijing, rainy, 18C\n");

    let dir = tempfile::tempdir().unwrap();
    let tools = weather_tools("Beijing, rainy, 18C");
    let outcome = replay(&skill, &*tools, &FixedClock(support::ts("2025-06-02T09:00:00")), dir.path()).unwrap();
    assert!(matches!(outcome, ReplayOutcome::Success { .. }));
    assert_eq!(tools.file(dir.path(), WEATHER_LOG).unwrap(), expanded);
}
