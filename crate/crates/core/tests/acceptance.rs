//! One PASS/FAIL line per acceptance criterion. Runs without network
//! access on scripted backends and the synthetic fixtures.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use consult_core::agents::{ObservationKind, PatientMode, PatientPolicy, ReportSection};
use consult_core::backend::{load_fixture, BackendError, ChatBackend, FixtureEntry, ScriptedBackend};
use consult_core::case::{load_corpus, CaseRecord};
use consult_core::eval::{aggregate_scores, corpus_metrics, f1, FiveScores, MatchResult};
use consult_core::fsm::{
    initial_state, is_terminal, ConsultationState, GatePolicy, Step, TransitionKind,
    TransitionModel,
};
use consult_core::harness::{
    load_transcripts, replay_transcript, run_benchmark, run_benchmark_with, BackendProvider,
    LoadedTranscript, RunConfig, Transcript,
};
use consult_core::taxonomy::{parse_action, Action, ActionTaxonomy, Phase, FINAL_DIAGNOSIS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn transcripts(dir: &Path) -> Result<Vec<Transcript>, String> {
    load_transcripts(dir)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(_, t)| match t {
            LoadedTranscript::Complete(t) => Ok(t),
            LoadedTranscript::Failed(f) => Err(format!("{} failed: {}", f.case_id, f.error)),
        })
        .collect()
}

fn run(config: &RunConfig) -> Result<Vec<Transcript>, String> {
    let summary = run_benchmark(config).map_err(|e| e.to_string())?;
    ensure(summary.all_succeeded(), || format!("failed cases: {:?}", summary.failed))?;
    transcripts(&config.out_dir)
}

fn f1_identity() -> Outcome {
    // (recall, precision, reference F1)
    let rows = [(33.41, 50.61, 40.25), (31.68, 50.92, 39.06), (22.42, 43.38, 29.56)];
    let mut got = Vec::new();
    for (r, p, reference) in rows {
        let v = f1(p, r);
        ensure((v - reference).abs() <= 0.02, || format!("f1({r}, {p}) = {v:.4}, reference {reference}"))?;
        got.push(format!("{v:.4}"));
    }
    Ok(got.join(", "))
}

fn random_set(rng: &mut ChaCha8Rng, alphabet: &[&str], nonempty: bool) -> BTreeSet<String> {
    loop {
        let s: BTreeSet<String> = alphabet
            .iter()
            .filter(|_| rng.gen_bool(0.4))
            .map(|s| s.to_string())
            .collect();
        if !nonempty || !s.is_empty() {
            return s;
        }
    }
}

/// Exact rational arithmetic over small integers.
#[derive(Clone, Copy)]
struct Frac(i128, i128);

impl Frac {
    fn add(self, o: Frac) -> Frac {
        Frac(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    /// Correctly rounded: both terms are exact in f64, so one IEEE division
    /// rounds the true quotient.
    fn value(self) -> Result<f64, String> {
        let exact = 1i128 << 53;
        ensure(self.0.abs() <= exact && self.1 <= exact, || format!("oracle fraction {}/{} too large", self.0, self.1))?;
        Ok(self.0 as f64 / self.1 as f64)
    }
}

fn metric_oracle() -> Outcome {
    let alphabet = ["A", "B", "C", "D", "E", "F"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for corpus in 0..500 {
        let n = rng.gen_range(1..=10);
        let results: Vec<MatchResult> = (0..n)
            .map(|i| {
                let pred = random_set(&mut rng, &alphabet, false);
                let truth = random_set(&mut rng, &alphabet, true);
                MatchResult::new(format!("c{i}"), pred, truth)
            })
            .collect();
        let m = corpus_metrics(&results).map_err(|e| e.to_string())?;

        // brute force: membership by scanning the alphabet symbol by symbol
        let (mut hit, mut np, mut nt) = (0i128, 0i128, 0i128);
        let (mut sp, mut sr, mut sf) = (Frac(0, 1), Frac(0, 1), Frac(0, 1));
        for r in &results {
            let (mut h, mut p, mut t) = (0i128, 0i128, 0i128);
            for sym in alphabet {
                let in_p = r.predicted_codes.iter().any(|x| x == sym);
                let in_t = r.truth_codes.iter().any(|x| x == sym);
                h += (in_p && in_t) as i128;
                p += in_p as i128;
                t += in_t as i128;
            }
            hit += h;
            np += p;
            nt += t;
            sp = sp.add(if p == 0 { Frac(0, 1) } else { Frac(h, p) });
            sr = sr.add(Frac(h, t));
            // per-case F1 = 2h / (p + t), or 0 when nothing is predicted or hit
            sf = sf.add(if h == 0 { Frac(0, 1) } else { Frac(2 * h, p + t) });
        }
        let nn = n as i128;
        let micro_p = if np == 0 { 0.0 } else { Frac(hit, np).value()? };
        let micro_r = Frac(hit, nt).value()?;
        let micro_f1 = if hit == 0 { 0.0 } else { Frac(2 * hit, np + nt).value()? };
        let exact = [
            ("micro precision", m.micro.precision, micro_p),
            ("micro F1", m.micro.f1, micro_f1),
            ("micro recall", m.micro.recall, micro_r),
            ("macro precision", m.macro_.precision, Frac(sp.0, sp.1 * nn).value()?),
            ("macro recall", m.macro_.recall, Frac(sr.0, sr.1 * nn).value()?),
            ("macro F1", m.macro_.f1, Frac(sf.0, sf.1 * nn).value()?),
        ];
        for (what, got, want) in exact {
            ensure(got == want, || format!("corpus {corpus}: {what} {got} != oracle {want}"))?;
        }
        ensure(m.n == n, || format!("corpus {corpus}: n {} != {n}", m.n))?;
    }
    Ok("500 corpora; micro and macro P/R/F1 bit-exact".into())
}

fn random_action(rng: &mut ChaCha8Rng, tax: &ActionTaxonomy, utterance: String) -> Action {
    let phase = Phase::ALL[rng.gen_range(0..3)];
    let cats = tax.categories_for(phase);
    let cat = &cats[rng.gen_range(0..cats.len())];
    Action {
        phase,
        category: cat.name.clone(),
        utterance,
    }
}

fn fsm_properties() -> Outcome {
    let tax = ActionTaxonomy::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut refusals, mut progressive, mut retro, mut finals, mut caps) = (0, 0, 0, 0, 0);
    for seq in 0..1000 {
        let max_turns = rng.gen_range(3..=25);
        let gate = GatePolicy {
            enabled: rng.gen_bool(0.7),
            forced_reserve: rng.gen_range(0..=3),
        };
        let model = TransitionModel::new(&tax, gate);
        let mut state = initial_state(max_turns).map_err(|e| e.to_string())?;
        let mut last: Option<Action> = None;
        let mut steps = 0;
        while !is_terminal(&state) {
            steps += 1;
            ensure(steps <= 10_000, || format!("sequence {seq} does not terminate"))?;
            let action = random_action(&mut rng, &tax, "x".into());
            let before: ConsultationState = state.clone();
            match model.apply(&state, &action).map_err(|e| e.to_string())? {
                Step::GoalUnmet(g) => {
                    refusals += 1;
                    ensure(state == before, || format!("sequence {seq}: refusal changed state"))?;
                    ensure(action.phase > state.phase && gate.enabled && !g.unmet.is_empty(), || {
                        format!("sequence {seq}: refused a non-progressive or ungated action")
                    })?;
                }
                Step::Advanced { state: next, transition } => {
                    ensure(next.turn == state.turn + 1, || format!("sequence {seq}: turn not incremented"))?;
                    ensure(next.turn <= max_turns, || format!("sequence {seq}: turn beyond cap"))?;
                    for (phase, cats) in &state.coverage {
                        ensure(next.coverage.get(phase).is_some_and(|c| c.is_superset(cats)), || {
                            format!("sequence {seq}: coverage shrank")
                        })?;
                    }
                    match transition {
                        TransitionKind::Progressive => {
                            progressive += 1;
                            ensure(next.phase > state.phase, || format!("sequence {seq}: progressive did not advance"))?;
                        }
                        TransitionKind::Retrospective => {
                            retro += 1;
                            ensure(next.phase < state.phase, || format!("sequence {seq}: retrospective not backward"))?;
                        }
                        TransitionKind::Stay => {
                            ensure(next.phase == state.phase, || format!("sequence {seq}: stay moved"))?;
                        }
                    }
                    state = next;
                    last = Some(action);
                }
            }
        }
        let final_dx = last
            .as_ref()
            .is_some_and(|a| a.phase == Phase::Diagnosis && a.category == FINAL_DIAGNOSIS);
        ensure(state.terminated == final_dx, || format!("sequence {seq}: terminated flag inconsistent"))?;
        ensure(final_dx || state.turn == max_turns, || format!("sequence {seq}: ended without cause"))?;
        ensure(
            model.apply(&state, &random_action(&mut rng, &tax, "x".into())).is_err(),
            || format!("sequence {seq}: action accepted after termination"),
        )?;
        if final_dx {
            finals += 1;
        } else {
            caps += 1;
        }
    }
    Ok(format!(
        "1000 sequences; {progressive} progressive, {retro} retrospective, {refusals} refusals; {finals} final diagnosis, {caps} turn cap"
    ))
}

fn parser_round_trip() -> Outcome {
    let tax = ActionTaxonomy::bundled();
    let literal = parse_action("<Inquiry>: Chief Complaint. Do you feel headache?", &tax)
        .map_err(|e| e.to_string())?;
    let expected = Action {
        phase: Phase::Inquiry,
        category: "Chief Complaint".into(),
        utterance: "Do you feel headache?".into(),
    };
    ensure(literal == expected, || format!("literal parsed to {literal:?}"))?;
    let chars: Vec<char> = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,:;?!<>'\"-()/éü%\n"
        .chars()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..10_000 {
        let utterance = loop {
            let len = rng.gen_range(1..60);
            let s: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
            let s = s.trim().to_string();
            if !s.is_empty() {
                break s;
            }
        };
        let a = random_action(&mut rng, &tax, utterance);
        let back = parse_action(&a.render(), &tax).map_err(|e| format!("action {i}: {e}"))?;
        ensure(back == a, || format!("action {i}: {a:?} came back as {back:?}"))?;
    }
    Ok("10000 actions round-trip; literal example parses".into())
}

fn end_to_end(work: &Path) -> Outcome {
    let a = scripted_config(&work.join("e2e-a"));
    let mut b = scripted_config(&work.join("e2e-b"));
    b.concurrency = 4;
    let first = run(&a)?;
    let second = run(&b)?;
    ensure(first.len() == 4 && second.len() == 4, || "expected 4 transcripts per run".into())?;
    for t in &first {
        let file = format!("{}.jsonl", t.case_id);
        ensure(
            read_stripped(&a.out_dir.join(&file)) == read_stripped(&b.out_dir.join(&file)),
            || format!("{file} differs between runs"),
        )?;
    }
    let tax = ActionTaxonomy::bundled();
    let mut turns = 0;
    for t in first.iter().chain(&second) {
        replay_transcript(t, &tax).map_err(|e| format!("{}: {e}", t.case_id))?;
        turns += t.turns.len();
    }
    Ok(format!("4/4 twice, transcripts identical modulo timestamps, {turns} turns replayed"))
}

fn premature_closure(work: &Path) -> Outcome {
    let eager = fixtures().join("eager_doctor.json");
    let mut on = scripted_config(&work.join("gate-on"));
    on.backend.fixtures = Some(eager.clone());
    let mut off = scripted_config(&work.join("gate-off"));
    off.backend.fixtures = Some(eager);
    off.gating = false;
    let gated = run(&on)?;
    let baseline: BTreeMap<String, u32> = run(&off)?.into_iter().map(|t| (t.case_id, t.turn_count)).collect();
    let mut pairs = Vec::new();
    for t in &gated {
        ensure(t.goal_unmet_count() >= 1, || format!("{}: no goal_unmet turn", t.case_id))?;
        let base = baseline[&t.case_id];
        ensure(t.turn_count > base, || format!("{}: {} turns gated vs {base} ungated", t.case_id, t.turn_count))?;
        pairs.push(format!("{}→{}", base, t.turn_count));
    }
    Ok(format!("turns ungated→gated per case: {}", pairs.join(", ")))
}

fn trajectory(t: &Transcript) -> Vec<(u32, String, TransitionKind, bool)> {
    t.turns
        .iter()
        .map(|r| (r.turn, r.action.clone(), r.transition, r.goal_unmet))
        .collect()
}

fn disruption_inertness(work: &Path) -> Outcome {
    let mut calm = scripted_config(&work.join("calm"));
    calm.patient = PatientPolicy::with_rate(0.0, 3);
    let mut rude = scripted_config(&work.join("disrupted"));
    rude.patient = PatientPolicy::with_rate(1.0, 3);
    let calm_runs = run(&calm)?;
    let rude_runs = run(&rude)?;
    let mut disrupted = 0;
    for (c, r) in calm_runs.iter().zip(&rude_runs) {
        ensure(c.case_id == r.case_id, || "case order differs".into())?;
        ensure(trajectory(c) == trajectory(r), || format!("{}: state trajectory differs", c.case_id))?;
        ensure(
            (c.turn_count, c.final_phase, c.termination) == (r.turn_count, r.final_phase, r.termination),
            || format!("{}: final state differs", c.case_id),
        )?;
        ensure(c.report.diagnostic_results == r.report.diagnostic_results, || {
            format!("{}: diagnostic results differ", c.case_id)
        })?;
        disrupted += c
            .turns
            .iter()
            .zip(&r.turns)
            .filter(|(x, y)| x.observation != y.observation)
            .count();
    }
    ensure(disrupted > 0, || "rate 1.0 produced no disrupted answers".into())?;
    Ok(format!("4 paired cases identical; {disrupted} patient answers carried a disruption"))
}

/// Doctor script per case plus a patient that tries to name the diagnosis,
/// for paraphrase mode. Patient entries come first so they are only taken
/// by patient prompts.
struct LeakyPatient;

impl BackendProvider for LeakyPatient {
    fn backend_for(&self, case: &CaseRecord) -> Result<Arc<dyn ChatBackend>, BackendError> {
        let gt = &case.ground_truth;
        let leak = format!(
            "Honestly, I read that it is {} ({}).",
            gt.diagnosis_text.to_uppercase(),
            gt.diagnosis_entities.join(" and ")
        );
        let mut entries = vec![FixtureEntry::matching("You are a patient talking to a doctor", leak); 10];
        entries.extend(load_fixture(fixtures().join(format!("doctor/{}.json", case.case_id)))?);
        Ok(Arc::new(ScriptedBackend::new(entries)))
    }
}

fn information_hygiene(work: &Path) -> Outcome {
    let cases: BTreeMap<String, CaseRecord> = load_corpus(corpus())
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|c| (c.case_id.clone(), c))
        .collect();
    let mut paraphrase = scripted_config(&work.join("paraphrase"));
    paraphrase.patient_mode = PatientMode::Paraphrase;
    paraphrase.patient = PatientPolicy::with_rate(0.5, 9);
    let summary = run_benchmark_with(&paraphrase, &LeakyPatient).map_err(|e| e.to_string())?;
    ensure(summary.all_succeeded(), || format!("paraphrase run failed: {:?}", summary.failed))?;

    let mut checked = 0;
    let mut runs = 0;
    for entry in std::fs::read_dir(work).map_err(|e| e.to_string())? {
        let dir = entry.map_err(|e| e.to_string())?.path();
        runs += 1;
        for t in transcripts(&dir)? {
            let gt = &cases[&t.case_id].ground_truth;
            let forbidden: Vec<String> = std::iter::once(&gt.diagnosis_text)
                .chain(&gt.diagnosis_entities)
                .map(|s| s.to_lowercase())
                .collect();
            for rec in &t.turns {
                let Some(obs) = &rec.observation else { continue };
                if obs.kind != ObservationKind::Subjective {
                    continue;
                }
                checked += 1;
                let text = obs.text.to_lowercase();
                for f in &forbidden {
                    ensure(!text.contains(f.as_str()), || {
                        format!("{} turn {}: patient said {:?}", t.case_id, rec.turn, obs.text)
                    })?;
                }
            }
        }
    }
    Ok(format!("{checked} patient observations across {runs} runs, including a leaking paraphraser"))
}

fn stats_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for list in 0..1000 {
        let n = rng.gen_range(1..=60);
        let scores: Vec<FiveScores> = (0..n)
            .map(|_| FiveScores {
                symptoms: rng.gen_range(0..=100),
                medical_examinations: rng.gen_range(0..=100),
                diagnostic_results: rng.gen_range(0..=100),
                diagnostic_rationales: rng.gen_range(0..=100),
                treatment_plan: rng.gen_range(0..=100),
            })
            .collect();
        let agg = aggregate_scores(&scores).map_err(|e| e.to_string())?;
        for s in ReportSection::ALL {
            // exact integer moments
            let xs: Vec<i64> = scores.iter().map(|x| i64::from(x.get(s))).collect();
            let n = xs.len() as i64;
            let sum: i64 = xs.iter().sum();
            let sum_sq: i64 = xs.iter().map(|x| x * x).sum();
            let mean = sum as f64 / n as f64;
            let stderr = if n < 2 {
                0.0
            } else {
                let var = (n * sum_sq - sum * sum) as f64 / (n * (n - 1)) as f64;
                (var / n as f64).sqrt()
            };
            let got = agg.get(s);
            for (g, w) in [(got.mean, mean), (got.stderr, stderr)] {
                let rel = if w == 0.0 { g.abs() } else { ((g - w) / w).abs() };
                worst = worst.max(rel);
                ensure(rel <= 1e-9, || format!("list {list} {s:?}: {g} vs oracle {w}"))?;
            }
            ensure(got.n == xs.len(), || format!("list {list}: n mismatch"))?;
        }
    }
    Ok(format!("1000 lists x 5 aspects; largest relative error {worst:.1e}"))
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    check: Box<dyn Fn() -> Outcome>,
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let runs = work.path().join("runs");
    std::fs::create_dir(&runs).expect("runs dir");
    let w = runs.clone();
    let ms = Duration::from_millis;
    let criteria: Vec<Criterion> = vec![
        Criterion { name: "F1 identity vs reference table", limit: ms(1), check: Box::new(f1_identity) },
        Criterion { name: "metric oracle equivalence", limit: ms(5000), check: Box::new(metric_oracle) },
        Criterion { name: "FSM property suite", limit: ms(5000), check: Box::new(fsm_properties) },
        Criterion { name: "parser round-trip", limit: ms(2000), check: Box::new(parser_round_trip) },
        Criterion { name: "end-to-end determinism and replay", limit: ms(10_000), check: Box::new({ let w = w.clone(); move || end_to_end(&w) }) },
        Criterion { name: "premature-closure gate", limit: ms(10_000), check: Box::new({ let w = w.clone(); move || premature_closure(&w) }) },
        Criterion { name: "disruption inertness", limit: ms(10_000), check: Box::new({ let w = w.clone(); move || disruption_inertness(&w) }) },
        Criterion { name: "information hygiene", limit: ms(5000), check: Box::new({ let w = w.clone(); move || information_hygiene(&w) }) },
        Criterion { name: "statistics oracle", limit: ms(2000), check: Box::new(stats_oracle) },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= c.limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {:?} budget", c.limit)),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {:<36} {:>9.3} ms  {detail}", c.name, elapsed.as_secs_f64() * 1e3);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
