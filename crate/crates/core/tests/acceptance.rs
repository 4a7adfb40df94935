//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them. Criteria 7 to 10 share one desk-scale run
//! whose stages are timed individually; criterion 11 repeats a small run to
//! compare report bytes.
//!
//! Run alone with `cargo test -p vclab --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use common::*;
use vclab::experiment::Stage;

struct Verdict {
    id: usize,
    name: &'static str,
    outcome: Outcome,
    secs: f64,
}

fn check(id: usize, name: &'static str, budget_secs: Option<f64>, f: impl FnOnce() -> Outcome) -> Verdict {
    let (mut outcome, secs) = timed(f);
    if let Some(b) = budget_secs {
        if secs > b {
            outcome.pass = false;
            outcome.detail.push_str(&format!(" (over the {b:.0} s budget)"));
        }
    }
    let v = Verdict {
        id,
        name,
        outcome,
        secs,
    };
    println!(
        "[{}] {:>2}. {}: {} ({:.1} s)",
        if v.outcome.pass { "PASS" } else { "FAIL" },
        v.id,
        v.name,
        v.outcome.detail,
        v.secs
    );
    v
}

#[test]
fn acceptance() {
    let mut verdicts = vec![
        check(1, "gradient fidelity", Some(60.0), criterion_gradients),
        check(2, "causality and receptive field", Some(60.0), criterion_causality),
        check(3, "codec round trips", None, criterion_codecs),
        check(4, "KL closed form vs Monte Carlo", None, criterion_kl),
        check(5, "DTW vs brute force", None, criterion_dtw),
        check(6, "uniform-model NLL", None, criterion_uniform_nll),
    ];

    let desk_dir = tempfile::tempdir().expect("tempdir");
    let desk = experiment(DESK_RUN, desk_dir.path());
    // per-stage wall time; criterion 7 only needs the corpus, the VAE and
    // the evaluation, criterion 10 needs everything
    let mut secs: Vec<(Stage, f64)> = Vec::new();
    let mut ev = Ok(());
    for &stage in &Stage::ALL[..Stage::ALL.len() - 1] {
        let t = Instant::now();
        ev = desk.run_stage(stage);
        secs.push((stage, t.elapsed().as_secs_f64()));
        if ev.is_err() {
            break;
        }
    }
    let ev = ev.and_then(|_| {
        let t = Instant::now();
        let r = desk.evaluate();
        secs.push((Stage::Evaluate, t.elapsed().as_secs_f64()));
        r
    });
    let total: f64 = secs.iter().map(|s| s.1).sum();
    let analysis: f64 = secs
        .iter()
        .filter(|(s, _)| {
            matches!(
                s,
                Stage::GenCorpus | Stage::AnalyzeCorpus | Stage::TrainVae | Stage::Evaluate
            )
        })
        .map(|s| s.1)
        .sum();
    let per_stage: Vec<String> = secs.iter().map(|(s, t)| format!("{} {t:.0}", s.name())).collect();
    println!("       desk run: {total:.0} s ({})", per_stage.join(", "));
    let within = |o: Outcome, took: f64, limit: f64| {
        if took > limit {
            Outcome::new(false, format!("{} (took {took:.0} s, budget {limit:.0} s)", o.detail))
        } else {
            Outcome::new(o.pass, format!("{} in {took:.0} s", o.detail))
        }
    };
    match &ev {
        Ok(ev) => {
            let vae_steps = desk.config.vae.steps;
            verdicts.push(check(7, "mismatch analysis (Dist3 < Dist1)", None, || {
                within(criterion_mismatch(ev, vae_steps), analysis, 15.0 * 60.0)
            }));
            verdicts.push(check(8, "over-smoothing (GV)", None, || criterion_over_smoothing(ev)));
            verdicts.push(check(9, "GV post-filter exactness", None, || {
                criterion_gv_exactness(&desk)
            }));
            verdicts.push(check(10, "fine-tuning on reconstructed features", None, || {
                within(
                    criterion_finetune_mismatch(ev, &desk.config.targets),
                    total,
                    30.0 * 60.0,
                )
            }));
        }
        Err(e) => {
            for (id, name) in [
                (7, "mismatch analysis (Dist3 < Dist1)"),
                (8, "over-smoothing (GV)"),
                (9, "GV post-filter exactness"),
                (10, "fine-tuning on reconstructed features"),
            ] {
                verdicts.push(check(id, name, None, || {
                    Outcome::new(false, format!("desk run failed: {e}"))
                }));
            }
        }
    }

    verdicts.push(check(11, "seven-system smoke test and re-run", None, || {
        let mut problems = if ev.is_ok() {
            run_completeness(&desk)
        } else {
            Vec::new()
        };
        let a = tempfile::tempdir().expect("tempdir");
        let b = tempfile::tempdir().expect("tempdir");
        let first = experiment(SMALL_RUN, a.path());
        let second = experiment(SMALL_RUN, b.path());
        for e in [&first, &second] {
            if let Err(err) = e.full_run() {
                return Outcome::new(false, format!("small run failed: {err}"));
            }
        }
        problems.extend(run_completeness(&first));
        let (ra, rb) = (reports(a.path()), reports(b.path()));
        let identical = !ra.is_empty() && ra == rb;
        Outcome::new(
            ev.is_ok() && problems.is_empty() && identical,
            format!(
                "{} systems, {} report files identical on re-run: {identical}, {} problems{}",
                first.config.systems.len(),
                ra.len(),
                problems.len(),
                problems.first().map(|p| format!(", first: {p}")).unwrap_or_default()
            ),
        )
    }));

    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.outcome.pass).map(|v| v.id).collect();
    println!(
        "acceptance: {} of {} criteria pass",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
