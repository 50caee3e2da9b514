//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the summary lines always reach the
//! terminal. Exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{fixture, Reply, Stub, CATEGORY_COUNTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use wella_core::backend::{mock_generate, BackendError, GenerationBackend, MockBackend};
use wella_core::crew::{estimate_crew, CrewOptions, RoleOutcome};
use wella_core::goms::{run_monte_carlo, run_monte_carlo_with, GomsStep, McOptions, PlantParams, Procedure, TimeModel};
use wella_core::harness::pipeline::{build_sft_records, evaluate_run, load_scenarios_dir, EvalTarget};
use wella_core::harness::remote::{RemoteChatBackend, RemoteConfig, RetryPolicy};
use wella_core::metrics::{ev, export_report, mae, r2, rmse, EvalReport, GroupLabel, MetricError, MetricRow, ReportFormat};
use wella_core::scenario::{RoleId, ScenarioCategory};
use wella_core::sft::{export_jsonl, import_jsonl, stratified_split, SpecialTokenPolicy, SplitRatios};
use wella_core::survey::{load_ground_truth, sart_dimensions, sart_sa, tlx_workload, SartRating, TlxRating};
use wella_core::trajectory::{build_prompt, parse_response, Instrument};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:?}, limit {limit:?}"))
    }
}

fn c1_tlx() -> Outcome {
    let t0 = Instant::now();
    let min = TlxRating::new(0.0, 0.0, 0.0, 0.0, 100.0, 0.0).unwrap();
    let max = TlxRating::new(100.0, 100.0, 100.0, 100.0, 0.0, 100.0).unwrap();
    check!(tlx_workload(&min).unwrap() == 0.0, "minimum gave {}", tlx_workload(&min).unwrap());
    check!(tlx_workload(&max).unwrap() == 100.0, "maximum gave {}", tlx_workload(&max).unwrap());
    let w = tlx_workload(&TlxRating::new(60.0, 30.0, 70.0, 55.0, 80.0, 25.0).unwrap()).unwrap();
    let oracle = (60.0 + 30.0 + 70.0 + 55.0 + (100.0 - 80.0) + 25.0) / 6.0;
    check!((w - oracle).abs() <= 1e-9, "worked example gave {w}, oracle {oracle}");
    within(t0.elapsed(), Duration::from_millis(100), "TLX checks")?;
    Ok(format!("min 0, max 100, worked example {w:.4}"))
}

fn c2_sart() -> Outcome {
    let t0 = Instant::now();
    let case = SartRating::new(&[3, 4, 4, 4, 4, 4, 4, 4, 4, 4]).unwrap();
    check!(sart_dimensions(&case).demand == 11, "demand {}", sart_dimensions(&case).demand);

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for mask in 0u32..1 << 10 {
        let items: Vec<u8> = (0..10).map(|i| if mask >> i & 1 == 1 { 7 } else { 1 }).collect();
        let sa = sart_sa(&SartRating::new(&items).unwrap());
        lo = lo.min(sa);
        hi = hi.max(sa);
    }
    check!(lo == -14.0 && hi == 46.0, "extremes ({lo}, {hi})");

    let v = SartRating::new(&[4, 3, 4, 5, 5, 6, 4, 5, 6, 5]).unwrap();
    let (d, s, u) = (4.0 + 3.0 + 4.0, 5.0 + 5.0 + 6.0 + 4.0, 5.0 + 6.0 + 5.0);
    check!(sart_sa(&v) == u - (d - s) && sart_sa(&v) == 25.0, "derived vector gave {}", sart_sa(&v));
    within(t0.elapsed(), Duration::from_millis(100), "SART checks")?;
    Ok("demand 11, bounds [-14, 46] over 1024 extreme vectors, derived SA 25".into())
}

fn c3_metrics() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut n_series = 0;
    while n_series < 100 {
        let n = rng.random_range(2..=50);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let yhat: Vec<f64> = y.iter().map(|v| v + rng.random_range(-25.0..25.0)).collect();
        let nf = n as f64;
        let ybar = y.iter().sum::<f64>() / nf;
        let res: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
        let rbar = res.iter().sum::<f64>() / nf;
        let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        if sst == 0.0 {
            continue;
        }
        let sse: f64 = res.iter().map(|r| r * r).sum();
        let want = [
            1.0 - sse / sst,
            (sse / nf).sqrt(),
            res.iter().map(|r| r.abs()).sum::<f64>() / nf,
            1.0 - res.iter().map(|r| (r - rbar).powi(2)).sum::<f64>() / sst,
        ];
        let got = [r2(&y, &yhat), rmse(&y, &yhat), mae(&y, &yhat), ev(&y, &yhat)].map(|m| m.unwrap());
        for (g, w) in got.iter().zip(want) {
            check!((g - w).abs() <= 1e-9 * (1.0 + w.abs()), "n={n}: got {got:?}, oracle {want:?}");
        }
        check!(got[1] >= got[2], "rmse {} < mae {}", got[1], got[2]);
        n_series += 1;
    }
    let t = [5.0, 40.0, 75.0];
    let perfect = [r2(&t, &t), rmse(&t, &t), mae(&t, &t), ev(&t, &t)].map(|m| m.unwrap());
    check!(perfect == [1.0, 0.0, 0.0, 1.0], "perfect prediction gave {perfect:?}");
    check!(r2(&[7.0; 4], &[6.0, 7.0, 8.0, 7.0]) == Err(MetricError::ZeroVariance), "constant truth not rejected");
    within(t0.elapsed(), Duration::from_secs(1), "metric checks")?;
    Ok(format!("{n_series} random series within 1e-9, identity and ZeroVariance hold"))
}

fn c4_report_and_pipeline() -> Outcome {
    let rows = [
        ("GPT-4", [-0.7107, 33.9131, 21.3, -0.5911]),
        ("GPT-4o", [-1.4378, 40.4837, 31.4667, -1.1573]),
        ("Claude-3.5-Sonnet", [-0.0308, 26.3255, 15.8333, -0.0007]),
        ("WELLA", [0.9012, 8.1507, 4.7, 0.904]),
    ];
    let mut report = EvalReport::new();
    for (model, v) in rows {
        report.insert(model, GroupLabel::Role(RoleId::RO1), 0, MetricRow::from_values(v[0], v[1], v[2], v[3]));
    }
    let md = export_report(&report, ReportFormat::Markdown);
    let golden = std::fs::read_to_string(fixture("golden/ro1_table.md")).unwrap();
    check!(md == golden, "markdown differs from golden:\n{md}");
    check!(
        md.lines().any(|l| l == "| WELLA | 0.9012 | 8.1507 | 4.7000 | 0.9040 |"),
        "WELLA row not reproduced"
    );

    let scenarios = load_scenarios_dir(&fixture("scenarios")).map_err(|e| e.to_string())?;
    let truth = load_ground_truth(&fixture("truth.csv")).map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    for s in &scenarios {
        let session = estimate_crew(s, &MockBackend::new(0), &CrewOptions::default().seeded(11)).unwrap();
        records.extend(session.outcomes.into_values());
    }
    let (report, joined) = evaluate_run(&truth, &records, EvalTarget::Workload, "mock").map_err(|e| e.to_string())?;
    check!(joined.points.len() == truth.len(), "joined {} of {} rows", joined.points.len(), truth.len());
    let all = report.get("mock", GroupLabel::All).ok_or("no ALL row")?;
    check!(all.metrics.cells().iter().all(|c| c.is_ok()), "ALL row has undefined cells");
    let (sft, skipped) =
        build_sft_records(&scenarios, &truth, &records, &SpecialTokenPolicy::default()).map_err(|e| e.to_string())?;
    check!(sft.len() == truth.len() && skipped.is_empty(), "sft built {} records", sft.len());
    Ok(format!("RO1 table byte-exact; mock pipeline evaluated {} pairs", joined.points.len()))
}

fn mask(jsonl: &str) -> Vec<serde_json::Value> {
    jsonl
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["created_at"] = serde_json::Value::Null;
            v
        })
        .collect()
}

fn c5_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = fixture("scenarios/acc-001.json");
    let mut runs = Vec::new();
    for id in ["first", "second"] {
        let out = Command::new(env!("CARGO_BIN_EXE_wella"))
            .current_dir(tmp.path())
            .args(["crew", "--scenario", scenario.to_str().unwrap(), "--backend", "mock", "--seed", "7", "--run-id", id])
            .output()
            .unwrap();
        check!(out.status.success(), "crew failed: {}", String::from_utf8_lossy(&out.stderr));
        runs.push(std::fs::read_to_string(tmp.path().join(format!("runs/{id}/acc-001.jsonl"))).unwrap());
    }
    let (a, b) = (mask(&runs[0]), mask(&runs[1]));
    let bytes = |v: &[serde_json::Value]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("\n");
    check!(bytes(&a) == bytes(&b), "masked session files differ");
    let roles: Vec<&str> = a.iter().map(|v| v["role"].as_str().unwrap()).collect();
    check!(roles == ["RO1", "RO2", "RO3", "CO", "SO"], "roles {roles:?}");
    check!(a.iter().all(|v| v["record"] == "estimate"), "not every role produced an estimate");

    let spec = common::base_scenario(ScenarioCategory::Accident);
    let mut parsed = 0;
    for seed in 0..100u64 {
        for role in RoleId::ALL {
            for instrument in [Instrument::Both, Instrument::Tlx, Instrument::Sart] {
                let bundle = build_prompt(&spec, role, instrument);
                parse_response(&mock_generate(&bundle, seed), instrument)
                    .map_err(|e| format!("seed {seed} {role} {instrument:?}: {e}"))?;
                parsed += 1;
            }
        }
    }
    Ok(format!("two runs identical modulo timestamps, 5 roles, {parsed} mock responses parsed"))
}

fn c6_sft() -> Outcome {
    let (records, answers) = common::sft_dataset();
    let mut census = BTreeMap::new();
    for r in &records {
        *census.entry(r.meta.category).or_insert(0) += 1;
    }
    check!(
        census == CATEGORY_COUNTS.iter().copied().collect::<BTreeMap<_, _>>(),
        "census {census:?}"
    );
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("dataset.jsonl");
    export_jsonl(&records, &path).unwrap();
    check!(import_jsonl(&path).unwrap() == records, "round trip changed records");
    let policy = SpecialTokenPolicy::default();
    for (r, (tlx, sart)) in records.iter().zip(&answers) {
        let p = r.parse_output(&policy).map_err(|e| format!("{}/{}: {e}", r.meta.scenario_id, r.meta.role))?;
        check!(p.tlx.as_ref() == Some(tlx) && p.sart.as_ref() == Some(sart), "answers changed");
    }
    let ratios = SplitRatios::default();
    let split = stratified_split(records.clone(), ratios, 1).unwrap();
    for (category, n) in CATEGORY_COUNTS {
        for (part, ratio) in [(&split.train, ratios.train), (&split.validation, ratios.validation), (&split.test, ratios.test)] {
            let got = part.iter().filter(|r| r.meta.category == category).count();
            check!((got as f64 - n as f64 * ratio).abs() <= 1.0, "{category}: {got} vs {}", n as f64 * ratio);
        }
    }
    check!(stratified_split(records, ratios, 1).unwrap() == split, "split not reproducible");
    Ok(format!(
        "69 records round-trip and re-parse; split {}/{}/{}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    ))
}

fn c7_goms() -> Outcome {
    let t0 = Instant::now();
    let proc_ = Procedure::load(&fixture("procedure_normal.json")).map_err(|e| e.to_string())?;
    let params = PlantParams::new();
    let r = run_monte_carlo(&proc_, &params, 100_000, 1).unwrap();
    let p = r.step("16").unwrap().failure_probability;
    let oracle = 1.0 - Normal::new(100.0, 10.0).unwrap().cdf(110.0);
    check!((p - oracle).abs() <= 0.01, "p = {p}, oracle {oracle:.4}");
    let again = run_monte_carlo(&proc_, &params, 100_000, 1).unwrap();
    check!(again == r, "same seed not bit-identical");
    let sharded = run_monte_carlo_with(&proc_, &params, &McOptions { shards: 4, ..McOptions::new(100_000, 1) }).unwrap();
    check!(sharded == r, "sharded run differs");
    within(t0.elapsed(), Duration::from_secs(5), "Normal(100,10) checks")?;

    let fast = GomsStep::new("fast", TimeModel::Fixed { seconds: 5.0 }, 10.0);
    let slow = GomsStep::new("slow", TimeModel::Fixed { seconds: 20.0 }, 10.0);
    let fixed = run_monte_carlo(&Procedure::new(vec![fast, slow]).unwrap(), &params, 1000, 9).unwrap();
    let (pf, ps) = (fixed.step("fast").unwrap().failure_probability, fixed.step("slow").unwrap().failure_probability);
    check!(pf == 0.0 && ps == 1.0, "fixed steps gave {pf}, {ps}");
    Ok(format!("p = {p:.4} vs 1 - Phi(1) = {oracle:.4}; fixed 0/1; seeded and sharded runs identical"))
}

fn remote(url: &str) -> RemoteChatBackend {
    RemoteChatBackend::new(RemoteConfig {
        endpoint: url.into(),
        model: "stub".into(),
        api_key_env: None,
        timeout: Duration::from_millis(300),
        retry: RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(10), max_delay: Duration::from_millis(40) },
    })
    .unwrap()
}

fn c8_remote() -> Outcome {
    let bundle = build_prompt(&common::base_scenario(ScenarioCategory::Shutdown), RoleId::CO, Instrument::Both);

    let ok = Stub::start(vec![Reply::completion("assistant text")]);
    check!(remote(&ok.url).generate(&bundle) == Ok("assistant text".into()), "success extraction");

    let auth = Stub::start(vec![Reply::Status(401, "{}".into())]);
    let e = remote(&auth.url).generate(&bundle);
    check!(e == Err(BackendError::Auth { status: 401 }) && auth.count() == 1, "401 gave {e:?} after {}", auth.count());

    let flaky = Stub::start(vec![Reply::Status(503, "{}".into()), Reply::Status(503, "{}".into()), Reply::completion("ok")]);
    let r = remote(&flaky.url).generate_with_attempts(&bundle);
    check!(r == Ok(("ok".into(), 3)), "503,503,200 gave {r:?}");

    let stall = Reply::Stall(Duration::from_millis(1200), Box::new(Reply::completion("late")));
    let slow = Stub::start(vec![stall.clone(), stall, Reply::completion("ok")]);
    let r = remote(&slow.url).generate_with_attempts(&bundle);
    check!(r == Ok(("ok".into(), 3)), "timeout,timeout,200 gave {r:?}");

    let down = Stub::start(vec![Reply::Status(500, "{}".into())]);
    let e = remote(&down.url).generate(&bundle);
    check!(matches!(e, Err(BackendError::Unavailable(_))) && down.count() == 3, "500 x3 gave {e:?}");

    let crew_stub = Stub::start(vec![Reply::completion(&mock_generate(&bundle, 0))]);
    let session = estimate_crew(&common::base_scenario(ScenarioCategory::Shutdown), &remote(&crew_stub.url), &CrewOptions::default())
        .unwrap();
    check!(
        session.outcomes.values().all(|o| matches!(o, RoleOutcome::Estimate(_))),
        "crew over stub had failures"
    );
    Ok("success, 401 without retry, 5xx/timeout retry bounded at 3, all on 127.0.0.1".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("TLX formula", c1_tlx),
        ("SART formula", c2_sart),
        ("metric oracle equivalence", c3_metrics),
        ("report formatting and eval pipeline", c4_report_and_pipeline),
        ("end-to-end determinism", c5_determinism),
        ("SFT dataset", c6_sft),
        ("GOMS baseline", c7_goms),
        ("remote backend contract", c8_remote),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let ms = t0.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({ms} ms): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({ms} ms): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
