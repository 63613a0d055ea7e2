//! Acceptance harness: one PASS/FAIL line per criterion, tolerances pinned
//! below. Exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use cbw::config::RunConfig;
use cbw::corpus::Split;
use cbw::embedding::{pool_features, scatter_matrices, BuiltinProvider, LabeledVector, Pooling};
use cbw::metrics::{self, eer_from_points};
use cbw::pipeline::{self, ModelEvaluation, Perturbation, PerturbedProvider, WatermarkedModel};
use cbw::seeds::derive_seed;
use cbw::signal::FeatureMatrix;
use cbw::stats;
use cbw::theory::{self, BoundInput};
use cbw::verify::{self, Decision, Mode, Scenario, ScenarioReport, SpeakerPool, Suspect};
use cbw::watermark::{self, Method, SpeakerRepresentation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const T_DIST_TOL: f64 = 1e-6;
const WILCOXON_TOL: f64 = 1e-12;
const WILCOXON_CASES: usize = 100;
const ROOT_TOL: f64 = 1e-8;
const MC_SIMS: usize = 10_000;
const SIZE_BAND: f64 = 0.01;
const MIN_POWER: f64 = 0.95;
const POWER_OFFSET: f64 = 0.1;
/// Null success probability for the size check; at 0 the test cannot reject at all.
const SIZE_CHECK_P: f64 = 0.66;
const MONOTONE_SE: f64 = 3.0;
const STRONG_P: f64 = 0.01;
const WEAK_P: f64 = 0.05;
const MAX_EER_INCREASE: f64 = 0.10;
const WSR_QUERIES: usize = 200;
const DIRECTION_SEEDS: [u64; 3] = [0, 1, 2];
const KMEANS_SLACK: f64 = 0.05;
const KMEANS_SEEDS: u64 = 10;
const EER_ORACLE_TOL: f64 = 1e-9;
const POOLING_TOL: f64 = 1e-8;
const ROBUST_RUNS: u64 = 5;
const MAX_FLIPS: usize = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within_limit(o: Outcome, elapsed: Duration, limit: Option<Duration>) -> Outcome {
    match limit {
        Some(l) if elapsed > l => outcome(false, format!("{}; runtime {:.1}s over the {}s limit", o.detail, elapsed.as_secs_f64(), l.as_secs())),
        _ => o,
    }
}

// Criterion 1

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    step(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn t_density(df: f64) -> impl Fn(f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    move |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn oracle_t_cdf(x: f64, df: f64) -> f64 {
    let f = t_density(df);
    0.5 + simpson(&f, 0.0, x, 1e-13)
}

fn enumerate_wilcoxon(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let tied = abs.iter().filter(|b| *b == a).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let mut hits = 0u64;
    for pattern in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| pattern >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

fn criterion_1() -> Outcome {
    let mut max_cdf = 0.0f64;
    let mut max_q = 0.0f64;
    for df in [2.0, 10.0, 59.0, 200.0] {
        for p in [0.9, 0.95, 0.99] {
            let q = stats::t_quantile(p, df).unwrap();
            max_q = max_q.max((oracle_t_cdf(q, df) - p).abs());
            for x in [-q, 0.5 * q, q, 2.0 * q] {
                max_cdf = max_cdf.max((stats::t_cdf(x, df).unwrap() - oracle_t_cdf(x, df)).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut max_w = 0.0f64;
    for case in 0..WILCOXON_CASES {
        let n = 1 + case % 12;
        // Small integer values give ties and zero differences.
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let d: Vec<f64> = w.iter().zip(&b).map(|(x, y)| x - y).collect();
        let got = stats::wilcoxon_one_tailed(&w, &b).unwrap().p_value;
        max_w = max_w.max((got - enumerate_wilcoxon(&d)).abs());
    }
    outcome(
        max_cdf <= T_DIST_TOL && max_q <= T_DIST_TOL && max_w <= WILCOXON_TOL,
        format!(
            "t_cdf err {max_cdf:.2e}, t_quantile err {max_q:.2e} (tol {T_DIST_TOL:.0e}); Wilcoxon err {max_w:.2e} over {WILCOXON_CASES} cases (tol {WILCOXON_TOL:.0e})"
        ),
    )
}

// Criterion 2

fn criterion_2() -> Outcome {
    let mut worst_root = 0.0f64;
    let mut order_ok = true;
    let mut points = 0;
    for m in [10, 20, 30, 60, 100] {
        for alpha in [0.01, 0.05] {
            for i in 0..10 {
                let p = i as f64 / 10.0;
                let b = theory::wsr_bound(&BoundInput { m, alpha, p_beta_tau: p }).unwrap();
                let (qa, qb, qc) = theory::bound_quadratic(m, b.t_quantile_used, p);
                let scale = qa.abs().max(qb.abs()).max(qc.abs());
                worst_root = worst_root.max((qa * b.w_min * b.w_min + qb * b.w_min + qc).abs() / scale);
                order_ok &= p < b.w_min && b.w_min < 1.0;
                points += 1;
            }
        }
    }
    let input = BoundInput { m: 60, alpha: 0.05, p_beta_tau: SIZE_CHECK_P };
    let w_min = theory::wsr_bound(&input).unwrap().w_min;
    let grid = [SIZE_CHECK_P, w_min + POWER_OFFSET];
    let table = theory::mc_validate_bound(&input, &grid, MC_SIMS, derive_seed(0, "acceptance/mc")).unwrap();
    let size = table.rows[0].empirical_rejection_rate;
    let power = table.rows[1].empirical_rejection_rate;
    let size_ok = (size - input.alpha).abs() <= SIZE_BAND;
    outcome(
        worst_root <= ROOT_TOL && order_ok && size_ok && power >= MIN_POWER,
        format!(
            "{points}-point grid: max |f(w_min)|/scale {worst_root:.1e} (tol {ROOT_TOL:.0e}), P < w_min < 1 {order_ok}; \
             m=60 P={SIZE_CHECK_P}: size {size:.4} (band {:.2}..{:.2}), power at w_min+{POWER_OFFSET} = {power:.4} (min {MIN_POWER})",
            input.alpha - SIZE_BAND,
            input.alpha + SIZE_BAND
        ),
    )
}

// Criterion 3

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, p) in [0.1, 0.3].into_iter().enumerate() {
        let t = theory::n_monotonicity_check(p, &[1, 3, 5], 60, MC_SIMS, derive_seed(0, &format!("acceptance/n/{i}"))).unwrap();
        let mut ok = t.strictly_increasing;
        for r in &t.rows {
            let exact = 1.0 - (1.0 - p).powi(r.n_enrolled as i32);
            ok &= (r.empirical_mean - exact).abs() <= MONOTONE_SE * r.standard_error;
        }
        pass &= ok;
        let means: Vec<String> = t.rows.iter().map(|r| format!("{:.4}", r.empirical_mean)).collect();
        parts.push(format!("p'={p}: W = [{}] {}", means.join(", "), if ok { "ok" } else { "off" }));
    }
    outcome(pass, format!("{} (within {MONOTONE_SE} SE, strictly increasing)", parts.join("; ")))
}

// Criteria 4 and 7 share one default-config run.

struct DefaultRun {
    config: RunConfig,
    pool: SpeakerPool,
    watermarked: WatermarkedModel,
    benign_eval: ModelEvaluation,
    wm_eval: ModelEvaluation,
    reports: Vec<ScenarioReport>,
}

fn default_run() -> DefaultRun {
    let mut config = RunConfig::default();
    config.verify.wsr_queries = WSR_QUERIES;
    config.verify.wsr_enrolled = vec![1, 5];
    let corpus = pipeline::main_corpus(&config).unwrap();
    let dev = pipeline::dev_corpus(&config).unwrap();
    let benign = pipeline::provider(pipeline::train_model(&corpus, &config).unwrap(), &config);
    let watermarked = pipeline::watermarked_model(&config, &corpus, &benign).unwrap();
    let pool = SpeakerPool::from_corpus(&corpus, Some(Split::Test));
    let dev_pool = SpeakerPool::from_corpus(&dev, None);
    let benign_eval = pipeline::evaluate_model(&benign, &pool, &dev_pool, None, &config).unwrap();
    let wm_eval =
        pipeline::evaluate_model(&watermarked.provider, &pool, &dev_pool, Some(&watermarked.triggers), &config).unwrap();
    let reports = pipeline::audit(
        &config,
        Suspect { provider: &benign, threshold: Some(benign_eval.threshold) },
        Suspect { provider: &watermarked.provider, threshold: Some(wm_eval.threshold) },
        &watermarked.triggers,
        &pool,
        &[Mode::Similarity, Mode::Decision],
    )
    .unwrap();
    DefaultRun { config, pool, watermarked, benign_eval, wm_eval, reports }
}

fn report(run: &DefaultRun, scenario: Scenario, mode: Mode) -> &verify::VerificationReport {
    &run.reports.iter().find(|r| r.scenario == scenario && r.report.mode == mode).unwrap().report
}

fn criterion_4(run: &DefaultRun) -> Outcome {
    let ds_sim = report(run, Scenario::DatasetStealing, Mode::Similarity);
    let ds_dec = report(run, Scenario::DatasetStealing, Mode::Decision);
    let dp = ds_sim.delta_p.unwrap();
    let a = ds_sim.p_value < STRONG_P && dp > 0.0 && ds_dec.p_value < STRONG_P;
    let mut b = true;
    let mut others = Vec::new();
    for s in [Scenario::IndependentModel, Scenario::IndependentTrigger] {
        for m in [Mode::Similarity, Mode::Decision] {
            let p = report(run, s, m).p_value;
            b &= p > WEAK_P;
            others.push(format!("{p:.3}"));
        }
    }
    let increase = run.wm_eval.eer.eer - run.benign_eval.eer.eer;
    let c = increase <= MAX_EER_INCREASE;
    let wsr = |n: usize| run.wm_eval.wsr.iter().find(|w| w.scenario.n_enrolled == n).unwrap().wsr;
    let d = wsr(5) >= wsr(1);
    let flag = |ok: bool| if ok { "ok" } else { "FAIL" };
    outcome(
        a && b && c && d,
        format!(
            "(a) {}: stealing p {:.3e}/{:.3e} (sim/dec), dP {dp:.4}; (b) {}: independent p [{}]; \
             (c) {}: EER {:.4} -> {:.4} (+{:.2} pp, max {} pp); (d) {}: WSR 1-to-1 {:.3}, 1-to-5 {:.3} over {WSR_QUERIES} queries",
            flag(a),
            ds_sim.p_value,
            ds_dec.p_value,
            flag(b),
            others.join(", "),
            flag(c),
            run.benign_eval.eer.eer,
            run.wm_eval.eer.eer,
            100.0 * increase,
            100.0 * MAX_EER_INCREASE,
            flag(d),
            wsr(1),
            wsr(5)
        ),
    )
}

fn criterion_7(run: &DefaultRun) -> Outcome {
    let trials = |threshold| verify::TrialConfig {
        threshold: Some(threshold),
        ..run.config.verify.trials(run.watermarked.triggers.len(), run.config.seed_for("verify"))
    };
    let config = trials(run.wm_eval.threshold);
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in ["volume", "spec_augment"] {
        for mode in [Mode::Similarity, Mode::Decision] {
            let reference = report(run, Scenario::DatasetStealing, mode).decision;
            let mut flips = 0;
            for r in 0..ROBUST_RUNS {
                let seed = derive_seed(run.config.seed, &format!("acceptance/robustness/{r}"));
                let perturbation = match kind {
                    "volume" => Perturbation::Volume { range_db: run.config.robustness.volume_range_db, seed },
                    _ => Perturbation::SpecAugment { config: run.config.robustness.spec_augment, seed },
                };
                let provider = PerturbedProvider::for_pool(&run.watermarked.provider, perturbation, &run.pool);
                let rep = verify::verify(&provider, &run.pool, &run.watermarked.triggers, &config, mode).unwrap();
                if rep.decision != reference {
                    flips += 1;
                }
            }
            pass &= flips <= MAX_FLIPS;
            let reference = match reference {
                Decision::Infringement => "infringement",
                Decision::NoEvidence => "no evidence",
            };
            parts.push(format!("{kind} {mode:?}: {flips}/{ROBUST_RUNS} changed from {reference}"));
        }
    }
    outcome(pass, format!("{} (max {MAX_FLIPS})", parts.join("; ")))
}

// Criterion 5

fn criterion_5() -> Outcome {
    let mut holds = 0;
    let mut parts = Vec::new();
    for &seed in &DIRECTION_SEEDS {
        let mut config = RunConfig { seed, ..RunConfig::default() };
        config.verify.wsr_queries = WSR_QUERIES;
        config.verify.wsr_enrolled = vec![5];
        let corpus = pipeline::main_corpus(&config).unwrap();
        let dev = pipeline::dev_corpus(&config).unwrap();
        let benign: BuiltinProvider = pipeline::provider(pipeline::train_model(&corpus, &config).unwrap(), &config);
        let run = |method| {
            let c = RunConfig { watermark: cbw::config::WatermarkSection { method, ..config.watermark.clone() }, ..config.clone() };
            pipeline::run_suite_with_benign(&c, &corpus, &dev, &benign, &[]).unwrap()
        };
        let cbw_run = run(Method::Cbw);
        let o2a_run = run(Method::O2a);
        let (cw, ow) = (cbw_run.wsr(5).unwrap(), o2a_run.wsr(5).unwrap());
        let (ce, oe) = (cbw_run.eer_increase(), o2a_run.eer_increase());
        let ok = cw > ow && oe > ce;
        holds += ok as usize;
        parts.push(format!(
            "seed {seed}: WSR CBW {cw:.3} vs O2A {ow:.3}, EER +{:.2} vs +{:.2} pp {}",
            100.0 * ce,
            100.0 * oe,
            if ok { "holds" } else { "fails" }
        ));
    }
    let needed = DIRECTION_SEEDS.len() / 2 + 1;
    outcome(holds >= needed, format!("{} ({holds}/{} hold, need {needed})", parts.join("; "), DIRECTION_SEEDS.len()))
}

// Criterion 6

fn exhaustive_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for code in 0..k.pow(n as u32) {
        let labels: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
        let mut total = 0.0;
        for g in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, l)| **l == g).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..points[0].len() {
                let mean = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
                total += members.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>();
            }
        }
        best = best.min(total);
    }
    best
}

fn oracle_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let points: Vec<(f64, f64, f64)> = candidates
        .iter()
        .map(|&t| {
            let far = impostor.iter().filter(|s| **s > t).count() as f64 / impostor.len() as f64;
            let frr = genuine.iter().filter(|s| **s <= t).count() as f64 / genuine.len() as f64;
            (t, far, frr)
        })
        .collect();
    eer_from_points(&points, genuine.len(), impostor.len()).eer
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

    let mut worst_kmeans = 0.0f64;
    for instance in 0..5 {
        let reps: Vec<SpeakerRepresentation> = (0..7)
            .map(|i| SpeakerRepresentation {
                speaker_id: format!("p{i}"),
                vector: (0..3).map(|_| normal(&mut rng)).collect(),
                n_utterances: 1,
            })
            .collect();
        let points: Vec<Vec<f64>> = reps.iter().map(|r| r.vector.clone()).collect();
        let oracle = exhaustive_inertia(&points, 3);
        let best = (0..KMEANS_SEEDS)
            .map(|s| watermark::kmeans(&reps, 3, derive_seed(instance, &format!("k{s}")), 100, 1e-12).unwrap().inertia)
            .fold(f64::INFINITY, f64::min);
        worst_kmeans = worst_kmeans.max(best / oracle - 1.0);
    }

    let genuine: Vec<f64> = (0..1000).map(|_| 1.5 + normal(&mut rng)).collect();
    let impostor: Vec<f64> = (0..1000).map(|_| normal(&mut rng)).collect();
    let eer_err = (metrics::compute_eer(&genuine, &impostor).unwrap().eer - oracle_eer(&genuine, &impostor)).abs();

    let fm = FeatureMatrix { frames: (0..10).map(|_| (0..40).map(|_| normal(&mut rng)).collect()).collect(), n_mels: 40 };
    let pooled = pool_features(&fm, Pooling::MeanStd).unwrap();
    let mut pool_err = 0.0f64;
    for j in 0..40 {
        let mean = fm.frames.iter().map(|r| r[j]).sum::<f64>() / 10.0;
        let sq = fm.frames.iter().map(|r| r[j] * r[j]).sum::<f64>() / 10.0;
        pool_err = pool_err.max((pooled[j] - mean).abs()).max((pooled[40 + j] - (sq - mean * mean).sqrt()).abs());
    }

    let samples: Vec<LabeledVector> = (0..3)
        .flat_map(|s| (0..6).map(move |i| (s, i)))
        .map(|(s, _)| LabeledVector { speaker_id: format!("s{s}"), vector: (0..5).map(|_| s as f64 + normal(&mut rng)).collect() })
        .collect();
    let scatter = scatter_matrices(&samples).unwrap();
    let n = samples.len() as f64;
    let mu: Vec<f64> = (0..5).map(|j| samples.iter().map(|x| x.vector[j]).sum::<f64>() / n).collect();
    let mut by_speaker: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
    for x in &samples {
        by_speaker.entry(&x.speaker_id).or_default().push(&x.vector);
    }
    let mut scatter_err = 0.0f64;
    for a in 0..5 {
        for b in 0..5 {
            let (mut sw, mut sb) = (0.0, 0.0);
            for group in by_speaker.values() {
                let k = group.len() as f64;
                let mean = |j: usize| group.iter().map(|v| v[j]).sum::<f64>() / k;
                let (ma, mb) = (mean(a), mean(b));
                sw += group.iter().map(|v| (v[a] - ma) * (v[b] - mb)).sum::<f64>();
                sb += k * (ma - mu[a]) * (mb - mu[b]);
            }
            scatter_err = scatter_err.max((scatter.within[(a, b)] - sw).abs()).max((scatter.between[(a, b)] - sb).abs());
        }
    }
    outcome(
        worst_kmeans <= KMEANS_SLACK && eer_err <= EER_ORACLE_TOL && pool_err <= POOLING_TOL && scatter_err <= POOLING_TOL,
        format!(
            "k-means best-of-{KMEANS_SEEDS} excess {:.2}% (max {:.0}%); EER err {eer_err:.1e} (tol {EER_ORACLE_TOL:.0e}); \
             pooling err {pool_err:.1e}, scatter err {scatter_err:.1e} (tol {POOLING_TOL:.0e})",
            100.0 * worst_kmeans,
            100.0 * KMEANS_SLACK
        ),
    )
}

// Criterion 8

fn strip_metadata(name: &str, bytes: &[u8]) -> Vec<u8> {
    if name.ends_with(".report.json") {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        v.as_object_mut().unwrap().remove("metadata");
        return serde_json::to_vec(&v).unwrap();
    }
    bytes.to_vec()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let bytes = std::fs::read(&p).unwrap();
                out.insert(rel.clone(), strip_metadata(&rel, &bytes));
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = common::write_config(root, &common::small_config());
    let p = |rel: &str| root.join(rel).to_str().unwrap().to_string();
    let run_cmd = |args: &[String], out: &str| -> bool {
        let mut all: Vec<&str> = args.iter().map(String::as_str).collect();
        all.extend(["--config", &config, "--seed", "5", "--out", out]);
        let o = common::cbw(&all, &[]);
        if common::code(&o) != 0 {
            eprintln!("{all:?} failed: {}", common::stderr(&o));
        }
        common::code(&o) == 0
    };
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    // Fixed inputs for the commands that consume earlier outputs.
    if !run_cmd(&v(&["synth-corpus"]), &p("in/data"))
        || !run_cmd(&v(&["train", "--corpus", &p("in/data/corpus")]), &p("in/benign"))
        || !run_cmd(&v(&["watermark", "--corpus", &p("in/data/corpus"), "--model", &p("in/benign/model.json")]), &p("in/wm"))
        || !run_cmd(&v(&["train", "--corpus", &p("in/wm/dataset")]), &p("in/suspect"))
    {
        return outcome(false, "could not prepare inputs");
    }
    let corpus = p("in/data/corpus");
    let manifest = p("in/wm/dataset/watermark.json");
    let suspect = p("in/suspect/model.json");
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("synth-corpus", v(&["synth-corpus"])),
        ("extract", v(&["extract", "--corpus", &corpus, "--model", &suspect, "--watermark", &manifest])),
        ("train", v(&["train", "--corpus", &corpus])),
        ("watermark", v(&["watermark", "--corpus", &corpus, "--model", &p("in/benign/model.json")])),
        ("enroll-eval", v(&["enroll-eval", "--corpus", &corpus, "--model", &suspect, "--dev", &p("in/data/dev"), "--watermark", &manifest])),
        ("verify", v(&["verify", "--corpus", &corpus, "--watermark", &manifest, "--model", &suspect, "--dev", &p("in/data/dev"), "--mode", "decision"])),
        ("bound", v(&["bound"])),
        ("mc-validate", v(&["mc-validate"])),
        ("scenario-suite", v(&["scenario-suite"])),
    ];
    let mut differing = Vec::new();
    let mut total_files = 0;
    for (name, args) in &commands {
        let (a, b) = (p(&format!("{name}/a")), p(&format!("{name}/b")));
        if !run_cmd(args, &a) || !run_cmd(args, &b) {
            return outcome(false, format!("{name} exited non-zero"));
        }
        let (ta, tb) = (tree(Path::new(&a)), tree(Path::new(&b)));
        total_files += ta.len();
        if ta != tb {
            differing.push(*name);
        }
    }
    outcome(
        differing.is_empty(),
        format!("{} commands x 2 runs, {total_files} output files; differing: {:?}", commands.len(), differing),
    )
}

fn main() {
    let started = Instant::now();
    let mut all_pass = true;
    let mut line = |id: u8, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let elapsed = t0.elapsed();
        let o = within_limit(o, elapsed, limit);
        all_pass &= o.pass;
        println!("criterion {id} {} {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, elapsed.as_secs_f64());
    };
    line(1, "statistical kernel exactness", Some(Duration::from_secs(30)), &mut criterion_1);
    line(2, "bound root conditions and Monte Carlo size/power", Some(Duration::from_secs(120)), &mut criterion_2);
    line(3, "growth of W with enrolled speakers", Some(Duration::from_secs(60)), &mut criterion_3);
    let t0 = Instant::now();
    let run = default_run();
    let setup = t0.elapsed();
    line(4, "end-to-end scenarios on the default corpus", Some(Duration::from_secs(300).saturating_sub(setup)), &mut || criterion_4(&run));
    line(5, "CBW versus O2A direction", None, &mut criterion_5);
    line(6, "oracle equivalences", None, &mut criterion_6);
    line(7, "robustness of the Dataset Stealing decision", None, &mut || criterion_7(&run));
    line(8, "CLI determinism", None, &mut criterion_8);
    println!("default suite setup {:.1}s, total {:.1}s", setup.as_secs_f64(), started.elapsed().as_secs_f64());
    if !all_pass {
        std::process::exit(1);
    }
}
