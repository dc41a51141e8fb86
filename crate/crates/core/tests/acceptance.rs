//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Runs without the libtest harness so the lines always print.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use geocirc::catalog::{self, NewsType};
use geocirc::contagion::{self, InferenceRule, StateGraph};
use geocirc::diffusion::{self, ReachFilter, TimelineEvent, Unit, UrlTimeline, SECONDS_PER_DAY};
use geocirc::geolocation::{self, LocationTally, SubredditStateMap};
use geocirc::ingest::CommentRecord;
use geocirc::pipeline::{files, Config, Pipeline, Stage};
use geocirc::scaling::{self, Regime, StateTallies};
use geocirc::states::State;
use geocirc::stats::{self, Candidates, Direction};
use geocirc::synth::{self, Ledger, SynthConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn pipeline_in(dir: &Path, synth: SynthConfig) -> Pipeline {
    let config = Config {
        threads: 1,
        synth,
        ..Config::default()
    };
    Pipeline::new(config, dir)
}

fn run_stages(p: &Pipeline, stages: &[Stage]) -> Result<(), String> {
    for &s in stages {
        p.run(s).map_err(|e| format!("stage {}: {e}", s.as_str()))?;
    }
    Ok(())
}

fn read_ledger(p: &Pipeline) -> Result<Ledger, String> {
    let raw = fs::read(p.stage_dir(Stage::Synth).join(synth::LEDGER_FILE)).map_err(err)?;
    serde_json::from_slice(&raw).map_err(err)
}

fn regime_of(beta: f64) -> Regime {
    match beta {
        b if b < 0.8 => Regime::Sublinear,
        b if b < 1.1 => Regime::Linear,
        b if b < 1.3 => Regime::Superlinear,
        _ => Regime::Other,
    }
}

// 1 ------------------------------------------------------------------------

fn scaling_recovery() -> Outcome {
    let planted = [
        (NewsType::Fake, 0.7, 10.0),
        (NewsType::Lowcred, 1.0, 6.0),
        (NewsType::Satire, 1.2, 5.0),
        (NewsType::Reputable, 1.0, 6.0),
    ];
    let mut cfg = SynthConfig::default();
    for (t, beta, scale) in planted {
        let plan = cfg.news.get_mut(t);
        plan.beta = beta;
        plan.scale = scale;
        plan.noise_sigma = 0.1;
        plan.coefficients.clear();
    }
    let dir = tempfile::tempdir().map_err(err)?;
    let p = pipeline_in(dir.path(), cfg);
    let start = Instant::now();
    run_stages(&p, &[Stage::Synth, Stage::Ingest, Stage::Classify, Stage::Geolocate, Stage::Scale])?;
    let elapsed = start.elapsed().as_secs_f64();

    let fits: Vec<scaling::TypeFit> =
        serde_json::from_slice(&fs::read(p.stage_dir(Stage::Scale).join(files::FITS)).map_err(err)?).map_err(err)?;
    let ledger = read_ledger(&p)?;
    ensure!(ledger.states.len() == 50, "{} states", ledger.states.len());

    for (b, want) in [(0.7999, Regime::Sublinear), (0.8, Regime::Linear), (1.0999, Regime::Linear), (1.1, Regime::Superlinear), (1.2999, Regime::Superlinear), (1.3, Regime::Other)] {
        ensure!(scaling::classify_exponent(b) == want, "threshold at {b}");
    }

    let mut detail = Vec::new();
    for (t, beta, _) in planted {
        let fit = fits.iter().find(|f| f.news_type == t).ok_or(format!("no fit for {t}"))?;
        // independent log-log fit on the planted counts
        let (x, y): (Vec<Vec<f64>>, Vec<f64>) = ledger
            .state_counts
            .iter()
            .filter(|(_, c)| c[t.index()] > 0)
            .map(|(s, c)| (vec![(ledger.users_per_state[s] as f64).ln()], (c[t.index()] as f64).ln()))
            .unzip();
        let oracle = ref_ols(&x, &y);
        ensure!((oracle.coef[1] - fit.beta).abs() < 1e-9, "{t}: pipeline β {} vs oracle {}", fit.beta, oracle.coef[1]);
        ensure!((fit.beta - beta).abs() <= 0.05, "{t}: fitted β {:.4}, planted {beta}", fit.beta);
        ensure!(fit.regime == regime_of(fit.beta) && fit.regime == regime_of(beta), "{t}: regime {:?}", fit.regime);
        detail.push(format!("{t} {:.3}/{beta}", fit.beta));
    }
    ensure!(elapsed < 5.0, "runtime {elapsed:.2}s");
    Ok(format!("{}; {elapsed:.2}s", detail.join(", ")))
}

// 2 ------------------------------------------------------------------------

fn residual_orthogonality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..25 {
        let mut t = StateTallies::default();
        for s in State::all() {
            let users: u64 = rng.random_range(3..600);
            t.users.insert(s, users);
            let counts = [0.6, 0.9, 1.0, 1.3].map(|b: f64| {
                ((users as f64).powf(b) * (0.2 * normal(&mut rng)).exp()).round().max(1.0) as u64
            });
            t.counts.insert(s, counts);
        }
        let table = scaling::circulation_residual(&t, &NewsType::ALL, true).map_err(err)?;
        let scaled = scaling::circulation_residual(&t.scaled(10), &NewsType::ALL, true).map_err(err)?;
        for nt in NewsType::ALL {
            let res = table.residuals(nt);
            ensure!(res.len() == 50, "{nt}: {} residuals", res.len());
            let sum: f64 = res.values().sum();
            let dot: f64 = res.iter().map(|(s, e)| e * (t.users[s] as f64).ln()).sum();
            let shift = scaled
                .residuals(nt)
                .iter()
                .map(|(s, e)| (e - res[s]).abs())
                .fold(0.0, f64::max);
            worst = (worst.0.max(sum.abs()), worst.1.max(dot.abs()), worst.2.max(shift));
        }
    }
    ensure!(worst.0 < 1e-9, "Σε = {:e}", worst.0);
    ensure!(worst.1 < 1e-9, "Σε·ln N = {:e}", worst.1);
    ensure!(worst.2 < 1e-9, "×10 shift {:e}", worst.2);
    Ok(format!("max |Σε| {:.1e}, |Σε·ln N| {:.1e}, ×10 shift {:.1e}", worst.0, worst.1, worst.2))
}

// 3 ------------------------------------------------------------------------

fn ols_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let k = rng.random_range(1..=8usize);
        let n = rng.random_range(k + 2..=60usize);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| normal(&mut rng)).collect()).collect();
        let beta: Vec<f64> = (0..=k).map(|_| normal(&mut rng)).collect();
        let sigma = rng.random_range(0.5..2.0);
        let y: Vec<f64> = x
            .iter()
            .map(|r| beta[0] + r.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>() + sigma * normal(&mut rng))
            .collect();
        let names: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
        let fit = stats::ols_fit(&x, &y, &names, true).map_err(err)?;
        let oracle = ref_ols(&x, &y);
        ensure!(fit.df_residual == oracle.df, "case {case}: df {} vs {}", fit.df_residual, oracle.df);
        let mut diffs = vec![(fit.r_squared - oracle.r2).abs(), (fit.adj_r_squared - oracle.adj_r2).abs()];
        for i in 0..=k {
            diffs.push((fit.coefficients[i] - oracle.coef[i]).abs());
            diffs.push((fit.p_values[i] - oracle.p[i]).abs());
        }
        let d = diffs.into_iter().fold(0.0, f64::max);
        ensure!(d < 1e-8, "case {case} (n={n}, k={k}): deviation {d:e}");
        worst = worst.max(d);
    }
    let x: Vec<Vec<f64>> = (0..48).map(|i| (0..6).map(|j| ((i * (j + 3)) as f64).sin()).collect()).collect();
    let y: Vec<f64> = (0..48).map(|i| (i as f64).cos()).collect();
    let names: Vec<String> = (1..=6).map(|j| format!("v{j}")).collect();
    let fit = stats::ols_fit(&x, &y, &names, true).map_err(err)?;
    ensure!(fit.df_residual == 41, "n=48, k=6 gives df {}", fit.df_residual);
    Ok(format!("200 systems, max deviation {worst:.1e}; n=48,k=6 → df 41"))
}

// 4 ------------------------------------------------------------------------

fn strictly_descending(trace: &[stats::Step]) -> bool {
    trace.windows(2).all(|w| w[1].aic < w[0].aic)
}

fn stepwise_selection() -> Outcome {
    let mut reader = csv::Reader::from_path(fixture("stepwise_sparse.csv")).map_err(err)?;
    let header: Vec<String> = reader.headers().map_err(err)?.iter().map(String::from).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for rec in reader.records() {
        for (c, v) in cols.iter_mut().zip(rec.map_err(err)?.iter()) {
            c.push(v.parse::<f64>().map_err(err)?);
        }
    }
    ensure!(cols[0].len() == 200, "fixture has {} rows", cols[0].len());
    let y = cols.remove(0);
    let names = header[1..].to_vec();
    let cands = Candidates::new(names.clone(), cols.clone(), y.clone()).map_err(err)?;
    let full: Vec<usize> = (0..names.len()).collect();
    let sel = stats::step_aic(&cands, &full, Direction::Both).map_err(err)?;
    let mut chosen = sel.model.predictors().to_vec();
    chosen.sort();
    let (best, best_aic) = best_subset(&cols, &y);
    let best_names: Vec<String> = best.iter().map(|&j| names[j].clone()).collect();
    ensure!(chosen == ["x1", "x2", "x3"], "selected {chosen:?}");
    ensure!(best_names == chosen, "exhaustive best {best_names:?}");
    ensure!((sel.model.aic - best_aic).abs() < 1e-8, "AIC {} vs exhaustive {}", sel.model.aic, best_aic);
    ensure!(strictly_descending(&sel.trace), "fixture trace not strictly decreasing");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fuzzed = 0;
    for case in 0..150 {
        let k = rng.random_range(2..=7usize);
        let n = rng.random_range(k + 8..=80usize);
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| cols.iter().map(|c| c[i] * if rng.random_bool(0.4) { 0.7 } else { 0.0 }).sum::<f64>() + normal(&mut rng))
            .collect();
        let names: Vec<String> = (0..k).map(|j| format!("c{j}")).collect();
        let cands = Candidates::new(names, cols, y).map_err(err)?;
        for (dir, start) in [
            (Direction::Both, (0..k).collect::<Vec<_>>()),
            (Direction::Backward, (0..k).collect()),
            (Direction::Forward, Vec::new()),
            (Direction::Both, vec![0]),
        ] {
            let r = stats::step_aic(&cands, &start, dir).map_err(err)?;
            ensure!(strictly_descending(&r.trace), "case {case} {dir:?}: trace {:?}", r.trace.iter().map(|s| s.aic).collect::<Vec<_>>());
            fuzzed += 1;
        }
    }
    Ok(format!("selected {{x1,x2,x3}} = exhaustive (AIC {best_aic:.4}); {fuzzed} fuzzed traces strictly decreasing"))
}

// 5 ------------------------------------------------------------------------

fn geolocation_fixture() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states: Vec<State> = State::all().collect();
    let mut map = SubredditStateMap::default();
    for s in &states {
        let code = s.code().to_ascii_lowercase();
        map.insert(&format!("{code}_town"), *s).map_err(err)?;
        map.insert(&format!("{code}city"), *s).map_err(err)?;
    }
    let sub_of = |rng: &mut ChaCha8Rng, s: State| {
        let code = s.code().to_ascii_lowercase();
        if rng.random_bool(0.5) { format!("{code}_town") } else { format!("{code}city") }
    };

    let mut records = Vec::new();
    let mut ledger: BTreeMap<String, Option<State>> = BTreeMap::new();
    let mut ties = 0;
    for u in 0..1000 {
        let author = format!("user{u:04}");
        let picked: Vec<State> = states.choose_multiple(&mut rng, 3).copied().collect();
        let mut counts: Vec<(State, u64)> = Vec::new();
        let top = rng.random_range(2..6u64);
        match u % 10 {
            0 | 1 => {
                ties += 1;
                counts.push((picked[0], top));
                counts.push((picked[1], top));
                if rng.random_bool(0.5) {
                    counts.push((picked[2], rng.random_range(1..top)));
                }
                ledger.insert(author.clone(), None);
            }
            2..=4 => {
                counts.push((picked[0], top));
                counts.push((picked[1], rng.random_range(1..top)));
                ledger.insert(author.clone(), Some(picked[0]));
            }
            _ => {
                counts.push((picked[0], top - 1));
                ledger.insert(author.clone(), Some(picked[0]));
            }
        }
        for (s, c) in counts {
            for _ in 0..c {
                let subreddit = sub_of(&mut rng, s);
                records.push(comment(records.len(), &author, &subreddit));
            }
        }
        for _ in 0..rng.random_range(0..4) {
            records.push(comment(records.len(), &author, "politics"));
        }
    }

    let (table, _) = geolocation::assign_user_states(&records, &map);
    for (author, want) in &ledger {
        ensure!(table.state_of(author) == *want, "{author}: got {:?}, ledger {want:?}", table.state_of(author));
        let counts = &table.get(author).ok_or(format!("{author} missing"))?.counts;
        ensure!(ref_plurality(counts) == *want, "{author}: oracle disagrees with ledger");
    }
    let unassigned_ties = ledger.iter().filter(|(a, s)| s.is_none() && table.state_of(a).is_none()).count();
    ensure!(unassigned_ties == ties, "{unassigned_ties} of {ties} ties unassigned");

    let baseline: Vec<(String, Option<State>)> = table.iter().map(|l| (l.author.clone(), l.state)).collect();
    for shuffle in 0..20 {
        records.shuffle(&mut rng);
        // alternate between one pass and a four-way sharded merge
        let t = if shuffle % 2 == 0 {
            geolocation::assign_user_states(&records, &map).0
        } else {
            let mut acc = LocationTally::default();
            for chunk in records.chunks(records.len() / 4 + 1) {
                let mut part = LocationTally::default();
                chunk.iter().for_each(|r| part.add(r, &map));
                acc.merge(part);
            }
            acc.finish().0
        };
        let got: Vec<(String, Option<State>)> = t.iter().map(|l| (l.author.clone(), l.state)).collect();
        ensure!(got == baseline, "shuffle {shuffle} changed assignments");
    }
    Ok(format!("1000/1000 users match, {ties} ties unassigned, 20 shuffles invariant"))
}

fn comment(i: usize, author: &str, subreddit: &str) -> CommentRecord {
    CommentRecord {
        comment_id: format!("c{i}"),
        author: author.to_string(),
        subreddit: subreddit.to_string(),
        created_utc: 1_500_000_000 + i as i64,
        body: String::new(),
        parent_id: None,
        link_id: None,
    }
}

// 6 ------------------------------------------------------------------------

fn connectivity_oracle() -> Outcome {
    let cfg = SynthConfig {
        n_states: 10,
        user_scale: 20.0,
        beta_users: 0.0,
        user_noise_sigma: 0.0,
        tie_fraction: 0.0,
        gamma: 0.5,
        interaction_rate: 0.9,
        same_state_rate: 0.5,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().map_err(err)?;
    let p = pipeline_in(dir.path(), cfg);
    run_stages(&p, &[Stage::Synth, Stage::Ingest, Stage::Classify, Stage::Geolocate, Stage::Connectivity])?;
    let synth_dir = p.stage_dir(Stage::Synth);

    // brute force straight from the raw archive and side tables
    let mut sub_state: HashMap<String, String> = HashMap::new();
    for row in csv::Reader::from_path(synth_dir.join(synth::SUBREDDITS_FILE)).map_err(err)?.records() {
        let row = row.map_err(err)?;
        sub_state.insert(row[0].to_lowercase(), row[1].to_string());
    }
    let mut centroid: HashMap<String, (f64, f64)> = HashMap::new();
    for row in csv::Reader::from_path(synth_dir.join(synth::CENTROIDS_FILE)).map_err(err)?.records() {
        let row = row.map_err(err)?;
        centroid.insert(row[0].to_string(), (row[1].parse().map_err(err)?, row[2].parse().map_err(err)?));
    }
    let archive = fs::read_to_string(synth_dir.join(synth::ARCHIVE_FILE)).map_err(err)?;
    let rows: Vec<serde_json::Value> = archive.lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(err)?;
    let s = |v: &serde_json::Value, k: &str| v[k].as_str().unwrap_or("").to_string();
    let mut author_of: HashMap<String, String> = HashMap::new();
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for r in &rows {
        author_of.insert(s(r, "id"), s(r, "author"));
        if s(r, "author") == "[deleted]" {
            continue;
        }
        if let Some(st) = sub_state.get(&s(r, "subreddit").to_lowercase()) {
            *counts.entry(s(r, "author")).or_default().entry(st.clone()).or_default() += 1;
        }
    }
    let home: BTreeMap<String, String> = counts.iter().filter_map(|(a, c)| ref_plurality(c).map(|st| (a.clone(), st.to_string()))).collect();
    ensure!(home.len() == 200, "oracle geotags {} users", home.len());

    let mut want_all: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut want_nonloc: BTreeMap<(String, String), u64> = BTreeMap::new();
    for r in &rows {
        let (author, parent) = (s(r, "author"), s(r, "parent_id"));
        let Some(parent_author) = parent.strip_prefix("t1_").and_then(|id| author_of.get(id)) else { continue };
        if author == "[deleted]" || *parent_author == author || !home.contains_key(&author) || !home.contains_key(parent_author) {
            continue;
        }
        let key = if author < *parent_author { (author, parent_author.clone()) } else { (parent_author.clone(), author) };
        *want_all.entry(key.clone()).or_default() += 1;
        if !sub_state.contains_key(&s(r, "subreddit").to_lowercase()) {
            *want_nonloc.entry(key).or_default() += 1;
        }
    }

    let conn_dir = p.stage_dir(Stage::Connectivity);
    for (scope, want) in [("all_subreddits", &want_all), ("non_location_subreddits", &want_nonloc)] {
        let mut got: BTreeMap<(String, String), u64> = BTreeMap::new();
        for row in csv::Reader::from_path(conn_dir.join(format!("pairs_{scope}.csv"))).map_err(err)?.records() {
            let row = row.map_err(err)?;
            got.insert((row[0].to_string(), row[1].to_string()), row[2].parse().map_err(err)?);
        }
        ensure!(&got == want, "{scope}: {} pairs vs oracle {}", got.len(), want.len());
    }

    let users: Vec<(&String, &String)> = home.iter().collect();
    let bin = |a: &str, b: &str| -> u64 {
        if a == b {
            0
        } else {
            (ref_distance_km(centroid[a], centroid[b]) / 100.0).round() as u64 * 100
        }
    };
    let mut possible: BTreeMap<u64, u64> = BTreeMap::new();
    let mut hits: BTreeMap<(String, u64), u64> = BTreeMap::new();
    for i in 0..users.len() {
        for j in i + 1..users.len() {
            let d = bin(users[i].1, users[j].1);
            *possible.entry(d).or_default() += 1;
            let key = if users[i].0 < users[j].0 { (users[i].0.clone(), users[j].0.clone()) } else { (users[j].0.clone(), users[i].0.clone()) };
            if want_all.contains_key(&key) {
                *hits.entry(("all_subreddits".into(), d)).or_default() += 1;
            }
            if want_nonloc.contains_key(&key) {
                *hits.entry(("non_location_subreddits".into(), d)).or_default() += 1;
            }
        }
    }
    let total: u64 = possible.values().sum();
    ensure!(total == 200 * 199 / 2, "oracle Σ possible {total}");
    let mut seen = BTreeSet::new();
    for row in csv::Reader::from_path(conn_dir.join(files::PROFILES)).map_err(err)?.records() {
        let row = row.map_err(err)?;
        let (scope, d): (String, u64) = (row[0].to_string(), row[1].parse().map_err(err)?);
        let (inter, poss): (u64, u64) = (row[2].parse().map_err(err)?, row[3].parse().map_err(err)?);
        ensure!(possible.get(&d) == Some(&poss), "{scope} d={d}: possible {poss} vs oracle {:?}", possible.get(&d));
        let want_hits = hits.get(&(scope.clone(), d)).copied().unwrap_or(0);
        ensure!(inter == want_hits, "{scope} d={d}: interacting {inter} vs oracle {want_hits}");
        seen.insert((scope, d));
    }
    ensure!(seen.len() == 2 * possible.len(), "profile has {} bins, oracle {} per scope", seen.len(), possible.len());

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(conn_dir.join(files::CONNECTIVITY)).map_err(err)?).map_err(err)?;
    let slope = summary[0]["decay_slope"].as_f64().ok_or("no decay slope")?;
    ensure!((slope + 0.5).abs() <= 0.1, "decay slope {slope:.3}, planted -0.5");
    Ok(format!("{} + {} pairs exact, {} bins exact, Σ possible = 19900, slope {slope:.3}", want_all.len(), want_nonloc.len(), possible.len()))
}

// 7 ------------------------------------------------------------------------

fn random_timelines(rng: &mut ChaCha8Rng, count: usize) -> Vec<UrlTimeline> {
    let states: Vec<State> = State::all().collect();
    (0..count)
        .map(|u| {
            let len = rng.random_range(1..=30usize);
            let pool = rng.random_range(1..=15usize);
            let t0 = rng.random_range(0..1_000_000i64);
            let events = (0..len)
                .map(|e| {
                    let a = rng.random_range(0..pool);
                    TimelineEvent {
                        created_utc: t0 + rng.random_range(0..20i64) * rng.random_range(0..40_000i64),
                        comment_id: format!("e{u}_{e}"),
                        author: format!("a{a}"),
                        // an author always posts from the same state, or none
                        state: (a % 4 != 0).then(|| states[(a * 7 + u) % states.len()]),
                        subreddit: "news".into(),
                    }
                })
                .collect();
            let t = NewsType::ALL[rng.random_range(0..4usize)];
            UrlTimeline::new(format!("http://site{u}.com/story"), t, events)
        })
        .collect()
}

fn keyed(tl: &UrlTimeline, unit: Unit) -> Vec<(i64, Option<String>)> {
    tl.events
        .iter()
        .map(|e| {
            let key = match unit {
                Unit::Authors => Some(e.author.clone()),
                Unit::States => e.state.map(|s| s.code().to_string()),
            };
            (e.created_utc, key)
        })
        .collect()
}

fn distinct(tl: &UrlTimeline, unit: Unit) -> usize {
    keyed(tl, unit).into_iter().filter_map(|e| e.1).collect::<HashSet<_>>().len()
}

fn diffusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut corpora = 0;
    for _ in 0..100 {
        let size = rng.random_range(1..80usize);
        let tls = random_timelines(&mut rng, size);
        for unit in [Unit::Authors, Unit::States] {
            let rows = diffusion::reach_distribution(&tls, unit);
            for t in NewsType::ALL {
                let curve: Vec<f64> = rows.iter().filter(|r| r.news_type == t).map(|r| r.fraction).collect();
                if curve.is_empty() {
                    continue;
                }
                ensure!(curve[0] == 1.0, "{t}/{}: reach at k=1 is {}", unit.as_str(), curve[0]);
                ensure!(curve.windows(2).all(|w| w[1] <= w[0]), "{t}/{}: reach curve rises", unit.as_str());
                let reaches: Vec<usize> = tls.iter().filter(|tl| tl.news_type == t).map(|tl| distinct(tl, unit)).filter(|&r| r > 0).collect();
                for (k, f) in curve.iter().enumerate() {
                    let want = reaches.iter().filter(|&&r| r > k).count() as f64 / reaches.len() as f64;
                    ensure!(*f == want, "{t}/{} k={}: {f} vs oracle {want}", unit.as_str(), k + 1);
                }
            }
        }
        corpora += 1;
    }

    let tls = random_timelines(&mut rng, 500);
    let mut rows_checked = 0;
    for unit in [Unit::Authors, Unit::States] {
        for tl in &tls {
            let times: Vec<i64> = (1..=distinct(tl, unit)).map(|k| tl.time_to(unit, k).expect("reachable")).collect();
            ensure!(times.windows(2).all(|w| w[0] <= w[1]), "{}: time-to-k decreases", tl.url);
            for (k, &t) in times.iter().enumerate() {
                ensure!(ref_time_to_k(&keyed(tl, unit), k + 1) == Some(t), "{} k={}: time differs from oracle", tl.url, k + 1);
            }
        }
        for filter in [ReachFilter::AtLeast, ReachFilter::Exactly] {
            for k in 2..=8 {
                for row in diffusion::cascade_times(&tls, unit, k, filter) {
                    let days: Vec<f64> = tls
                        .iter()
                        .filter(|tl| tl.news_type == row.news_type)
                        .filter(|tl| match filter {
                            ReachFilter::AtLeast => distinct(tl, unit) >= k,
                            ReachFilter::Exactly => distinct(tl, unit) == k,
                        })
                        .map(|tl| ref_time_to_k(&keyed(tl, unit), k).expect("reach") as f64 / SECONDS_PER_DAY)
                        .collect();
                    let mut sorted = days.clone();
                    sorted.sort_by(f64::total_cmp);
                    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
                    ensure!(row.n_urls == days.len(), "k={k}: {} urls vs {}", row.n_urls, days.len());
                    ensure!(row.mean_days == mean, "k={k} {}: mean {} vs {mean}", row.news_type, row.mean_days);
                    ensure!(row.median_days == ref_median(&days), "k={k} {}: median {} vs {}", row.news_type, row.median_days, ref_median(&days));
                    rows_checked += 1;
                }
            }
        }
    }
    Ok(format!("{corpora} fuzzed corpora monotone; 500 timelines, {rows_checked} cascade rows exact"))
}

// 8 ------------------------------------------------------------------------

fn random_graph(rng: &mut ChaCha8Rng) -> (Vec<State>, Vec<(usize, usize, u32)>) {
    let mut states: Vec<State> = State::all().collect();
    states.shuffle(rng);
    let n = rng.random_range(3..=30usize);
    states.truncate(n);
    let density = rng.random_range(0.05..0.6);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(density) {
                edges.push((a, b, rng.random_range(1..=5u32)));
            }
        }
    }
    if edges.len() < 2 {
        edges.push((0, 1, 1));
        edges.push((1, 2, 2));
    }
    (states, edges)
}

fn to_graph(states: &[State], edges: &[(usize, usize, u32)]) -> StateGraph {
    let mut g = StateGraph::empty(InferenceRule::Chain);
    for &(a, b, w) in edges {
        g.add_edge(states[a], states[b], w as f64);
    }
    g
}

fn contagion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tls = random_timelines(&mut rng, 400);
    let mut urls = 0;
    for tl in &tls {
        let seq = tl.state_sequence();
        if seq.len() < 2 {
            continue;
        }
        let one = std::slice::from_ref(tl);
        let chain = contagion::infer_state_network(one, tl.news_type, 2, InferenceRule::Chain);
        let star = contagion::infer_state_network(one, tl.news_type, 2, InferenceRule::Star);
        let want = (seq.len() - 1) as f64;
        ensure!(chain.total_weight() == want && star.total_weight() == want, "{}: chain {} star {} want {want}", tl.url, chain.total_weight(), star.total_weight());
        urls += 1;
    }

    let (mut pr_dev, mut sum_dev) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let (states, edges) = random_graph(&mut rng);
        let g = to_graph(&states, &edges);
        let order: Vec<State> = g.nodes.iter().copied().collect();
        let idx: HashMap<State, usize> = order.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let dense_edges: Vec<(usize, usize, f64)> = edges.iter().map(|&(a, b, w)| (idx[&states[a]], idx[&states[b]], w as f64)).collect();
        let want = ref_pagerank(order.len(), &dense_edges, 0.85);
        let got = contagion::pagerank(&g, 0.85, 1e-10, 200).map_err(err)?;
        let sum: f64 = got.values().sum();
        sum_dev = sum_dev.max((sum - 1.0).abs());
        for (s, w) in order.iter().zip(&want) {
            pr_dev = pr_dev.max((got[s] - w).abs());
        }
        ensure!(pr_dev < 1e-8, "graph {case}: PageRank deviation {pr_dev:e}");
        ensure!(sum_dev < 1e-12, "graph {case}: PageRank sums to 1{:+e}", sum - 1.0);
    }

    let mut as_dev = 0.0f64;
    for case in 0..50 {
        let (states, edges) = random_graph(&mut rng);
        let attr: Vec<f64> = states.iter().map(|_| rng.random_range(-2.0..5.0)).collect();
        let by_state: BTreeMap<State, f64> = states.iter().copied().zip(attr.iter().copied()).collect();
        let got = contagion::assortativity(&to_graph(&states, &edges), &by_state).map_err(err)?;
        let want = ref_assortativity(&edges, &attr);
        as_dev = as_dev.max((got - want).abs());
        ensure!(as_dev < 1e-10, "graph {case}: assortativity {got} vs {want}");
    }
    let states: Vec<State> = State::all().take(5).collect();
    let attr: BTreeMap<State, f64> = states.iter().enumerate().map(|(i, s)| (*s, (i + 1) as f64)).collect();
    let plus = contagion::assortativity(&to_graph(&states, &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1)]), &attr).map_err(err)?;
    let minus = contagion::assortativity(&to_graph(&states, &[(0, 4, 1), (1, 3, 1), (3, 1, 1), (4, 0, 1)]), &attr).map_err(err)?;
    ensure!((plus - 1.0).abs() < 1e-12 && (minus + 1.0).abs() < 1e-12, "perfect fixtures gave {plus}, {minus}");
    Ok(format!("{urls} URLs chain=star=#states−1; PageRank dev {pr_dev:.1e}, Σ−1 {sum_dev:.1e}; assortativity dev {as_dev:.1e}; ±1 fixtures"))
}

// 9 ------------------------------------------------------------------------

fn classification_fixture() -> Outcome {
    let labels = [NewsType::Fake, NewsType::Lowcred, NewsType::Satire, NewsType::Reputable];
    let files: Vec<(std::path::PathBuf, NewsType)> = labels.iter().map(|t| (fixture(&format!("catalog/{t}.txt")), *t)).collect();
    let cat = catalog::load_catalog(&files).map_err(err)?;

    // severity by set difference
    let sets: Vec<BTreeSet<String>> = files.iter().map(|(p, _)| fs::read_to_string(p).map(|t| ref_domain_set(&t))).collect::<Result<_, _>>().map_err(err)?;
    let mut claimed: BTreeSet<String> = BTreeSet::new();
    let mut oracle_label: BTreeMap<String, NewsType> = BTreeMap::new();
    let mut oracle_counts = [0usize; 4];
    for (set, t) in sets.iter().zip(labels) {
        for d in set.difference(&claimed.clone()) {
            oracle_label.insert(d.clone(), t);
            oracle_counts[t.index()] += 1;
        }
        claimed.extend(set.iter().cloned());
    }
    let counts = cat.label_counts();
    ensure!(oracle_counts[..3] == [933, 1801, 110], "oracle counts {oracle_counts:?}");
    ensure!(counts == oracle_counts, "catalog counts {counts:?} vs oracle {oracle_counts:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let domains: Vec<&String> = oracle_label.keys().collect();
    for _ in 0..2000 {
        let base = domains.choose(&mut rng).unwrap();
        let host = match rng.random_range(0..4) {
            0 => base.to_string(),
            1 => format!("m.{base}"),
            2 => format!("a.b.{base}"),
            _ => format!("x{base}"),
        };
        let got = cat.match_host(&host).map(|(d, l)| (d.to_string(), l));
        let want = ref_suffix_match(&host, &oracle_label).map(|(d, l)| (d.to_string(), *l));
        ensure!(got == want, "{host}: {got:?} vs {want:?}");
    }

    let text = fs::read_to_string(fixture("trust_scores.csv")).map_err(err)?;
    let mut scored: BTreeMap<String, f64> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let (d, v) = line.split_once(',').ok_or("bad trust line")?;
        scored.insert(ref_clean(d).ok_or("bad domain")?, v.trim().parse().map_err(err)?);
    }
    let mut sums = [0.0f64; 4];
    let mut n = [0usize; 4];
    for (d, v) in &scored {
        if let Some(t) = oracle_label.get(d) {
            sums[t.index()] += v;
            n[t.index()] += 1;
        }
    }
    let scores = catalog::read_trust_scores(text.as_bytes()).map_err(err)?;
    let summary = catalog::validate_trust_scores(&cat, &scores);
    for t in labels {
        let want = (sums[t.index()] / n[t.index()] as f64, n[t.index()]);
        let got = (summary.means[t.index()].ok_or(format!("no mean for {t}"))?, summary.scored[t.index()]);
        ensure!(got == want, "{t}: {got:?} vs hand {want:?}");
    }
    ensure!(summary.ordered, "fixture means not ordered reputable > lowcred > fake");
    let means = summary.means.map(|m| m.unwrap_or(f64::NAN));
    Ok(format!(
        "counts 933/1801/110/{}; suffix matches agree on 2000 hosts; trust means {:.4}/{:.4}/{:.4}/{:.4} exact; reference trust fixture not supplied, ordering checked on the shipped one",
        counts[3], means[0], means[1], means[2], means[3]
    ))
}

// 10 -----------------------------------------------------------------------

fn tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != geocirc::pipeline::MANIFEST_FILE) {
                let rel = path.strip_prefix(dir).map_err(err)?.to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).map_err(err)?);
            }
        }
    }
    Ok(out)
}

fn end_to_end() -> Outcome {
    let mut runs = Vec::new();
    let mut times = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(err)?;
        let p = pipeline_in(dir.path(), SynthConfig::default());
        let start = Instant::now();
        p.run(Stage::Synth).map_err(err)?;
        p.run_all().map_err(err)?;
        times.push(start.elapsed().as_secs_f64());
        let ledger = read_ledger(&p)?;
        ensure!(ledger.comments == 100_000, "archive has {} comments", ledger.comments);
        let checks: Vec<geocirc::pipeline::LedgerCheck> =
            serde_json::from_slice(&fs::read(p.stage_dir(Stage::Report).join(files::LEDGER_CHECKS)).map_err(err)?).map_err(err)?;
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        ensure!(failed.is_empty(), "ledger checks failed: {failed:?}");
        runs.push((tree(dir.path())?, checks.len()));
    }
    let (a, b) = (&runs[0].0, &runs[1].0);
    ensure!(a.keys().eq(b.keys()), "rerun produced a different file set");
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure!(differing.is_empty(), "files differ between reruns: {differing:?}");
    let slowest = times.iter().copied().fold(0.0, f64::max);
    ensure!(slowest < 60.0, "single-threaded run took {slowest:.1}s");
    Ok(format!("{} files byte-identical across reruns; {} ledger checks pass; {slowest:.2}s single-threaded", a.len(), runs[0].1))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("scaling recovery", scaling_recovery),
        ("residual orthogonality", residual_orthogonality),
        ("OLS/AIC oracle", ols_oracle),
        ("stepwise selection", stepwise_selection),
        ("geolocation", geolocation_fixture),
        ("connectivity", connectivity_oracle),
        ("diffusion", diffusion_oracle),
        ("contagion", contagion_oracle),
        ("classification", classification_fixture),
        ("end-to-end", end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS }
}
