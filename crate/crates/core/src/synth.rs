//! Seeded synthetic comment archives with a ledger of every planted quantity.
//!
//! Each concern (users, news volume, cascades, interactions, filler,
//! attributes, catalog) draws from its own ChaCha stream derived from the
//! master seed, so changing one planted feature leaves the draws of the
//! others untouched. Output is byte-identical for a given configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::attribute_names;
use crate::catalog::NewsType;
use crate::ingest::DELETED_AUTHOR;
use crate::interaction::{pair_key, state_pair_bins, StateCentroids};
use crate::states::State;

/// 2016-01-01T00:00:00Z.
pub const WINDOW_START: i64 = 1_451_606_400;
pub const WINDOW_DAYS: f64 = 1461.0;

const GENERAL_SUBREDDITS: [&str; 8] = [
    "news",
    "politics",
    "worldnews",
    "askreddit",
    "technology",
    "science",
    "conspiracy",
    "todayilearned",
];
const NON_NEWS_HOSTS: [&str; 4] = ["youtube.com", "imgur.com", "wikipedia.org", "github.com"];
/// Listed under both fake and reputable; the severity rule makes it fake.
pub const CONTESTED_DOMAIN: &str = "contested-bulletin.com";

mod stream {
    pub const USERS: u64 = 1;
    pub const NEWS: u64 = 2;
    pub const CASCADES: u64 = 3;
    pub const INTERACTIONS: u64 = 4;
    pub const FILLER: u64 = 5;
    pub const ATTRIBUTES: u64 = 6;
    pub const CATALOG: u64 = 7;
}

#[derive(Debug, Error)]
pub enum SynthError {
    /// `key` is the offending configuration field, dotted for nested ones.
    #[error("infeasible synthetic configuration at `{key}`: {message}")]
    Infeasible { key: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Volume model for one news type: `count = scale * users^beta * exp(eps)`
/// where `eps` is a linear signal over standardized attributes plus
/// Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewsPlan {
    pub beta: f64,
    pub scale: f64,
    pub noise_sigma: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl Default for NewsPlan {
    fn default() -> Self {
        NewsPlan {
            beta: 1.0,
            scale: 0.1,
            noise_sigma: 0.1,
            coefficients: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewsPlans {
    pub fake: NewsPlan,
    pub lowcred: NewsPlan,
    pub satire: NewsPlan,
    pub reputable: NewsPlan,
}

impl NewsPlans {
    pub fn get(&self, t: NewsType) -> &NewsPlan {
        match t {
            NewsType::Fake => &self.fake,
            NewsType::Lowcred => &self.lowcred,
            NewsType::Satire => &self.satire,
            NewsType::Reputable => &self.reputable,
        }
    }

    pub fn get_mut(&mut self, t: NewsType) -> &mut NewsPlan {
        match t {
            NewsType::Fake => &mut self.fake,
            NewsType::Lowcred => &mut self.lowcred,
            NewsType::Satire => &mut self.satire,
            NewsType::Reputable => &mut self.reputable,
        }
    }
}

impl Default for NewsPlans {
    fn default() -> Self {
        let plan = |beta, scale, noise_sigma| NewsPlan {
            beta,
            scale,
            noise_sigma,
            coefficients: BTreeMap::new(),
        };
        NewsPlans {
            fake: plan(0.9, 0.15, 0.2),
            lowcred: plan(1.1, 0.25, 0.2),
            satire: plan(1.0, 0.08, 0.2),
            reputable: plan(1.0, 2.0, 0.15),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// The first `n_states` states in alphabetical order take part.
    pub n_states: usize,
    /// Geotagged users per million residents at `beta_users = 1`.
    pub user_scale: f64,
    pub beta_users: f64,
    pub user_noise_sigma: f64,
    pub min_users_per_state: u64,
    pub home_posts_mean: f64,
    /// Users who also post, less often, in a second state's subreddits.
    pub multi_state_fraction: f64,
    /// Users with exactly tied counts in two states, as a fraction of the
    /// geotagged users.
    pub tie_fraction: f64,
    /// Users who never post in a location subreddit.
    pub untagged_users: usize,
    pub news: NewsPlans,
    /// Extra news comments by non-geotagged users, relative to the geotagged
    /// volume of each type.
    pub untagged_news_fraction: f64,
    /// News comments written as `[url](url)`, yielding two mentions.
    pub double_link_fraction: f64,
    pub sites_per_type: usize,
    pub cascade_size_exponent: f64,
    pub cascade_max_size: usize,
    pub cascade_gap_days: f64,
    /// Planted distance decay: P(pair interacts) = rate * (d / 100 km)^-gamma.
    pub gamma: f64,
    pub interaction_rate: f64,
    pub same_state_rate: f64,
    pub extra_replies_mean: f64,
    pub location_reply_fraction: f64,
    pub orphan_replies: usize,
    pub deleted_fraction: f64,
    /// Filler comments pad the archive up to this size.
    pub total_comments: usize,
    pub non_news_url_fraction: f64,
    /// States with a blank `cultural_tightness` cell.
    pub missing_attribute_states: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 20_191_231,
            n_states: 50,
            user_scale: 9.0,
            beta_users: 1.0,
            user_noise_sigma: 0.1,
            min_users_per_state: 3,
            home_posts_mean: 3.0,
            multi_state_fraction: 0.1,
            tie_fraction: 0.03,
            untagged_users: 1500,
            news: NewsPlans::default(),
            untagged_news_fraction: 0.3,
            double_link_fraction: 0.05,
            sites_per_type: 40,
            cascade_size_exponent: 2.0,
            cascade_max_size: 60,
            cascade_gap_days: 20.0,
            gamma: 0.5,
            interaction_rate: 0.0015,
            same_state_rate: 0.01,
            extra_replies_mean: 0.5,
            location_reply_fraction: 0.2,
            orphan_replies: 200,
            deleted_fraction: 0.05,
            total_comments: 100_000,
            non_news_url_fraction: 0.1,
            missing_attribute_states: 2,
        }
    }
}

fn infeasible(key: &str, message: impl Into<String>) -> SynthError {
    SynthError::Infeasible {
        key: key.to_string(),
        message: message.into(),
    }
}

fn fraction(name: &str, v: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(infeasible(name, format!("{v} is not in [0, 1]")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<(), SynthError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(infeasible(name, format!("{v} must be finite and non-negative")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(1..=50).contains(&self.n_states) {
            return Err(infeasible("n_states", format!("{} is not in 1..=50", self.n_states)));
        }
        for (name, v) in [
            ("multi_state_fraction", self.multi_state_fraction),
            ("double_link_fraction", self.double_link_fraction),
            ("interaction_rate", self.interaction_rate),
            ("same_state_rate", self.same_state_rate),
            ("location_reply_fraction", self.location_reply_fraction),
            ("deleted_fraction", self.deleted_fraction),
            ("non_news_url_fraction", self.non_news_url_fraction),
        ] {
            fraction(name, v)?;
        }
        for (name, v) in [
            ("user_noise_sigma", self.user_noise_sigma),
            ("tie_fraction", self.tie_fraction),
            ("untagged_news_fraction", self.untagged_news_fraction),
            ("extra_replies_mean", self.extra_replies_mean),
            ("gamma", self.gamma),
        ] {
            nonneg(name, v)?;
        }
        if !(self.user_scale.is_finite() && self.user_scale > 0.0) {
            return Err(infeasible("user_scale", "must be positive"));
        }
        if !self.beta_users.is_finite() {
            return Err(infeasible("beta_users", "must be finite"));
        }
        if self.home_posts_mean < 1.0 || !self.home_posts_mean.is_finite() {
            return Err(infeasible("home_posts_mean", "must be at least 1"));
        }
        if self.n_states < 2 && (self.multi_state_fraction > 0.0 || self.tie_fraction > 0.0) {
            return Err(infeasible("n_states", "multi-state and tied users need at least two states"));
        }
        if self.cascade_max_size == 0 {
            return Err(infeasible("cascade_max_size", "must be positive"));
        }
        if self.sites_per_type == 0 {
            return Err(infeasible("sites_per_type", "must be positive"));
        }
        if !(self.cascade_gap_days > 0.0 && self.cascade_gap_days.is_finite()) {
            return Err(infeasible("cascade_gap_days", "must be positive"));
        }
        if !self.cascade_size_exponent.is_finite() {
            return Err(infeasible("cascade_size_exponent", "must be finite"));
        }
        if self.missing_attribute_states > self.n_states {
            return Err(infeasible(
                "missing_attribute_states",
                format!("{} exceeds n_states = {}", self.missing_attribute_states, self.n_states),
            ));
        }
        for t in NewsType::ALL {
            let p = self.news.get(t);
            if !(p.scale.is_finite() && p.scale > 0.0) {
                return Err(infeasible(&format!("news.{t}.scale"), "must be positive"));
            }
            if !p.beta.is_finite() {
                return Err(infeasible(&format!("news.{t}.beta"), "must be finite"));
            }
            nonneg(&format!("news.{t}.noise_sigma"), p.noise_sigma)?;
            for (name, c) in &p.coefficients {
                if name == "adoption" || !attribute_names().any(|a| a == name) {
                    return Err(infeasible(
                        &format!("news.{t}.coefficients.{name}"),
                        "not a generated attribute",
                    ));
                }
                if !c.is_finite() {
                    return Err(infeasible(&format!("news.{t}.coefficients.{name}"), "is not finite"));
                }
            }
        }
        Ok(())
    }

    pub fn states(&self) -> Vec<State> {
        State::all().take(self.n_states).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub created_utc: i64,
    pub comment_id: String,
    pub author: String,
    pub state: Option<State>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerTimeline {
    pub url: String,
    pub news_type: NewsType,
    /// Events by non-deleted authors, in emission order.
    pub events: Vec<LedgerEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerPair {
    pub a: String,
    pub b: String,
    pub replies: u64,
    pub non_location_replies: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTally {
    pub unique_comments: u64,
    pub unique_users: u64,
    pub unique_sites: u64,
    pub unique_urls: u64,
    pub mentions: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerCohort {
    pub users: u64,
    pub comments: u64,
    pub sharers: [u64; 4],
}

/// Everything the generator planted, in a form tests can check against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub seed: u64,
    pub states: Vec<State>,
    pub comments: u64,
    pub deleted_comments: u64,
    /// Every URL occurrence written into a body.
    pub url_mentions: u64,
    pub beta_users: f64,
    pub betas: [f64; 4],
    pub gamma: f64,
    pub users_per_state: BTreeMap<State, u64>,
    /// Every author with at least one location-subreddit comment.
    pub assignments: BTreeMap<String, Option<State>>,
    pub tie_users: u64,
    pub multi_state_users: u64,
    pub untagged_users: u64,
    /// Distinct news comments by geotagged authors per state and type.
    pub state_counts: BTreeMap<State, [u64; 4]>,
    /// Planted log-volume deviation per type and state.
    pub residuals: [BTreeMap<State, f64>; 4],
    pub tallies: [LedgerTally; 4],
    pub catalog_counts: [u64; 4],
    pub trust_means: [Option<f64>; 4],
    pub timelines: Vec<LedgerTimeline>,
    pub pairs: Vec<LedgerPair>,
    pub orphan_replies: u64,
    pub geotagged: LedgerCohort,
    pub non_geotagged: LedgerCohort,
}

/// A generated archive plus every side file a pipeline run needs.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub archive: Vec<u8>,
    pub ledger: Ledger,
    pub subreddits_csv: String,
    pub populations_csv: String,
    pub centroids_csv: String,
    pub attributes_csv: String,
    pub catalog_lists: [String; 4],
    pub trust_csv: String,
}

pub const ARCHIVE_FILE: &str = "archive.ndjson";
pub const LEDGER_FILE: &str = "ledger.json";
pub const SUBREDDITS_FILE: &str = "subreddits.csv";
pub const POPULATIONS_FILE: &str = "populations.csv";
pub const CENTROIDS_FILE: &str = "centroids.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const TRUST_FILE: &str = "trust_scores.csv";

pub fn catalog_file(t: NewsType) -> String {
    format!("catalog_{t}.txt")
}

impl SynthOutput {
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ARCHIVE_FILE), &self.archive)?;
        fs::write(dir.join(LEDGER_FILE), serde_json::to_vec_pretty(&self.ledger)?)?;
        fs::write(dir.join(SUBREDDITS_FILE), &self.subreddits_csv)?;
        fs::write(dir.join(POPULATIONS_FILE), &self.populations_csv)?;
        fs::write(dir.join(CENTROIDS_FILE), &self.centroids_csv)?;
        fs::write(dir.join(ATTRIBUTES_FILE), &self.attributes_csv)?;
        fs::write(dir.join(TRUST_FILE), &self.trust_csv)?;
        for t in NewsType::ALL {
            fs::write(dir.join(catalog_file(t)), &self.catalog_lists[t.index()])?;
        }
        Ok(())
    }
}

fn rng_for(seed: u64, concern: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(concern);
    rng
}

fn base36(mut n: u64) -> String {
    const DIGITS: &[u8; 36] = b"0123456789abcdefghijklmnopqrstuvwxyz";
    let mut out = Vec::new();
    loop {
        out.push(DIGITS[(n % 36) as usize]);
        n /= 36;
        if n == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).expect("ascii digits")
}

fn local_subreddits(s: State) -> [String; 2] {
    let code = s.code().to_ascii_lowercase();
    [format!("{code}_local"), format!("{code}_city")]
}

fn site_domain(t: NewsType, j: usize) -> String {
    match t {
        NewsType::Fake => format!("fakeherald{j}.com"),
        NewsType::Lowcred => format!("lowcredpost{j}.net"),
        NewsType::Satire => format!("satiretimes{j}.org"),
        NewsType::Reputable => format!("dailyrecord{j}.com"),
    }
}

/// Raw archive line in the dump's field naming.
#[derive(Serialize)]
struct RawComment {
    id: String,
    author: String,
    subreddit: String,
    created_utc: i64,
    body: String,
    parent_id: String,
    link_id: String,
}

struct User {
    name: String,
    primary: Option<State>,
    home_ids: Vec<String>,
}

struct Builder {
    next: u64,
    records: Vec<RawComment>,
    per_author: BTreeMap<String, u64>,
    url_mentions: u64,
    deleted: u64,
}

impl Builder {
    fn emit(&mut self, author: &str, subreddit: &str, created_utc: i64, body: String, parent: Option<&str>) -> String {
        // Offset keeps every id at six base-36 digits.
        let id = base36(self.next + 36u64.pow(5));
        self.next += 1;
        let post = format!("t3_p{}", base36(self.next));
        let parent_id = parent.map_or_else(|| post.clone(), |p| format!("t1_{p}"));
        if author == DELETED_AUTHOR {
            self.deleted += 1;
        } else {
            *self.per_author.entry(author.to_string()).or_default() += 1;
        }
        self.records.push(RawComment {
            id: id.clone(),
            author: author.to_string(),
            subreddit: subreddit.to_string(),
            created_utc,
            body,
            parent_id,
            link_id: post,
        });
        id
    }
}

fn uniform_time(rng: &mut ChaCha8Rng) -> i64 {
    WINDOW_START + (rng.random::<f64>() * WINDOW_DAYS * 86_400.0) as i64
}

fn general(rng: &mut ChaCha8Rng) -> &'static str {
    GENERAL_SUBREDDITS.choose(rng).expect("non-empty")
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

struct Attributes {
    csv: String,
    /// Standardized values over the participating states; missing cells are 0.
    z: BTreeMap<String, BTreeMap<State, f64>>,
}

fn generate_attributes(cfg: &SynthConfig, states: &[State]) -> Result<Attributes, SynthError> {
    let mut rng = rng_for(cfg.seed, stream::ATTRIBUTES);
    let mut missing: Vec<State> = states.to_vec();
    missing.shuffle(&mut rng);
    missing.truncate(cfg.missing_attribute_states);
    let columns: Vec<&str> = attribute_names().filter(|a| *a != "adoption").collect();
    let mut values: BTreeMap<&str, BTreeMap<State, f64>> = BTreeMap::new();
    for &s in states {
        for &c in &columns {
            let v = match c {
                "cultural_tightness" => 50.0 + normal(&mut rng, 15.0),
                "density" => (4.5 + normal(&mut rng, 1.2)).exp(),
                "gdp" => 60_000.0 + normal(&mut rng, 9_000.0),
                "minority" => rng.random_range(5.0..60.0),
                "no_highschool" => rng.random_range(6.0..18.0),
                "population" => s.population_2019() as f64,
                "political" => normal(&mut rng, 1.0),
                "republican" => normal(&mut rng, 8.0),
                "swing_state" => f64::from(u8::from(rng.random_bool(0.2))),
                _ => 50.0 + normal(&mut rng, 8.0),
            };
            if !(c == "cultural_tightness" && missing.contains(&s)) {
                values.entry(c).or_default().insert(s, v);
            }
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["state"];
    header.extend(&columns);
    w.write_record(&header)?;
    for &s in states {
        let mut row = vec![s.code().to_string()];
        for &c in &columns {
            row.push(values[c].get(&s).map_or_else(String::new, |v| match c {
                "population" | "swing_state" => format!("{v:.0}"),
                _ => format!("{v:.4}"),
            }));
        }
        w.write_record(&row)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8 csv");

    let mut z = BTreeMap::new();
    for (&c, col) in &values {
        let xs: Vec<f64> = col.values().copied().collect();
        let m = crate::stats::mean(&xs);
        let sd = crate::stats::sample_sd(&xs);
        let zc: BTreeMap<State, f64> = states
            .iter()
            .map(|s| {
                let v = col.get(s).map_or(0.0, |v| if sd > 0.0 { (v - m) / sd } else { 0.0 });
                (*s, v)
            })
            .collect();
        z.insert(c.to_string(), zc);
    }
    Ok(Attributes { csv, z })
}

struct Catalog {
    lists: [String; 4],
    counts: [u64; 4],
    trust_csv: String,
    trust_means: [Option<f64>; 4],
}

fn generate_catalog(cfg: &SynthConfig) -> Catalog {
    let mut rng = rng_for(cfg.seed, stream::CATALOG);
    let listed = cfg.sites_per_type + cfg.sites_per_type.div_ceil(2);
    let mut lists: [String; 4] = Default::default();
    let mut counts = [0u64; 4];
    let mut trust = String::from("domain,score\n");
    let mut sums = [(0.0f64, 0u64); 4];
    for t in NewsType::ALL {
        let out = &mut lists[t.index()];
        out.push_str(&format!("# synthetic {t} domains\n"));
        for j in 0..listed {
            let d = site_domain(t, j);
            // A few lines carry the noise real lists do.
            match j % 7 {
                3 => out.push_str(&format!("www.{d}\n")),
                5 => out.push_str(&format!("https://{d}/\n")),
                _ => out.push_str(&format!("{d}\n")),
            }
            counts[t.index()] += 1;
            let range = match t {
                NewsType::Fake => Some(0.0..0.1),
                NewsType::Lowcred => Some(0.05..0.3),
                NewsType::Reputable => Some(0.55..0.85),
                NewsType::Satire => None,
            };
            if let Some(range) = range {
                if rng.random_bool(0.9) {
                    let score: f64 = (rng.random_range::<f64, _>(range) * 1e4).round() / 1e4;
                    trust.push_str(&format!("{d},{score:.4}\n"));
                    sums[t.index()].0 += score;
                    sums[t.index()].1 += 1;
                }
            }
        }
    }
    lists[NewsType::Fake.index()].push_str(&format!("{CONTESTED_DOMAIN}\n"));
    lists[NewsType::Reputable.index()].push_str(&format!("{CONTESTED_DOMAIN}\n"));
    counts[NewsType::Fake.index()] += 1;
    Catalog {
        lists,
        counts,
        trust_csv: trust,
        trust_means: sums.map(|(s, n)| (n > 0).then(|| s / n as f64)),
    }
}

struct Population {
    users: Vec<User>,
    by_state: BTreeMap<State, Vec<usize>>,
    /// Indices of tied and untagged users.
    ungeotagged: Vec<usize>,
    multi_state: u64,
    ties: u64,
    untagged: u64,
}

fn generate_users(cfg: &SynthConfig, states: &[State], b: &mut Builder) -> Result<Population, SynthError> {
    let mut rng = rng_for(cfg.seed, stream::USERS);
    let home_extra = cfg.home_posts_mean - 1.0;
    let mut users = Vec::new();
    let mut by_state: BTreeMap<State, Vec<usize>> = BTreeMap::new();
    let mut multi_state = 0;

    let post_home = |b: &mut Builder, rng: &mut ChaCha8Rng, name: &str, s: State, n: u64| -> Vec<String> {
        let subs = local_subreddits(s);
        (0..n)
            .map(|_| {
                let sub = subs.choose(rng).expect("two subreddits").clone();
                let t = uniform_time(rng);
                b.emit(name, &sub, t, "what's going on around here?".into(), None)
            })
            .collect()
    };

    for &s in states {
        let pop_m = s.population_2019() as f64 / 1e6;
        let expected = cfg.user_scale * pop_m.powf(cfg.beta_users) * normal(&mut rng, cfg.user_noise_sigma).exp();
        let n = (expected.round() as u64).max(cfg.min_users_per_state);
        for j in 0..n {
            let name = format!("u{}{j:04}", s.code().to_ascii_lowercase());
            let mut count = 1 + poisson(&mut rng, home_extra);
            let second = if states.len() > 1 && rng.random_bool(cfg.multi_state_fraction) {
                count = count.max(2);
                let others: Vec<State> = states.iter().copied().filter(|o| *o != s).collect();
                let o = *others.choose(&mut rng).expect("another state");
                Some((o, rng.random_range(1..count)))
            } else {
                None
            };
            let mut home_ids = post_home(b, &mut rng, &name, s, count);
            if let Some((o, k)) = second {
                multi_state += 1;
                home_ids.extend(post_home(b, &mut rng, &name, o, k));
            }
            by_state.entry(s).or_default().push(users.len());
            users.push(User {
                name,
                primary: Some(s),
                home_ids,
            });
        }
    }

    let geotagged = users.len();
    let ties = (cfg.tie_fraction * geotagged as f64).round() as usize;
    if ties > geotagged {
        return Err(infeasible(
            "tie_fraction",
            format!("{ties} tied users requested but only {geotagged} geotagged users exist"),
        ));
    }
    let mut ungeotagged = Vec::new();
    for j in 0..ties {
        let name = format!("tie{j:05}");
        let pair: Vec<State> = states.choose_multiple(&mut rng, 2).copied().collect();
        let count = 1 + poisson(&mut rng, home_extra);
        let mut home_ids = post_home(b, &mut rng, &name, pair[0], count);
        home_ids.extend(post_home(b, &mut rng, &name, pair[1], count));
        ungeotagged.push(users.len());
        users.push(User {
            name,
            primary: None,
            home_ids,
        });
    }
    for j in 0..cfg.untagged_users {
        ungeotagged.push(users.len());
        users.push(User {
            name: format!("anon{j:05}"),
            primary: None,
            home_ids: Vec::new(),
        });
    }
    Ok(Population {
        users,
        by_state,
        ungeotagged,
        multi_state,
        ties: ties as u64,
        untagged: cfg.untagged_users as u64,
    })
}

struct News {
    timelines: Vec<LedgerTimeline>,
    state_counts: BTreeMap<State, [u64; 4]>,
    residuals: [BTreeMap<State, f64>; 4],
    tallies: [LedgerTally; 4],
    sharers: [BTreeSet<String>; 4],
}

fn generate_news(
    cfg: &SynthConfig,
    states: &[State],
    pop: &Population,
    attrs: &Attributes,
    b: &mut Builder,
) -> News {
    let mut rng = rng_for(cfg.seed, stream::NEWS);
    let mut crng = rng_for(cfg.seed, stream::CASCADES);
    let sizes: Vec<f64> = (1..=cfg.cascade_max_size)
        .map(|k| (k as f64).powf(-cfg.cascade_size_exponent))
        .collect();
    let size_dist = WeightedIndex::new(&sizes).expect("positive weights");
    let site_weights: Vec<f64> = (1..=cfg.sites_per_type).map(|k| 1.0 / k as f64).collect();
    let site_dist = WeightedIndex::new(&site_weights).expect("positive weights");
    let gap = Exp::new(1.0 / cfg.cascade_gap_days).expect("positive gap");

    let mut out = News {
        timelines: Vec::new(),
        state_counts: states.iter().map(|s| (*s, [0; 4])).collect(),
        residuals: Default::default(),
        tallies: Default::default(),
        sharers: Default::default(),
    };
    let mut url_no = 0u64;
    for t in NewsType::ALL {
        let plan = cfg.news.get(t);
        let ti = t.index();
        let mut authors: Vec<(usize, Option<State>)> = Vec::new();
        for &s in states {
            let signal: f64 = plan
                .coefficients
                .iter()
                .map(|(name, c)| c * attrs.z.get(name).and_then(|z| z.get(&s)).copied().unwrap_or(0.0))
                .sum();
            let eps = signal + normal(&mut rng, plan.noise_sigma);
            out.residuals[ti].insert(s, eps);
            let members = &pop.by_state[&s];
            let n = (plan.scale * (members.len() as f64).powf(plan.beta) * eps.exp()).round() as u64;
            out.state_counts.get_mut(&s).expect("state")[ti] = n;
            for _ in 0..n {
                authors.push((*members.choose(&mut rng).expect("members"), Some(s)));
            }
        }
        let extra = (cfg.untagged_news_fraction * authors.len() as f64).round() as usize;
        if !pop.ungeotagged.is_empty() {
            for _ in 0..extra {
                authors.push((*pop.ungeotagged.choose(&mut rng).expect("pool"), None));
            }
        }

        authors.shuffle(&mut crng);
        let mut urls: Vec<String> = Vec::new();
        let mut sites = BTreeSet::new();
        let mut users = BTreeSet::new();
        let mut rest = &authors[..];
        while !rest.is_empty() {
            let size = (size_dist.sample(&mut crng) + 1).min(rest.len());
            let (chunk, tail) = rest.split_at(size);
            rest = tail;
            let domain = site_domain(t, site_dist.sample(&mut crng));
            let host = match crng.random_range(0..10) {
                0..=6 => domain.clone(),
                7 | 8 => format!("www.{domain}"),
                _ => format!("m.{domain}"),
            };
            url_no += 1;
            let url = format!("https://{host}/story/{t}-{url_no}");
            sites.insert(domain);
            urls.push(url.clone());
            let mut ts = WINDOW_START + (crng.random::<f64>() * WINDOW_DAYS * 0.75 * 86_400.0) as i64;
            let mut events = Vec::with_capacity(chunk.len());
            for (k, &(ui, state)) in chunk.iter().enumerate() {
                if k > 0 {
                    ts += (gap.sample(&mut crng) * 86_400.0) as i64;
                }
                let user = &pop.users[ui];
                let (body, mentions) = news_body(&mut crng, cfg, &url, url_no);
                b.url_mentions += mentions.0 + mentions.1;
                out.tallies[ti].mentions += mentions.0;
                let id = b.emit(&user.name, general(&mut crng), ts, body, None);
                users.insert(user.name.clone());
                out.sharers[ti].insert(user.name.clone());
                events.push(LedgerEvent {
                    created_utc: ts,
                    comment_id: id,
                    author: user.name.clone(),
                    state,
                });
            }
            out.timelines.push(LedgerTimeline {
                url,
                news_type: t,
                events,
            });
        }

        let deleted = (cfg.deleted_fraction * authors.len() as f64).round() as usize;
        for _ in 0..deleted {
            let url = urls.choose(&mut rng).expect("urls").clone();
            let ts = uniform_time(&mut rng);
            b.url_mentions += 1;
            out.tallies[ti].mentions += 1;
            b.emit(DELETED_AUTHOR, general(&mut rng), ts, url, None);
        }
        out.tallies[ti].unique_comments = (authors.len() + deleted) as u64;
        out.tallies[ti].unique_users = users.len() as u64;
        out.tallies[ti].unique_sites = sites.len() as u64;
        out.tallies[ti].unique_urls = urls.len() as u64;
    }
    out
}

/// Body text and (news mentions, other mentions).
fn news_body(rng: &mut ChaCha8Rng, cfg: &SynthConfig, url: &str, n: u64) -> (String, (u64, u64)) {
    let (mut body, news) = if rng.random_bool(cfg.double_link_fraction) {
        (format!("[{url}]({url})"), 2)
    } else {
        let body = match rng.random_range(0..3) {
            0 => url.to_string(),
            1 => format!("Interesting read: {url}."),
            _ => format!("Read the [source]({url}) before commenting"),
        };
        (body, 1)
    };
    let mut other = 0;
    if rng.random_bool(cfg.non_news_url_fraction) {
        let host = NON_NEWS_HOSTS.choose(rng).expect("hosts");
        body.push_str(&format!(" see also https://{host}/item/{n}"));
        other = 1;
    }
    (body, (news, other))
}

fn generate_interactions(
    cfg: &SynthConfig,
    states: &[State],
    pop: &Population,
    b: &mut Builder,
) -> Result<(Vec<LedgerPair>, u64), SynthError> {
    let mut rng = rng_for(cfg.seed, stream::INTERACTIONS);
    let bins = state_pair_bins(states, &StateCentroids::default(), 100)
        .map_err(|e| infeasible("n_states", e.to_string()))?;
    let geo: Vec<usize> = pop.by_state.values().flatten().copied().collect();
    let mut pairs = Vec::new();
    for (i, &u) in geo.iter().enumerate() {
        let su = pop.users[u].primary.expect("geotagged");
        for &v in &geo[i + 1..] {
            let sv = pop.users[v].primary.expect("geotagged");
            let key = if su <= sv { (su, sv) } else { (sv, su) };
            let p = if su == sv {
                cfg.same_state_rate
            } else {
                let d = bins[&key].max(100) as f64;
                cfg.interaction_rate * (d / 100.0).powf(-cfg.gamma)
            };
            if !rng.random_bool(p.min(1.0)) {
                continue;
            }
            let replies = 1 + poisson(&mut rng, cfg.extra_replies_mean);
            let mut non_location = 0;
            for _ in 0..replies {
                let (from, to) = if rng.random_bool(0.5) { (u, v) } else { (v, u) };
                let parent = pop.users[to].home_ids[0].clone();
                let replier = &pop.users[from];
                let sub = if rng.random_bool(cfg.location_reply_fraction) {
                    local_subreddits(replier.primary.expect("geotagged"))[0].clone()
                } else {
                    non_location += 1;
                    general(&mut rng).to_string()
                };
                let ts = uniform_time(&mut rng);
                b.emit(&replier.name, &sub, ts, "I agree with you on this".into(), Some(&parent));
            }
            let (a, bb) = pair_key(&pop.users[u].name, &pop.users[v].name);
            pairs.push(LedgerPair {
                a,
                b: bb,
                replies,
                non_location_replies: non_location,
            });
        }
    }
    let mut orphans = 0;
    if !geo.is_empty() {
        for k in 0..cfg.orphan_replies {
            let u = &pop.users[*geo.choose(&mut rng).expect("geotagged")];
            let ts = uniform_time(&mut rng);
            b.emit(&u.name, general(&mut rng), ts, "replying to something gone".into(), Some(&format!("orphan{k}")));
            orphans += 1;
        }
    }
    pairs.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    Ok((pairs, orphans))
}

fn generate_filler(cfg: &SynthConfig, pop: &Population, b: &mut Builder) {
    let mut rng = rng_for(cfg.seed, stream::FILLER);
    for &i in &pop.ungeotagged {
        let u = &pop.users[i];
        if !b.per_author.contains_key(&u.name) {
            let ts = uniform_time(&mut rng);
            b.emit(&u.name, general(&mut rng), ts, "first time here".into(), None);
        }
    }
    let mut n = 0u64;
    while b.records.len() < cfg.total_comments {
        n += 1;
        let author = if rng.random_bool(cfg.deleted_fraction) {
            DELETED_AUTHOR
        } else {
            pop.users.choose(&mut rng).map_or(DELETED_AUTHOR, |u| u.name.as_str())
        };
        let body = if rng.random_bool(cfg.non_news_url_fraction) {
            b.url_mentions += 1;
            let host = NON_NEWS_HOSTS.choose(&mut rng).expect("hosts");
            format!("look at this https://{host}/filler/{n}")
        } else {
            format!("just a comment, number {n}")
        };
        let ts = uniform_time(&mut rng);
        b.emit(author, general(&mut rng), ts, body, None);
    }
}

fn cohort(pop: &Population, b: &Builder, sharers: &[BTreeSet<String>; 4], geotagged: bool) -> LedgerCohort {
    let mut c = LedgerCohort::default();
    for u in pop.users.iter().filter(|u| u.primary.is_some() == geotagged) {
        let Some(&n) = b.per_author.get(&u.name) else {
            continue;
        };
        c.users += 1;
        c.comments += n;
        for (i, s) in sharers.iter().enumerate() {
            c.sharers[i] += u64::from(s.contains(&u.name));
        }
    }
    c
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let states = cfg.states();
    let attrs = generate_attributes(cfg, &states)?;
    let catalog = generate_catalog(cfg);
    let mut b = Builder {
        next: 0,
        records: Vec::new(),
        per_author: BTreeMap::new(),
        url_mentions: 0,
        deleted: 0,
    };
    let pop = generate_users(cfg, &states, &mut b)?;
    let news = generate_news(cfg, &states, &pop, &attrs, &mut b);
    let (pairs, orphans) = generate_interactions(cfg, &states, &pop, &mut b)?;
    generate_filler(cfg, &pop, &mut b);

    let mut assignments = BTreeMap::new();
    for u in &pop.users {
        if !u.home_ids.is_empty() {
            assignments.insert(u.name.clone(), u.primary);
        }
    }
    let ledger = Ledger {
        seed: cfg.seed,
        states: states.clone(),
        comments: b.records.len() as u64,
        deleted_comments: b.deleted,
        url_mentions: b.url_mentions,
        beta_users: cfg.beta_users,
        betas: NewsType::ALL.map(|t| cfg.news.get(t).beta),
        gamma: cfg.gamma,
        users_per_state: pop.by_state.iter().map(|(s, v)| (*s, v.len() as u64)).collect(),
        assignments,
        tie_users: pop.ties,
        multi_state_users: pop.multi_state,
        untagged_users: pop.untagged,
        state_counts: news.state_counts,
        residuals: news.residuals,
        tallies: news.tallies,
        catalog_counts: catalog.counts,
        trust_means: catalog.trust_means,
        timelines: news.timelines,
        pairs,
        orphan_replies: orphans,
        geotagged: cohort(&pop, &b, &news.sharers, true),
        non_geotagged: cohort(&pop, &b, &news.sharers, false),
    };

    b.records.sort_by(|x, y| (x.created_utc, &x.id).cmp(&(y.created_utc, &y.id)));
    let mut archive = Vec::with_capacity(b.records.len() * 160);
    for r in &b.records {
        serde_json::to_writer(&mut archive, r)?;
        archive.push(b'\n');
    }

    let mut subreddits = String::from("subreddit,state\n");
    let mut populations = String::from("state,population\n");
    let mut centroids = String::from("state,lat,lon\n");
    // Adoption needs every state's population, participating or not.
    for s in State::all() {
        populations.push_str(&format!("{},{}\n", s.code(), s.population_2019()));
    }
    for &s in &states {
        for sub in local_subreddits(s) {
            subreddits.push_str(&format!("{sub},{}\n", s.code()));
        }
        let (lat, lon) = s.center();
        centroids.push_str(&format!("{},{lat},{lon}\n", s.code()));
    }

    Ok(SynthOutput {
        archive,
        ledger,
        subreddits_csv: subreddits,
        populations_csv: populations,
        centroids_csv: centroids,
        attributes_csv: attrs.csv,
        catalog_lists: catalog.lists,
        trust_csv: catalog.trust_csv,
    })
}
