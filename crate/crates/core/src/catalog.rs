//! Labeled news-domain catalog and classification of URL mentions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{host_of, UrlMention};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("catalog is empty after loading all label files")]
    Empty,
    #[error("unknown news type `{0}` (expected fake, lowcred, satire or reputable)")]
    UnknownLabel(String),
    #[error("malformed trust-score file: {0}")]
    Scores(#[from] csv::Error),
    #[error("trust score {score} for `{domain}` is outside [0, 1]")]
    ScoreRange { domain: String, score: f64 },
}

/// Credibility label of a news domain. Variants are declared from most to
/// least severe; `Ord` follows that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewsType {
    Fake,
    Lowcred,
    Satire,
    Reputable,
}

impl NewsType {
    pub const ALL: [NewsType; 4] = [
        NewsType::Fake,
        NewsType::Lowcred,
        NewsType::Satire,
        NewsType::Reputable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NewsType::Fake => "fake",
            NewsType::Lowcred => "lowcred",
            NewsType::Satire => "satire",
            NewsType::Reputable => "reputable",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NewsType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NewsType {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fake" => Ok(NewsType::Fake),
            "lowcred" => Ok(NewsType::Lowcred),
            "satire" => Ok(NewsType::Satire),
            "reputable" | "traditional" => Ok(NewsType::Reputable),
            _ => Err(CatalogError::UnknownLabel(s.to_string())),
        }
    }
}

/// Lowercases and strips scheme, `www.`, path and trailing dots from a
/// catalog line. Returns `None` for blank lines and comments.
pub fn clean_domain(raw: &str) -> Option<String> {
    let line = raw.split('#').next()?.trim();
    if line.is_empty() {
        return None;
    }
    let lower = line.to_ascii_lowercase();
    let rest = lower
        .strip_prefix("https://")
        .or_else(|| lower.strip_prefix("http://"))
        .unwrap_or(&lower);
    let host = rest.split(['/', '?', '#']).next().unwrap_or(rest);
    let host = host.trim_end_matches('.');
    let host = host.strip_prefix("www.").unwrap_or(host);
    (!host.is_empty()).then(|| host.to_string())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCatalog {
    entries: BTreeMap<String, NewsType>,
    provenance: BTreeMap<String, BTreeSet<String>>,
}

impl DomainCatalog {
    /// Adds one labeled domain; the most severe label seen for a domain wins.
    pub fn insert(&mut self, domain: &str, label: NewsType, source: &str) {
        let Some(domain) = clean_domain(domain) else {
            return;
        };
        self.entries
            .entry(domain.clone())
            .and_modify(|l| *l = (*l).min(label))
            .or_insert(label);
        self.provenance.entry(domain).or_default().insert(source.to_string());
    }

    pub fn from_lists<'a, I, D>(lists: I) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = (&'a str, NewsType, D)>,
        D: IntoIterator,
        D::Item: AsRef<str>,
    {
        let mut catalog = DomainCatalog::default();
        for (source, label, domains) in lists {
            for d in domains {
                catalog.insert(d.as_ref(), label, source);
            }
        }
        if catalog.entries.is_empty() {
            return Err(CatalogError::Empty);
        }
        Ok(catalog)
    }

    pub fn label(&self, domain: &str) -> Option<NewsType> {
        self.entries.get(domain).copied()
    }

    pub fn sources(&self, domain: &str) -> impl Iterator<Item = &str> {
        self.provenance
            .get(domain)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NewsType)> {
        self.entries.iter().map(|(d, l)| (d.as_str(), *l))
    }

    /// Number of domains per label, indexed by [`NewsType::index`].
    pub fn label_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for label in self.entries.values() {
            counts[label.index()] += 1;
        }
        counts
    }

    /// Longest catalog entry equal to `host` or a dot-boundary suffix of it.
    pub fn match_host(&self, host: &str) -> Option<(&str, NewsType)> {
        let mut rest = host;
        loop {
            if let Some((d, l)) = self.entries.get_key_value(rest) {
                return Some((d.as_str(), *l));
            }
            rest = &rest[rest.find('.')? + 1..];
        }
    }
}

/// Reads label files, each holding one domain per line. The file stem is
/// recorded as the provenance source name.
pub fn load_catalog(label_files: &[(PathBuf, NewsType)]) -> Result<DomainCatalog, CatalogError> {
    let mut catalog = DomainCatalog::default();
    for (path, label) in label_files {
        let file = std::fs::File::open(path).map_err(|source| CatalogError::Io {
            path: path.clone(),
            source,
        })?;
        let source_name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| CatalogError::Io {
                path: path.clone(),
                source,
            })?;
            catalog.insert(&line, *label, &source_name);
        }
    }
    if catalog.is_empty() {
        return Err(CatalogError::Empty);
    }
    Ok(catalog)
}

/// Registrable catalog domain for a URL, if any entry matches its host.
pub fn normalize_domain(url: &str, catalog: &DomainCatalog) -> Option<String> {
    let host = host_of(url)?;
    catalog.match_host(&host).map(|(d, _)| d.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsComment {
    pub comment_id: String,
    pub author: String,
    pub subreddit: String,
    pub created_utc: i64,
    pub url: String,
    pub host: String,
    pub label: NewsType,
    pub domain: String,
}

/// Exact per-type distinct counts. Holds the underlying sets so shards can
/// be merged.
#[derive(Clone, Debug, Default)]
pub struct TallyAccumulator {
    comments: [HashSet<String>; 4],
    users: [HashSet<String>; 4],
    sites: [HashMap<String, u64>; 4],
    urls: [HashSet<String>; 4],
    mentions: [u64; 4],
}

impl TallyAccumulator {
    pub fn add(&mut self, nc: &NewsComment) {
        let i = nc.label.index();
        self.comments[i].insert(nc.comment_id.clone());
        // Deleted authors still count toward comment, URL and site totals.
        if nc.author != crate::ingest::DELETED_AUTHOR {
            self.users[i].insert(nc.author.clone());
        }
        *self.sites[i].entry(nc.domain.clone()).or_default() += 1;
        self.urls[i].insert(nc.url.clone());
        self.mentions[i] += 1;
    }

    pub fn merge(&mut self, other: TallyAccumulator) {
        for i in 0..4 {
            self.comments[i].extend(other.comments[i].iter().cloned());
            self.users[i].extend(other.users[i].iter().cloned());
            for (site, n) in &other.sites[i] {
                *self.sites[i].entry(site.clone()).or_default() += n;
            }
            self.urls[i].extend(other.urls[i].iter().cloned());
            self.mentions[i] += other.mentions[i];
        }
    }

    pub fn finish(&self) -> Vec<NewsTally> {
        NewsType::ALL
            .iter()
            .map(|&t| {
                let i = t.index();
                let mut top: Vec<(&String, &u64)> = self.sites[i].iter().collect();
                top.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
                NewsTally {
                    news_type: t,
                    unique_comments: self.comments[i].len() as u64,
                    unique_users: self.users[i].len() as u64,
                    unique_sites: self.sites[i].len() as u64,
                    unique_urls: self.urls[i].len() as u64,
                    mentions: self.mentions[i],
                    top_sites: top.iter().take(3).map(|(s, _)| s.as_str()).collect::<Vec<_>>().join(", "),
                }
            })
            .collect()
    }
}

/// One row of the news-comment summary table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsTally {
    pub news_type: NewsType,
    pub unique_comments: u64,
    pub unique_users: u64,
    pub unique_sites: u64,
    pub unique_urls: u64,
    pub mentions: u64,
    pub top_sites: String,
}

pub fn classify_mention(m: &UrlMention, catalog: &DomainCatalog) -> Option<NewsComment> {
    let (domain, label) = catalog.match_host(&m.host)?;
    Some(NewsComment {
        comment_id: m.comment_id.clone(),
        author: m.author.clone(),
        subreddit: m.subreddit.clone(),
        created_utc: m.created_utc,
        url: m.url.clone(),
        host: m.host.clone(),
        label,
        domain: domain.to_string(),
    })
}

/// Classifies mentions, emitting one news comment per matched URL.
pub fn classify_mentions<'a, I>(mentions: I, catalog: &DomainCatalog) -> (Vec<NewsComment>, Vec<NewsTally>)
where
    I: IntoIterator<Item = &'a UrlMention>,
{
    let mut acc = TallyAccumulator::default();
    let news: Vec<NewsComment> = mentions
        .into_iter()
        .filter_map(|m| classify_mention(m, catalog))
        .inspect(|nc| acc.add(nc))
        .collect();
    (news, acc.finish())
}

pub fn write_tallies_csv<W: Write>(out: W, tallies: &[NewsTally]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "news_type",
        "unique_comments",
        "unique_user",
        "unique_news_site",
        "unique_urls",
        "top_news_sites",
    ])?;
    for t in tallies {
        w.write_record([
            t.news_type.as_str().to_string(),
            t.unique_comments.to_string(),
            t.unique_users.to_string(),
            t.unique_sites.to_string(),
            t.unique_urls.to_string(),
            t.top_sites.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `domain,score` CSV with scores in `[0, 1]`.
pub fn read_trust_scores<R: Read>(input: R) -> Result<BTreeMap<String, f64>, CatalogError> {
    #[derive(Deserialize)]
    struct Row {
        domain: String,
        score: f64,
    }
    let mut scores = BTreeMap::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: Row = row?;
        if !(0.0..=1.0).contains(&row.score) {
            return Err(CatalogError::ScoreRange {
                domain: row.domain,
                score: row.score,
            });
        }
        if let Some(d) = clean_domain(&row.domain) {
            scores.insert(d, row.score);
        }
    }
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustSummary {
    /// Mean score per label; `None` when no scored domain carries the label.
    pub means: [Option<f64>; 4],
    pub scored: [usize; 4],
    /// Labels present in the catalog that had no scored domain.
    pub missing: Vec<NewsType>,
    /// reputable > lowcred > fake, evaluated over the labels that have means.
    pub ordered: bool,
}

pub fn validate_trust_scores(catalog: &DomainCatalog, scores: &BTreeMap<String, f64>) -> TrustSummary {
    let mut sums = [0.0; 4];
    let mut scored = [0usize; 4];
    for (domain, &score) in scores {
        if let Some(label) = catalog.label(domain) {
            sums[label.index()] += score;
            scored[label.index()] += 1;
        }
    }
    let means: [Option<f64>; 4] =
        std::array::from_fn(|i| (scored[i] > 0).then(|| sums[i] / scored[i] as f64));
    let present = catalog.label_counts();
    let missing = NewsType::ALL
        .into_iter()
        .filter(|t| present[t.index()] > 0 && scored[t.index()] == 0)
        .collect();
    let chain: Vec<f64> = [NewsType::Reputable, NewsType::Lowcred, NewsType::Fake]
        .iter()
        .filter_map(|t| means[t.index()])
        .collect();
    let ordered = chain.windows(2).all(|w| w[0] > w[1]);
    TrustSummary {
        means,
        scored,
        missing,
        ordered,
    }
}

/// Reads a catalog file in memory; used by tests and the CLI for stdin.
pub fn read_domain_list<R: Read>(input: R) -> std::io::Result<Vec<String>> {
    BufReader::new(input)
        .lines()
        .filter_map(|l| match l {
            Ok(l) => clean_domain(&l).map(Ok),
            Err(e) => Some(Err(e)),
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;

    fn mention(id: &str, author: &str, url: &str) -> UrlMention {
        UrlMention {
            comment_id: id.into(),
            author: author.into(),
            subreddit: "news".into(),
            created_utc: 1,
            url: url.into(),
            host: host_of(url).unwrap(),
        }
    }

    fn small() -> DomainCatalog {
        DomainCatalog::from_lists([
            ("a", NewsType::Reputable, vec!["nytimes.com", "bbc.co.uk"]),
            ("b", NewsType::Fake, vec!["breitbart.com", "fakesite.net"]),
        ])
        .unwrap()
    }

    #[test]
    fn severity_resolution() {
        let c = DomainCatalog::from_lists([
            ("r", NewsType::Reputable, vec!["x.com"]),
            ("f", NewsType::Fake, vec!["x.com"]),
            ("s", NewsType::Satire, vec!["x.com", "y.com"]),
        ])
        .unwrap();
        assert_eq!(c.label("x.com"), Some(NewsType::Fake));
        assert_eq!(c.label("y.com"), Some(NewsType::Satire));
        assert_eq!(c.sources("x.com").collect::<Vec<_>>(), ["f", "r", "s"]);
    }

    #[test]
    fn reloading_is_idempotent() {
        let lists = || {
            [
                ("r", NewsType::Reputable, vec!["x.com", "z.com"]),
                ("l", NewsType::Lowcred, vec!["x.com"]),
            ]
        };
        let once = DomainCatalog::from_lists(lists()).unwrap();
        let twice = DomainCatalog::from_lists(lists().into_iter().chain(lists())).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let lists: [(&str, NewsType, Vec<&str>); 1] = [("r", NewsType::Fake, vec!["# only a comment", ""])];
        assert!(matches!(DomainCatalog::from_lists(lists), Err(CatalogError::Empty)));
    }

    #[test]
    fn cleans_catalog_lines() {
        assert_eq!(clean_domain("  WWW.Foo.com/path  # note").as_deref(), Some("foo.com"));
        assert_eq!(clean_domain("https://bar.org").as_deref(), Some("bar.org"));
        assert_eq!(clean_domain("# comment"), None);
    }

    #[test]
    fn suffix_matching_respects_dot_boundary() {
        let c = small();
        assert_eq!(
            normalize_domain("https://www.nytimes.com/2019/x", &c).as_deref(),
            Some("nytimes.com")
        );
        assert_eq!(normalize_domain("https://notbreitbart.com/x", &c), None);
        assert_eq!(
            normalize_domain("https://news.bbc.co.uk/1", &c).as_deref(),
            Some("bbc.co.uk")
        );
    }

    #[test]
    fn longest_entry_wins() {
        let c = DomainCatalog::from_lists([
            ("a", NewsType::Reputable, vec!["example.com"]),
            ("b", NewsType::Satire, vec!["blog.example.com"]),
        ])
        .unwrap();
        assert_eq!(c.match_host("x.blog.example.com"), Some(("blog.example.com", NewsType::Satire)));
        assert_eq!(c.match_host("y.example.com"), Some(("example.com", NewsType::Reputable)));
    }

    #[test]
    fn two_fake_urls_one_comment() {
        let c = small();
        let ms = [
            mention("c1", "u", "https://breitbart.com/a"),
            mention("c1", "u", "https://breitbart.com/b"),
            mention("c2", "v", "https://example.org/none"),
        ];
        let (news, tallies) = classify_mentions(&ms, &c);
        assert_eq!(news.len(), 2);
        let fake = &tallies[NewsType::Fake.index()];
        assert_eq!(
            (fake.unique_comments, fake.unique_sites, fake.unique_urls, fake.unique_users),
            (1, 1, 2, 1)
        );
        assert_eq!(tallies[NewsType::Reputable.index()].unique_comments, 0);
    }

    #[test]
    fn tally_merge_matches_single_pass() {
        let c = small();
        let ms: Vec<_> = (0..40)
            .map(|i| {
                let site = if i % 3 == 0 { "nytimes.com" } else { "fakesite.net" };
                mention(&format!("c{}", i / 2), &format!("u{}", i % 5), &format!("https://{site}/{}", i % 7))
            })
            .collect();
        let (_, whole) = classify_mentions(&ms, &c);
        let mut left = TallyAccumulator::default();
        let mut right = TallyAccumulator::default();
        for (i, m) in ms.iter().enumerate() {
            let nc = classify_mention(m, &c).unwrap();
            if i < 17 { left.add(&nc) } else { right.add(&nc) }
        }
        left.merge(right);
        assert_eq!(left.finish(), whole);
    }

    #[test]
    fn trust_means() {
        let c = small();
        let csv = "domain,score\nnytimes.com,0.5\nbbc.co.uk,0.5\nbreitbart.com,0.5\nunlisted.com,0.9\n";
        let scores = read_trust_scores(csv.as_bytes()).unwrap();
        let summary = validate_trust_scores(&c, &scores);
        assert_eq!(summary.means[NewsType::Reputable.index()], Some(0.5));
        assert_eq!(summary.means[NewsType::Fake.index()], Some(0.5));
        assert_eq!(summary.means[NewsType::Lowcred.index()], None);
        assert!(summary.missing.is_empty());
        assert!(!summary.ordered);
    }

    #[test]
    fn missing_label_reported() {
        let c = small();
        let scores = read_trust_scores("domain,score\nnytimes.com,0.8\n".as_bytes()).unwrap();
        let summary = validate_trust_scores(&c, &scores);
        assert_eq!(summary.missing, [NewsType::Fake]);
    }

    #[test]
    fn out_of_range_score_rejected() {
        assert!(matches!(
            read_trust_scores("domain,score\na.com,1.5\n".as_bytes()),
            Err(CatalogError::ScoreRange { .. })
        ));
    }
}
