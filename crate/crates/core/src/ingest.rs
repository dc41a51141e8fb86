//! Streaming ingestion of newline-delimited comment archives.
//!
//! Each line of an archive is one JSON object. Field names are configurable
//! through [`FieldMap`]; the defaults follow the Pushshift dump layout. Bad
//! lines are counted and skipped. If more than half of the first
//! [`PROBE_LINES`] lines fail to parse, the stream reports a format error,
//! since that almost always means the wrong file was supplied.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Author value Reddit uses for removed accounts.
pub const DELETED_AUTHOR: &str = "[deleted]";

/// Number of leading lines inspected for the malformed-ratio check.
pub const PROBE_LINES: usize = 10_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read archive: {0}")]
    Io(#[from] io::Error),
    #[error("{malformed} of the first {lines} lines are malformed; is this a comment archive?")]
    Format { malformed: u64, lines: u64 },
    #[error("comment `{id}` appears with conflicting authors `{first}` and `{second}`")]
    ConflictingAuthor {
        id: String,
        first: String,
        second: String,
    },
    #[error("failed to write output: {0}")]
    Csv(#[from] csv::Error),
    #[error("failed to encode record: {0}")]
    Json(#[from] serde_json::Error),
}

/// Names of the JSON keys holding each comment field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMap {
    pub id: String,
    pub author: String,
    pub subreddit: String,
    pub created_utc: String,
    pub body: String,
    pub parent_id: String,
    pub link_id: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            id: "id".into(),
            author: "author".into(),
            subreddit: "subreddit".into(),
            created_utc: "created_utc".into(),
            body: "body".into(),
            parent_id: "parent_id".into(),
            link_id: "link_id".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: String,
    pub author: String,
    pub subreddit: String,
    pub created_utc: i64,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_id: Option<String>,
}

impl CommentRecord {
    pub fn is_deleted(&self) -> bool {
        self.author == DELETED_AUTHOR
    }

    /// Id of the parent comment when the parent is a comment (`t1_`).
    pub fn parent_comment(&self) -> Option<&str> {
        self.parent_id.as_deref().and_then(|p| p.strip_prefix("t1_"))
    }

    /// Id of the parent submission when the parent is a post (`t3_`).
    pub fn parent_post(&self) -> Option<&str> {
        self.parent_id.as_deref().and_then(|p| p.strip_prefix("t3_"))
    }
}

/// Counters for one pass over an archive. Merging is associative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: u64,
    pub records: u64,
    pub malformed: u64,
    pub deleted: u64,
}

impl IngestStats {
    pub fn merge(&mut self, other: &IngestStats) {
        self.lines += other.lines;
        self.records += other.records;
        self.malformed += other.malformed;
        self.deleted += other.deleted;
    }

    fn note(&mut self, parsed: Option<&CommentRecord>) {
        self.lines += 1;
        match parsed {
            Some(r) => {
                self.records += 1;
                if r.is_deleted() {
                    self.deleted += 1;
                }
            }
            None => self.malformed += 1,
        }
    }
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn epoch_field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<i64> {
    match obj.get(key)? {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        // older dumps store timestamps as strings
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Parses one archive line. Returns `None` for anything that does not
/// satisfy the record invariants.
pub fn parse_record(line: &str, fields: &FieldMap) -> Option<CommentRecord> {
    let value: Value = serde_json::from_str(line).ok()?;
    let obj = value.as_object()?;
    let comment_id = text_field(obj, &fields.id)?;
    if comment_id.is_empty() {
        return None;
    }
    let created_utc = epoch_field(obj, &fields.created_utc)?;
    if created_utc <= 0 {
        return None;
    }
    let parent_id = text_field(obj, &fields.parent_id).filter(|p| !p.is_empty());
    if let Some(p) = &parent_id {
        if !(p.starts_with("t1_") || p.starts_with("t3_")) {
            return None;
        }
    }
    Some(CommentRecord {
        comment_id,
        author: text_field(obj, &fields.author)?,
        subreddit: text_field(obj, &fields.subreddit)?,
        created_utc,
        body: text_field(obj, &fields.body).unwrap_or_default(),
        parent_id,
        link_id: text_field(obj, &fields.link_id).filter(|l| !l.is_empty()),
    })
}

fn parse_line_bytes(line: &[u8], fields: &FieldMap) -> Option<CommentRecord> {
    std::str::from_utf8(line)
        .ok()
        .and_then(|s| parse_record(s, fields))
}

fn trim_eol(buf: &[u8]) -> &[u8] {
    let buf = buf.strip_suffix(b"\n").unwrap_or(buf);
    buf.strip_suffix(b"\r").unwrap_or(buf)
}

fn is_blank(line: &[u8]) -> bool {
    line.iter().all(|b| b.is_ascii_whitespace())
}

fn check_probe(malformed: u64, lines: u64) -> Result<(), IngestError> {
    if lines > 0 && malformed * 2 > lines {
        Err(IngestError::Format { malformed, lines })
    } else {
        Ok(())
    }
}

/// Single-pass iterator over an archive.
///
/// Memory use is bounded by the probe window plus the longest line.
pub struct CommentStream<R> {
    reader: R,
    fields: FieldMap,
    stats: IngestStats,
    buf: Vec<u8>,
    pending: VecDeque<CommentRecord>,
    probed: bool,
    done: bool,
}

pub fn stream_comments<R: BufRead>(reader: R, fields: &FieldMap) -> CommentStream<R> {
    CommentStream {
        reader,
        fields: fields.clone(),
        stats: IngestStats::default(),
        buf: Vec::new(),
        pending: VecDeque::new(),
        probed: false,
        done: false,
    }
}

impl<R: BufRead> CommentStream<R> {
    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Reads the next non-blank line; `Ok(None)` at end of stream.
    fn next_line(&mut self) -> io::Result<Option<Option<CommentRecord>>> {
        loop {
            self.buf.clear();
            if self.reader.read_until(b'\n', &mut self.buf)? == 0 {
                return Ok(None);
            }
            let line = trim_eol(&self.buf);
            if is_blank(line) {
                continue;
            }
            let parsed = parse_line_bytes(line, &self.fields);
            self.stats.note(parsed.as_ref());
            return Ok(Some(parsed));
        }
    }

    fn probe(&mut self) -> Result<(), IngestError> {
        self.probed = true;
        while (self.stats.lines as usize) < PROBE_LINES {
            match self.next_line()? {
                None => break,
                Some(Some(record)) => self.pending.push_back(record),
                Some(None) => {}
            }
        }
        check_probe(self.stats.malformed, self.stats.lines)
    }
}

impl<R: BufRead> Iterator for CommentStream<R> {
    type Item = Result<CommentRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if !self.probed {
            if let Err(e) = self.probe() {
                self.done = true;
                self.pending.clear();
                return Some(Err(e));
            }
        }
        if let Some(record) = self.pending.pop_front() {
            return Some(Ok(record));
        }
        loop {
            match self.next_line() {
                Ok(None) => {
                    self.done = true;
                    return None;
                }
                Ok(Some(Some(record))) => return Some(Ok(record)),
                Ok(Some(None)) => continue,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
    }
}

/// Splits `data` into at most `shards` pieces at line boundaries.
pub fn split_at_lines(data: &[u8], shards: usize) -> Vec<&[u8]> {
    let shards = shards.max(1);
    let target = data.len().div_ceil(shards).max(1);
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    while start < data.len() {
        let mut end = (start + target).min(data.len());
        if end < data.len() {
            end = match data[end..].iter().position(|&b| b == b'\n') {
                Some(off) => end + off + 1,
                None => data.len(),
            };
        }
        out.push(&data[start..end]);
        start = end;
    }
    out
}

struct ShardOutput {
    records: Vec<CommentRecord>,
    stats: IngestStats,
    // malformed flags of this shard's leading lines, capped at PROBE_LINES
    head: Vec<bool>,
}

fn parse_shard(shard: &[u8], fields: &FieldMap) -> ShardOutput {
    let mut out = ShardOutput {
        records: Vec::new(),
        stats: IngestStats::default(),
        head: Vec::new(),
    };
    for line in shard.split(|&b| b == b'\n') {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if is_blank(line) {
            continue;
        }
        let parsed = parse_line_bytes(line, fields);
        out.stats.note(parsed.as_ref());
        if out.head.len() < PROBE_LINES {
            out.head.push(parsed.is_none());
        }
        if let Some(r) = parsed {
            out.records.push(r);
        }
    }
    out
}

/// Parses an in-memory archive with shard parallelism. Output order and
/// counters are identical to [`stream_comments`] for any shard count.
pub fn parse_sharded(
    data: &[u8],
    fields: &FieldMap,
    shards: usize,
) -> Result<(Vec<CommentRecord>, IngestStats), IngestError> {
    let pieces = split_at_lines(data, shards);
    let outputs: Vec<ShardOutput> = pieces.par_iter().map(|s| parse_shard(s, fields)).collect();

    let mut probe_lines = 0u64;
    let mut probe_bad = 0u64;
    for out in &outputs {
        let take = (PROBE_LINES - probe_lines as usize).min(out.head.len());
        probe_lines += take as u64;
        probe_bad += out.head[..take].iter().filter(|&&b| b).count() as u64;
        if probe_lines as usize == PROBE_LINES || (out.head.len() as u64) < out.stats.lines {
            break;
        }
    }
    check_probe(probe_bad, probe_lines)?;

    let mut stats = IngestStats::default();
    let mut records = Vec::with_capacity(outputs.iter().map(|o| o.records.len()).sum());
    for out in outputs {
        stats.merge(&out.stats);
        records.extend(out.records);
    }
    Ok((records, stats))
}

/// Returns every http(s) URL in `body`, in order of appearance, duplicates
/// kept. Markdown link targets end at their closing parenthesis; bare URLs
/// lose trailing `.,);]` punctuation.
pub fn extract_urls(body: &str) -> Vec<String> {
    let bytes = body.as_bytes();
    let mut urls = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let scheme_len = if starts_with_ci(&bytes[i..], b"https://") {
            8
        } else if starts_with_ci(&bytes[i..], b"http://") {
            7
        } else {
            i += 1;
            continue;
        };
        let is_target = i >= 2 && &bytes[i - 2..i] == b"](";
        let mut end = i + scheme_len;
        let mut depth = 0i32;
        while end < bytes.len() {
            let b = bytes[end];
            if b.is_ascii_whitespace() || matches!(b, b'<' | b'>' | b'"' | b'`' | b'[' | b']') {
                break;
            }
            if b == b'(' {
                depth += 1;
            } else if b == b')' {
                if depth == 0 && is_target {
                    break;
                }
                depth -= 1;
            }
            end += 1;
        }
        let mut url = &body[i..end];
        if !is_target {
            url = strip_trailing_punctuation(url);
        }
        if url.len() > scheme_len {
            urls.push(url.to_string());
        }
        i = end.max(i + scheme_len);
    }
    urls
}

fn starts_with_ci(hay: &[u8], needle: &[u8]) -> bool {
    hay.len() >= needle.len() && hay[..needle.len()].eq_ignore_ascii_case(needle)
}

fn strip_trailing_punctuation(mut url: &str) -> &str {
    loop {
        let Some(last) = url.chars().last() else {
            return url;
        };
        let strip = match last {
            '.' | ',' | ';' | ']' => true,
            // keep a closing paren that balances one inside the URL
            ')' => url.matches('(').count() < url.matches(')').count(),
            _ => false,
        };
        if !strip {
            return url;
        }
        url = &url[..url.len() - 1];
    }
}

/// Lowercased host of `url` with any leading `www.` removed.
pub fn host_of(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).ok()?;
    let host = parsed.host_str()?.trim_end_matches('.').to_ascii_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host);
    (!host.is_empty()).then(|| host.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlMention {
    pub comment_id: String,
    pub author: String,
    pub subreddit: String,
    pub created_utc: i64,
    pub url: String,
    pub host: String,
}

/// URL mentions of a single comment. URLs without a parseable host are dropped.
pub fn mentions_of(record: &CommentRecord) -> Vec<UrlMention> {
    extract_urls(&record.body)
        .into_iter()
        .filter_map(|url| {
            let host = host_of(&url)?;
            Some(UrlMention {
                comment_id: record.comment_id.clone(),
                author: record.author.clone(),
                subreddit: record.subreddit.clone(),
                created_utc: record.created_utc,
                url,
                host,
            })
        })
        .collect()
}

pub fn write_mentions_csv<W: Write>(out: W, mentions: &[UrlMention]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    for m in mentions {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mentions_ndjson<W: Write>(mut out: W, mentions: &[UrlMention]) -> Result<(), IngestError> {
    for m in mentions {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Maps comment ids (without the `t1_` prefix) to their authors.
#[derive(Clone, Debug, Default)]
pub struct AuthorIndex {
    authors: HashMap<String, String>,
}

impl AuthorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record. Deleted authors are skipped.
    pub fn insert(&mut self, record: &CommentRecord) -> Result<(), IngestError> {
        if record.is_deleted() {
            return Ok(());
        }
        self.insert_pair(&record.comment_id, &record.author)
    }

    fn insert_pair(&mut self, id: &str, author: &str) -> Result<(), IngestError> {
        match self.authors.entry(id.to_string()) {
            Entry::Vacant(v) => {
                v.insert(author.to_string());
                Ok(())
            }
            Entry::Occupied(o) if o.get() == author => Ok(()),
            Entry::Occupied(o) => Err(IngestError::ConflictingAuthor {
                id: id.to_string(),
                first: o.get().clone(),
                second: author.to_string(),
            }),
        }
    }

    pub fn get(&self, comment_id: &str) -> Option<&str> {
        self.authors.get(comment_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.authors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.authors.is_empty()
    }

    /// Folds another shard's index into this one.
    pub fn merge(&mut self, other: AuthorIndex) -> Result<(), IngestError> {
        for (id, author) in other.authors {
            self.insert_pair(&id, &author)?;
        }
        Ok(())
    }
}

pub fn build_author_index<'a, I>(corpus: I) -> Result<AuthorIndex, IngestError>
where
    I: IntoIterator<Item = &'a CommentRecord>,
{
    let mut index = AuthorIndex::new();
    for record in corpus {
        index.insert(record)?;
    }
    Ok(index)
}
