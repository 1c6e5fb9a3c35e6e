//! Interaction logs: parsing, k-core filtering, leave-one-out splits and
//! the canonical binary split file.
//!
//! # Split file layout
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        7 bytes   "TALEDS1"
//! num_users    u32
//! num_items    u32
//! user vocab   num_users x (u32 byte length, UTF-8 bytes)
//! item vocab   num_items x (u32 byte length, UTF-8 bytes)
//! train        u32 count, then count x (u32 user, u32 item, i64 timestamp)
//! valid        u32 count, then count x (u32 user, u32 item, i64 timestamp)
//! test         u32 count, then count x (u32 user, u32 item, i64 timestamp)
//! ```
//!
//! Train triples are stored grouped by user and in chronological order;
//! valid/test triples are stored in ascending user order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

const SPLIT_MAGIC: &[u8; 7] = b"TALEDS1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// One (user, item, time) record with dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub t: i64,
}

/// Bidirectional string <-> index map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {id:?}")));
            }
        }
        Ok(Self { ids, index })
    }

    /// Returns the index of `id`, inserting it if unseen.
    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: u32) -> &str {
        &self.ids[index as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Time-sorted interactions grouped by user.
///
/// Interactions are stored sorted by `(user, t)`, with ties in `t` kept in
/// their original file order. `user_offsets` has `num_users + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    users: Vocab,
    items: Vocab,
    interactions: Vec<Interaction>,
    user_offsets: Vec<usize>,
}

impl InteractionLog {
    pub fn empty() -> Self {
        Self {
            users: Vocab::new(),
            items: Vocab::new(),
            interactions: Vec::new(),
            user_offsets: vec![0],
        }
    }

    /// Builds a log from raw records. Indices are assigned in order of first
    /// appearance; exact duplicate triples are collapsed.
    pub fn from_raw(records: &[RawInteraction]) -> Result<Self> {
        let mut users = Vocab::new();
        let mut items = Vocab::new();
        let mut out = Vec::with_capacity(records.len());
        for r in records {
            if r.timestamp < 0 {
                return Err(Error::Format(format!(
                    "negative timestamp {} for user {:?}",
                    r.timestamp, r.user_id
                )));
            }
            let user = users.intern(&r.user_id);
            let item = items.intern(&r.item_id);
            out.push(Interaction {
                user,
                item,
                t: r.timestamp,
            });
        }
        Ok(Self::assemble(users, items, out))
    }

    /// Builds a log from already-indexed interactions. Users and items may
    /// have no interactions (used for train logs that share the full vocab).
    pub fn from_parts(users: Vocab, items: Vocab, interactions: Vec<Interaction>) -> Result<Self> {
        for x in &interactions {
            if x.user as usize >= users.len() || x.item as usize >= items.len() {
                return Err(Error::Format(format!(
                    "interaction ({}, {}) outside vocabulary ({} users, {} items)",
                    x.user,
                    x.item,
                    users.len(),
                    items.len()
                )));
            }
            if x.t < 0 {
                return Err(Error::Format(format!("negative timestamp {}", x.t)));
            }
        }
        Ok(Self::assemble(users, items, interactions))
    }

    fn assemble(users: Vocab, items: Vocab, interactions: Vec<Interaction>) -> Self {
        let mut seen = std::collections::HashSet::with_capacity(interactions.len());
        let mut interactions: Vec<Interaction> =
            interactions.into_iter().filter(|x| seen.insert(*x)).collect();
        // stable: equal timestamps keep input order
        interactions.sort_by_key(|x| (x.user, x.t));

        let mut user_offsets = vec![0usize; users.len() + 1];
        for x in &interactions {
            user_offsets[x.user as usize + 1] += 1;
        }
        for u in 0..users.len() {
            user_offsets[u + 1] += user_offsets[u];
        }
        Self {
            users,
            items,
            interactions,
            user_offsets,
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn users(&self) -> &Vocab {
        &self.users
    }

    pub fn items(&self) -> &Vocab {
        &self.items
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Chronological interactions of one user.
    pub fn sequence(&self, user: u32) -> &[Interaction] {
        let u = user as usize;
        &self.interactions[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// Per-user sequences in user-index order.
    pub fn sequences(&self) -> impl Iterator<Item = &[Interaction]> + '_ {
        (0..self.num_users() as u32).map(move |u| self.sequence(u))
    }

    /// Number of interactions per item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_items()];
        for x in &self.interactions {
            counts[x.item as usize] += 1;
        }
        counts
    }

    pub fn user_counts(&self) -> Vec<usize> {
        self.user_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Whether every user and item index has at least one interaction.
    pub fn is_compact(&self) -> bool {
        self.user_counts().iter().all(|&c| c > 0) && self.item_counts().iter().all(|&c| c > 0)
    }

    /// Keeps only interactions accepted by `keep` and re-indexes users and
    /// items contiguously, preserving their relative order.
    pub fn retain(&self, mut keep: impl FnMut(&Interaction) -> bool) -> Self {
        let kept: Vec<Interaction> = self.interactions.iter().filter(|x| keep(x)).copied().collect();
        let mut user_map = vec![u32::MAX; self.num_users()];
        let mut item_map = vec![u32::MAX; self.num_items()];
        for x in &kept {
            user_map[x.user as usize] = 0;
            item_map[x.item as usize] = 0;
        }
        let users = compact_vocab(&self.users, &mut user_map);
        let items = compact_vocab(&self.items, &mut item_map);
        let remapped = kept
            .into_iter()
            .map(|x| Interaction {
                user: user_map[x.user as usize],
                item: item_map[x.item as usize],
                t: x.t,
            })
            .collect();
        Self::assemble(users, items, remapped)
    }
}

fn compact_vocab(vocab: &Vocab, map: &mut [u32]) -> Vocab {
    let mut ids = Vec::new();
    for (old, slot) in map.iter_mut().enumerate() {
        if *slot != u32::MAX {
            *slot = ids.len() as u32;
            ids.push(vocab.id(old as u32).to_owned());
        }
    }
    Vocab::from_ids(ids).expect("source vocabulary has unique ids")
}

/// Field separator of a delimited interaction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Tab,
    Comma,
    DoubleColon,
    Whitespace,
}

impl Delimiter {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::Comma => line.split(',').collect(),
            Delimiter::DoubleColon => line.split("::").collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }
}

/// Which columns of a delimited file hold user, item and timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub delimiter: Delimiter,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    pub has_header: bool,
}

impl ColumnMapping {
    /// MovieLens `ratings.dat`: `user::item::rating::timestamp`.
    pub fn movielens() -> Self {
        Self {
            delimiter: Delimiter::DoubleColon,
            user_col: 0,
            item_col: 1,
            time_col: 3,
            has_header: false,
        }
    }

    /// Amazon 2014 ratings-only CSV: `user,item,rating,unixReviewTime`.
    pub fn amazon_ratings() -> Self {
        Self {
            delimiter: Delimiter::Comma,
            user_col: 0,
            item_col: 1,
            time_col: 3,
            has_header: false,
        }
    }
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Whitespace,
            user_col: 0,
            item_col: 1,
            time_col: 2,
            has_header: false,
        }
    }
}

pub fn parse_interactions(
    reader: impl BufRead,
    mapping: &ColumnMapping,
    source: &Path,
) -> Result<Vec<RawInteraction>> {
    let needed = mapping.user_col.max(mapping.item_col).max(mapping.time_col) + 1;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 && mapping.has_header {
            continue;
        }
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields = mapping.delimiter.split(trimmed);
        let parse_err = |msg: String| Error::Parse {
            path: source.to_path_buf(),
            line: lineno,
            msg,
        };
        if fields.len() < needed {
            return Err(parse_err(format!(
                "expected at least {needed} fields, found {}",
                fields.len()
            )));
        }
        let ts_field = fields[mapping.time_col].trim();
        let timestamp: i64 = ts_field
            .parse()
            .map_err(|_| parse_err(format!("non-numeric timestamp {ts_field:?}")))?;
        if timestamp < 0 {
            return Err(parse_err(format!("negative timestamp {timestamp}")));
        }
        out.push(RawInteraction {
            user_id: fields[mapping.user_col].trim().to_owned(),
            item_id: fields[mapping.item_col].trim().to_owned(),
            timestamp,
        });
    }
    Ok(out)
}

pub fn load_interactions(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<InteractionLog> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let raw = parse_interactions(reader, mapping, path)?;
    InteractionLog::from_raw(&raw)
}

/// Keeps interactions with `min_ts <= t < max_ts` (either bound optional).
pub fn filter_time_window(log: &InteractionLog, min_ts: Option<i64>, max_ts: Option<i64>) -> InteractionLog {
    log.retain(|x| min_ts.is_none_or(|lo| x.t >= lo) && max_ts.is_none_or(|hi| x.t < hi))
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// every survivor has at least `k`.
pub fn kcore_filter(log: &InteractionLog, k: usize) -> InteractionLog {
    assert!(k >= 1, "k-core needs k >= 1");
    let mut alive = vec![true; log.len()];
    loop {
        let mut user_counts = vec![0usize; log.num_users()];
        let mut item_counts = vec![0usize; log.num_items()];
        for (x, _) in log.interactions().iter().zip(&alive).filter(|(_, &a)| a) {
            user_counts[x.user as usize] += 1;
            item_counts[x.item as usize] += 1;
        }
        let mut removed = false;
        for (x, a) in log.interactions().iter().zip(alive.iter_mut()) {
            if *a && (user_counts[x.user as usize] < k || item_counts[x.item as usize] < k) {
                *a = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    let mut flags = alive.into_iter();
    log.retain(|_| flags.next().unwrap_or(false))
}

/// A held-out interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeldOut {
    pub item: u32,
    pub t: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionLog,
    pub valid: BTreeMap<u32, HeldOut>,
    pub test: BTreeMap<u32, HeldOut>,
}

impl SplitDataset {
    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }
}

/// Last interaction of each user goes to test, second-to-last to valid.
/// Users with fewer than three interactions stay entirely in train.
pub fn leave_one_out_split(log: &InteractionLog) -> SplitDataset {
    let mut train = Vec::with_capacity(log.len());
    let mut valid = BTreeMap::new();
    let mut test = BTreeMap::new();
    let mut short_users = 0usize;
    for (u, seq) in log.sequences().enumerate() {
        let u = u as u32;
        if seq.len() < 3 {
            short_users += 1;
            train.extend_from_slice(seq);
            continue;
        }
        let n = seq.len();
        train.extend_from_slice(&seq[..n - 2]);
        valid.insert(u, HeldOut { item: seq[n - 2].item, t: seq[n - 2].t });
        test.insert(u, HeldOut { item: seq[n - 1].item, t: seq[n - 1].t });
    }
    if short_users > 0 {
        log::warn!("{short_users} users have fewer than 3 interactions; kept in train only");
    }
    let train = InteractionLog::from_parts(log.users().clone(), log.items().clone(), train)
        .expect("indices come from a valid log");
    SplitDataset { train, valid, test }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub avg_sequence_length: f64,
    pub avg_interval_days: f64,
}

pub fn dataset_stats(log: &InteractionLog) -> StatsRecord {
    let (m, n, total) = (log.num_users(), log.num_items(), log.len());
    let cells = m as f64 * n as f64;
    let mut interval_sum = 0.0f64;
    let mut pairs = 0u64;
    for seq in log.sequences() {
        for w in seq.windows(2) {
            interval_sum += (w[1].t - w[0].t) as f64;
            pairs += 1;
        }
    }
    StatsRecord {
        users: m,
        items: n,
        interactions: total,
        density: if cells > 0.0 { total as f64 / cells } else { 0.0 },
        avg_sequence_length: if m > 0 { total as f64 / m as f64 } else { 0.0 },
        avg_interval_days: if pairs > 0 {
            interval_sum / pairs as f64 / SECONDS_PER_DAY
        } else {
            0.0
        },
    }
}

// --- binary split file -----------------------------------------------------

fn write_vocab(w: &mut impl Write, vocab: &Vocab) -> Result<()> {
    for id in vocab.ids() {
        let bytes = id.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    Ok(())
}

fn write_triples(w: &mut impl Write, triples: impl ExactSizeIterator<Item = Interaction>) -> Result<()> {
    let len = u32::try_from(triples.len()).map_err(|_| Error::Format("too many interactions".into()))?;
    w.write_all(&len.to_le_bytes())?;
    for x in triples {
        w.write_all(&x.user.to_le_bytes())?;
        w.write_all(&x.item.to_le_bytes())?;
        w.write_all(&x.t.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_split(w: &mut impl Write, split: &SplitDataset) -> Result<()> {
    let train = &split.train;
    w.write_all(SPLIT_MAGIC)?;
    w.write_all(&(train.num_users() as u32).to_le_bytes())?;
    w.write_all(&(train.num_items() as u32).to_le_bytes())?;
    write_vocab(w, train.users())?;
    write_vocab(w, train.items())?;
    write_triples(w, train.interactions().iter().copied())?;
    let held = |m: &BTreeMap<u32, HeldOut>| -> Vec<Interaction> {
        m.iter()
            .map(|(&user, h)| Interaction { user, item: h.item, t: h.t })
            .collect()
    };
    write_triples(w, held(&split.valid).into_iter())?;
    write_triples(w, held(&split.test).into_iter())?;
    Ok(())
}

pub fn save_split(path: impl AsRef<Path>, split: &SplitDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_split(&mut w, split)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i64(r: &mut impl Read, what: &str) -> Result<i64> {
    let mut b = [0u8; 8];
    read_exact_or_format(r, &mut b, what)?;
    Ok(i64::from_le_bytes(b))
}

pub(crate) fn read_vocab(r: &mut impl Read, count: usize) -> Result<Vocab> {
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = read_u32(r, "vocabulary entry length")? as usize;
        let mut buf = vec![0u8; len];
        read_exact_or_format(r, &mut buf, "vocabulary entry")?;
        ids.push(String::from_utf8(buf).map_err(|_| Error::Format("vocabulary entry is not UTF-8".into()))?);
    }
    Vocab::from_ids(ids)
}

pub(crate) fn write_vocab_table(w: &mut impl Write, vocab: &Vocab) -> Result<()> {
    write_vocab(w, vocab)
}

fn read_triples(r: &mut impl Read) -> Result<Vec<Interaction>> {
    let count = read_u32(r, "triple count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let user = read_u32(r, "triple")?;
        let item = read_u32(r, "triple")?;
        let t = read_i64(r, "triple")?;
        out.push(Interaction { user, item, t });
    }
    Ok(out)
}

pub fn read_split(r: &mut impl Read) -> Result<SplitDataset> {
    let mut magic = [0u8; 7];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != SPLIT_MAGIC {
        return Err(Error::Format("not a split file (bad magic)".into()));
    }
    let m = read_u32(r, "user count")? as usize;
    let n = read_u32(r, "item count")? as usize;
    let users = read_vocab(r, m)?;
    let items = read_vocab(r, n)?;
    let train = read_triples(r)?;
    let to_map = |v: Vec<Interaction>| -> Result<BTreeMap<u32, HeldOut>> {
        let mut map = BTreeMap::new();
        for x in v {
            if x.user as usize >= m || x.item as usize >= n {
                return Err(Error::Format("held-out triple outside vocabulary".into()));
            }
            map.insert(x.user, HeldOut { item: x.item, t: x.t });
        }
        Ok(map)
    };
    let valid = to_map(read_triples(r)?)?;
    let test = to_map(read_triples(r)?)?;
    let train = InteractionLog::from_parts(users, items, train)?;
    Ok(SplitDataset { train, valid, test })
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitDataset> {
    let mut r = BufReader::new(File::open(path)?);
    read_split(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(rows: &[(&str, &str, i64)]) -> Vec<RawInteraction> {
        rows.iter()
            .map(|&(u, i, t)| RawInteraction {
                user_id: u.into(),
                item_id: i.into(),
                timestamp: t,
            })
            .collect()
    }

    fn parse(text: &str, mapping: &ColumnMapping) -> Result<InteractionLog> {
        let raw = parse_interactions(text.as_bytes(), mapping, Path::new("mem"))?;
        InteractionLog::from_raw(&raw)
    }

    #[test]
    fn empty_file_gives_empty_log() {
        let log = parse("", &ColumnMapping::default()).unwrap();
        assert_eq!((log.num_users(), log.num_items(), log.len()), (0, 0, 0));
    }

    #[test]
    fn three_lines() {
        let log = parse("u1 a 10\nu1 b 20\nu2 a 5\n", &ColumnMapping::default()).unwrap();
        assert_eq!((log.num_users(), log.num_items(), log.len()), (2, 2, 3));
        let u1 = log.users().get("u1").unwrap();
        let items: Vec<_> = log.sequence(u1).iter().map(|x| (log.items().id(x.item), x.t)).collect();
        assert_eq!(items, vec![("a", 10), ("b", 20)]);
    }

    #[test]
    fn sorts_by_time_and_keeps_file_order_on_ties() {
        let log = InteractionLog::from_raw(&raw(&[("u", "c", 30), ("u", "a", 10), ("u", "b", 10)])).unwrap();
        let items: Vec<_> = log.sequence(0).iter().map(|x| log.items().id(x.item)).collect();
        assert_eq!(items, vec!["a", "b", "c"]);
    }

    #[test]
    fn duplicates_collapse_but_repeats_survive() {
        let log = InteractionLog::from_raw(&raw(&[("u", "a", 1), ("u", "a", 1), ("u", "a", 2)])).unwrap();
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse("u a 1\nu b\n", &ColumnMapping::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("u a 1\nu b x\n", &ColumnMapping::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn movielens_and_csv_mappings() {
        let log = parse("1::10::5::978300760\n1::20::3::978302109\n", &ColumnMapping::movielens()).unwrap();
        assert_eq!(log.len(), 2);
        let mapping = ColumnMapping {
            has_header: true,
            ..ColumnMapping::amazon_ratings()
        };
        let log = parse("user,item,rating,time\nA1,B1,5.0,1300000000\n", &mapping).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.items().id(0), "B1");
    }

    #[test]
    fn time_window_is_half_open() {
        let log = InteractionLog::from_raw(&raw(&[("u", "a", 5), ("u", "b", 10), ("v", "a", 20)])).unwrap();
        let w = filter_time_window(&log, Some(5), Some(20));
        assert_eq!(w.len(), 2);
        assert_eq!(w.num_users(), 1);
        assert!(w.is_compact());
    }

    #[test]
    fn kcore_leaves_compliant_log_unchanged() {
        let mut rows = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                rows.push((format!("u{u}"), format!("i{i}"), (u * 10 + i) as i64));
            }
        }
        let raw: Vec<_> = rows
            .into_iter()
            .map(|(u, i, t)| RawInteraction { user_id: u, item_id: i, timestamp: t })
            .collect();
        let log = InteractionLog::from_raw(&raw).unwrap();
        assert_eq!(kcore_filter(&log, 5), log);
    }

    /// Brute force: remove one violating node at a time until none remain.
    fn brute_kcore(rows: &[(String, String, i64)], k: usize) -> Vec<(String, String, i64)> {
        let mut rows = rows.to_vec();
        loop {
            let mut uc: HashMap<&str, usize> = HashMap::new();
            let mut ic: HashMap<&str, usize> = HashMap::new();
            for (u, i, _) in &rows {
                *uc.entry(u).or_default() += 1;
                *ic.entry(i).or_default() += 1;
            }
            let bad = rows.iter().position(|(u, i, _)| uc[u.as_str()] < k || ic[i.as_str()] < k);
            let Some(pos) = bad else { break };
            let (u, i, _) = rows[pos].clone();
            let drop_user = uc[u.as_str()] < k;
            rows.retain(|(ru, ri, _)| if drop_user { *ru != u } else { *ri != i });
        }
        rows.sort();
        rows
    }

    #[test]
    fn kcore_matches_brute_force_on_toy_log() {
        // 10 users; user 9 has only 4 interactions, which starves item "i5".
        let mut rows = Vec::new();
        for u in 0..9 {
            for i in 0..5 {
                rows.push((format!("u{u}"), format!("i{i}"), (u * 100 + i) as i64));
            }
        }
        for (j, item) in ["i5", "i5", "i0", "i1"].iter().enumerate() {
            rows.push(("u9".to_string(), item.to_string(), 1000 + j as i64));
        }
        rows.push(("u0".into(), "i5".into(), 5000));
        rows.push(("u1".into(), "i5".into(), 5001));
        let raw: Vec<_> = rows
            .iter()
            .map(|(u, i, t)| RawInteraction { user_id: u.clone(), item_id: i.clone(), timestamp: *t })
            .collect();
        let log = InteractionLog::from_raw(&raw).unwrap();
        let filtered = kcore_filter(&log, 5);
        let mut got: Vec<_> = filtered
            .interactions()
            .iter()
            .map(|x| (filtered.users().id(x.user).to_string(), filtered.items().id(x.item).to_string(), x.t))
            .collect();
        got.sort();
        assert_eq!(got, brute_kcore(&rows, 5));
        assert!(filtered.users().get("u9").is_none());
        assert!(filtered.items().get("i5").is_none());
        assert!(filtered.is_compact());
    }

    #[test]
    fn split_definitions() {
        let log = InteractionLog::from_raw(&raw(&[
            ("u", "a", 1),
            ("u", "b", 2),
            ("u", "c", 3),
            ("u", "d", 4),
            ("v", "a", 1),
            ("v", "b", 2),
            ("v", "c", 3),
            ("w", "a", 1),
        ]))
        .unwrap();
        let split = leave_one_out_split(&log);
        let names = |u: &str| -> Vec<&str> {
            let uid = split.train.users().get(u).unwrap();
            split.train.sequence(uid).iter().map(|x| split.train.items().id(x.item)).collect()
        };
        assert_eq!(names("u"), vec!["a", "b"]);
        assert_eq!(names("v"), vec!["a"]);
        assert_eq!(names("w"), vec!["a"]);
        let u = log.users().get("u").unwrap();
        assert_eq!(log.items().id(split.valid[&u].item), "c");
        assert_eq!(log.items().id(split.test[&u].item), "d");
        let w = log.users().get("w").unwrap();
        assert!(!split.valid.contains_key(&w) && !split.test.contains_key(&w));
    }

    #[test]
    fn stats_single_day_interval() {
        let log = InteractionLog::from_raw(&raw(&[("u", "a", 0), ("u", "b", 86_400)])).unwrap();
        let s = dataset_stats(&log);
        assert_eq!(s.avg_interval_days, 1.0);
        assert_eq!(s.density, 1.0);
        assert_eq!(s.avg_sequence_length, 2.0);
    }

    #[test]
    fn split_file_round_trip_and_truncation() {
        let log = InteractionLog::from_raw(&raw(&[
            ("u", "a", 1),
            ("u", "b", 2),
            ("u", "c", 3),
            ("v", "ü", 7),
        ]))
        .unwrap();
        let split = leave_one_out_split(&log);
        let mut buf = Vec::new();
        write_split(&mut buf, &split).unwrap();
        assert_eq!(&buf[..7], b"TALEDS1");
        let back = read_split(&mut buf.as_slice()).unwrap();
        assert_eq!(back, split);
        let err = read_split(&mut &buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_split(&mut bad.as_slice()), Err(Error::Format(_))));
    }
}
