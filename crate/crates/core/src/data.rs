//! Tokenization, vocabularies, TSV ingestion and synthetic datasets.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::rng::RngStream;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MAX_LEN: usize = 64;

/// Lowercases and splits on whitespace; every character that is neither
/// alphanumeric nor whitespace becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        }
    }
}

impl Vocabulary {
    /// Most frequent tokens first (ties broken lexicographically), keeping at
    /// most `max_size` entries including the two reserved ones. `always`
    /// tokens are inserted first regardless of frequency.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a [String]>,
        max_size: usize,
        min_freq: usize,
        always: &[&str],
    ) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tokens in texts {
            for t in tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut vocab = Self::default();
        for t in always {
            vocab.insert(t);
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (t, _) in ranked {
            if vocab.len() >= max_size {
                break;
            }
            vocab.insert(t);
        }
        vocab
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = Self::default();
        for t in tokens {
            vocab.insert(t.as_ref());
        }
        vocab
    }

    /// Adds a token if absent and returns its id. Reserved names are never
    /// assigned to corpus tokens.
    pub fn insert(&mut self, token: &str) -> usize {
        if token == PAD_TOKEN {
            return PAD_ID;
        }
        if token == UNK_TOKEN {
            return UNK_ID;
        }
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// One labeled example. `token_ids` is already truncated to the dataset's
/// maximum length; padding is added when a batch is embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// Stable identity used to derive per-sample random streams.
    pub id: u64,
    pub token_ids: Vec<usize>,
    pub label: usize,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub sequences: Vec<TokenSequence>,
    pub num_classes: usize,
    pub split: Split,
    pub max_len: usize,
}

impl LabeledDataset {
    pub fn new(
        sequences: Vec<TokenSequence>,
        num_classes: usize,
        split: Split,
        max_len: usize,
        vocab_size: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("a dataset needs at least two classes"));
        }
        for s in &sequences {
            if s.label >= num_classes {
                return Err(Error::Index {
                    what: "label",
                    index: s.label,
                    size: num_classes,
                });
            }
            if s.token_ids.len() > max_len {
                return Err(Error::Contract(format!(
                    "sequence {} has {} tokens, max_len is {max_len}",
                    s.id,
                    s.token_ids.len()
                )));
            }
            if let Some(&bad) = s.token_ids.iter().find(|&&t| t >= vocab_size) {
                return Err(Error::Index {
                    what: "vocabulary",
                    index: bad,
                    size: vocab_size,
                });
            }
        }
        Ok(Self {
            sequences,
            num_classes,
            split,
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.sequences {
            counts[s.label] += 1;
        }
        counts
    }

    /// Removes examples whose raw text also occurs in `other`; returns how many.
    pub fn remove_overlap(&mut self, other: &LabeledDataset) -> usize {
        let seen: HashSet<&str> = other.sequences.iter().map(|s| s.raw_text.as_str()).collect();
        let before = self.sequences.len();
        self.sequences.retain(|s| !seen.contains(s.raw_text.as_str()));
        before - self.sequences.len()
    }

    pub fn is_disjoint_from(&self, other: &LabeledDataset) -> bool {
        let seen: HashSet<&str> = other.sequences.iter().map(|s| s.raw_text.as_str()).collect();
        self.sequences.iter().all(|s| !seen.contains(s.raw_text.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsvSchema {
    pub text_column: usize,
    pub label_column: usize,
    pub has_header: bool,
    /// Fail on the first malformed row instead of skipping and counting it.
    pub strict: bool,
}

impl Default for TsvSchema {
    /// GLUE SST-2 / CoLA-dev layout after column selection: `sentence\tlabel`.
    fn default() -> Self {
        Self {
            text_column: 0,
            label_column: 1,
            has_header: true,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub line: usize,
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MalformedRow {
    pub line: usize,
    pub reason: String,
}

/// Rows of a TSV file before tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub path: PathBuf,
    pub records: Vec<RawRecord>,
    pub malformed: Vec<MalformedRow>,
}

impl RawDataset {
    pub fn num_classes(&self) -> usize {
        self.records.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    pub fn tokenized(&self) -> Vec<Vec<String>> {
        self.records.iter().map(|r| tokenize(&r.text)).collect()
    }

    /// Encodes every record against `vocab`, truncating to `max_len`.
    /// Record ids are `id_offset + row index`.
    pub fn encode(
        &self,
        vocab: &Vocabulary,
        max_len: usize,
        split: Split,
        num_classes: usize,
        id_offset: u64,
    ) -> Result<LabeledDataset> {
        let sequences = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut ids = vocab.encode(&tokenize(&r.text));
                ids.truncate(max_len);
                TokenSequence {
                    id: id_offset + i as u64,
                    token_ids: ids,
                    label: r.label,
                    raw_text: r.text.clone(),
                }
            })
            .collect();
        LabeledDataset::new(sequences, num_classes, split, max_len, vocab.len())
    }
}

/// Reads a tab-separated file. Every row either becomes a record or is
/// reported with its line number.
pub fn load_tsv(path: &Path, schema: &TsvSchema) -> Result<RawDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let needed = schema.text_column.max(schema.label_column) + 1;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if i == 0 && schema.has_header {
            continue;
        }
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let problem = if cols.len() < needed {
            Some(format!("expected at least {needed} columns, found {}", cols.len()))
        } else {
            match cols[schema.label_column].trim().parse::<usize>() {
                Ok(label) => {
                    records.push(RawRecord {
                        line: line_no,
                        text: cols[schema.text_column].trim().to_string(),
                        label,
                    });
                    None
                }
                Err(_) => Some(format!("label {:?} is not a class index", cols[schema.label_column])),
            }
        };
        if let Some(reason) = problem {
            if schema.strict {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: reason,
                });
            }
            malformed.push(MalformedRow { line: line_no, reason });
        }
    }
    Ok(RawDataset {
        path: path.to_path_buf(),
        records,
        malformed,
    })
}

/// Punctuation inserted by AEDA; always present in built vocabularies.
pub const AEDA_PUNCTUATION: [&str; 6] = [".", ";", "?", ":", "!", ","];

/// Split paths plus schema, read from a `key=value` manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub schema: TsvSchema,
    pub max_len: usize,
    pub max_vocab: usize,
    pub min_freq: usize,
    pub num_classes: Option<usize>,
    /// Keep only the first N training rows.
    pub train_limit: Option<usize>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut kv = KvFile::read(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let defaults = TsvSchema::default();
        let manifest = Self {
            train: resolve(kv.require::<String>("train")?),
            dev: kv.get::<String>("dev")?.map(resolve),
            test: kv.get::<String>("test")?.map(resolve),
            schema: TsvSchema {
                text_column: kv.get_or("text_column", defaults.text_column)?,
                label_column: kv.get_or("label_column", defaults.label_column)?,
                has_header: kv.get_or("has_header", defaults.has_header)?,
                strict: kv.get_or("strict", defaults.strict)?,
            },
            max_len: kv.get_or("max_len", DEFAULT_MAX_LEN)?,
            max_vocab: kv.get_or("max_vocab", 20_000)?,
            min_freq: kv.get_or("min_freq", 1)?,
            num_classes: kv.get("num_classes")?,
            train_limit: kv.get("train_limit")?,
        };
        kv.reject_unused()?;
        if manifest.max_len == 0 {
            return Err(Error::config("max_len must be positive"));
        }
        Ok(manifest)
    }

    pub fn load(&self) -> Result<DatasetSplits> {
        let mut train_raw = load_tsv(&self.train, &self.schema)?;
        if let Some(limit) = self.train_limit {
            train_raw.records.truncate(limit);
        }
        let dev_raw = self.dev.as_deref().map(|p| load_tsv(p, &self.schema)).transpose()?;
        let test_raw = self.test.as_deref().map(|p| load_tsv(p, &self.schema)).transpose()?;

        let inferred = [Some(&train_raw), dev_raw.as_ref(), test_raw.as_ref()]
            .into_iter()
            .flatten()
            .map(RawDataset::num_classes)
            .max()
            .unwrap_or(0)
            .max(2);
        let num_classes = self.num_classes.unwrap_or(inferred);

        let train_tokens = train_raw.tokenized();
        let vocab = Vocabulary::build(
            train_tokens.iter().map(Vec::as_slice),
            self.max_vocab,
            self.min_freq,
            &AEDA_PUNCTUATION,
        );
        let train = train_raw.encode(&vocab, self.max_len, Split::Train, num_classes, 0)?;
        let mut offset = train_raw.records.len() as u64;
        let mut overlap_removed = 0;
        let mut encode_eval = |raw: Option<&RawDataset>, split| -> Result<Option<LabeledDataset>> {
            raw.map(|r| {
                let mut ds = r.encode(&vocab, self.max_len, split, num_classes, offset)?;
                offset += r.records.len() as u64;
                overlap_removed += ds.remove_overlap(&train);
                Ok(ds)
            })
            .transpose()
        };
        let dev = encode_eval(dev_raw.as_ref(), Split::Dev)?;
        let test = encode_eval(test_raw.as_ref(), Split::Test)?;

        let malformed = [Some(&train_raw), dev_raw.as_ref(), test_raw.as_ref()]
            .into_iter()
            .flatten()
            .flat_map(|r| r.malformed.iter().map(|m| (r.path.clone(), m.clone())))
            .collect();
        Ok(DatasetSplits {
            vocab,
            train,
            dev,
            test,
            malformed,
            overlap_removed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub vocab: Vocabulary,
    pub train: LabeledDataset,
    pub dev: Option<LabeledDataset>,
    pub test: Option<LabeledDataset>,
    /// Rows skipped in non-strict mode.
    pub malformed: Vec<(PathBuf, MalformedRow)>,
    /// Dev/test examples dropped because their text also occurs in train.
    pub overlap_removed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_classes: usize,
}

impl SynthSpec {
    fn available(&self) -> usize {
        self.vocab_size.saturating_sub(2)
    }

    /// Marker tokens per class: a quarter of the non-reserved vocabulary is
    /// split between the classes, the rest are shared filler tokens.
    pub fn markers_per_class(&self) -> usize {
        (self.available() / (4 * self.num_classes.max(1))).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic data needs at least two classes"));
        }
        if self.seq_len == 0 {
            return Err(Error::config("synthetic seq_len must be positive"));
        }
        if self.available() < self.num_classes * self.markers_per_class() + 1 {
            return Err(Error::config(format!(
                "vocab_size {} too small for {} classes plus filler",
                self.vocab_size, self.num_classes
            )));
        }
        Ok(())
    }

    /// Marker token ids of `class`.
    pub fn markers(&self, class: usize) -> std::ops::Range<usize> {
        let m = self.markers_per_class();
        2 + class * m..2 + (class + 1) * m
    }

    fn filler(&self) -> std::ops::Range<usize> {
        2 + self.num_classes * self.markers_per_class()..self.vocab_size
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens((2..self.vocab_size).map(|i| format!("t{i}")))
    }

    fn sample(&self, id: u64, label: usize, rng: &mut RngStream) -> TokenSequence {
        let lo = (self.seq_len / 2).max(1);
        let len = lo + rng.below(self.seq_len - lo + 1);
        let filler = self.filler();
        let mut ids: Vec<usize> = (0..len).map(|_| filler.start + rng.below(filler.len())).collect();
        let markers = self.markers(label);
        let num_markers = 1 + rng.below(len.min(2));
        for _ in 0..num_markers {
            let pos = rng.below(len);
            ids[pos] = markers.start + rng.below(markers.len());
        }
        let raw_text = ids.iter().map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        TokenSequence {
            id,
            token_ids: ids,
            label,
            raw_text,
        }
    }
}

/// Linearly separable labeled data: every sample carries at least one marker
/// token of its own class and none of any other class. Classes cycle so the
/// label distribution is balanced.
pub fn synth_dataset(
    num_samples: usize,
    vocab_size: usize,
    seq_len: usize,
    num_classes: usize,
    rng: &RngStream,
) -> Result<LabeledDataset> {
    let spec = SynthSpec {
        vocab_size,
        seq_len,
        num_classes,
    };
    spec.validate()?;
    let sequences = (0..num_samples)
        .map(|i| {
            let mut r = rng.derive("synth-sample", i as u64);
            spec.sample(i as u64, i % num_classes, &mut r)
        })
        .collect();
    LabeledDataset::new(sequences, num_classes, Split::Train, seq_len, vocab_size)
}

/// Train/dev/test splits of synthetic data with pairwise-disjoint raw texts.
pub fn synth_splits(sizes: [usize; 3], spec: SynthSpec, rng: &RngStream) -> Result<DatasetSplits> {
    spec.validate()?;
    let mut seen = HashSet::new();
    let mut next_id = 0u64;
    let mut attempts = 0u64;
    let mut make = |n: usize, split: Split| -> Result<LabeledDataset> {
        let mut seqs = Vec::with_capacity(n);
        while seqs.len() < n {
            attempts += 1;
            if attempts > 20 * (sizes.iter().sum::<usize>() as u64 + 10) {
                return Err(Error::config(
                    "synthetic space too small for the requested number of distinct samples",
                ));
            }
            let mut r = rng.derive("synth-sample", attempts);
            let s = spec.sample(next_id, seqs.len() % spec.num_classes, &mut r);
            if seen.insert(s.raw_text.clone()) {
                next_id += 1;
                seqs.push(s);
            }
        }
        LabeledDataset::new(seqs, spec.num_classes, split, spec.seq_len, spec.vocab_size)
    };
    let train = make(sizes[0], Split::Train)?;
    let dev = (sizes[1] > 0).then(|| make(sizes[1], Split::Dev)).transpose()?;
    let test = (sizes[2] > 0).then(|| make(sizes[2], Split::Test)).transpose()?;
    Ok(DatasetSplits {
        vocab: spec.vocabulary(),
        train,
        dev,
        test,
        malformed: Vec::new(),
        overlap_removed: 0,
    })
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("I am fine"), ["i", "am", "fine"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Good, right?"), ["good", ",", "right", "?"]);
        assert_eq!(
            tokenize("  it 's  n't\tGREAT!! "),
            ["it", "'", "s", "n", "'", "t", "great", "!", "!"]
        );
    }

    #[test]
    fn vocabulary_reserves_and_round_trips() {
        let docs = [tokenize("a b b c"), tokenize("b c d")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 100, 1, &[]);
        assert_eq!(v.token(PAD_ID), Some(PAD_TOKEN));
        assert_eq!(v.token(UNK_ID), Some(UNK_TOKEN));
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("zzz"), UNK_ID);
        let toks = tokenize("d c b a");
        assert_eq!(v.decode(&v.encode(&toks)), toks);
        let mut v2 = v.clone();
        assert_eq!(v2.insert(PAD_TOKEN), PAD_ID);
        assert_eq!(v2.len(), v.len());
    }

    #[test]
    fn vocabulary_size_cap_and_min_freq() {
        let docs = [tokenize("a a a b b c")];
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 3, 1, &[]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("a"), 2);
        let v = Vocabulary::build(docs.iter().map(Vec::as_slice), 10, 2, &[]);
        assert_eq!(v.id("c"), UNK_ID);
        assert_ne!(v.id("b"), UNK_ID);
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn load_tsv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.tsv", "sentence\tlabel\ngood movie\t1\nbad movie\t0\n");
        let raw = load_tsv(&p, &TsvSchema::default()).unwrap();
        assert_eq!(raw.records.len(), 2);
        assert_eq!(raw.records[0].label, 1);
        assert_eq!(raw.records[1].line, 3);
        assert_eq!(raw.num_classes(), 2);
    }

    #[test]
    fn load_tsv_strict_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.tsv", "sentence\tlabel\ngood\t1\nno label here\nbad\t0\n");
        match load_tsv(&p, &TsvSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let lenient = TsvSchema {
            strict: false,
            ..TsvSchema::default()
        };
        let raw = load_tsv(&p, &lenient).unwrap();
        assert_eq!(raw.records.len(), 2);
        assert_eq!(raw.malformed.len(), 1);
        assert_eq!(raw.malformed[0].line, 3);
    }

    #[test]
    fn load_tsv_missing_file() {
        let err = load_tsv(Path::new("/nonexistent/x.tsv"), &TsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/x.tsv"));
    }

    #[test]
    fn encode_truncates() {
        let raw = RawDataset {
            path: PathBuf::new(),
            records: vec![RawRecord {
                line: 1,
                text: "a b c d e".into(),
                label: 0,
            }],
            malformed: vec![],
        };
        let v = Vocabulary::from_tokens(["a", "b"]);
        let ds = raw.encode(&v, 3, Split::Train, 2, 0).unwrap();
        assert_eq!(ds.sequences[0].token_ids, vec![2, 3, UNK_ID]);
    }

    #[test]
    fn manifest_loads_and_dedupes() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "train.tsv", "sentence\tlabel\na fine day\t1\nawful\t0\n");
        write(dir.path(), "dev.tsv", "sentence\tlabel\nawful\t0\nsplendid\t1\n");
        let m = write(dir.path(), "data.manifest", "train=train.tsv\ndev=dev.tsv\nmax_len=8\n");
        let splits = DatasetManifest::read(&m).unwrap().load().unwrap();
        assert_eq!(splits.train.len(), 2);
        let dev = splits.dev.unwrap();
        assert_eq!(dev.len(), 1);
        assert_eq!(splits.overlap_removed, 1);
        assert!(dev.is_disjoint_from(&splits.train));
        assert_ne!(splits.vocab.id("?"), UNK_ID);
        assert_eq!(dev.sequences[0].token_ids, vec![UNK_ID]);

        let bad = write(dir.path(), "bad.manifest", "train=train.tsv\nwhat=1\n");
        assert!(matches!(DatasetManifest::read(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn synth_is_deterministic_and_disjoint() {
        let rng = RngStream::from_seed(7);
        let a = synth_dataset(100, 50, 8, 2, &rng).unwrap();
        let b = synth_dataset(100, 50, 8, 2, &rng).unwrap();
        assert_eq!(a, b);
        let spec = SynthSpec {
            vocab_size: 50,
            seq_len: 8,
            num_classes: 2,
        };
        for s in &a.sequences {
            assert!(s.token_ids.iter().any(|t| spec.markers(s.label).contains(t)));
            for other in (0..2).filter(|&c| c != s.label) {
                assert!(!s.token_ids.iter().any(|t| spec.markers(other).contains(t)));
            }
            assert!(s.token_ids.len() <= 8 && !s.token_ids.is_empty());
        }
        assert_eq!(a.label_counts(), vec![50, 50]);
    }

    #[test]
    fn synth_rejects_infeasible() {
        let rng = RngStream::from_seed(1);
        assert!(matches!(synth_dataset(10, 3, 8, 2, &rng), Err(Error::Config(_))));
        assert!(matches!(synth_dataset(10, 50, 0, 2, &rng), Err(Error::Config(_))));
        assert!(matches!(synth_dataset(10, 50, 8, 1, &rng), Err(Error::Config(_))));
    }

    #[test]
    fn synth_splits_disjoint() {
        let spec = SynthSpec {
            vocab_size: 60,
            seq_len: 10,
            num_classes: 3,
        };
        let s = synth_splits([200, 50, 50], spec, &RngStream::from_seed(3)).unwrap();
        let dev = s.dev.unwrap();
        let test = s.test.unwrap();
        assert!(dev.is_disjoint_from(&s.train));
        assert!(test.is_disjoint_from(&s.train));
        assert!(test.is_disjoint_from(&dev));
        assert_eq!(s.vocab.len(), 60);
    }

    /// Softmax regression on bag-of-words counts, trained by full-batch
    /// gradient descent; independent of the model module.
    #[test]
    fn synth_is_linearly_separable() {
        let ds = synth_dataset(100, 50, 8, 2, &RngStream::from_seed(7)).unwrap();
        let (v, c) = (50, 2);
        let feats: Vec<Vec<f64>> = ds
            .sequences
            .iter()
            .map(|s| {
                let mut f = vec![0.0; v];
                for &t in &s.token_ids {
                    f[t] += 1.0;
                }
                f
            })
            .collect();
        let mut w = vec![vec![0.0; v]; c];
        let predict = |w: &[Vec<f64>], f: &[f64]| -> Vec<f64> {
            w.iter()
                .map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum())
                .collect()
        };
        for _ in 0..500 {
            let mut grad = vec![vec![0.0; v]; c];
            for (f, s) in feats.iter().zip(&ds.sequences) {
                let z = predict(&w, f);
                let m = z.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
                let sum: f64 = e.iter().sum();
                for k in 0..c {
                    let p = e[k] / sum - if k == s.label { 1.0 } else { 0.0 };
                    for j in 0..v {
                        grad[k][j] += p * f[j];
                    }
                }
            }
            for k in 0..c {
                for j in 0..v {
                    w[k][j] -= 0.5 * grad[k][j] / feats.len() as f64;
                }
            }
        }
        let correct = feats
            .iter()
            .zip(&ds.sequences)
            .filter(|(f, s)| {
                let z = predict(&w, f);
                let pred = if z[1] > z[0] { 1 } else { 0 };
                pred == s.label
            })
            .count();
        assert_eq!(correct, 100);
    }
}
