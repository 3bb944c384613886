//! Run configuration read from a `key=value` file.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::augment::{EdaOp, FreeLbConfig, RpnConfig, RpnVariant, ShuffleScope};
use crate::error::{Error, Result};
use crate::kv::KvFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Baseline,
    Rpn,
    FreeLb,
    FreeLbRpn,
    Aeda,
    EdaLite,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Baseline,
        Mode::Rpn,
        Mode::FreeLb,
        Mode::FreeLbRpn,
        Mode::Aeda,
        Mode::EdaLite,
    ];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Rpn => "rpn",
            Mode::FreeLb => "freelb",
            Mode::FreeLbRpn => "freelb_rpn",
            Mode::Aeda => "aeda",
            Mode::EdaLite => "eda_lite",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// When the parameters move during an RPN batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// After every step, with the running gradient sum.
    #[default]
    Interleaved,
    /// Once per batch, with the sum of the scaled step gradients.
    Averaged,
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateRule::Interleaved => "interleaved",
            UpdateRule::Averaged => "averaged",
        })
    }
}

impl FromStr for UpdateRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "interleaved" => Ok(UpdateRule::Interleaved),
            "averaged" => Ok(UpdateRule::Averaged),
            other => Err(format!("expected interleaved or averaged, got {other:?}")),
        }
    }
}

/// Whether virtual samples pass gradient back to the embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingFlow {
    /// Only the original sample's pass reaches the embeddings.
    #[default]
    Detached,
    /// Every pass reaches the embeddings through the cells' origin rows.
    Full,
}

impl fmt::Display for EmbeddingFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingFlow::Detached => "detached",
            EmbeddingFlow::Full => "full",
        })
    }
}

impl FromStr for EmbeddingFlow {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "detached" => Ok(EmbeddingFlow::Detached),
            "full" => Ok(EmbeddingFlow::Full),
            other => Err(format!("expected detached or full, got {other:?}")),
        }
    }
}

/// Offline token-level expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAugConfig {
    /// Augmented copies added per training sample.
    pub copies: usize,
    pub aeda_ratio: f64,
    pub eda_op: EdaOp,
    pub eda_strength: f64,
}

impl Default for TokenAugConfig {
    fn default() -> Self {
        Self {
            copies: 3,
            aeda_ratio: 0.3,
            eda_op: EdaOp::RandomSwap,
            eda_strength: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub update_rule: UpdateRule,
    pub embedding_flow: EmbeddingFlow,
    pub rpn: RpnConfig,
    pub freelb: FreeLbConfig,
    pub aug: TokenAugConfig,
    /// Record elapsed seconds in the metrics; off keeps the CSV reproducible.
    pub wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            seed: 0,
            lr: 0.05,
            momentum: 0.9,
            epochs: 10,
            batch_size: 32,
            eval_every: 1,
            update_rule: UpdateRule::Interleaved,
            embedding_flow: EmbeddingFlow::Detached,
            rpn: RpnConfig::default(),
            freelb: FreeLbConfig::default(),
            aug: TokenAugConfig::default(),
            wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        // Every section is checked regardless of mode.
        self.rpn.validate()?;
        self.freelb.validate()?;
        if !(self.aug.aeda_ratio >= 0.0 && self.aug.aeda_ratio.is_finite()) {
            return Err(Error::config("aug.aeda_ratio must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.aug.eda_strength) {
            return Err(Error::config("aug.eda_strength outside [0, 1]"));
        }
        if self.embedding_flow == EmbeddingFlow::Full && self.rpn.variant == RpnVariant::Literal {
            return Err(Error::config(
                "embedding_flow=full needs rpn.variant=shuffled: literal outputs have no single origin cell",
            ));
        }
        Ok(())
    }
}

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic {
        train: usize,
        dev: usize,
        test: usize,
        vocab_size: usize,
        seq_len: usize,
        num_classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub embed_dim: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters: usize,
    pub dropout: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            kernel_sizes: vec![3, 4, 5],
            filters: 32,
            dropout: 0.1,
        }
    }
}

/// Grid over RPN `ε` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub epsilon: Vec<f64>,
    pub steps: Vec<usize>,
    pub parallel: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            epsilon: vec![0.1, 0.2, 0.5],
            steps: vec![1, 3, 5],
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 2000, 4000, 8000],
            trials: 5,
        }
    }
}

/// Everything a CLI run reads from its config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub train: TrainConfig,
    pub model: ModelOptions,
    pub data: DataSource,
    pub grid: GridConfig,
    pub bench: BenchConfig,
}

/// Hyperparameter bundles taken from the published experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// `ε = 0.3`, `K = 3`, learning rate `3e-5`.
    PaperRpn,
    /// FreeLB (`α = 1e-4`, bound `1e-2`, 3 ascent steps) combined with RPN at `ε = 0.3`.
    PaperCombo,
    /// TextCNN run: kernel lengths 10/20/30, learning rate `1e-4`, 10 epochs, `ε = 0.3`.
    PaperTextCnn,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::PaperRpn => "paper_rpn",
            Preset::PaperCombo => "paper_combo",
            Preset::PaperTextCnn => "paper_textcnn",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper_rpn" => Ok(Preset::PaperRpn),
            "paper_combo" => Ok(Preset::PaperCombo),
            "paper_textcnn" => Ok(Preset::PaperTextCnn),
            other => Err(format!(
                "unknown preset {other:?} (paper_rpn, paper_combo, paper_textcnn)"
            )),
        }
    }
}

impl Preset {
    fn apply(self, train: &mut TrainConfig, model: &mut ModelOptions) {
        match self {
            Preset::PaperRpn => {
                train.mode = Mode::Rpn;
                train.rpn.epsilon = 0.3;
                train.rpn.steps = 3;
                train.lr = 3e-5;
            }
            Preset::PaperCombo => {
                train.mode = Mode::FreeLbRpn;
                train.rpn.epsilon = 0.3;
                train.rpn.steps = 3;
                train.freelb = FreeLbConfig::default();
                train.lr = 3e-5;
            }
            Preset::PaperTextCnn => {
                train.rpn.epsilon = 0.3;
                train.rpn.steps = 3;
                train.lr = 1e-4;
                train.epochs = 10;
                model.kernel_sizes = vec![10, 20, 30];
            }
        }
    }
}

impl RunConfig {
    /// Reads every known key; anything left over is an error. `seed` is
    /// required. A `preset` supplies defaults that explicit keys override.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut t = TrainConfig::default();
        let mut m = ModelOptions::default();
        let preset: Option<Preset> = kv.get("preset")?;
        if let Some(p) = preset {
            p.apply(&mut t, &mut m);
        }
        t.seed = kv.require("seed")?;
        t.mode = kv.get_or("mode", t.mode)?;
        t.lr = kv.get_or("lr", t.lr)?;
        t.momentum = kv.get_or("momentum", t.momentum)?;
        t.epochs = kv.get_or("epochs", t.epochs)?;
        t.batch_size = kv.get_or("batch_size", t.batch_size)?;
        t.eval_every = kv.get_or("eval_every", t.eval_every)?;
        t.update_rule = kv.get_or("update_rule", t.update_rule)?;
        t.embedding_flow = kv.get_or("embedding_flow", t.embedding_flow)?;
        t.wall_time = kv.get_or("metrics.wall_time", t.wall_time)?;

        t.rpn.epsilon = kv.get_or("rpn.epsilon", t.rpn.epsilon)?;
        t.rpn.steps = kv.get_or("rpn.steps", t.rpn.steps)?;
        t.rpn.shuffle_scope = kv.get_or::<ShuffleScope>("rpn.shuffle_scope", t.rpn.shuffle_scope)?;
        t.rpn.variant = kv.get_or::<RpnVariant>("rpn.variant", t.rpn.variant)?;
        t.rpn.mask_padding = kv.get_or("rpn.mask_padding", t.rpn.mask_padding)?;

        t.freelb.norm_bound = kv.get_or("freelb.norm_bound", t.freelb.norm_bound)?;
        t.freelb.step_size = kv.get_or("freelb.step_size", t.freelb.step_size)?;
        t.freelb.ascent_steps = kv.get_or("freelb.ascent_steps", t.freelb.ascent_steps)?;
        t.freelb.init_range = kv.get_or("freelb.init_range", t.freelb.init_range)?;

        t.aug.copies = kv.get_or("aug.copies", t.aug.copies)?;
        t.aug.aeda_ratio = kv.get_or("aug.aeda_ratio", t.aug.aeda_ratio)?;
        t.aug.eda_op = kv.get_or::<EdaOp>("aug.eda_op", t.aug.eda_op)?;
        t.aug.eda_strength = kv.get_or("aug.eda_strength", t.aug.eda_strength)?;

        m.embed_dim = kv.get_or("model.embed_dim", m.embed_dim)?;
        if let Some(ks) = kv.get_list("model.kernel_sizes")? {
            m.kernel_sizes = ks;
        }
        m.filters = kv.get_or("model.filters", m.filters)?;
        m.dropout = kv.get_or("model.dropout", m.dropout)?;

        let data = match kv.get::<String>("data.manifest")? {
            Some(p) => {
                let p = PathBuf::from(p);
                let p = match kv.source().and_then(|s| s.parent()) {
                    Some(base) if p.is_relative() => base.join(p),
                    _ => p,
                };
                DataSource::Manifest(p)
            }
            None => DataSource::Synthetic {
                train: kv.get_or("synth.train", 2000)?,
                dev: kv.get_or("synth.dev", 500)?,
                test: kv.get_or("synth.test", 500)?,
                vocab_size: kv.get_or("synth.vocab_size", 400)?,
                seq_len: kv.get_or("synth.seq_len", 16)?,
                num_classes: kv.get_or("synth.num_classes", 2)?,
            },
        };

        let mut grid = GridConfig::default();
        if let Some(e) = kv.get_list("grid.epsilon")? {
            grid.epsilon = e;
        }
        if let Some(s) = kv.get_list("grid.steps")? {
            grid.steps = s;
        }
        grid.parallel = kv.get_or("grid.parallel", grid.parallel)?;

        let mut bench = BenchConfig::default();
        if let Some(s) = kv.get_list("bench.sizes")? {
            bench.sizes = s;
        }
        bench.trials = kv.get_or("bench.trials", bench.trials)?;

        kv.reject_unused()?;
        t.validate()?;
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(Error::config(format!("model.dropout {} outside [0, 1)", m.dropout)));
        }
        Ok(Self {
            preset,
            train: t,
            model: m,
            data,
            grid,
            bench,
        })
    }

    /// Every resolved value as `(key, value)` pairs, in the same key space
    /// [`RunConfig::from_kv`] reads.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut out: Vec<(&str, String)> = vec![
            ("seed", t.seed.to_string()),
            ("mode", t.mode.to_string()),
            ("lr", t.lr.to_string()),
            ("momentum", t.momentum.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("update_rule", t.update_rule.to_string()),
            ("embedding_flow", t.embedding_flow.to_string()),
            ("metrics.wall_time", t.wall_time.to_string()),
            ("rpn.epsilon", t.rpn.epsilon.to_string()),
            ("rpn.steps", t.rpn.steps.to_string()),
            ("rpn.shuffle_scope", t.rpn.shuffle_scope.to_string()),
            ("rpn.variant", t.rpn.variant.to_string()),
            ("rpn.mask_padding", t.rpn.mask_padding.to_string()),
            ("freelb.norm_bound", t.freelb.norm_bound.to_string()),
            ("freelb.step_size", t.freelb.step_size.to_string()),
            ("freelb.ascent_steps", t.freelb.ascent_steps.to_string()),
            ("freelb.init_range", t.freelb.init_range.to_string()),
            ("aug.copies", t.aug.copies.to_string()),
            ("aug.aeda_ratio", t.aug.aeda_ratio.to_string()),
            ("aug.eda_op", t.aug.eda_op.to_string()),
            ("aug.eda_strength", t.aug.eda_strength.to_string()),
            ("model.embed_dim", self.model.embed_dim.to_string()),
            ("model.kernel_sizes", join(&self.model.kernel_sizes)),
            ("model.filters", self.model.filters.to_string()),
            ("model.dropout", self.model.dropout.to_string()),
            ("grid.epsilon", join(&self.grid.epsilon)),
            ("grid.steps", join(&self.grid.steps)),
            ("grid.parallel", self.grid.parallel.to_string()),
            ("bench.sizes", join(&self.bench.sizes)),
            ("bench.trials", self.bench.trials.to_string()),
        ];
        if let Some(p) = self.preset {
            out.push(("preset", p.to_string()));
        }
        match &self.data {
            DataSource::Manifest(p) => out.push(("data.manifest", p.display().to_string())),
            DataSource::Synthetic {
                train,
                dev,
                test,
                vocab_size,
                seq_len,
                num_classes,
            } => out.extend([
                ("synth.train", train.to_string()),
                ("synth.dev", dev.to_string()),
                ("synth.test", test.to_string()),
                ("synth.vocab_size", vocab_size.to_string()),
                ("synth.seq_len", seq_len.to_string()),
                ("synth.num_classes", num_classes.to_string()),
            ]),
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::render;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_kv(&mut KvFile::parse(text, None)?)
    }

    #[test]
    fn seed_is_required() {
        let err = parse("mode=rpn\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse("seed=1\nrpn.epsilonn=0.3\n").unwrap_err();
        assert!(err.to_string().contains("rpn.epsilonn"), "{err}");
    }

    #[test]
    fn preset_then_override() {
        let c = parse("seed=3\npreset=paper_rpn\nrpn.steps=5\n").unwrap();
        assert_eq!(c.train.mode, Mode::Rpn);
        assert_eq!(c.train.rpn.epsilon, 0.3);
        assert_eq!(c.train.rpn.steps, 5);
        assert_eq!(c.train.lr, 3e-5);
        let c = parse("seed=3\npreset=paper_combo\n").unwrap();
        assert_eq!(c.train.mode, Mode::FreeLbRpn);
        assert_eq!((c.train.freelb.step_size, c.train.freelb.norm_bound), (1e-4, 1e-2));
        let c = parse("seed=3\npreset=paper_textcnn\n").unwrap();
        assert_eq!(c.model.kernel_sizes, vec![10, 20, 30]);
        assert_eq!((c.train.lr, c.train.epochs), (1e-4, 10));
    }

    #[test]
    fn pairs_reparse_to_same_config() {
        let c =
            parse("seed=9\nmode=freelb_rpn\nrpn.epsilon=0.2\nmodel.kernel_sizes=2,3\ngrid.parallel=true\n").unwrap();
        let text = render(c.pairs());
        assert_eq!(parse(&text).unwrap(), c);
        assert!(text.contains("rpn.epsilon=0.2\n"));
    }

    #[test]
    fn invalid_values() {
        assert!(parse("seed=1\nmode=rpn\nrpn.epsilon=1.5\n").is_err());
        assert!(parse("seed=1\nmode=warp\n").is_err());
        assert!(parse("seed=1\nbatch_size=0\n").is_err());
        assert!(parse("seed=1\nembedding_flow=full\nrpn.variant=literal\n").is_err());
    }
}
