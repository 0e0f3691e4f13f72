use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attention::InferMode;
use crate::error::{Error, Result};

/// Subcommands of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Eval,
    Bench,
    Saliency,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Bench => "bench",
            Command::Saliency => "saliency",
        }
    }
}

/// Dataset families produced by `synth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Cluttered,
    Centred,
    Wild,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Cluttered => "cluttered",
            DataKind::Centred => "centred",
            DataKind::Wild => "wild",
        }
    }

    pub fn default_size(self) -> (usize, usize) {
        match self {
            DataKind::Cluttered => (40, 40),
            DataKind::Centred => (40, 80),
            DataKind::Wild => (48, 96),
        }
    }
}

/// Which model a command trains or evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    Dcn,
    Coarse,
    Fine,
    SoftAttention,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::Dcn => "dcn",
            PlanKind::Coarse => "coarse",
            PlanKind::Fine => "fine",
            PlanKind::SoftAttention => "soft-attention",
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub out: PathBuf,
    pub seed: u64,
    pub preset: String,
    pub k: usize,
    pub scales: Vec<f64>,
    pub mode: InferMode,
    pub epochs: usize,
    pub lambda: f64,
    pub batch: usize,
    pub lr: f64,
    pub threads: usize,
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub plan: PlanKind,
    pub kind: DataKind,
    pub n: usize,
    pub input: Option<(usize, usize)>,
    pub context: Option<usize>,
    pub sizes: Vec<usize>,
}

/// Keys accepted in config files and as `--key` flags.
pub const KEYS: [&str; 21] = [
    "out",
    "seed",
    "preset",
    "k",
    "scales",
    "mode",
    "epochs",
    "lambda",
    "batch",
    "lr",
    "threads",
    "data",
    "test",
    "checkpoint",
    "checkpoint_every",
    "plan",
    "kind",
    "n",
    "input",
    "context",
    "sizes",
];

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> Error {
    Error::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| invalid(key, value, format!("expected {what}")))
}

/// `HxW` extents.
pub fn parse_extent(key: &str, value: &str) -> Result<(usize, usize)> {
    let (h, w) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| invalid(key, value, "expected HxW"))?;
    let h: usize = num(key, h, "HxW")?;
    let w: usize = num(key, w, "HxW")?;
    if h == 0 || w == 0 {
        return Err(invalid(key, value, "extents must be positive"));
    }
    Ok((h, w))
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            out: PathBuf::from("out"),
            seed: 0,
            preset: "cmnist".into(),
            k: 4,
            scales: vec![1.0],
            mode: InferMode::SwapIn,
            epochs: 10,
            lambda: 0.5,
            batch: 32,
            lr: 1e-3,
            threads: 1,
            data: None,
            test: None,
            checkpoint: None,
            checkpoint_every: 0,
            plan: PlanKind::Dcn,
            kind: DataKind::Cluttered,
            n: 1000,
            input: None,
            context: None,
            sizes: vec![50, 100, 200, 400],
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.replace('-', "_").as_str() {
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = num(key, v, "an unsigned integer")?,
            "preset" => match v {
                "cmnist" | "svhn" | "toy" | "seq" => self.preset = v.to_string(),
                _ => return Err(invalid(key, v, "expected cmnist, svhn, toy or seq")),
            },
            "k" => self.k = num(key, v, "a non-negative integer")?,
            "scales" => {
                let scales = v
                    .split(',')
                    .map(|s| num::<f64>(key, s, "comma-separated numbers"))
                    .collect::<Result<Vec<_>>>()?;
                if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
                    return Err(invalid(key, v, "scales must lie in (0, 1]"));
                }
                self.scales = scales;
            }
            "mode" => {
                self.mode = match v {
                    "swap-in" => InferMode::SwapIn,
                    "fine-only" => InferMode::FineOnly,
                    _ => return Err(invalid(key, v, "expected swap-in or fine-only")),
                }
            }
            "epochs" => self.epochs = num(key, v, "a non-negative integer")?,
            "lambda" => {
                let l: f64 = num(key, v, "a number")?;
                if !(0.0..=1.0).contains(&l) {
                    return Err(invalid(key, v, "must lie in [0, 1]"));
                }
                self.lambda = l;
            }
            "batch" => {
                self.batch = num(key, v, "a positive integer")?;
                if self.batch == 0 {
                    return Err(invalid(key, v, "must be positive"));
                }
            }
            "lr" => {
                self.lr = num(key, v, "a number")?;
                if !(self.lr > 0.0) {
                    return Err(invalid(key, v, "must be positive"));
                }
            }
            "threads" => {
                self.threads = num(key, v, "a positive integer")?;
                if self.threads == 0 {
                    return Err(invalid(key, v, "must be positive"));
                }
            }
            "data" => self.data = Some(PathBuf::from(v)),
            "test" => self.test = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "checkpoint_every" => self.checkpoint_every = num(key, v, "a non-negative integer")?,
            "plan" => {
                self.plan = match v {
                    "dcn" => PlanKind::Dcn,
                    "coarse" => PlanKind::Coarse,
                    "fine" => PlanKind::Fine,
                    "soft-attention" => PlanKind::SoftAttention,
                    _ => return Err(invalid(key, v, "expected dcn, coarse, fine or soft-attention")),
                }
            }
            "kind" => {
                self.kind = match v {
                    "cluttered" => DataKind::Cluttered,
                    "centred" => DataKind::Centred,
                    "wild" => DataKind::Wild,
                    _ => return Err(invalid(key, v, "expected cluttered, centred or wild")),
                }
            }
            "n" => self.n = num(key, v, "a non-negative integer")?,
            "input" => self.input = Some(parse_extent(key, v)?),
            "context" => self.context = Some(num(key, v, "a non-negative integer")?),
            "sizes" => {
                self.sizes = v
                    .split(',')
                    .map(|s| num::<usize>(key, s, "comma-separated integers"))
                    .collect::<Result<_>>()?;
            }
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every `key=value` line of a config file. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("config line {}: expected key=value", no + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Cross-field checks made before any work starts.
    pub fn validate(&self) -> Result<()> {
        let needs_data = matches!(self.command, Command::Train | Command::Eval | Command::Saliency);
        if needs_data {
            let data = self.data.as_ref().ok_or_else(|| invalid("data", "", "required by this command"))?;
            for p in [Some(data), self.test.as_ref()].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::MissingPath(p.clone()));
                }
            }
        }
        if let Some(c) = &self.checkpoint {
            if !c.exists() {
                return Err(Error::MissingPath(c.clone()));
            }
        }
        if self.scales.len() > 1 && !matches!(self.preset.as_str(), "svhn" | "seq") {
            return Err(invalid("scales", &self.scales_text(), "multiple scales need a sequence preset"));
        }
        if self.command == Command::Train && self.plan == PlanKind::SoftAttention {
            return Err(invalid("plan", "soft-attention", "has no parameters of its own to train"));
        }
        Ok(())
    }

    fn scales_text(&self) -> String {
        self.scales.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
    }

    /// Every setting as `key=value` lines, readable by [`apply_text`].
    ///
    /// [`apply_text`]: RunConfig::apply_text
    pub fn echo(&self) -> String {
        let mut out = format!("# command {}\n", self.command.name());
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut line = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{k}={v}");
            }
        };
        line("out", Some(self.out.display().to_string()));
        line("seed", Some(self.seed.to_string()));
        line("preset", Some(self.preset.clone()));
        line("k", Some(self.k.to_string()));
        line("scales", Some(self.scales_text()));
        line(
            "mode",
            Some(match self.mode {
                InferMode::SwapIn => "swap-in".into(),
                InferMode::FineOnly => "fine-only".into(),
            }),
        );
        line("epochs", Some(self.epochs.to_string()));
        line("lambda", Some(self.lambda.to_string()));
        line("batch", Some(self.batch.to_string()));
        line("lr", Some(self.lr.to_string()));
        line("threads", Some(self.threads.to_string()));
        line("data", opt(&self.data));
        line("test", opt(&self.test));
        line("checkpoint", opt(&self.checkpoint));
        line("checkpoint_every", Some(self.checkpoint_every.to_string()));
        line("plan", Some(self.plan.name().into()));
        line("kind", Some(self.kind.name().into()));
        line("n", Some(self.n.to_string()));
        line("input", self.input.map(|(h, w)| format!("{h}x{w}")));
        line("context", self.context.map(|c| c.to_string()));
        line(
            "sizes",
            Some(self.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")),
        );
        out
    }
}
