//! Plain-text `key=value` configuration with dotted section keys. Command
//! line flags of the same dotted name (`--train.epochs 5` or
//! `--train.epochs=5`) override file entries; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use iuzawa_core::grf::ExperimentKind;
use iuzawa_net::train::{LossKind, TrainConfig};
use iuzawa_net::{NetConfig, Tying};

use crate::CliError;

pub const TRAIN_KEYS: &[&str] = &[
    "data.train",
    "data.test",
    "out.checkpoint",
    "out.loss_curve",
    "out.report",
    "net.layers",
    "net.tying",
    "net.tau",
    "net.m_p",
    "net.k_max",
    "net.fourier_layers",
    "net.qa_width",
    "net.qa_depth",
    "net.gamma",
    "net.pad_to",
    "net.seed",
    "train.epochs",
    "train.batch_size",
    "train.base_lr",
    "train.decay",
    "train.every",
    "train.weight_decay",
    "train.eps_floor",
    "train.loss",
    "train.seed",
    "train.augment",
    "train.checkpoint_every",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

impl KeyValues {
    fn insert(&mut self, key: &str, value: &str, known: &[&str]) -> Result<(), CliError> {
        if !known.contains(&key) {
            return Err(usage(format!("unknown configuration key `{key}`")));
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn parse(text: &str, known: &[&str]) -> Result<Self, CliError> {
        let mut kv = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            kv.insert(k.trim(), v.trim(), known)?;
        }
        Ok(kv)
    }

    /// Applies `--key=value` / `--key value` flags.
    pub fn apply_flags(&mut self, args: &[String], known: &[&str]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| usage(format!("unexpected argument `{arg}`")))?;
            match flag.split_once('=') {
                Some((k, v)) => self.insert(k, v, known)?,
                None => {
                    let v = it.next().ok_or_else(|| usage(format!("flag --{flag} needs a value")))?;
                    self.insert(flag, v, known)?;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| usage(format!("invalid value `{v}` for {key}"))))
            .transpose()
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<(), CliError> {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn required_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key).ok_or_else(|| usage(format!("missing required key {key}")))
    }
}

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub data_train: PathBuf,
    pub data_test: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub loss_curve: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub train: TrainConfig,
    kv: KeyValues,
}

impl TrainSettings {
    pub fn from_kv(kv: KeyValues) -> Result<Self, CliError> {
        let mut train = TrainConfig::default();
        kv.set("train.epochs", &mut train.epochs)?;
        kv.set("train.batch_size", &mut train.batch_size)?;
        kv.set("train.base_lr", &mut train.base_lr)?;
        kv.set("train.decay", &mut train.decay)?;
        kv.set("train.every", &mut train.every)?;
        kv.set("train.weight_decay", &mut train.weight_decay)?;
        kv.set("train.eps_floor", &mut train.eps_floor)?;
        kv.set("train.seed", &mut train.seed)?;
        kv.set("train.augment", &mut train.augment)?;
        kv.set("train.checkpoint_every", &mut train.checkpoint_every)?;
        if let Some(l) = kv.get("train.loss") {
            train.loss = match l {
                "l1" => LossKind::L1Ratio,
                "squared" => LossKind::SquaredL2,
                _ => return Err(usage(format!("train.loss must be l1 or squared, got `{l}`"))),
            };
        }
        let checkpoint = kv.required_path("out.checkpoint")?;
        train.checkpoint_path = Some(checkpoint.clone());
        Ok(Self {
            data_train: kv.required_path("data.train")?,
            data_test: kv.path("data.test"),
            checkpoint,
            loss_curve: kv.path("out.loss_curve"),
            report: kv.path("out.report"),
            train,
            kv,
        })
    }

    /// Architecture for a dataset of `kind` at resolution `m`.
    pub fn net_config(&self, kind: ExperimentKind, m: usize) -> Result<NetConfig, CliError> {
        let kv = &self.kv;
        let mut c = NetConfig::new(kind, m);
        if let Some(t) = kv.get("net.tying") {
            c.tying = match t {
                "shared" => Tying::Shared,
                "free" => Tying::Free,
                _ => return Err(usage(format!("net.tying must be shared or free, got `{t}`"))),
            };
            if c.tying == Tying::Free && kind != ExperimentKind::Parabolic {
                c.layers = 6;
            }
        }
        kv.set("net.layers", &mut c.layers)?;
        kv.set("net.tau", &mut c.tau)?;
        kv.set("net.m_p", &mut c.m_p)?;
        kv.set("net.k_max", &mut c.k_max)?;
        kv.set("net.fourier_layers", &mut c.fourier_layers)?;
        kv.set("net.qa_width", &mut c.qa_width)?;
        kv.set("net.qa_depth", &mut c.qa_depth)?;
        kv.set("net.gamma", &mut c.gamma)?;
        kv.set("net.pad_to", &mut c.pad_to)?;
        kv.set("net.seed", &mut c.seed)?;
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str, flags: &[&str]) -> Result<TrainSettings, CliError> {
        let mut kv = KeyValues::parse(text, TRAIN_KEYS)?;
        let flags: Vec<String> = flags.iter().map(|s| s.to_string()).collect();
        kv.apply_flags(&flags, TRAIN_KEYS)?;
        TrainSettings::from_kv(kv)
    }

    const BASE: &str = "# desk run\ndata.train = d.bin\nout.checkpoint=c.bin\ntrain.batch_size=64\n\n";

    #[test]
    fn file_values_and_flag_overrides() {
        let s = settings(BASE, &["--train.batch_size", "16", "--train.epochs=3", "--net.tying=free"]).unwrap();
        assert_eq!(s.train.batch_size, 16);
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.data_train, PathBuf::from("d.bin"));
        let c = s.net_config(ExperimentKind::EllipticIso, 32).unwrap();
        assert_eq!((c.tying, c.layers), (Tying::Free, 6));
        let s = settings(BASE, &["--net.layers", "4"]).unwrap();
        let c = s.net_config(ExperimentKind::EllipticIso, 32).unwrap();
        assert_eq!((c.tying, c.layers), (Tying::Shared, 4));
    }

    #[test]
    fn unknown_or_malformed_entries_are_usage_errors() {
        for (text, flags) in [
            ("train.batchsize=3\n", vec![]),
            (BASE, vec!["--train.epoch=3"]),
            ("no equals sign\n", vec![]),
            (BASE, vec!["--train.epochs"]),
            (BASE, vec!["--train.epochs", "many"]),
            ("out.checkpoint=c.bin\n", vec![]),
            (BASE, vec!["--train.loss=l3"]),
        ] {
            assert!(matches!(settings(text, &flags), Err(CliError::Usage(_))), "{text:?} {flags:?}");
        }
    }
}
