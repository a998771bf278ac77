//! Flat key-value run configuration (`key = value` lines, `#` comments).

use crate::{Error, Result};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Neighbor-fusion strategy for the retrieval-augmented feature.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Fusion {
    Average,
    Attention,
    Max,
}

impl FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Fusion::Average),
            "attention" => Ok(Fusion::Attention),
            "max" => Ok(Fusion::Max),
            other => Err(Error::Config(format!("unknown fusion {other}"))),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Average => "average",
            Fusion::Attention => "attention",
            Fusion::Max => "max",
        })
    }
}

/// Reading of the attention-pool squashing function.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SigmaRule {
    /// Elementwise sigmoid; slot weights are unnormalized.
    Sigmoid,
    /// Softmax across slots; weights sum to one per entry.
    Softmax,
}

impl FromStr for SigmaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(SigmaRule::Sigmoid),
            "softmax" => Ok(SigmaRule::Softmax),
            other => Err(Error::Config(format!("unknown sigma_rule {other}"))),
        }
    }
}

impl fmt::Display for SigmaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaRule::Sigmoid => "sigmoid",
            SigmaRule::Softmax => "softmax",
        })
    }
}

/// Which context module feeds the prediction head.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    /// First-cycle kernel correlation (the main model).
    Mtgc,
    /// First-cycle-to-video cross-attention baseline.
    Fcv,
    /// Video self-similarity baseline.
    Vv,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "mtgc" => Ok(Variant::Mtgc),
            "fcv" => Ok(Variant::Fcv),
            "vv" => Ok(Variant::Vv),
            other => Err(Error::Config(format!("unknown baseline {other}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mtgc => "none",
            Variant::Fcv => "fcv",
            Variant::Vv => "vv",
        })
    }
}

/// All tunable knobs of a run, with desk-scale defaults.
#[derive(Clone, Debug)]
pub struct Config {
    pub k: usize,
    pub channels: usize,
    pub enc_hidden: usize,
    pub feat_dim: usize,
    pub scales: Vec<usize>,
    pub normalize_mtgc: bool,
    pub alpha: f64,
    pub topk: usize,
    pub fusion: Fusion,
    pub sigma_rule: SigmaRule,
    pub exclude_self: bool,
    pub baseline: Variant,
    pub attn_dim: usize,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub steps_pretrain: usize,
    pub steps_finetune: usize,
    pub tta_steps: usize,
    pub tta_lr: f64,
    pub seed: u64,
    pub round_obo: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            k: 4,
            channels: 8,
            enc_hidden: 32,
            feat_dim: 32,
            scales: vec![3, 4, 5],
            normalize_mtgc: true,
            alpha: 10.0,
            topk: 5,
            fusion: Fusion::Attention,
            sigma_rule: SigmaRule::Sigmoid,
            exclude_self: false,
            baseline: Variant::Mtgc,
            attn_dim: 16,
            // 10:1 step ratio and ~4:1 lr ratio between pre-training and
            // fine-tuning, rescaled to desk-scale model sizes.
            lr_pretrain: 8e-4,
            lr_finetune: 8e-5,
            steps_pretrain: 6000,
            steps_finetune: 600,
            tta_steps: 10,
            tta_lr: 1e-4,
            seed: 0,
            round_obo: false,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: missing '='", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |e: String| Error::Config(format!("line {}: {key}: {e}", lineno + 1));
            match key {
                "k" => cfg.k = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "channels" => cfg.channels = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "enc_hidden" => cfg.enc_hidden = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "feat_dim" => cfg.feat_dim = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "scales" => {
                    cfg.scales = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| bad(e.to_string()))?;
                }
                "normalize_mtgc" => cfg.normalize_mtgc = parse_bool(value).map_err(bad)?,
                "alpha" => cfg.alpha = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "topk" => cfg.topk = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "fusion" => cfg.fusion = value.parse()?,
                "sigma_rule" => cfg.sigma_rule = value.parse()?,
                "exclude_self" => cfg.exclude_self = parse_bool(value).map_err(bad)?,
                "baseline" => cfg.baseline = value.parse()?,
                "attn_dim" => cfg.attn_dim = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "lr_pretrain" => cfg.lr_pretrain = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "lr_finetune" => cfg.lr_finetune = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "steps_pretrain" => cfg.steps_pretrain = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "steps_finetune" => cfg.steps_finetune = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "tta_steps" => cfg.tta_steps = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "tta_lr" => cfg.tta_lr = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "seed" => cfg.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "round_obo" => cfg.round_obo = parse_bool(value).map_err(bad)?,
                other => return Err(Error::Config(format!("line {}: unknown key {other}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.k % 2 != 0 {
            return Err(Error::Config(format!("k = {} must be even and >= 2", self.k)));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("scales must be nonempty".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let scales: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
        format!(
            "k = {}\nchannels = {}\nenc_hidden = {}\nfeat_dim = {}\nscales = {}\n\
             normalize_mtgc = {}\nalpha = {}\ntopk = {}\nfusion = {}\nsigma_rule = {}\n\
             exclude_self = {}\nbaseline = {}\nattn_dim = {}\nlr_pretrain = {}\n\
             lr_finetune = {}\nsteps_pretrain = {}\nsteps_finetune = {}\ntta_steps = {}\n\
             tta_lr = {}\nseed = {}\nround_obo = {}\n",
            self.k,
            self.channels,
            self.enc_hidden,
            self.feat_dim,
            scales.join(","),
            self.normalize_mtgc,
            self.alpha,
            self.topk,
            self.fusion,
            self.sigma_rule,
            self.exclude_self,
            self.baseline,
            self.attn_dim,
            self.lr_pretrain,
            self.lr_finetune,
            self.steps_pretrain,
            self.steps_finetune,
            self.tta_steps,
            self.tta_lr,
            self.seed,
            self.round_obo,
        )
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected bool, got {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        let parsed = Config::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed.scales, cfg.scales);
        assert_eq!(parsed.alpha, cfg.alpha);
        assert_eq!(parsed.fusion, cfg.fusion);
        assert_eq!(parsed.steps_pretrain, cfg.steps_pretrain);
    }

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = Config::parse("# comment\nalpha = 20\nscales = 2,3,4,5,6\nfusion = max\n").unwrap();
        assert_eq!(cfg.alpha, 20.0);
        assert_eq!(cfg.scales, vec![2, 3, 4, 5, 6]);
        assert_eq!(cfg.fusion, Fusion::Max);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("bogus = 1\n").is_err());
        assert!(Config::parse("alpha = many\n").is_err());
        assert!(Config::parse("k = 3\n").is_err());
    }
}
