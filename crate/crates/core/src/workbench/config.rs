//! INI configuration: `key = value` lines grouped under `[section]` headers.
//! Every key is addressed as `section.key`; unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use super::experiment::ExperimentConfig;
use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::model::Pooling;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected a boolean, got `{value}`"),
        )),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `a-b` or `a..b`, both ends inclusive.
fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    let v = value.trim();
    let (a, b) = v
        .split_once("..")
        .or_else(|| v.split_once('-'))
        .ok_or_else(|| Error::config(key, format!("expected `first-last`, got `{value}`")))?;
    Ok((parse(key, a)?, parse(key, b)?))
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Applies one `section.key = value` setting.
pub fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let f = &mut cfg.fixture;
    let s = &mut f.synth;
    let g = &mut cfg.grid;
    let v = value;
    match key {
        "experiment.id" => cfg.experiment = Some(parse(key, v)?),
        "experiment.seed" => f.seed = parse(key, v)?,
        "experiment.out" => cfg.out = PathBuf::from(v.trim()),
        "experiment.threads" => cfg.threads = parse(key, v)?,

        "synth.classes" => s.classes = parse(key, v)?,
        "synth.vocab_size" => s.vocab_size = parse(key, v)?,
        "synth.keywords" => {
            s.keywords = v
                .split(';')
                .map(|set| {
                    set.split(',')
                        .map(|w| w.trim().to_string())
                        .filter(|w| !w.is_empty())
                        .collect()
                })
                .collect();
        }
        "synth.keywords_per_class" => s.keywords_per_class = parse(key, v)?,
        "synth.keywords_per_sample" => s.keywords_per_sample = parse(key, v)?,
        "synth.synonyms_per_word" => s.synonyms_per_word = parse(key, v)?,
        "synth.synonym_rate" => s.synonym_rate = parse(key, v)?,
        "synth.min_len" => s.min_len = parse(key, v)?,
        "synth.max_len" => s.max_len = parse(key, v)?,
        "synth.label_noise" => s.label_noise = parse(key, v)?,
        "synth.train" => s.train = parse(key, v)?,
        "synth.test" => s.test = parse(key, v)?,

        "data.train" => cfg.data.train = path(v),
        "data.test" => cfg.data.test = path(v),
        "data.lexicon" => cfg.data.lexicon = path(v),
        "data.frequencies" => cfg.data.frequencies = path(v),
        "data.model" => cfg.data.model = path(v),

        "model.embed_dim" => f.model.embed_dim = parse(key, v)?,
        "model.hidden_dim" => f.model.hidden_dim = parse(key, v)?,
        "model.pooling" => {
            f.model.pooling = match v.trim() {
                "attention" => Pooling::Attention,
                "mean" => Pooling::Mean,
                other => {
                    return Err(Error::config(
                        key,
                        format!("expected `attention` or `mean`, got `{other}`"),
                    ))
                }
            }
        }
        "model.dropout" => f.model.dropout = parse(key, v)?,
        "model.layer_norm" => f.model.layer_norm = parse_bool(key, v)?,
        "model.init_scale" => f.model.init_scale = parse(key, v)?,
        "model.rarity_offset" => f.rarity_offset = parse(key, v)?,

        "train.lr" => f.train.lr = parse(key, v)?,
        "train.epochs" => f.train.epochs = parse(key, v)?,
        "train.batch_size" => f.train.batch_size = parse(key, v)?,

        "attack.edits" => f.edits = parse(key, v)?,
        "attack.budgets" => cfg.budgets = parse_list(key, v)?,
        "attack.concat_words" => f.concat_words = parse(key, v)?,
        "attack.concat_search" => f.concat_search = parse(key, v)?,
        "attack.concat_lexicon_pool" => f.concat_lexicon_pool = parse_bool(key, v)?,
        "attack.pgd_scale" => f.pgd_scale = parse(key, v)?,
        "attack.pgd_steps" => f.pgd_steps = parse(key, v)?,
        "attack.pgd_step" => f.pgd_step = parse(key, v)?,
        "attack.adversary_beta" => cfg.adversary_beta = Some(parse(key, v)?),

        "detector.detectors" => {
            cfg.detectors = parse_list::<DetectorKind>(key, v)?;
        }
        "detector.mc_samples" => f.mc_samples = parse(key, v)?,
        "detector.detector_train" => f.detector_train = parse(key, v)?,
        "detector.residue_lr" => f.residue.lr = parse(key, v)?,
        "detector.residue_epochs" => f.residue.epochs = parse(key, v)?,
        "detector.residue_batch_size" => f.residue.batch_size = parse(key, v)?,
        "detector.residue_standardize" => f.residue.standardize = parse_bool(key, v)?,

        "analysis.window" => cfg.window = parse(key, v)?,
        "analysis.ranks" => cfg.central_ranks = parse_range(key, v)?,

        "grid.side" => g.data.side = parse(key, v)?,
        "grid.classes" => g.data.classes = parse(key, v)?,
        "grid.levels" => g.data.levels = parse(key, v)?,
        "grid.class_pixels" => g.data.class_pixels = parse(key, v)?,
        "grid.noise" => g.data.noise = parse(key, v)?,
        "grid.train" => g.data.train = parse(key, v)?,
        "grid.test" => g.data.test = parse(key, v)?,
        "grid.hidden_dim" => g.model.hidden_dim = parse(key, v)?,
        "grid.dropout" => g.model.dropout = parse(key, v)?,
        "grid.lr" => g.train.lr = parse(key, v)?,
        "grid.epochs" => g.train.epochs = parse(key, v)?,
        "grid.batch_size" => g.train.batch_size = parse(key, v)?,
        "grid.edits" => g.edits = parse(key, v)?,

        _ => return Err(Error::config(key, "unknown configuration key")),
    }
    Ok(())
}

/// Parses INI text on top of `base`. Keys outside any section are rejected.
pub fn parse_config(text: &str, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let ini = Ini::load_from_str(text).map_err(|e| {
        Error::config(
            format!("line {}", e.line),
            format!("malformed config: {}", e.msg),
        )
    })?;
    let mut cfg = base;
    for (section, props) in ini.iter() {
        for (k, v) in props.iter() {
            let key = match section {
                Some(sec) => format!("{}.{}", sec.trim(), k.trim()),
                None => return Err(Error::config(k.trim(), "key outside of any [section]")),
            };
            apply(&mut cfg, &key, v)?;
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, ExperimentConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workbench::ExperimentId;

    fn err_key(text: &str) -> String {
        match parse_config(text, ExperimentConfig::default()) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn sections_map_to_fields() {
        let cfg = parse_config(
            "[experiment]\nid = fig2\nseed = 7\nthreads = 2\n\n[attack]\nedits = 3\npgd_scale = 0.2\nbudgets = 1, 2,4\n\
             [model]\npooling = mean\nlayer_norm = yes\n[detector]\ndetectors = residue,fgws\n\
             [analysis]\nranks = 4-12\n[synth]\nkeywords = aa,bb;cc\n[grid]\nlevels = 8\n",
            ExperimentConfig::default(),
        )
        .unwrap();
        assert_eq!(cfg.experiment, Some(ExperimentId::Fig2));
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.threads, 2);
        assert_eq!(cfg.fixture.edits, 3);
        assert_eq!(cfg.fixture.pgd_scale, 0.2);
        assert_eq!(cfg.budgets, vec![1, 2, 4]);
        assert_eq!(cfg.fixture.model.pooling, Pooling::Mean);
        assert!(cfg.fixture.model.layer_norm);
        assert_eq!(
            cfg.detectors,
            vec![DetectorKind::Residue, DetectorKind::Fgws]
        );
        assert_eq!(cfg.central_ranks, (4, 12));
        assert_eq!(
            cfg.fixture.synth.keywords,
            vec![vec!["aa", "bb"], vec!["cc"]]
        );
        assert_eq!(cfg.grid.data.levels, 8);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(err_key("[attack]\nedits = many\n"), "attack.edits");
        assert_eq!(err_key("[attack]\nwords = 3\n"), "attack.words");
        assert_eq!(err_key("[model]\npooling = max\n"), "model.pooling");
        assert_eq!(err_key("[model]\nlayer_norm = maybe\n"), "model.layer_norm");
        assert_eq!(err_key("[experiment]\nid = table9\n"), "experiment.id");
        assert_eq!(
            err_key("[detector]\ndetectors = residue, lid\n"),
            "detector.detectors"
        );
        assert_eq!(err_key("[analysis]\nranks = 5\n"), "analysis.ranks");
        assert_eq!(err_key("seed = 3\n"), "seed");
    }

    #[test]
    fn empty_config_keeps_defaults() {
        let cfg = parse_config("# nothing\n", ExperimentConfig::default()).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }
}
