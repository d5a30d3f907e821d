//! Flat `key = value` configuration files mapped onto the pipeline config.
//!
//! Keys are named exactly after the config fields; `#` starts a comment.
//! Flags win over file values, so parsing produces a set of overrides that
//! is applied before the flag overrides.

use anyhow::{anyhow, bail, Result};
use restyle_core::pipeline::StopAfter;
use restyle_core::{features::FeatureToggles, PipelineConfig};

/// One parsed `key = value` assignment applied to a config.
pub fn apply_key(config: &mut PipelineConfig, key: &str, value: &str) -> Result<()> {
    let float = |v: &str| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| anyhow!("value {v:?} for {key} is not a number"))
    };
    let count = |v: &str| -> Result<usize> {
        v.parse::<usize>()
            .map_err(|_| anyhow!("value {v:?} for {key} is not a nonnegative integer"))
    };
    match key {
        "match_fraction" => config.match_fraction = float(value)?,
        "patch_side" => config.patch_side = count(value)?,
        "neighbors" => config.neighbors = count(value)?,
        "t_cluster" => {
            config.t_cluster = if value == "auto" {
                None
            } else {
                Some(float(value)?)
            }
        }
        "target_superpixel_area" => config.target_superpixel_area = count(value)?,
        "stride" => config.stride = count(value)?,
        "epsilon_edge" => config.epsilon_edge = float(value)?,
        "guided_radius" => config.guided_radius = count(value)?,
        "guided_eps" => config.guided_eps = float(value)?,
        "sigma_floor" => config.sigma_floor = float(value)?,
        "log_floor" => config.log_floor = float(value)?,
        "rng_seed" => {
            config.rng_seed = value
                .parse::<u64>()
                .map_err(|_| anyhow!("value {v:?} for rng_seed is not an unsigned integer", v = value))?
        }
        "feature_toggles" => config.toggles = parse_features(value)?,
        "stop_after" => config.stop_after = parse_stop_after(value)?,
        "lambda_m" => config.weights.lambda_m = float(value)?,
        "lambda_t" => config.weights.lambda_t = float(value)?,
        "lambda_c" => config.weights.lambda_c = float(value)?,
        "lambda_dv" => config.weights.lambda_dv = float(value)?,
        "lambda_s" => config.weights.lambda_s = float(value)?,
        "lambda_la" => config.weights.lambda_la = float(value)?,
        "lambda_lr" => config.weights.lambda_lr = float(value)?,
        "n_alpha" => config.weights.n_alpha = float(value)?,
        "n_beta" => config.weights.n_beta = float(value)?,
        other => bail!("unknown configuration key {other:?}"),
    }
    Ok(())
}

/// Applies a whole config file's text.
pub fn apply_file(config: &mut PipelineConfig, text: &str) -> Result<()> {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {raw:?}", idx + 1))?;
        apply_key(config, key.trim(), value.trim())
            .map_err(|e| anyhow!("line {}: {e}", idx + 1))?;
    }
    Ok(())
}

/// Comma list of enabled feature kinds; everything unnamed is disabled.
pub fn parse_features(list: &str) -> Result<FeatureToggles> {
    let mut toggles = FeatureToggles {
        color: false,
        distance: false,
        texture: false,
        patch: false,
        gradient: false,
    };
    for item in list.split(',') {
        match item.trim() {
            "color" => toggles.color = true,
            "distance" => toggles.distance = true,
            "texture" => toggles.texture = true,
            "patch" => toggles.patch = true,
            "gradient" => toggles.gradient = true,
            "" => {}
            other => bail!(
                "unknown feature {other:?} (expected color, distance, texture, patch, gradient)"
            ),
        }
    }
    Ok(toggles)
}

pub fn parse_stop_after(value: &str) -> Result<StopAfter> {
    match value {
        "seeds" => Ok(StopAfter::Seeds),
        "partition" => Ok(StopAfter::Partition),
        "match" => Ok(StopAfter::Match),
        other => bail!("unknown stop-after stage {other:?} (expected seeds, partition, match)"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut config = PipelineConfig::default();
        let text = "\n# comment\nmatch_fraction = 0.5\nt_cluster = 12.25\nlambda_m = 0.2\nfeature_toggles = color, texture\n";
        apply_file(&mut config, text).unwrap();
        assert_eq!(config.match_fraction, 0.5);
        assert_eq!(config.t_cluster, Some(12.25));
        assert_eq!(config.weights.lambda_m, 0.2);
        assert!(config.toggles.color && config.toggles.texture);
        assert!(!config.toggles.patch && !config.toggles.gradient && !config.toggles.distance);
    }

    #[test]
    fn auto_t_cluster_maps_to_none() {
        let mut config = PipelineConfig::default();
        apply_key(&mut config, "t_cluster", "12").unwrap();
        assert_eq!(config.t_cluster, Some(12.0));
        apply_key(&mut config, "t_cluster", "auto").unwrap();
        assert_eq!(config.t_cluster, None);
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let mut config = PipelineConfig::default();
        let err = apply_file(&mut config, "rng_seed = 3\nnot_a_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_line_is_rejected() {
        let mut config = PipelineConfig::default();
        assert!(apply_file(&mut config, "just words\n").is_err());
        assert!(apply_key(&mut config, "stride", "two").is_err());
        assert!(apply_key(&mut config, "feature_toggles", "bogus").is_err());
    }
}
