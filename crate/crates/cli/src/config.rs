use std::path::Path;

use csiam_core::train::RunConfig;

use crate::commands::CliError;

/// Parses a TOML run config; unknown sections or keys are rejected.
pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_run_config(&text)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    cfg.validate()
        .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(parse_run_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg =
            parse_run_config("[train]\nseed = 3\npeak_lr = 1e-3\n[loss]\ntau = 0.5\n").unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.loss.tau, 0.5);
        assert_eq!(cfg.train.grad_norm_limit, 60.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(parse_run_config("[train]\nsed = 3\n").is_err());
        assert!(parse_run_config("[bogus]\n").is_err());
        assert!(parse_run_config("[train]\nwarmup_steps = 10\ndecay_end_step = 5\n").is_err());
        assert!(parse_run_config("[augment]\ntempo = \"sideways\"\n").is_err());
    }

    #[test]
    fn toy_config_round_trips() {
        let text = toml::to_string(&RunConfig::toy()).unwrap();
        assert_eq!(parse_run_config(&text).unwrap(), RunConfig::toy());
    }

    #[test]
    fn shipped_toy_config_matches_the_builtin_recipe() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
        let shipped = load_run_config(&path).unwrap();
        let toy = RunConfig::toy();
        assert_eq!(shipped.model_config(), toy.model_config());
        assert_eq!(
            (
                &shipped.data,
                &shipped.loss,
                &shipped.train,
                &shipped.augment
            ),
            (&toy.data, &toy.loss, &toy.train, &toy.augment)
        );
    }
}
