//! Flat `key=value` run configuration with `#` comments. One line per key,
//! no sections; later sources (a config file, then command-line flags) apply
//! on top of the built-in defaults one key at a time. [`AppConfig::to_kv`]
//! emits every key in a fixed order, so the resolved form is reproducible
//! text suitable for manifests and content hashing.

use thiserror::Error;

use crate::env::EnvConfig;
use crate::offline_rl::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {got:?}")]
    Malformed { line: usize, got: String },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("key {key}: cannot parse {value:?} as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
}

/// Everything a run needs: environment, training, dataset size, and
/// evaluation repeats. Seeds and output paths are deliberately not part of
/// the file format; they arrive as command-line flags.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub env: EnvConfig,
    train: TrainConfig,
    pub data_episodes: usize,
    pub eval_repeats: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            data_episodes: 500,
            eval_repeats: 5,
        }
    }
}

/// Splits raw config text into (line number, key, value) triples.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(ConfigError::Malformed { line, got: t.to_string() });
        };
        let key = k.trim().to_string();
        let value = v.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Malformed { line, got: t.to_string() });
        }
        if out.iter().any(|(_, k2, _)| *k2 == key) {
            return Err(ConfigError::Duplicate { line, key });
        }
        out.push((line, key, value));
    }
    Ok(out)
}

fn f64_of(key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected: "number",
    })
}

fn usize_of(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected: "non-negative integer",
    })
}

fn hidden_of(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected: "comma-separated layer widths",
        })
}

impl AppConfig {
    /// Training configuration with the environment kept in sync. Seeds and
    /// parallelism keep their defaults; callers set them per run.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { env: self.env, ..self.train.clone() }
    }

    /// Applies a whole config file on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (_, key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys and unparseable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "map.lane_width" => self.env.map.lane_width = f64_of(key, value)?,
            "map.arm_length" => self.env.map.arm_length = f64_of(key, value)?,
            "map.zone_half" => self.env.map.zone_half = f64_of(key, value)?,
            "map.crosswalk_offset" => self.env.map.crosswalk_offset = f64_of(key, value)?,
            "map.crosswalk_overhang" => self.env.map.crosswalk_overhang = f64_of(key, value)?,
            "map.speed_limit" => self.env.map.speed_limit = f64_of(key, value)?,
            "kinematics.wheelbase" => self.env.kinematics.wheelbase = f64_of(key, value)?,
            "kinematics.delta_max" => self.env.kinematics.delta_max = f64_of(key, value)?,
            "kinematics.v_cap" => self.env.kinematics.v_cap = f64_of(key, value)?,
            "kinematics.yaw_rate_cap" => self.env.kinematics.yaw_rate_cap = f64_of(key, value)?,
            "kinematics.v_eps" => self.env.kinematics.v_eps = f64_of(key, value)?,
            "kinematics.dt" => self.env.kinematics.dt = f64_of(key, value)?,
            "footprint.half_width" => self.env.footprint.half_width = f64_of(key, value)?,
            "footprint.front_line" => self.env.footprint.front_line = f64_of(key, value)?,
            "reward.alpha_safety" => self.env.reward.alpha_safety = f64_of(key, value)?,
            "reward.alpha_efficiency" => self.env.reward.alpha_efficiency = f64_of(key, value)?,
            "reward.alpha_deviation" => self.env.reward.alpha_deviation = f64_of(key, value)?,
            "reward.ttc_threshold" => self.env.reward.ttc_threshold = f64_of(key, value)?,
            "reward.receding_ttc" => self.env.reward.receding_ttc = f64_of(key, value)?,
            "reward.gamma" => self.env.reward.gamma = f64_of(key, value)?,
            "env.max_steps" => self.env.max_steps = usize_of(key, value)? as u32,
            "env.exit_margin" => self.env.exit_margin = f64_of(key, value)?,
            "env.travel_margin" => self.env.travel_margin = f64_of(key, value)?,
            "env.collision_radius_vehicle" => {
                self.env.collision_radius_vehicle = f64_of(key, value)?
            }
            "env.collision_radius_pedestrian" => {
                self.env.collision_radius_pedestrian = f64_of(key, value)?
            }
            "train.max_steps" => self.train.max_steps = usize_of(key, value)?,
            "train.eval_every" => self.train.eval_every = usize_of(key, value)?,
            "train.batch_size" => self.train.batch_size = usize_of(key, value)?,
            "train.policy_noise" => self.train.policy_noise = f64_of(key, value)?,
            "train.noise_clip" => self.train.noise_clip = f64_of(key, value)?,
            "train.policy_delay" => self.train.policy_delay = usize_of(key, value)?,
            "train.tau" => self.train.tau = f64_of(key, value)?,
            "train.alpha_td3bc" => self.train.alpha_td3bc = f64_of(key, value)?,
            "train.gamma" => self.train.gamma = f64_of(key, value)?,
            "train.lr" => self.train.lr = f64_of(key, value)?,
            "train.hidden" => self.train.hidden = hidden_of(key, value)?,
            "train.eval_episodes" => self.train.eval_episodes = usize_of(key, value)?,
            "data.episodes" => self.data_episodes = usize_of(key, value)?,
            "eval.repeats" => self.eval_repeats = usize_of(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// The fully resolved configuration as stable key=value text: every key,
    /// fixed order, shortest round-trip float form.
    pub fn to_kv(&self) -> String {
        let hidden =
            self.train.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        let rows: Vec<(&str, String)> = vec![
            ("map.lane_width", self.env.map.lane_width.to_string()),
            ("map.arm_length", self.env.map.arm_length.to_string()),
            ("map.zone_half", self.env.map.zone_half.to_string()),
            ("map.crosswalk_offset", self.env.map.crosswalk_offset.to_string()),
            ("map.crosswalk_overhang", self.env.map.crosswalk_overhang.to_string()),
            ("map.speed_limit", self.env.map.speed_limit.to_string()),
            ("kinematics.wheelbase", self.env.kinematics.wheelbase.to_string()),
            ("kinematics.delta_max", self.env.kinematics.delta_max.to_string()),
            ("kinematics.v_cap", self.env.kinematics.v_cap.to_string()),
            ("kinematics.yaw_rate_cap", self.env.kinematics.yaw_rate_cap.to_string()),
            ("kinematics.v_eps", self.env.kinematics.v_eps.to_string()),
            ("kinematics.dt", self.env.kinematics.dt.to_string()),
            ("footprint.half_width", self.env.footprint.half_width.to_string()),
            ("footprint.front_line", self.env.footprint.front_line.to_string()),
            ("reward.alpha_safety", self.env.reward.alpha_safety.to_string()),
            ("reward.alpha_efficiency", self.env.reward.alpha_efficiency.to_string()),
            ("reward.alpha_deviation", self.env.reward.alpha_deviation.to_string()),
            ("reward.ttc_threshold", self.env.reward.ttc_threshold.to_string()),
            ("reward.receding_ttc", self.env.reward.receding_ttc.to_string()),
            ("reward.gamma", self.env.reward.gamma.to_string()),
            ("env.max_steps", self.env.max_steps.to_string()),
            ("env.exit_margin", self.env.exit_margin.to_string()),
            ("env.travel_margin", self.env.travel_margin.to_string()),
            ("env.collision_radius_vehicle", self.env.collision_radius_vehicle.to_string()),
            (
                "env.collision_radius_pedestrian",
                self.env.collision_radius_pedestrian.to_string(),
            ),
            ("train.max_steps", self.train.max_steps.to_string()),
            ("train.eval_every", self.train.eval_every.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.policy_noise", self.train.policy_noise.to_string()),
            ("train.noise_clip", self.train.noise_clip.to_string()),
            ("train.policy_delay", self.train.policy_delay.to_string()),
            ("train.tau", self.train.tau.to_string()),
            ("train.alpha_td3bc", self.train.alpha_td3bc.to_string()),
            ("train.gamma", self.train.gamma.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.hidden", hidden),
            ("train.eval_episodes", self.train.eval_episodes.to_string()),
            ("data.episodes", self.data_episodes.to_string()),
            ("eval.repeats", self.eval_repeats.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let base = AppConfig::default();
        let text = base.to_kv();
        let mut re = AppConfig::default();
        re.apply_text(&text).unwrap();
        assert_eq!(text, re.to_kv(), "emit-parse-emit must be stable");
    }

    #[test]
    fn every_emitted_key_is_settable() {
        let mut cfg = AppConfig::default();
        for line in AppConfig::default().to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            cfg.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn comments_blanks_and_whitespace_are_tolerated() {
        let mut cfg = AppConfig::default();
        cfg.apply_text("# a comment\n\n  train.lr = 0.001  \n\t# indented comment\n").unwrap();
        assert_eq!(cfg.train_config().lr, 0.001);
    }

    #[test]
    fn overrides_apply_in_order_and_sync_env() {
        let mut cfg = AppConfig::default();
        cfg.apply_text("map.speed_limit=11.5\ntrain.hidden=8,16,8\ndata.episodes=7").unwrap();
        cfg.set("train.lr", "1e-2").unwrap();
        assert_eq!(cfg.env.map.speed_limit, 11.5);
        assert_eq!(cfg.data_episodes, 7);
        let tc = cfg.train_config();
        assert_eq!(tc.hidden, vec![8, 16, 8]);
        assert_eq!(tc.lr, 1e-2);
        assert_eq!(tc.env.map.speed_limit, 11.5, "train env must mirror overrides");
    }

    #[test]
    fn malformed_lines_are_rejected_with_position() {
        let mut cfg = AppConfig::default();
        let e = cfg.apply_text("train.lr=3e-4\nnonsense\n").unwrap_err();
        assert!(matches!(e, ConfigError::Malformed { line: 2, .. }), "{e}");
        let e = cfg.apply_text("=5\n").unwrap_err();
        assert!(matches!(e, ConfigError::Malformed { line: 1, .. }), "{e}");
    }

    #[test]
    fn duplicate_unknown_and_bad_values_are_rejected() {
        let mut cfg = AppConfig::default();
        let e = cfg.apply_text("train.lr=1e-3\ntrain.lr=1e-4\n").unwrap_err();
        assert!(matches!(e, ConfigError::Duplicate { line: 2, .. }), "{e}");
        let e = cfg.set("train.learning_rate", "0.01").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey(_)), "{e}");
        let e = cfg.set("train.batch_size", "many").unwrap_err();
        assert!(matches!(e, ConfigError::BadValue { .. }), "{e}");
        let e = cfg.set("train.hidden", "64,big").unwrap_err();
        assert!(matches!(e, ConfigError::BadValue { .. }), "{e}");
        // The duplicate was caught while parsing, before any assignment.
        assert_eq!(cfg.train_config().lr, 3e-4);
    }

    #[test]
    fn values_may_contain_equals_signs() {
        let kv = parse_kv("a.b=c=d\n").unwrap();
        assert_eq!(kv, vec![(1, "a.b".to_string(), "c=d".to_string())]);
    }
}
