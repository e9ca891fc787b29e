use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use knn_scaling::experiments::{powers_of_two, KRule, Preset};
use knn_scaling::knn::ResampleMode;

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "KNNLAB_OUTPUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const COMMON: &[Key] = &[
    key("seed", "1", "master seed"),
    key("output_dir", "knnlab-out", "directory receiving every output file"),
    key("threads", "0", "worker threads (0 = one per core)"),
];

const PRESET: &[Key] = &[
    key("preset", "aligned", "aligned | rotated | ramp | ellipse | unbalanced"),
    key("a", "2", "signal half-width along the first coordinate"),
    key("b", "0.5", "signal half-width along the second coordinate"),
    key("d", "10", "ambient dimension"),
    key("slope", "0.5", "boundary slope of the rotated preset"),
];

const SCAN: &[Key] = &[
    key("n_grid", "2^7..2^15", "sample sizes: a comma list or 2^lo..2^hi"),
    key("k_rule", "affine", "affine | floor_frac(f) | fixed(k)"),
    key("trials", "20", "training sets per sample size"),
    key("n_test", "2000", "fresh test points per trial"),
    key("resample", "none", "none | undersample | oversample"),
    key("overlay_tau", "none", "margin used for the fast-rate overlay; none to skip it"),
    key("overlay_c", "fit", "fast-rate constant, or fit"),
];

const TAU_MAP: &[Key] = &[
    key("n0", "200", "grid cells along the first coordinate"),
    key("n1", "50", "grid cells along the second coordinate"),
    key("threshold", "0.05", "margin threshold for the region labels"),
    key("n_mc", "20000", "Monte Carlo draws per class for the dominance check"),
    key("radius_grid", "128", "radii in the dominance check"),
];

const PRED_MAP: &[Key] = &[
    key("n", "5000", "training sample size"),
    key("k", "auto", "neighbors, or auto for n/100 + 2"),
    key("n0", "200", "grid cells along the first coordinate"),
    key("n1", "50", "grid cells along the second coordinate"),
];

const DIAGNOSE: &[Key] = &[
    key("point", "", "comma-separated coordinates; missing trailing coordinates are 0"),
    key("threshold", "0.05", "margin threshold for the region label"),
    key("n_mc", "40000", "Monte Carlo draws per class for the dominance check"),
    key("radius_grid", "256", "radii in the dominance check"),
];

const BOUNDS: &[Key] = &[
    key("points", "20", "random test points drawn from the distribution"),
    key("n", "200", "training sample size"),
    key("k", "20", "neighbors"),
    key("trials", "2000", "training sets per point"),
];

const GAUSS: &[Key] = &[
    key("d_n_list", "8,32,128,512", "noise dimensions for the normal approximation"),
    key("samples", "200000", "draws per noise dimension"),
    key("logderiv_dims", "8,16,32", "degrees of freedom for the log-derivative checks"),
    key("lambdas", "0,2,8", "noncentralities for the log-derivative checks"),
    key("variance_samples", "1000000", "uniform draws for the variance minimization"),
];

const INGEST: &[Key] = &[
    key("images", "", "IDX image file"),
    key("labels", "", "IDX label file"),
    key("test_images", "", "IDX image file for testing; empty to hold out from the pool"),
    key("test_labels", "", "IDX label file for testing"),
    key("classes", "0,1", "the two classes, mapped to 0 and 1"),
    key("n_grid", "500,2000,8000", "sample sizes"),
    key("k_rule", "affine", "affine | floor_frac(f) | fixed(k)"),
    key("trials", "5", "training subsamples per size"),
    key("n_test", "2000", "test points kept"),
];

pub const COMMANDS: &[(&str, &str)] = &[
    ("scan", "excess-risk curve over a grid of sample sizes"),
    ("tau-map", "margin and dominance region at every cell of the signal plane"),
    ("pred-map", "k-NN prediction against the Bayes rule across the signal plane"),
    ("diagnose", "margin, dominance and region at a single point"),
    ("bounds", "prediction bounds against empirical misclassification"),
    ("gauss-check", "normal approximation and smoothness diagnostics"),
    ("ingest-scan", "learning curve on a pair of classes from IDX files"),
];

pub fn keys_for(command: &str) -> Vec<&'static Key> {
    let specific: &[&[Key]] = match command {
        "scan" => &[PRESET, SCAN],
        "tau-map" => &[PRESET, TAU_MAP],
        "pred-map" => &[PRESET, PRED_MAP],
        "diagnose" => &[PRESET, DIAGNOSE],
        "bounds" => &[PRESET, BOUNDS],
        "gauss-check" => &[GAUSS],
        "ingest-scan" => &[INGEST],
        _ => &[],
    };
    COMMON.iter().chain(specific.iter().flat_map(|k| k.iter())).collect()
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// A fully resolved, flat parameter set for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Layers defaults, the config file, the output-dir environment variable
    /// and explicit flags, in increasing priority.
    pub fn resolve(
        command: &str,
        file: Option<&Path>,
        env_output_dir: Option<String>,
        flags: &[(String, String)],
    ) -> Result<Self, CliError> {
        let keys = keys_for(command);
        let mut values: BTreeMap<String, String> =
            keys.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        if let Some(path) = file {
            for (name, value) in parse_file(path, command, &keys)? {
                values.insert(name, value);
            }
        }
        if let Some(dir) = env_output_dir {
            values.insert("output_dir".into(), dir);
        }
        for (name, value) in flags {
            values.insert(name.clone(), value.clone());
        }
        Ok(RunConfig {
            command: command.to_string(),
            values,
        })
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or_else(|| panic!("no key {name}"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(name);
        raw.trim()
            .parse()
            .map_err(|e| CliError::Config(format!("key `{name}`: cannot parse `{raw}`: {e}")))
    }

    pub fn required(&self, name: &str) -> Result<&str, CliError> {
        match self.raw(name).trim() {
            "" => Err(CliError::Config(format!("key `{name}` is required"))),
            s => Ok(s),
        }
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        parse_list(self.raw(name)).map_err(|e| CliError::Config(format!("key `{name}`: {e}")))
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("output_dir"))
    }

    pub fn preset(&self) -> Result<Preset, CliError> {
        let d: usize = self.get("d")?;
        let (a, b) = (self.get("a")?, self.get("b")?);
        Ok(match self.raw("preset").trim() {
            "aligned" => Preset::Aligned { a, b, d },
            "rotated" => Preset::Rotated { a, b, d, slope: self.get("slope")? },
            "ramp" => Preset::Ramp { a, b, d },
            "ellipse" => Preset::Ellipse { a, b, d },
            "unbalanced" => Preset::Unbalanced { d },
            other => return Err(CliError::Config(format!("key `preset`: unknown preset `{other}`"))),
        })
    }

    pub fn k_rule(&self) -> Result<KRule, CliError> {
        parse_k_rule(self.raw("k_rule")).map_err(|e| CliError::Config(format!("key `k_rule`: {e}")))
    }

    pub fn n_grid(&self) -> Result<Vec<usize>, CliError> {
        parse_n_grid(self.raw("n_grid")).map_err(|e| CliError::Config(format!("key `n_grid`: {e}")))
    }

    pub fn resample(&self) -> Result<Option<ResampleMode>, CliError> {
        match self.raw("resample").trim() {
            "none" => Ok(None),
            "undersample" => Ok(Some(ResampleMode::Undersample)),
            "oversample" => Ok(Some(ResampleMode::Oversample)),
            other => Err(CliError::Config(format!("key `resample`: unknown mode `{other}`"))),
        }
    }

    /// `None` when the key holds `keyword`.
    pub fn optional<T: FromStr>(&self, name: &str, keyword: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if self.raw(name).trim() == keyword {
            Ok(None)
        } else {
            self.get(name).map(Some)
        }
    }

    /// `key = value` lines that replay this run when passed back via `--config`.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# knnlab run manifest\n");
        out.push_str(&format!("command = {}\n", self.command));
        out.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        for k in keys_for(&self.command) {
            out.push_str(&format!("{} = {}\n", k.name, self.values[k.name]));
        }
        out
    }
}

/// Reads the `command` entry of a config file, if any.
pub fn file_command(path: &Path) -> Result<Option<String>, CliError> {
    let text = read_config(path)?;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "command" {
                return Ok(Some(v.trim().to_string()));
            }
        }
    }
    Ok(None)
}

fn read_config(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))
}

fn parse_file(path: &Path, command: &str, keys: &[&Key]) -> Result<Vec<(String, String)>, CliError> {
    let text = read_config(path)?;
    let where_ = |line: usize| format!("{}:{line}", path.display());
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((name, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("{}: expected `key = value`", where_(n))));
        };
        let name = name.trim().replace('-', "_");
        let value = value.trim().to_string();
        if let Some(first) = seen.insert(name.clone(), n) {
            return Err(CliError::Config(format!("{}: key `{name}` already set on line {first}", where_(n))));
        }
        match name.as_str() {
            "command" if value != command => {
                return Err(CliError::Config(format!(
                    "{}: file is for command `{value}`, not `{command}`",
                    where_(n)
                )))
            }
            "command" | "version" => {}
            _ if keys.iter().any(|k| k.name == name) => out.push((name, value)),
            _ => {
                return Err(CliError::Config(format!(
                    "{}: unknown key `{name}` for command `{command}`",
                    where_(n)
                )))
            }
        }
    }
    Ok(out)
}

pub fn parse_list<T: FromStr>(raw: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("cannot parse `{s}`: {e}")))
        .collect()
}

pub fn parse_n_grid(raw: &str) -> Result<Vec<usize>, String> {
    let raw = raw.trim();
    if let Some((lo, hi)) = raw.split_once("..") {
        let exp = |s: &str| {
            s.trim()
                .strip_prefix("2^")
                .and_then(|e| e.parse::<u32>().ok())
                .filter(|&e| e < usize::BITS)
                .ok_or_else(|| format!("expected 2^lo..2^hi, got `{raw}`"))
        };
        let (lo, hi) = (exp(lo)?, exp(hi)?);
        if lo > hi {
            return Err(format!("empty range `{raw}`"));
        }
        return Ok(powers_of_two(lo, hi));
    }
    let grid: Vec<usize> = parse_list(raw)?;
    if grid.is_empty() {
        return Err("no sample sizes given".into());
    }
    Ok(grid)
}

pub fn parse_k_rule(raw: &str) -> Result<KRule, String> {
    let raw = raw.trim();
    let arg = |prefix: &str| {
        raw.strip_prefix(prefix).map(|rest| {
            rest.trim_start_matches([':', '('])
                .trim_end_matches(')')
                .trim()
                .to_string()
        })
    };
    if raw == "affine" {
        Ok(KRule::Affine)
    } else if let Some(f) = arg("floor_frac") {
        let f: f64 = f.parse().map_err(|_| format!("bad fraction in `{raw}`"))?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(format!("fraction must lie in (0, 1], got {f}"));
        }
        Ok(KRule::FloorFrac(f))
    } else if let Some(k) = arg("fixed") {
        Ok(KRule::Fixed(k.parse().map_err(|_| format!("bad k in `{raw}`"))?))
    } else {
        Err(format!("unknown k rule `{raw}`"))
    }
}
