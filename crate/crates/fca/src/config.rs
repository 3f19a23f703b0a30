//! Flat `key = value` configuration.
//!
//! A run's pipeline settings are resolved from a preset, then config-file
//! entries, then command-line flags; later entries win. Unknown keys are
//! rejected. [`to_entries`] writes out every key so the resolved settings
//! can be fed back unchanged.

use std::collections::BTreeMap;

use fca_core::features::ExtractorKind;
use fca_core::{Comparator, ExtractorSpec, PipelineConfig, Preset, ReferenceSpec, ReferenceStrategy};

use crate::error::{Error, Result};

pub const KEYS: &[&str] = &[
    "preset",
    "extractor",
    "features",
    "random-channels",
    "kernel-size",
    "orientations",
    "comparator",
    "reference",
    "reference-count",
    "knn-k",
    "exclusion-radius",
    "allow-all-patches",
    "seed",
    "patch-size",
    "sigma-w",
    "sigma-p",
    "sigma-s",
    "bins",
    "sww-uniform",
    "spatial-weighting",
    "resize",
    "crop-fraction",
];

/// Ordered `(key, value)` entries; the last occurrence of a key wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Entries(pub Vec<(String, String)>);

impl Entries {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn extend(&mut self, other: Entries) {
        self.0.extend(other.0);
    }

    fn last_values(&self) -> Result<BTreeMap<&str, &str>> {
        let mut map = BTreeMap::new();
        for (k, v) in &self.0 {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::config(format!("unknown configuration key '{k}'")));
            }
            map.insert(k.as_str(), v.as_str());
        }
        Ok(map)
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_text(text: &str) -> Result<Entries> {
    let mut out = Entries::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
        out.push(k.trim(), v.trim());
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("invalid value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid value '{v}' for {key}"))),
    }
}

/// `none`, `N` (square) or `HxW`.
pub fn parse_resize(v: &str) -> Result<Option<(usize, usize)>> {
    if v.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let dims = match v.split_once(['x', 'X']) {
        Some((h, w)) => (parse("resize", h.trim())?, parse("resize", w.trim())?),
        None => {
            let n = parse("resize", v)?;
            (n, n)
        }
    };
    Ok(Some(dims))
}

fn extractor_name(kind: ExtractorKind) -> &'static str {
    match kind {
        ExtractorKind::Colors => "colors",
        ExtractorKind::RandomProjections => "random",
        ExtractorKind::Steerable => "steerable",
        ExtractorKind::LawsTem => "laws",
        ExtractorKind::External => "external",
    }
}

fn parse_extractor(v: &str) -> Result<ExtractorKind> {
    use ExtractorKind::*;
    [Colors, RandomProjections, Steerable, LawsTem, External]
        .into_iter()
        .find(|k| extractor_name(*k).eq_ignore_ascii_case(v))
        .ok_or_else(|| Error::config(format!("unknown extractor '{v}'")))
}

/// Builds and validates a pipeline configuration from `entries`.
pub fn resolve(entries: &Entries) -> Result<PipelineConfig> {
    let m = entries.last_values()?;
    let preset = match m.get("preset") {
        Some(v) => Preset::parse(v).ok_or_else(|| Error::config(format!("unknown preset '{v}'")))?,
        None => Preset::FullRes,
    };
    let mut cfg = preset.config();

    if let Some(v) = m.get("comparator") {
        let c = Comparator::parse(v).ok_or_else(|| Error::config(format!("unknown comparator '{v}'")))?;
        // an explicit reference is kept as given so that bad pairings are reported
        cfg = if m.contains_key("reference") {
            PipelineConfig { comparator: c, ..cfg }
        } else {
            cfg.with_comparator(c)
        };
    }
    if let Some(v) = m.get("reference") {
        let s = ReferenceStrategy::parse(v).ok_or_else(|| Error::config(format!("unknown reference '{v}'")))?;
        cfg.reference = ReferenceSpec::new(s);
    }
    let count_key = match cfg.reference.strategy {
        ReferenceStrategy::RandomPatches => Some("reference-count"),
        ReferenceStrategy::KNearest => Some("knn-k"),
        _ => None,
    };
    if let Some(v) = count_key.and_then(|k| m.get(k).map(|v| (k, v))) {
        cfg.reference.count = parse(v.0, v.1)?;
    }
    if let Some(v) = m.get("exclusion-radius") {
        cfg.reference.self_exclusion_radius = if v.eq_ignore_ascii_case("auto") {
            None
        } else {
            Some(parse("exclusion-radius", v)?)
        };
    }
    if let Some(v) = m.get("allow-all-patches") {
        cfg.reference.allow_all_patches = parse_bool("allow-all-patches", v)?;
    }

    if let Some(v) = m.get("extractor") {
        let kind = parse_extractor(v)?;
        let mut spec = ExtractorSpec::colors();
        spec.kind = kind;
        cfg.extractor = spec;
    }
    if let Some(v) = m.get("features") {
        cfg.extractor = ExtractorSpec::external(*v);
    }
    if let Some(v) = m.get("random-channels") {
        cfg.extractor.channel_count = parse("random-channels", v)?;
    }
    if let Some(v) = m.get("kernel-size") {
        cfg.extractor.kernel_size = parse("kernel-size", v)?;
    }
    if let Some(v) = m.get("orientations") {
        cfg.extractor.orientations = parse("orientations", v)?;
    }
    if let Some(v) = m.get("seed") {
        let seed = parse("seed", v)?;
        cfg.reference.seed = seed;
        cfg.extractor.seed = seed;
    }

    let p = &mut cfg.patch;
    if let Some(v) = m.get("patch-size") {
        p.patch_size = parse("patch-size", v)?;
    }
    if let Some(v) = m.get("sigma-w") {
        p.sigma_w = parse("sigma-w", v)?;
    }
    if let Some(v) = m.get("sigma-p") {
        p.sigma_p = parse("sigma-p", v)?;
    }
    if let Some(v) = m.get("sigma-s") {
        p.sigma_s = parse("sigma-s", v)?;
    }
    if let Some(v) = m.get("bins") {
        p.histogram_bins = parse("bins", v)?;
    }
    if let Some(v) = m.get("sww-uniform") {
        p.sww_uniform = parse_bool("sww-uniform", v)?;
    }
    if let Some(v) = m.get("spatial-weighting") {
        p.spatial_weighting = parse_bool("spatial-weighting", v)?;
    }
    if let Some(v) = m.get("resize") {
        cfg.resize_to = parse_resize(v)?;
    }
    if let Some(v) = m.get("crop-fraction") {
        cfg.crop_fraction = parse("crop-fraction", v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Every setting of `cfg` as explicit entries; `resolve(&to_entries(cfg))`
/// reproduces `cfg`.
pub fn to_entries(cfg: &PipelineConfig) -> Entries {
    let mut e = Entries::default();
    let x = &cfg.extractor;
    e.push("extractor", extractor_name(x.kind));
    if let Some(path) = &x.external_path {
        e.push("features", path);
    }
    e.push("random-channels", x.channel_count);
    e.push("kernel-size", x.kernel_size);
    e.push("orientations", x.orientations);
    e.push("comparator", cfg.comparator.name());
    let r = &cfg.reference;
    e.push("reference", r.strategy.name());
    match r.strategy {
        ReferenceStrategy::RandomPatches => e.push("reference-count", r.count),
        ReferenceStrategy::KNearest => e.push("knn-k", r.count),
        _ => {}
    }
    e.push(
        "exclusion-radius",
        r.self_exclusion_radius.map_or("auto".to_string(), |v| v.to_string()),
    );
    e.push("allow-all-patches", r.allow_all_patches);
    e.push("seed", r.seed);
    let p = &cfg.patch;
    e.push("patch-size", p.patch_size);
    e.push("sigma-w", p.sigma_w);
    e.push("sigma-p", p.sigma_p);
    e.push("sigma-s", p.sigma_s);
    e.push("bins", p.histogram_bins);
    e.push("sww-uniform", p.sww_uniform);
    e.push("spatial-weighting", p.spatial_weighting);
    e.push(
        "resize",
        cfg.resize_to.map_or("none".to_string(), |(h, w)| format!("{h}x{w}")),
    );
    e.push("crop-fraction", cfg.crop_fraction);
    e
}

pub fn to_text(entries: &Entries) -> String {
    entries.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
