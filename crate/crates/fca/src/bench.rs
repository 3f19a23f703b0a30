//! Wall-clock scaling measurements on synthetic feature maps.

use std::time::Instant;

use fca_core::pipeline::localize_features;
use fca_core::synthetic::noise_features;
use fca_core::{AnomalyMap, Comparator, FeatureMap, PatchConfig, PipelineConfig, ReferenceSpec, ReferenceStrategy};
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    /// Square input sides; `N = side^2`.
    pub sides: Vec<usize>,
    pub methods: Vec<Comparator>,
    pub patch: PatchConfig,
    pub channels: usize,
    /// Timed runs per cell, at least 3. One extra warm-up run is discarded.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            sides: vec![128, 256, 512],
            methods: vec![Comparator::Fca],
            patch: PatchConfig::default(),
            channels: 3,
            repetitions: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub method: String,
    pub n_pixels: usize,
    pub patch_area: usize,
    pub channels: usize,
    /// Histogram bins; only meaningful for the histogram comparator.
    pub bins: Option<usize>,
    /// Median over the timed repetitions.
    pub seconds: f64,
    pub repetitions: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    /// Least-squares slope of `ln(seconds)` against `ln(N)` per method, for
    /// methods measured at two or more sizes.
    pub slopes: Vec<(String, f64)>,
}

/// The deterministic input of one benchmark cell.
pub fn workload(side: usize, channels: usize, seed: u64) -> Result<FeatureMap> {
    Ok(noise_features(side, side, channels, seed)?)
}

/// Pipeline settings for timing `method` against its aggregate reference.
pub fn bench_config(method: Comparator, patch: &PatchConfig) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_comparator(method);
    cfg.patch = patch.clone();
    cfg.reference = ReferenceSpec::new(ReferenceStrategy::global_for(method));
    cfg
}

/// The computation that gets timed: normalization, reference and scoring.
pub fn score(fm: &FeatureMap, cfg: &PipelineConfig) -> Result<AnomalyMap> {
    Ok(localize_features(fm, cfg, fm.height(), fm.width())?)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock seconds of `f` over `repetitions` runs after one
/// discarded warm-up.
pub fn time_median<T>(repetitions: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Ordinary least squares slope of `ln y` on `ln x`.
pub fn fit_log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Times every `(method, size)` cell on the current rayon pool.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    let repetitions = spec.repetitions.max(3);
    let threads = rayon::current_num_threads();
    let mut records = Vec::new();
    let mut slopes = Vec::new();
    for &method in &spec.methods {
        let cfg = bench_config(method, &spec.patch);
        cfg.validate()?;
        let mut points = Vec::new();
        for &side in &spec.sides {
            let fm = workload(side, spec.channels, spec.seed)?;
            let seconds = time_median(repetitions, || score(&fm, &cfg))?;
            points.push(((side * side) as f64, seconds));
            records.push(BenchRecord {
                method: method.name().to_string(),
                n_pixels: side * side,
                patch_area: spec.patch.area(),
                channels: spec.channels,
                bins: (method == Comparator::Histogram).then_some(spec.patch.histogram_bins),
                seconds,
                repetitions,
                threads,
            });
        }
        if let Some(s) = fit_log_log_slope(&points) {
            slopes.push((method.name().to_string(), s));
        }
    }
    Ok(BenchReport { records, slopes })
}

const COLUMNS: [&str; 8] = ["method", "N", "T2", "D", "B", "seconds", "repetitions", "threads"];

fn cells(r: &BenchRecord) -> [String; 8] {
    [
        r.method.clone(),
        r.n_pixels.to_string(),
        r.patch_area.to_string(),
        r.channels.to_string(),
        r.bins.map_or("-".to_string(), |b| b.to_string()),
        format!("{:.6}", r.seconds),
        r.repetitions.to_string(),
        r.threads.to_string(),
    ]
}

impl BenchReport {
    /// Right-aligned columns followed by one `slope` line per method.
    pub fn to_table(&self) -> String {
        let rows: Vec<[String; 8]> = self.records.iter().map(cells).collect();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([COLUMNS[i].len()]).max().unwrap())
            .collect();
        let line = |cols: Vec<&str>| {
            let parts: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            parts.join("  ") + "\n"
        };
        let mut out = line(COLUMNS.to_vec());
        for r in &rows {
            out += &line(r.iter().map(String::as_str).collect());
        }
        for (m, s) in &self.slopes {
            out += &format!("slope {m} {s:.3}\n");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",") + "\n";
        for r in &self.records {
            out += &(cells(r).join(",") + "\n");
        }
        out
    }

    pub fn slope(&self, method: Comparator) -> Option<f64> {
        self.slopes.iter().find(|(m, _)| m == method.name()).map(|(_, s)| *s)
    }
}
