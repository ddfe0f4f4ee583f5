//! Evaluation harness, report rendering and the with/without MS-SSIM
//! training experiment.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classic::{dehaze_dcp, remove_veil, DcpParams};
use crate::error::{Error, Result};
use crate::imgio::{resize_and_pad_region, rgb_to_lab, save_image, Image, Region};
use crate::neuro::train::{load_pairs, write_log};
use crate::neuro::{train, EpochLog, LossWeights, Model, NetworkSpec, SsimVariant, TrainConfig};
use crate::quality::{aggregate, ciede2000, ms_ssim, psnr, rmse, ssim, MetricResult, MsSsimParams, SsimParams};
use crate::smokesim::{DatasetManifest, Split, SynthParams};
use crate::spectral::{fft_magnitude, grid_artifact_score};

/// Per-epoch time increase of the MS-SSIM arm quoted for full-scale GPU
/// training; logged next to the measured value, never gated on.
pub const REFERENCE_OVERHEAD_PERCENT: f64 = 13.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Method {
    Identity,
    Dcp,
    Veil,
    /// Generator restored from a checkpoint file.
    Model(PathBuf),
}

impl Method {
    /// Row label: the method name, or `model:<file stem>`.
    pub fn label(&self) -> String {
        match self {
            Method::Model(p) => format!(
                "model:{}",
                p.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint")
            ),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Identity => f.write_str("identity"),
            Method::Dcp => f.write_str("dcp"),
            Method::Veil => f.write_str("veil"),
            Method::Model(p) => write!(f, "model:{}", p.display()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Method::Identity),
            "dcp" => Ok(Method::Dcp),
            "veil" => Ok(Method::Veil),
            _ => match s.strip_prefix("model:") {
                Some(path) if !path.is_empty() => Ok(Method::Model(PathBuf::from(path))),
                _ => Err(Error::Argument(format!(
                    "unknown method '{}' (expected identity, dcp, veil or model:FILE)",
                    s
                ))),
            },
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ciede2000,
    Rmse,
    Psnr,
    Ssim,
    MsSsim,
    GridScore,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Ciede2000,
        Metric::Rmse,
        Metric::Psnr,
        Metric::Ssim,
        Metric::MsSsim,
        Metric::GridScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ciede2000 => "ciede2000",
            Metric::Rmse => "rmse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::MsSsim => "ms_ssim",
            Metric::GridScore => "grid_score",
        }
    }

    /// The metric for one (reference, test) pair. RMSE is on the 0 to 255
    /// scale; the grid score looks at the test image only.
    pub fn compute(self, reference: &Image<f64>, test: &Image<f64>) -> Result<f64> {
        let v = match self {
            Metric::Ciede2000 => {
                let a = rgb_to_lab(&reference.to_rgb())?;
                let b = rgb_to_lab(&test.to_rgb())?;
                ciede2000(&a, &b)?.1
            }
            Metric::Rmse => 255.0 * rmse(reference, test)?,
            Metric::Psnr => psnr(reference, test)?,
            Metric::Ssim => ssim(reference, test, &SsimParams::default())?,
            Metric::MsSsim => ms_ssim(reference, test, &MsSsimParams::fitting(test.width(), test.height())?)?,
            Metric::GridScore => grid_artifact_score(test)?,
        };
        if !v.is_finite() {
            return Err(Error::Argument(format!("{} is not finite ({})", self.name(), v)));
        }
        Ok(v)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown metric '{}'", s)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    pub split: Split,
    /// Pairs are resized and zero-padded to this square size first; `None`
    /// keeps the native resolution.
    pub image_size: Option<usize>,
    pub exclude_padding: bool,
    pub dcp: DcpParams,
    pub veil_strength: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Identity, Method::Dcp, Method::Veil],
            metrics: vec![Metric::Ciede2000, Metric::Rmse, Metric::Psnr, Metric::Ssim],
            split: Split::Test,
            image_size: None,
            exclude_padding: true,
            dcp: DcpParams::default(),
            veil_strength: 0.8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.metrics.is_empty() {
            return Err(Error::Config("evaluation needs at least one method and one metric".into()));
        }
        if self.image_size == Some(0) {
            return Err(Error::Config("evaluation image size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.veil_strength) {
            return Err(Error::Config(format!("veil strength {} outside [0, 1]", self.veil_strength)));
        }
        self.dcp.validate()
    }
}

/// One metric of one method: the aggregate, or why it could not be
/// computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub metric: Metric,
    pub result: Option<MetricResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metrics: Vec<MetricOutcome>,
}

impl ReportRow {
    pub fn get(&self, metric: Metric) -> Option<&MetricResult> {
        self.metrics
            .iter()
            .find(|m| m.metric == metric)
            .and_then(|m| m.result.as_ref())
    }
}

/// Input, method output and ground truth for one pair.
#[derive(Debug, Clone)]
pub struct ImageTriple {
    pub pair: String,
    pub method: String,
    pub input: Image<f64>,
    pub output: Image<f64>,
    pub truth: Image<f64>,
}

enum Runner {
    Identity,
    Dcp(DcpParams),
    Veil(f64),
    Model(Box<Model<f32>>),
}

impl Runner {
    fn run(&self, img: &Image<f64>) -> Result<Image<f64>> {
        match self {
            Runner::Identity => Ok(img.clone()),
            Runner::Dcp(p) => dehaze_dcp(&img.to_rgb(), p),
            Runner::Veil(s) => remove_veil(&img.to_rgb(), *s),
            Runner::Model(m) => m.predict(&img.cast::<f32>()).map(|o| o.cast::<f64>()),
        }
    }
}

type PairOutcome = Vec<std::result::Result<Vec<Result<f64>>, String>>;

/// Per-pair metric values for every method, plus output images for the
/// first `samples` pairs.
fn evaluate_pair(
    dataset: &DatasetManifest,
    index: usize,
    config: &EvalConfig,
    runners: &[Runner],
    samples: usize,
) -> Result<(PairOutcome, Vec<ImageTriple>)> {
    let entry = &dataset.entries[index];
    let (clean, smoky) = dataset.load_pair::<f64>(entry).map_err(|e| match e {
        Error::Io { path, source } => Error::Io {
            path,
            source: std::io::Error::new(
                source.kind(),
                format!("pair {} ({}): {}", index, entry.smoke.display(), source),
            ),
        },
        other => other,
    })?;
    let (clean, smoky, region) = match config.image_size {
        Some(s) => {
            let (c, region) = resize_and_pad_region(&clean, s, s)?;
            let (i, _) = resize_and_pad_region(&smoky, s, s)?;
            (c, i, region)
        }
        None => (clean.clone(), smoky, Region::full(clean.width(), clean.height())),
    };
    let content = |img: &Image<f64>| -> Result<Image<f64>> {
        if config.exclude_padding {
            img.crop(region)
        } else {
            Ok(img.clone())
        }
    };
    let truth = content(&clean)?;
    let input = content(&smoky)?;
    let pair = entry
        .smoke
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("pair")
        .to_string();

    let mut outcome = Vec::with_capacity(runners.len());
    let mut triples = Vec::new();
    for (runner, method) in runners.iter().zip(&config.methods) {
        match runner.run(&smoky).and_then(|o| content(&o)) {
            Ok(output) => {
                let truth_rgb = if output.channels() != truth.channels() { truth.to_rgb() } else { truth.clone() };
                outcome.push(Ok(config.metrics.iter().map(|m| m.compute(&truth_rgb, &output)).collect()));
                if index < samples {
                    triples.push(ImageTriple {
                        pair: pair.clone(),
                        method: method.label(),
                        input: input.clone(),
                        output,
                        truth: truth.clone(),
                    });
                }
            }
            Err(e) => outcome.push(Err(e.to_string())),
        }
    }
    Ok((outcome, triples))
}

/// Runs every method over the configured split and aggregates each metric
/// (mean and population std) in manifest order. Output images of the first
/// `samples` pairs are returned for the HTML report.
pub fn evaluate_with_samples(
    dataset: &DatasetManifest,
    config: &EvalConfig,
    samples: usize,
) -> Result<(Vec<ReportRow>, Vec<ImageTriple>)> {
    config.validate()?;
    let subset = dataset.subset(config.split);
    if subset.is_empty() {
        return Err(Error::Argument(format!("dataset has no {:?} pairs", config.split)));
    }
    let runners = config
        .methods
        .iter()
        .map(|m| {
            Ok(match m {
                Method::Identity => Runner::Identity,
                Method::Dcp => Runner::Dcp(config.dcp.clone()),
                Method::Veil => Runner::Veil(config.veil_strength),
                Method::Model(path) => Runner::Model(Box::new(Model::load(path)?)),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_pair: Vec<(PairOutcome, Vec<ImageTriple>)> = (0..subset.len())
        .into_par_iter()
        .map(|i| evaluate_pair(&subset, i, config, &runners, samples))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(config.methods.len());
    for (k, method) in config.methods.iter().enumerate() {
        let mut metrics = Vec::with_capacity(config.metrics.len());
        for (j, &metric) in config.metrics.iter().enumerate() {
            let mut values = Vec::with_capacity(per_pair.len());
            let mut error = None;
            for (i, (outcome, _)) in per_pair.iter().enumerate() {
                let v = match &outcome[k] {
                    Ok(vals) => vals[j].as_ref().map(|v| *v).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                match v {
                    Ok(v) => values.push(v),
                    Err(e) => {
                        error = Some(format!("pair {}: {}", i, e));
                        break;
                    }
                }
            }
            let result = match error {
                None => aggregate(&values, metric.name()).map_err(|e| e.to_string()),
                Some(e) => Err(e),
            };
            metrics.push(match result {
                Ok(r) => MetricOutcome {
                    metric,
                    result: Some(r),
                    error: None,
                },
                Err(e) => MetricOutcome {
                    metric,
                    result: None,
                    error: Some(e),
                },
            });
        }
        rows.push(ReportRow {
            method: method.label(),
            metrics,
        });
    }
    let triples = per_pair.into_iter().flat_map(|(_, t)| t).collect();
    Ok((rows, triples))
}

pub fn evaluate(dataset: &DatasetManifest, config: &EvalConfig) -> Result<Vec<ReportRow>> {
    evaluate_with_samples(dataset, config, 0).map(|(rows, _)| rows)
}

/// CSV with one row per method and `<metric>_mean,<metric>_std` columns;
/// metrics that failed are written as `NA`.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let metrics: Vec<Metric> = rows
        .first()
        .map(|r| r.metrics.iter().map(|m| m.metric).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    for m in &metrics {
        header.push(format!("{}_mean", m.name()));
        header.push(format!("{}_std", m.name()));
    }
    // writing into a Vec cannot fail
    w.write_record(&header).expect("in-memory csv");
    for row in rows {
        let mut record = vec![row.method.clone()];
        for &m in &metrics {
            match row.get(m) {
                Some(r) => record.extend([format!("{:.6}", r.mean), format!("{:.6}", r.std)]),
                None => record.extend(["NA".to_string(), "NA".to_string()]),
            }
        }
        w.write_record(&record).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields")
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_HTML: &str = "index.html";

/// Writes `report.csv`, the strip images under `images/` and a static
/// `index.html` that links only to those files.
pub fn render_report(rows: &[ReportRow], triples: &[ImageTriple], out_dir: &Path) -> Result<()> {
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let csv_path = out_dir.join(REPORT_CSV);
    fs::write(&csv_path, report_csv(rows)).map_err(|e| Error::io(&csv_path, e))?;

    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Desmoking report</title>\n");
    html.push_str("<style>body{font-family:sans-serif}table{border-collapse:collapse}td,th{border:1px solid #999;padding:4px 8px;text-align:right}img{image-rendering:pixelated;width:192px}</style>\n");
    html.push_str("</head>\n<body>\n<h1>Desmoking report</h1>\n<table>\n<tr><th>method</th>");
    let metrics: Vec<Metric> = rows
        .first()
        .map(|r| r.metrics.iter().map(|m| m.metric).collect())
        .unwrap_or_default();
    for m in &metrics {
        html.push_str(&format!("<th>{}</th>", m.name()));
    }
    html.push_str("</tr>\n");
    for row in rows {
        html.push_str(&format!("<tr><td>{}</td>", html_escape(&row.method)));
        for &m in &metrics {
            match row.get(m) {
                Some(r) => html.push_str(&format!("<td>{:.3} &plusmn; {:.3}</td>", r.mean, r.std)),
                None => html.push_str("<td>NA</td>"),
            }
        }
        html.push_str("</tr>\n");
    }
    html.push_str("</table>\n<p><a href=\"report.csv\">report.csv</a></p>\n");

    let mut current: Option<&str> = None;
    for (k, t) in triples.iter().enumerate() {
        if current != Some(t.method.as_str()) {
            if current.is_some() {
                html.push_str("</table>\n");
            }
            html.push_str(&format!(
                "<h2>{}</h2>\n<table>\n<tr><th>pair</th><th>input</th><th>output</th><th>ground truth</th></tr>\n",
                html_escape(&t.method)
            ));
            current = Some(t.method.as_str());
        }
        let stem = format!("{:04}_{}_{}", k, file_safe(&t.method), file_safe(&t.pair));
        html.push_str(&format!("<tr><td>{}</td>", html_escape(&t.pair)));
        for (kind, img) in [("input", &t.input), ("output", &t.output), ("truth", &t.truth)] {
            let name = format!("{}_{}.png", stem, kind);
            save_image(img, images.join(&name))?;
            html.push_str(&format!("<td><img src=\"images/{}\" alt=\"{}\"></td>", name, kind));
        }
        html.push_str("</tr>\n");
    }
    if current.is_some() {
        html.push_str("</table>\n");
    }
    html.push_str("</body>\n</html>\n");
    let html_path = out_dir.join(REPORT_HTML);
    fs::write(&html_path, html).map_err(|e| Error::io(&html_path, e))
}

/// Results of one trained arm on the held-out pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub name: String,
    pub weights: LossWeights,
    pub config: TrainConfig,
    pub grid_scores: Vec<f64>,
    pub grid_score_mean: f64,
    pub ssim_values: Vec<f64>,
    pub ssim_mean: f64,
    pub mean_epoch_seconds: f64,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbRecord {
    pub spec: NetworkSpec,
    pub held_out: usize,
    /// `[none, ms_ssim]`.
    pub arms: Vec<ArmRecord>,
    /// Per-epoch training time of the MS-SSIM arm relative to the other.
    pub overhead_percent: f64,
    pub reference_overhead_percent: f64,
    pub grid_score_reduced: bool,
    pub ssim_improved: bool,
}

pub const AB_RECORD: &str = "ab_record.json";

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains two identically seeded models that differ only in the SSIM
/// term (`none`, then `ms_ssim`), scores both on the test split and writes
/// logs, checkpoints, sample outputs with their spectra and
/// `ab_record.json` under `out_dir`.
pub fn ab_experiment(
    dataset: &DatasetManifest,
    spec: &NetworkSpec,
    weights: &LossWeights,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<AbRecord> {
    let held_out = load_pairs::<f32>(dataset, Split::Test, config.image_size)?;
    if held_out.is_empty() {
        return Err(Error::Argument("dataset has no test pairs to compare on".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut arms = Vec::with_capacity(2);
    for variant in [SsimVariant::None, SsimVariant::MsSsim] {
        let name = match variant {
            SsimVariant::None => "none",
            SsimVariant::Ssim => "ssim",
            SsimVariant::MsSsim => "ms_ssim",
        };
        let arm_dir = out_dir.join(name);
        fs::create_dir_all(&arm_dir).map_err(|e| Error::io(&arm_dir, e))?;
        let arm_weights = LossWeights {
            ssim_variant: variant,
            ..weights.clone()
        };
        let outcome = train::<f32>(dataset, spec, &arm_weights, config, |_, _| Ok(()))?;
        write_log(arm_dir.join("train_log.csv"), &outcome.log)?;
        outcome.trainer.checkpoint().save(arm_dir.join("model.ckpt"))?;

        let outputs = outcome.trainer.predict_pairs(&held_out)?;
        let mut grid_scores = Vec::with_capacity(outputs.len());
        let mut ssim_values = Vec::with_capacity(outputs.len());
        for (pair, out) in held_out.iter().zip(&outputs) {
            let out = out.cast::<f64>();
            grid_scores.push(grid_artifact_score(&out)?);
            ssim_values.push(ssim(&pair.clean.cast::<f64>(), &out, &SsimParams::default())?);
        }
        let sample = outputs[0].cast::<f64>();
        save_image(&sample, arm_dir.join("sample_output.png"))?;
        save_image(&fft_magnitude(&sample).to_image()?, arm_dir.join("sample_spectrum.png"))?;

        arms.push(ArmRecord {
            name: name.to_string(),
            weights: arm_weights,
            config: config.clone(),
            grid_score_mean: mean(&grid_scores),
            grid_scores,
            ssim_mean: mean(&ssim_values),
            ssim_values,
            mean_epoch_seconds: mean(&outcome.log.iter().map(|l| l.seconds).collect::<Vec<_>>()),
            log: outcome.log,
        });
    }
    let truth = held_out[0].clean.cast::<f64>();
    save_image(&truth, out_dir.join("sample_truth.png"))?;
    save_image(&fft_magnitude(&truth).to_image()?, out_dir.join("sample_truth_spectrum.png"))?;

    let record = AbRecord {
        spec: spec.clone(),
        held_out: held_out.len(),
        overhead_percent: 100.0 * (arms[1].mean_epoch_seconds / arms[0].mean_epoch_seconds - 1.0),
        reference_overhead_percent: REFERENCE_OVERHEAD_PERCENT,
        grid_score_reduced: arms[0].grid_score_mean > arms[1].grid_score_mean,
        ssim_improved: arms[1].ssim_mean > arms[0].ssim_mean,
        arms,
    };
    let path = out_dir.join(AB_RECORD);
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Argument(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(record)
}

/// Filter counts of the U-Net preset; image size comes from the training
/// config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub generator_filters: Vec<usize>,
    pub discriminator_filters: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            generator_filters: vec![16, 32, 64],
            discriminator_filters: vec![16, 32, 64],
            leaky_slope: 0.2,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, image_size: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec::unet(
            3,
            image_size,
            &self.generator_filters,
            &self.discriminator_filters,
            self.leaky_slope,
        );
        spec.plan()?;
        Ok(spec)
    }
}

/// Everything the command line reads from `--config FILE` (TOML). Every
/// section and key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub synth: SynthParams,
    pub network: NetworkConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_strings_round_trip() {
        for s in ["identity", "dcp", "veil", "model:runs/a.ckpt"] {
            assert_eq!(s.parse::<Method>().unwrap().to_string(), s);
        }
        assert!("model:".parse::<Method>().is_err());
        assert!("evid".parse::<Method>().is_err());
        assert_eq!(Method::Model("x/best.ckpt".into()).label(), "model:best");
    }

    #[test]
    fn metric_names_parse() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn identical_images_give_zero_errors() {
        let img = crate::scenes::tissue_scene(40, 40, 2).unwrap();
        assert_eq!(Metric::Ciede2000.compute(&img, &img).unwrap(), 0.0);
        assert_eq!(Metric::Rmse.compute(&img, &img).unwrap(), 0.0);
        assert!((Metric::Ssim.compute(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert!(Metric::Psnr.compute(&img, &img).is_err());
    }

    #[test]
    fn csv_marks_failed_metrics() {
        let rows = vec![ReportRow {
            method: "identity".into(),
            metrics: vec![
                MetricOutcome {
                    metric: Metric::Rmse,
                    result: Some(aggregate(&[1.0, 3.0], "rmse").unwrap()),
                    error: None,
                },
                MetricOutcome {
                    metric: Metric::Psnr,
                    result: None,
                    error: Some("psnr is not finite".into()),
                },
            ],
        }];
        assert_eq!(
            report_csv(&rows),
            "method,rmse_mean,rmse_std,psnr_mean,psnr_std\nidentity,2.000000,1.000000,NA,NA\n"
        );
        let odd = vec![ReportRow {
            method: Method::Model("runs/a,b.ckpt".into()).label(),
            metrics: Vec::new(),
        }];
        assert_eq!(report_csv(&odd), "method\n\"model:a,b\"\n");
    }

    #[test]
    fn config_parses_partial_toml() {
        let c = Config::from_toml(
            "seed = 7\n[train]\nepochs = 3\n[loss]\nssim_variant = \"none\"\n[eval]\nmethods = [\"identity\", \"model:m.ckpt\"]\nmetrics = [\"rmse\"]\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.loss.ssim_variant, SsimVariant::None);
        assert_eq!(c.eval.methods[1], Method::Model("m.ckpt".into()));
        assert!(Config::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn network_config_builds_the_desk_spec() {
        assert_eq!(NetworkConfig::default().spec(64).unwrap(), NetworkSpec::desk());
        assert!(NetworkConfig::default().spec(60).is_err());
    }
}
