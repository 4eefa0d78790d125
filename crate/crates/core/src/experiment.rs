//! Feature ingestion, leave-one-speaker-out folds, the two experiment drivers
//! and report emission.
//!
//! Fold protocol: for each held-out speaker, train on the regular session of
//! every other speaker, select models on the phrase-free session of every
//! other speaker, and test on the held-out speaker's phrase-free session.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circular;
use crate::error::{Error, Result};
use crate::labels::{
    self, AggregatedLabel, AnnotationRecord, ColorLabel, Emotion, Session, UtteranceMeta, HUE_BIN_DEG,
    SATURATION_STEPS, VALUE_STEPS,
};
use crate::metrics::{self, ConfusionMatrix, PairedSeries};
use crate::neural::{self, Dataset, RegressionTarget, TargetSet, TrainConfig};
use crate::svr::{self, FittedSvr, GridTarget, Standardizer, SvrConfig, SvrGrid};

pub const PROTOCOL: &str = "leave-one-speaker-out; train = regular session of the other speakers; \
validation = phrase-free session of the other speakers; test = phrase-free session of the held-out speaker";

// ---------------------------------------------------------------------------
// features

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    UtteranceLevel,
    FrameLevel,
}

/// Feature vectors keyed by utterance. Utterance-level rows are stored as
/// `1 × D` matrices, frame-level rows as `T × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub kind: FeatureKind,
    pub dimension: usize,
    pub rows: BTreeMap<String, Array2<f64>>,
}

impl FeatureSet {
    pub fn from_vectors(vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dimension = vectors.values().next().map(Vec::len).unwrap_or(0);
        let mut rows = BTreeMap::new();
        for (id, v) in vectors {
            if v.len() != dimension {
                return Err(Error::validation(format!(
                    "utterance {id:?} has dimension {}, expected {dimension}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!("utterance {id:?} has a non-finite feature")));
            }
            rows.insert(id, Array2::from_shape_vec((1, dimension), v).expect("shape checked"));
        }
        Ok(FeatureSet {
            kind: FeatureKind::UtteranceLevel,
            dimension,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// One vector per utterance; frame-level rows are averaged over time.
    pub fn pooled(&self, id: &str) -> Result<Array1<f64>> {
        let m = self
            .rows
            .get(id)
            .ok_or_else(|| Error::validation(format!("no features for utterance {id:?}")))?;
        svr::temporal_average_pooling(m.view())
    }

    /// Pooled vectors for `ids`, stacked in order.
    pub fn matrix(&self, ids: &[String]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((ids.len(), self.dimension));
        for (i, id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&self.pooled(id)?);
        }
        Ok(out)
    }

    /// Writes an utterance-level CSV (frame-level sets are pooled first).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["utterance_id".to_string()];
        header.extend((0..self.dimension).map(|k| format!("f{k}")));
        wr.write_record(&header).map_err(labels::csv_err)?;
        for id in self.rows.keys() {
            let v = self.pooled(id)?;
            let mut rec = vec![id.clone()];
            rec.extend(v.iter().map(|x| x.to_string()));
            wr.write_record(&rec).map_err(labels::csv_err)?;
        }
        wr.flush().map_err(|e| Error::io("<features>", e))?;
        Ok(())
    }
}

fn parse_float(s: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: {s:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: non-finite value"),
        });
    }
    Ok(v)
}

/// Parses a feature CSV. Line numbers in errors are 1-based file lines.
pub fn parse_features(text: &str, kind: FeatureKind) -> Result<FeatureSet> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rd.headers().map_err(labels::csv_err)?.clone();
    let lead: &[&str] = match kind {
        FeatureKind::UtteranceLevel => &["utterance_id"],
        FeatureKind::FrameLevel => &["utterance_id", "frame_index"],
    };
    let fixed = lead.len();
    if header.len() <= fixed || header.iter().take(fixed).ne(lead.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with {} followed by f0..f(D-1)", lead.join(",")),
        });
    }
    for (k, name) in header.iter().skip(fixed).enumerate() {
        if name != format!("f{k}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("feature column {k} is named {name:?}, expected \"f{k}\""),
            });
        }
    }
    let dimension = header.len() - fixed;

    let mut rows: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut current: Option<(String, Vec<f64>, usize)> = None;
    let mut finished: BTreeSet<String> = BTreeSet::new();
    let flush = |cur: Option<(String, Vec<f64>, usize)>, rows: &mut BTreeMap<String, Array2<f64>>| {
        if let Some((id, data, t)) = cur {
            rows.insert(id, Array2::from_shape_vec((t, dimension), data).expect("rows have dimension D"));
        }
    };

    for (k, rec) in rd.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty utterance_id".into(),
            });
        }
        let mut values = Vec::with_capacity(dimension);
        for (j, cell) in rec.iter().skip(fixed).enumerate() {
            values.push(parse_float(cell, line, &format!("f{j}"))?);
        }
        match kind {
            FeatureKind::UtteranceLevel => {
                if rows.contains_key(&id) {
                    return Err(Error::Parse {
                        line,
                        message: format!("duplicate utterance id {id:?}"),
                    });
                }
                rows.insert(id, Array2::from_shape_vec((1, dimension), values).expect("D values"));
            }
            FeatureKind::FrameLevel => {
                let frame: usize = rec[1].trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("frame_index {:?} is not a non-negative integer", &rec[1]),
                })?;
                let same = matches!(&current, Some((cur, _, _)) if *cur == id);
                if !same {
                    if finished.contains(&id) {
                        return Err(Error::Parse {
                            line,
                            message: format!("frames of utterance {id:?} are not contiguous"),
                        });
                    }
                    if let Some((prev, _, _)) = &current {
                        finished.insert(prev.clone());
                    }
                    flush(current.take(), &mut rows);
                    current = Some((id.clone(), Vec::new(), 0));
                }
                let (_, data, t) = current.as_mut().expect("set above");
                if frame != *t {
                    return Err(Error::Parse {
                        line,
                        message: format!("utterance {id:?}: expected frame_index {t}, found {frame}"),
                    });
                }
                data.extend(values);
                *t += 1;
            }
        }
    }
    flush(current.take(), &mut rows);
    Ok(FeatureSet { kind, dimension, rows })
}

pub fn load_features(path: &Path, kind: FeatureKind) -> Result<FeatureSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text, kind)
}

// ---------------------------------------------------------------------------
// folds

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub held_out_speaker: String,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// One fold per speaker, in speaker-id order; ids sorted within each split.
pub fn make_loso_folds(metas: &[UtteranceMeta]) -> Result<Vec<FoldSpec>> {
    let speakers: BTreeSet<&str> = metas.iter().map(|m| m.speaker_id.as_str()).collect();
    if speakers.len() < 2 {
        return Err(Error::validation(format!(
            "leave-one-speaker-out needs at least two speakers, found {}",
            speakers.len()
        )));
    }
    for s in &speakers {
        for session in [Session::Regular, Session::PhraseFree] {
            if !metas.iter().any(|m| m.speaker_id == *s && m.session == session) {
                return Err(Error::validation(format!(
                    "speaker {s:?} has no {} utterances",
                    session.as_str()
                )));
            }
        }
    }
    let pick = |pred: &dyn Fn(&UtteranceMeta) -> bool| -> Vec<String> {
        let mut v: Vec<String> = metas.iter().filter(|m| pred(m)).map(|m| m.utterance_id.clone()).collect();
        v.sort();
        v
    };
    Ok(speakers
        .iter()
        .map(|s| FoldSpec {
            held_out_speaker: s.to_string(),
            train_ids: pick(&|m| m.speaker_id != *s && m.session == Session::Regular),
            val_ids: pick(&|m| m.speaker_id != *s && m.session == Session::PhraseFree),
            test_ids: pick(&|m| m.speaker_id == *s && m.session == Session::PhraseFree),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// synthetic benchmark

/// Per-emotion color prototype: hue (degrees), saturation, value.
pub fn emotion_prototype(e: Emotion) -> (f64, f64, f64) {
    match e {
        Emotion::Ang => (343.0, 0.80, 0.75),
        Emotion::Dis => (296.0, 0.50, 0.55),
        Emotion::Fea => (275.0, 0.50, 0.55),
        Emotion::Hap => (46.0, 0.80, 0.90),
        Emotion::Sad => (242.0, 0.40, 0.45),
        Emotion::Sur => (48.0, 0.75, 0.90),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub speakers: usize,
    pub utterances_per_cell: usize,
    pub annotators: usize,
    /// Total feature dimension; the first `signal_dimensions` carry the mixed targets.
    pub dimension: usize,
    pub signal_dimensions: usize,
    /// Standard deviation of i.i.d. feature noise.
    pub noise: f64,
    /// Standard deviation of the per-speaker offset, all dimensions.
    pub speaker_offset: f64,
    /// Standard deviation of the target-independent distractor dimensions.
    pub distractor_std: f64,
    /// Within-emotion spread of the underlying color.
    pub hue_jitter_deg: f64,
    pub sv_jitter: f64,
    /// Per-annotator perturbation before snapping to the tile grid.
    pub annotator_hue_deg: f64,
    pub annotator_sv: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            speakers: 4,
            utterances_per_cell: 10,
            annotators: 10,
            dimension: 24,
            signal_dimensions: 16,
            noise: 0.05,
            speaker_offset: 0.1,
            distractor_std: 1.0,
            hue_jitter_deg: 10.0,
            sv_jitter: 0.08,
            annotator_hue_deg: 12.0,
            annotator_sv: 0.12,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers < 2 {
            return Err(Error::validation("synthetic benchmark needs at least two speakers"));
        }
        if self.utterances_per_cell == 0 || self.annotators == 0 {
            return Err(Error::validation("utterances_per_cell and annotators must be >= 1"));
        }
        if self.signal_dimensions == 0 || self.signal_dimensions > self.dimension {
            return Err(Error::validation("need 1 <= signal_dimensions <= dimension"));
        }
        let stds = [
            self.noise,
            self.speaker_offset,
            self.distractor_std,
            self.hue_jitter_deg,
            self.sv_jitter,
            self.annotator_hue_deg,
            self.annotator_sv,
        ];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::validation("spreads must be finite and non-negative"));
        }
        Ok(())
    }
}

const SV_WEIGHT: f64 = 3.0;

/// Number of latent coordinates: sin H, cos H, S, V and a one-hot emotion.
pub const LATENT_DIMENSIONS: usize = 4 + Emotion::COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub metas: Vec<UtteranceMeta>,
    pub annotations: Vec<AnnotationRecord>,
    pub labels: Vec<AggregatedLabel>,
    pub features: FeatureSet,
    /// `signal_dimensions × LATENT_DIMENSIONS` mixing matrix.
    pub mixing: Array2<f64>,
    /// Per-speaker offset over all dimensions.
    pub speaker_offsets: BTreeMap<String, Array1<f64>>,
}

/// Latent coordinates of a final label and its emotion.
pub fn latent_vector(label: &ColorLabel, emotion: Emotion) -> Result<Array1<f64>> {
    let (s, c) = circular::hue_to_components(label.hue_deg)?;
    let mut z = Array1::zeros(LATENT_DIMENSIONS);
    z[0] = s;
    z[1] = c;
    z[2] = label.saturation;
    z[3] = label.value;
    z[4 + emotion.index()] = 1.0;
    Ok(z)
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("validated non-negative std")
}

fn snap(x: f64, grid: &[f64]) -> f64 {
    *grid
        .iter()
        .min_by(|a, b| (*a - x).abs().total_cmp(&(*b - x).abs()))
        .expect("non-empty grid")
}

/// Seeded synthetic corpus: manifest, simulated on-grid annotations, their
/// aggregated labels, and features that are noisy linear images of
/// `(sin H, cos H, S, V, one-hot emotion)` plus per-speaker offsets.
pub fn make_synthetic_benchmark(cfg: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = normal(1.0);
    let scale = 1.0 / (LATENT_DIMENSIONS as f64).sqrt();
    let mut mixing = Array2::from_shape_simple_fn((cfg.signal_dimensions, LATENT_DIMENSIONS), || {
        unit.sample(&mut rng) * scale * 2.0
    });
    // saturation and value spread about a third as much as the other
    // coordinates; weight them up so each carries comparable feature variance
    for k in [2, 3] {
        mixing.column_mut(k).mapv_inplace(|w| w * SV_WEIGHT);
    }

    let speakers: Vec<String> = (1..=cfg.speakers).map(|k| format!("spk{k}")).collect();
    let mut speaker_offsets = BTreeMap::new();
    for s in &speakers {
        let off = Array1::from_shape_fn(cfg.dimension, |_| normal(cfg.speaker_offset).sample(&mut rng));
        speaker_offsets.insert(s.clone(), off);
    }

    let hue_grid = labels::hue_options();
    let base_time = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid date");
    let mut metas = Vec::new();
    let mut annotations = Vec::new();
    let mut aggregated = Vec::new();
    let mut vectors = BTreeMap::new();
    let mut clock = 0i64;
    for s in &speakers {
        for session in [Session::Regular, Session::PhraseFree] {
            let tag = match session {
                Session::Regular => "reg",
                Session::PhraseFree => "pf",
            };
            for e in Emotion::ALL {
                let (h0, s0, v0) = emotion_prototype(e);
                for k in 0..cfg.utterances_per_cell {
                    let id = format!("{s}_{tag}_{}_{k:03}", e.as_str().to_lowercase());
                    let true_h = h0 + normal(cfg.hue_jitter_deg).sample(&mut rng);
                    let true_s = (s0 + normal(cfg.sv_jitter).sample(&mut rng)).clamp(0.0, 1.0);
                    let true_v = (v0 + normal(cfg.sv_jitter).sample(&mut rng)).clamp(0.2, 1.0);
                    let mut recs = Vec::with_capacity(cfg.annotators);
                    for a in 0..cfg.annotators {
                        let h = circular::normalize_deg(true_h + normal(cfg.annotator_hue_deg).sample(&mut rng))?;
                        let h = circular::normalize_deg((h / HUE_BIN_DEG).round() * HUE_BIN_DEG)?;
                        debug_assert!(hue_grid.contains(&h));
                        let sat = snap(true_s + normal(cfg.annotator_sv).sample(&mut rng), &SATURATION_STEPS);
                        let val = snap(true_v + normal(cfg.annotator_sv).sample(&mut rng), &VALUE_STEPS);
                        clock += 1;
                        recs.push(AnnotationRecord {
                            utterance_id: id.clone(),
                            annotator_id: format!("ann{:02}", a + 1),
                            hue_deg: h,
                            saturation: sat,
                            value: val,
                            submitted_at: base_time + chrono::Duration::seconds(clock),
                        });
                    }
                    let agg = labels::aggregate_with_quorum(&recs, cfg.annotators)?;
                    let z = latent_vector(&agg.label, e)?;
                    let signal = mixing.dot(&z);
                    let offset = &speaker_offsets[s];
                    let (noise, distractor) = (normal(cfg.noise), normal(cfg.distractor_std));
                    let v: Vec<f64> = (0..cfg.dimension)
                        .map(|d| {
                            let x = if d < cfg.signal_dimensions {
                                signal[d] + noise.sample(&mut rng)
                            } else {
                                distractor.sample(&mut rng)
                            };
                            x + offset[d]
                        })
                        .collect();
                    vectors.insert(id.clone(), v);
                    annotations.extend(recs);
                    aggregated.push(agg);
                    metas.push(UtteranceMeta {
                        utterance_id: id.clone(),
                        speaker_id: s.clone(),
                        session,
                        emotion: e,
                        audio_path: format!("audio/{id}.wav"),
                    });
                }
            }
        }
    }
    aggregated.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    Ok(SyntheticBenchmark {
        metas,
        annotations,
        labels: aggregated,
        features: FeatureSet::from_vectors(vectors)?,
        mixing,
        speaker_offsets,
    })
}

// ---------------------------------------------------------------------------
// corpus join

/// Features, labels and manifest joined on utterance id.
#[derive(Debug, Clone)]
pub struct Corpus<'a> {
    pub features: &'a FeatureSet,
    pub labels: BTreeMap<&'a str, &'a AggregatedLabel>,
    pub metas: BTreeMap<&'a str, &'a UtteranceMeta>,
}

impl<'a> Corpus<'a> {
    /// Every manifest utterance must have both features and a label.
    pub fn join(features: &'a FeatureSet, labels: &'a [AggregatedLabel], metas: &'a [UtteranceMeta]) -> Result<Self> {
        let label_map: BTreeMap<&str, &AggregatedLabel> =
            labels.iter().map(|l| (l.utterance_id.as_str(), l)).collect();
        let meta_map: BTreeMap<&str, &UtteranceMeta> = metas.iter().map(|m| (m.utterance_id.as_str(), m)).collect();
        let mut missing = Vec::new();
        for id in meta_map.keys() {
            let f = features.rows.contains_key(*id);
            let l = label_map.contains_key(id);
            if !(f && l) {
                let what = match (f, l) {
                    (false, false) => "features and label",
                    (false, true) => "features",
                    _ => "label",
                };
                missing.push(format!("{id} ({what})"));
            }
        }
        if !missing.is_empty() {
            return Err(Error::validation(format!(
                "{} utterances lack data: {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        Ok(Corpus {
            features,
            labels: label_map,
            metas: meta_map,
        })
    }

    fn split(&self, ids: &[String], standardizer: Option<&Standardizer>) -> Result<Split> {
        let raw = self.features.matrix(ids)?;
        let x = match standardizer {
            Some(s) => s.transform(raw.view())?,
            None => raw,
        };
        Ok(Split {
            ids: ids.to_vec(),
            x,
            colors: ids.iter().map(|id| self.labels[id.as_str()].label).collect(),
            emotions: ids.iter().map(|id| self.metas[id.as_str()].emotion).collect(),
        })
    }
}

#[derive(Debug, Clone)]
struct Split {
    ids: Vec<String>,
    x: Array2<f64>,
    colors: Vec<ColorLabel>,
    emotions: Vec<Emotion>,
}

impl Split {
    fn hues(&self) -> Vec<f64> {
        self.colors.iter().map(|c| c.hue_deg).collect()
    }

    fn saturations(&self) -> Vec<f64> {
        self.colors.iter().map(|c| c.saturation).collect()
    }

    fn values(&self) -> Vec<f64> {
        self.colors.iter().map(|c| c.value).collect()
    }

    fn dataset(&self) -> Result<Dataset> {
        let targets = self
            .colors
            .iter()
            .map(RegressionTarget::from_color)
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.x.clone(), &targets, self.emotions.clone())
    }
}

struct FoldData {
    train: Split,
    val: Split,
    test: Split,
}

fn prepare_fold(corpus: &Corpus<'_>, fold: &FoldSpec) -> Result<FoldData> {
    for (name, ids) in [("train", &fold.train_ids), ("validation", &fold.val_ids), ("test", &fold.test_ids)] {
        if ids.len() < 2 {
            return Err(Error::validation(format!(
                "fold {:?}: {name} split has {} utterances, need at least 2",
                fold.held_out_speaker,
                ids.len()
            )));
        }
    }
    let raw_train = corpus.features.matrix(&fold.train_ids)?;
    let standardizer = Standardizer::fit(raw_train.view())?;
    Ok(FoldData {
        train: corpus.split(&fold.train_ids, Some(&standardizer))?,
        val: corpus.split(&fold.val_ids, Some(&standardizer))?,
        test: corpus.split(&fold.test_ids, Some(&standardizer))?,
    })
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedColor {
    /// `None` when the predicted direction was too short to define a hue.
    pub hue_deg: Option<f64>,
    pub saturation: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePrediction {
    pub setting: String,
    pub held_out_speaker: String,
    pub utterance_id: String,
    pub emotion: Emotion,
    pub truth: ColorLabel,
    /// Absent for classification-only settings.
    pub color: Option<PredictedColor>,
    /// Absent for regression-only settings.
    pub predicted_emotion: Option<Emotion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Metrics over all test utterances of all folds at once.
    Pooled,
    /// Unweighted mean of per-fold metrics.
    FoldMean,
    /// A single fold.
    Fold,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Pooled => "pooled",
            Aggregation::FoldMean => "fold_mean",
            Aggregation::Fold => "fold",
        }
    }
}

/// One table row. `None` cells are printed as dashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub setting: String,
    pub aggregation: Aggregation,
    pub n: usize,
    pub hue_ae: Option<f64>,
    pub sat_pcc: Option<f64>,
    pub sat_ccc: Option<f64>,
    pub val_pcc: Option<f64>,
    pub val_ccc: Option<f64>,
    pub accuracy: Option<f64>,
}

impl MetricRow {
    pub fn has_regression(&self) -> bool {
        self.hue_ae.is_some() || self.sat_ccc.is_some() || self.val_ccc.is_some()
    }
}

/// Scores a group of predictions from one setting. Undefined predicted hues
/// count as 180° errors.
pub fn score_predictions(
    setting: &str,
    aggregation: Aggregation,
    preds: &[&UtterancePrediction],
) -> Result<MetricRow> {
    let mut row = MetricRow {
        setting: setting.to_string(),
        aggregation,
        n: preds.len(),
        hue_ae: None,
        sat_pcc: None,
        sat_ccc: None,
        val_pcc: None,
        val_ccc: None,
        accuracy: None,
    };
    if preds.is_empty() {
        return Ok(row);
    }
    let colors: Option<Vec<PredictedColor>> = preds.iter().map(|p| p.color).collect();
    if let Some(colors) = colors {
        let mut total = 0.0;
        for (p, c) in preds.iter().zip(&colors) {
            total += match c.hue_deg {
                Some(h) => circular::angular_error(p.truth.hue_deg, h)?,
                None => 180.0,
            };
        }
        row.hue_ae = Some(total / preds.len() as f64);
        if preds.len() >= 2 {
            let pair = |t: Vec<f64>, q: Vec<f64>| -> Result<(Option<f64>, Option<f64>)> {
                let s = PairedSeries::new(&t, &q)?;
                Ok((metrics::pcc(s).ok(), Some(metrics::ccc(s))))
            };
            (row.sat_pcc, row.sat_ccc) = pair(
                preds.iter().map(|p| p.truth.saturation).collect(),
                colors.iter().map(|c| c.saturation).collect(),
            )?;
            (row.val_pcc, row.val_ccc) = pair(
                preds.iter().map(|p| p.truth.value).collect(),
                colors.iter().map(|c| c.value).collect(),
            )?;
        }
    }
    let predicted: Option<Vec<Emotion>> = preds.iter().map(|p| p.predicted_emotion).collect();
    if let Some(predicted) = predicted {
        let truth: Vec<Emotion> = preds.iter().map(|p| p.emotion).collect();
        row.accuracy = Some(metrics::accuracy(&truth, &predicted)?);
    }
    Ok(row)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<f64>>>()?;
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn fold_mean(setting: &str, rows: &[&MetricRow]) -> MetricRow {
    MetricRow {
        setting: setting.to_string(),
        aggregation: Aggregation::FoldMean,
        n: rows.iter().map(|r| r.n).sum(),
        hue_ae: mean_of(rows.iter().map(|r| r.hue_ae)),
        sat_pcc: mean_of(rows.iter().map(|r| r.sat_pcc)),
        sat_ccc: mean_of(rows.iter().map(|r| r.sat_ccc)),
        val_pcc: mean_of(rows.iter().map(|r| r.val_pcc)),
        val_ccc: mean_of(rows.iter().map(|r| r.val_ccc)),
        accuracy: mean_of(rows.iter().map(|r| r.accuracy)),
    }
}

/// SVR hyperparameters chosen on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrSelection {
    pub hue: SvrConfig,
    pub hue_val_ae: f64,
    pub saturation: SvrConfig,
    pub saturation_val_ccc: f64,
    pub value: SvrConfig,
    pub value_val_ccc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub held_out_speaker: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub rows: Vec<MetricRow>,
    pub svr_selection: Option<SvrSelection>,
    /// Kept epoch per trained network, keyed by run name.
    pub best_epochs: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfusion {
    pub setting: String,
    pub matrix: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub protocol: String,
    pub config: ExperimentConfig,
    /// Setting names in table order.
    pub settings: Vec<String>,
    pub rows: Vec<MetricRow>,
    pub folds: Vec<FoldReport>,
    pub confusion: Vec<NamedConfusion>,
    pub predictions: Vec<UtterancePrediction>,
}

impl RunReport {
    pub fn row(&self, setting: &str, aggregation: Aggregation) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.setting == setting && r.aggregation == aggregation)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub svr_grid: SvrGrid,
    pub dnn: TrainConfig,
    pub alphas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            svr_grid: SvrGrid::default(),
            dnn: TrainConfig::default(),
            alphas: vec![0.6, 0.7, 0.8, 0.9, 1.0],
        }
    }
}

impl ExperimentConfig {
    /// Settings used on the synthetic benchmark: default grid and network,
    /// with a learning rate suited to a few hundred training rows.
    pub fn synthetic() -> Self {
        ExperimentConfig {
            dnn: TrainConfig {
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dnn.seed = seed;
        self
    }
}

pub const SETTING_SVR: &str = "SVR";
pub const SETTING_DNN_INDIVIDUAL: &str = "DNN individual";
pub const SETTING_DNN_JOINT: &str = "DNN joint";

pub fn alpha_setting(alpha: f64) -> String {
    format!("alpha={alpha:.1}")
}

struct FoldOutput {
    report: FoldReport,
    predictions: Vec<UtterancePrediction>,
}

fn assemble(
    experiment: &str,
    config: &ExperimentConfig,
    settings: Vec<String>,
    outputs: Vec<FoldOutput>,
    with_confusion: bool,
) -> Result<RunReport> {
    let mut folds = Vec::new();
    let mut predictions = Vec::new();
    for o in outputs {
        folds.push(o.report);
        predictions.extend(o.predictions);
    }
    let mut rows = Vec::new();
    for s in &settings {
        let group: Vec<&UtterancePrediction> = predictions.iter().filter(|p| &p.setting == s).collect();
        rows.push(score_predictions(s, Aggregation::Pooled, &group)?);
        let per_fold: Vec<&MetricRow> = folds
            .iter()
            .flat_map(|f| f.rows.iter().filter(|r| &r.setting == s))
            .collect();
        rows.push(fold_mean(s, &per_fold));
    }
    let mut confusion = Vec::new();
    if with_confusion {
        for s in &settings {
            let group: Vec<&UtterancePrediction> = predictions.iter().filter(|p| &p.setting == s).collect();
            let truth: Vec<Emotion> = group.iter().map(|p| p.emotion).collect();
            let pred: Option<Vec<Emotion>> = group.iter().map(|p| p.predicted_emotion).collect();
            if let Some(pred) = pred {
                if !pred.is_empty() {
                    confusion.push(NamedConfusion {
                        setting: s.clone(),
                        matrix: metrics::confusion(&truth, &pred)?,
                    });
                }
            }
        }
    }
    Ok(RunReport {
        experiment: experiment.to_string(),
        protocol: PROTOCOL.to_string(),
        config: config.clone(),
        settings,
        rows,
        folds,
        confusion,
        predictions,
    })
}

fn fold_rows(settings: &[String], preds: &[UtterancePrediction]) -> Result<Vec<MetricRow>> {
    settings
        .iter()
        .map(|s| {
            let group: Vec<&UtterancePrediction> = preds.iter().filter(|p| &p.setting == s).collect();
            score_predictions(s, Aggregation::Fold, &group)
        })
        .collect()
}

fn base_prediction(setting: &str, fold: &FoldSpec, test: &Split, i: usize) -> UtterancePrediction {
    UtterancePrediction {
        setting: setting.to_string(),
        held_out_speaker: fold.held_out_speaker.clone(),
        utterance_id: test.ids[i].clone(),
        emotion: test.emotions[i],
        truth: test.colors[i],
        color: None,
        predicted_emotion: None,
    }
}

fn run_folds<F>(corpus: &Corpus<'_>, folds: &[FoldSpec], f: F) -> Result<Vec<FoldOutput>>
where
    F: Fn(&FoldSpec, &FoldData) -> Result<FoldOutput> + Sync,
{
    folds
        .par_iter()
        .map(|fold| {
            let data = prepare_fold(corpus, fold)?;
            f(fold, &data)
        })
        .collect()
}

fn nn_run(data: &FoldData, config: &TrainConfig) -> Result<neural::TrainOutcome> {
    let train = data.train.dataset()?;
    let val = data.val.dataset()?;
    let cfg = TrainConfig {
        batch_size: config.batch_size.min(train.len()),
        ..config.clone()
    };
    neural::train(&train, Some(&val), &cfg)
}

fn svr_fold(data: &FoldData, grid: &[SvrConfig]) -> Result<(Vec<PredictedColor>, SvrSelection)> {
    let (tr, va, te) = (&data.train, &data.val, &data.test);
    let hue = svr::grid_search(
        tr.x.view(),
        va.x.view(),
        GridTarget::Hue {
            train: &tr.hues(),
            val: &va.hues(),
        },
        grid,
    )?;
    let sat = svr::grid_search(
        tr.x.view(),
        va.x.view(),
        GridTarget::Scalar {
            train: &tr.saturations(),
            val: &va.saturations(),
        },
        grid,
    )?;
    let val = svr::grid_search(
        tr.x.view(),
        va.x.view(),
        GridTarget::Scalar {
            train: &tr.values(),
            val: &va.values(),
        },
        grid,
    )?;
    let (FittedSvr::Hue(hue_model), FittedSvr::Scalar(sat_model), FittedSvr::Scalar(val_model)) =
        (&hue.model, &sat.model, &val.model)
    else {
        unreachable!("grid_search returns the variant matching its target");
    };
    let mut out = Vec::with_capacity(te.ids.len());
    for row in te.x.rows() {
        let hue_deg = match svr::predict_hue(hue_model, row) {
            Ok(h) => Some(h),
            Err(Error::UndefinedAngle { .. }) => None,
            Err(e) => return Err(e),
        };
        out.push(PredictedColor {
            hue_deg,
            saturation: sat_model.predict(row)?.clamp(0.0, 1.0),
            value: val_model.predict(row)?.clamp(0.0, 1.0),
        });
    }
    Ok((
        out,
        SvrSelection {
            hue: hue.best_config,
            hue_val_ae: hue.best_score,
            saturation: sat.best_config,
            saturation_val_ccc: sat.best_score,
            value: val.best_config,
            value_val_ccc: val.best_score,
        },
    ))
}

/// SVR with per-attribute grid search, DNN trained per attribute, and DNN
/// trained jointly on all attributes; all scored on every fold's test split.
pub fn run_experiment1(
    features: &FeatureSet,
    labels: &[AggregatedLabel],
    metas: &[UtteranceMeta],
    config: &ExperimentConfig,
) -> Result<RunReport> {
    let corpus = Corpus::join(features, labels, metas)?;
    let folds = make_loso_folds(metas)?;
    let grid = config.svr_grid.points(features.dimension)?;
    let settings: Vec<String> = [SETTING_SVR, SETTING_DNN_INDIVIDUAL, SETTING_DNN_JOINT]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let outputs = run_folds(&corpus, &folds, |fold, data| {
        let test = &data.test;
        let mut preds = Vec::new();
        let mut best_epochs = BTreeMap::new();

        let (svr_colors, selection) = svr_fold(data, &grid)?;
        for (i, c) in svr_colors.into_iter().enumerate() {
            let mut p = base_prediction(SETTING_SVR, fold, test, i);
            p.color = Some(c);
            preds.push(p);
        }

        let regression_only = |targets: TargetSet| TrainConfig {
            alpha: 0.0,
            target_set: targets,
            ..config.dnn.clone()
        };
        let mut individual: Vec<neural::ColorPrediction> = Vec::new();
        for (name, ts) in [
            ("individual_hue", TargetSet::HUE),
            ("individual_saturation", TargetSet::SATURATION),
            ("individual_value", TargetSet::VALUE),
        ] {
            let out = nn_run(data, &regression_only(ts))?;
            best_epochs.insert(name.to_string(), out.best_epoch);
            let p = neural::predict_colors(&out.params, test.x.view())?;
            if individual.is_empty() {
                individual = p;
            } else {
                for (acc, new) in individual.iter_mut().zip(p) {
                    if ts.saturation {
                        acc.saturation = new.saturation;
                    }
                    if ts.value {
                        acc.value = new.value;
                    }
                }
            }
        }
        for (i, c) in individual.iter().enumerate() {
            let mut p = base_prediction(SETTING_DNN_INDIVIDUAL, fold, test, i);
            p.color = Some(PredictedColor {
                hue_deg: c.hue_deg,
                saturation: c.saturation,
                value: c.value,
            });
            preds.push(p);
        }

        let joint = nn_run(data, &regression_only(TargetSet::ALL))?;
        best_epochs.insert("joint".to_string(), joint.best_epoch);
        for (i, c) in neural::predict_colors(&joint.params, test.x.view())?.iter().enumerate() {
            let mut p = base_prediction(SETTING_DNN_JOINT, fold, test, i);
            p.color = Some(PredictedColor {
                hue_deg: c.hue_deg,
                saturation: c.saturation,
                value: c.value,
            });
            preds.push(p);
        }

        Ok(FoldOutput {
            report: FoldReport {
                held_out_speaker: fold.held_out_speaker.clone(),
                n_train: fold.train_ids.len(),
                n_val: fold.val_ids.len(),
                n_test: fold.test_ids.len(),
                rows: fold_rows(&settings, &preds)?,
                svr_selection: Some(selection),
                best_epochs,
            },
            predictions: preds,
        })
    })?;
    assemble("experiment1", config, settings.clone(), outputs, false)
}

/// Multitask DNN for each α in `config.alphas`; α = 1 is classification only
/// and its regression cells stay empty.
pub fn run_experiment2(
    features: &FeatureSet,
    labels: &[AggregatedLabel],
    metas: &[UtteranceMeta],
    config: &ExperimentConfig,
) -> Result<RunReport> {
    if config.alphas.is_empty() {
        return Err(Error::validation("no alpha values given"));
    }
    for a in &config.alphas {
        if !(0.0..=1.0).contains(a) {
            return Err(Error::validation(format!("alpha {a} outside [0, 1]")));
        }
    }
    let corpus = Corpus::join(features, labels, metas)?;
    let folds = make_loso_folds(metas)?;
    let settings: Vec<String> = config.alphas.iter().map(|a| alpha_setting(*a)).collect();
    let outputs = run_folds(&corpus, &folds, |fold, data| {
        let test = &data.test;
        let mut preds = Vec::new();
        let mut best_epochs = BTreeMap::new();
        for (alpha, setting) in config.alphas.iter().zip(&settings) {
            let cfg = TrainConfig {
                alpha: *alpha,
                target_set: TargetSet::ALL,
                ..config.dnn.clone()
            };
            let out = nn_run(data, &cfg)?;
            best_epochs.insert(setting.clone(), out.best_epoch);
            for (i, c) in neural::predict_colors(&out.params, test.x.view())?.iter().enumerate() {
                let mut p = base_prediction(setting, fold, test, i);
                if *alpha < 1.0 {
                    p.color = Some(PredictedColor {
                        hue_deg: c.hue_deg,
                        saturation: c.saturation,
                        value: c.value,
                    });
                }
                p.predicted_emotion = Some(c.emotion);
                preds.push(p);
            }
        }
        Ok(FoldOutput {
            report: FoldReport {
                held_out_speaker: fold.held_out_speaker.clone(),
                n_train: fold.train_ids.len(),
                n_val: fold.val_ids.len(),
                n_test: fold.test_ids.len(),
                rows: fold_rows(&settings, &preds)?,
                svr_selection: None,
                best_epochs,
            },
            predictions: preds,
        })
    })?;
    assemble("experiment2", config, settings, outputs, true)
}

// ---------------------------------------------------------------------------
// emission

/// Six significant digits; dashes for missing cells.
pub fn format_sig6(v: Option<f64>) -> String {
    match v {
        None => "-".to_string(),
        Some(0.0) => "0".to_string(),
        Some(x) if !x.is_finite() => x.to_string(),
        Some(x) => {
            let mag = x.abs().log10().floor() as i32;
            if !(-5..=15).contains(&mag) {
                return format!("{x:.5e}");
            }
            let decimals = (5 - mag).max(0) as usize;
            let s = format!("{x:.decimals$}");
            // rounding may have carried into a new digit (e.g. 9.999999 -> 10.00000)
            if s.contains('.') {
                s.trim_end_matches('0').trim_end_matches('.').to_string()
            } else {
                s
            }
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(header).map_err(labels::csv_err)?;
    for r in rows {
        wr.write_record(&r).map_err(labels::csv_err)?;
    }
    wr.into_inner()
        .map_err(|e| Error::validation(format!("csv buffer: {e}")))
}

fn json_bytes<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Serialize)]
struct HistogramJson {
    emotion: Emotion,
    n: usize,
    mean_hue_deg: Option<f64>,
    bin_width_deg: f64,
    counts: Vec<usize>,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    setting: &'a str,
    held_out_speaker: &'a str,
    utterance_id: &'a str,
    emotion: Emotion,
    truth: f64,
    prediction: Option<f64>,
    truth_hex: String,
    prediction_hex: Option<String>,
}

/// Writes all report artefacts into `out_dir` and returns the paths written.
///
/// Files: `report.json`, `metrics.{csv,json}`, `hue_histogram.{csv,json}`,
/// `sv_summary.{csv,json}`, `scatter_{hue,saturation,value}.{csv,json}` and,
/// when predictions include emotions, `confusion.{csv,json}`.
pub fn emit_reports(
    report: &RunReport,
    aggregates: &[AggregatedLabel],
    metas: &[UtteranceMeta],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = out_dir.join(name);
        write_file(&p, &bytes)?;
        written.push(p);
        Ok(())
    };

    let mut report_json = report.to_json()?;
    report_json.push('\n');
    put("report.json", report_json.into_bytes())?;

    // metric tables
    let header = [
        "setting",
        "aggregation",
        "n",
        "hue_ae",
        "sat_pcc",
        "sat_ccc",
        "val_pcc",
        "val_ccc",
        "accuracy",
    ];
    let metric_rows = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.setting.clone(),
                r.aggregation.as_str().to_string(),
                r.n.to_string(),
                format_sig6(r.hue_ae),
                format_sig6(r.sat_pcc),
                format_sig6(r.sat_ccc),
                format_sig6(r.val_pcc),
                format_sig6(r.val_ccc),
                format_sig6(r.accuracy),
            ]
        })
        .collect();
    put("metrics.csv", csv_bytes(&header, metric_rows)?)?;
    put("metrics.json", json_bytes(&report.rows)?)?;

    // label distributions
    let stats = labels::per_emotion_stats(aggregates, metas)?;
    let mut hist_rows = Vec::new();
    let mut hist_json = Vec::new();
    let mut sv_rows = Vec::new();
    for (e, s) in &stats {
        for (b, count) in s.hue_histogram.iter().enumerate() {
            hist_rows.push(vec![
                e.to_string(),
                b.to_string(),
                format_sig6(Some(b as f64 * HUE_BIN_DEG)),
                count.to_string(),
                format_sig6(s.mean_hue_deg),
            ]);
        }
        hist_json.push(HistogramJson {
            emotion: *e,
            n: s.n,
            mean_hue_deg: s.mean_hue_deg,
            bin_width_deg: HUE_BIN_DEG,
            counts: s.hue_histogram.clone(),
        });
        for (attr, q) in [("saturation", &s.saturation), ("value", &s.value)] {
            let cells = match q {
                Some(q) => [q.min, q.q1, q.median, q.q3, q.max, q.mean].map(|v| format_sig6(Some(v))),
                None => std::array::from_fn(|_| "-".to_string()),
            };
            let mut row = vec![e.to_string(), attr.to_string(), s.n.to_string()];
            row.extend(cells);
            sv_rows.push(row);
        }
    }
    put(
        "hue_histogram.csv",
        csv_bytes(&["emotion", "bin", "bin_start_deg", "count", "mean_hue_deg"], hist_rows)?,
    )?;
    put("hue_histogram.json", json_bytes(&hist_json)?)?;
    put(
        "sv_summary.csv",
        csv_bytes(
            &["emotion", "attribute", "n", "min", "q1", "median", "q3", "max", "mean"],
            sv_rows,
        )?,
    )?;
    let sv_json: Vec<&labels::EmotionStats> = stats.values().collect();
    put("sv_summary.json", json_bytes(&sv_json)?)?;

    // scatter data
    for attr in ["hue", "saturation", "value"] {
        let mut rows = Vec::new();
        for p in &report.predictions {
            let Some(c) = p.color else { continue };
            let (truth, pred) = match attr {
                "hue" => (p.truth.hue_deg, c.hue_deg),
                "saturation" => (p.truth.saturation, Some(c.saturation)),
                _ => (p.truth.value, Some(c.value)),
            };
            let prediction_hex = c
                .hue_deg
                .and_then(|h| ColorLabel::new(h, c.saturation, c.value).ok())
                .map(|l| l.to_hex());
            rows.push(ScatterRow {
                setting: &p.setting,
                held_out_speaker: &p.held_out_speaker,
                utterance_id: &p.utterance_id,
                emotion: p.emotion,
                truth,
                prediction: pred,
                truth_hex: p.truth.to_hex(),
                prediction_hex,
            });
        }
        let csv_rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.setting.to_string(),
                    r.held_out_speaker.to_string(),
                    r.utterance_id.to_string(),
                    r.emotion.to_string(),
                    format_sig6(Some(r.truth)),
                    format_sig6(r.prediction),
                    r.truth_hex.clone(),
                    r.prediction_hex.clone().unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        put(
            &format!("scatter_{attr}.csv"),
            csv_bytes(
                &[
                    "setting",
                    "held_out_speaker",
                    "utterance_id",
                    "emotion",
                    "truth",
                    "prediction",
                    "truth_hex",
                    "prediction_hex",
                ],
                csv_rows,
            )?,
        )?;
        put(&format!("scatter_{attr}.json"), json_bytes(&rows)?)?;
    }

    if !report.confusion.is_empty() {
        let mut rows = Vec::new();
        for c in &report.confusion {
            for t in Emotion::ALL {
                let mut row = vec![c.setting.clone(), t.to_string()];
                row.extend(Emotion::ALL.iter().map(|p| c.matrix.get(t, *p).to_string()));
                rows.push(row);
            }
        }
        let mut header = vec!["setting", "truth"];
        header.extend(Emotion::ALL.iter().map(|e| e.as_str()));
        put("confusion.csv", csv_bytes(&header, rows)?)?;
        put("confusion.json", json_bytes(&report.confusion)?)?;
    }
    Ok(written)
}

/// Table-shaped text rendering of the pooled and fold-mean rows.
pub fn render_table(report: &RunReport) -> String {
    let mut s = format!(
        "{:<16} {:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "setting", "aggregate", "hue AE", "sat PCC", "sat CCC", "val PCC", "val CCC", "accuracy"
    );
    for r in &report.rows {
        s.push_str(&format!(
            "{:<16} {:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            r.setting,
            r.aggregation.as_str(),
            format_sig6(r.hue_ae),
            format_sig6(r.sat_pcc),
            format_sig6(r.sat_ccc),
            format_sig6(r.val_pcc),
            format_sig6(r.val_ccc),
            format_sig6(r.accuracy)
        ));
    }
    s
}

/// Rows whose features come straight from the targets, used to check that
/// the regressors can recover an exactly-encoded mapping.
pub fn oracle_features(labels: &[AggregatedLabel], metas: &[UtteranceMeta]) -> Result<FeatureSet> {
    let emotions: BTreeMap<&str, Emotion> = metas.iter().map(|m| (m.utterance_id.as_str(), m.emotion)).collect();
    let mut vectors = BTreeMap::new();
    for l in labels {
        let e = *emotions
            .get(l.utterance_id.as_str())
            .ok_or_else(|| Error::validation(format!("utterance {:?} not in manifest", l.utterance_id)))?;
        vectors.insert(l.utterance_id.clone(), latent_vector(&l.label, e)?.to_vec());
    }
    FeatureSet::from_vectors(vectors)
}
