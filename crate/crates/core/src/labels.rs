//! Label data model and aggregation.
//!
//! Annotators pick one HSV color per utterance. Per-utterance labels are the
//! circular mean of the hues and the arithmetic means of saturation and value;
//! dispersion is the circular std for hue and the population std for the
//! other two. Saturation and value are fractions in `[0, 1]` everywhere inside
//! the crate.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::circular;
use crate::error::{Error, Result};

/// Annotations per utterance collected for the reference corpus.
pub const DEFAULT_QUORUM: usize = 10;

/// Width of one hue tile / histogram bin in degrees.
pub const HUE_BIN_DEG: f64 = 18.0;
pub const HUE_BINS: usize = 20;

/// Saturation steps of the annotation grid (columns).
pub const SATURATION_STEPS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Value steps of the annotation grid (rows), brightest first.
pub const VALUE_STEPS: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

/// The 25 `(saturation, value)` tiles, row by row from the brightest value.
/// The extra black tile (value 0) is not included.
pub const SV_GRID: [(f64, f64); 25] = {
    let mut out = [(0.0, 0.0); 25];
    let mut r = 0;
    while r < 5 {
        let mut c = 0;
        while c < 5 {
            out[r * 5 + c] = (SATURATION_STEPS[c], VALUE_STEPS[r]);
            c += 1;
        }
        r += 1;
    }
    out
};

/// Hue tile centers `0, 18, …, 342`.
pub fn hue_options() -> Vec<f64> {
    (0..HUE_BINS).map(|i| i as f64 * HUE_BIN_DEG).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emotion {
    Ang,
    Dis,
    Fea,
    Hap,
    Sad,
    Sur,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Ang,
        Emotion::Dis,
        Emotion::Fea,
        Emotion::Hap,
        Emotion::Sad,
        Emotion::Sur,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Ang => "Ang",
            Emotion::Dis => "Dis",
            Emotion::Fea => "Fea",
            Emotion::Hap => "Hap",
            Emotion::Sad => "Sad",
            Emotion::Sur => "Sur",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown emotion {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Session {
    Regular,
    PhraseFree,
}

impl Session {
    pub fn as_str(self) -> &'static str {
        match self {
            Session::Regular => "regular",
            Session::PhraseFree => "phrase_free",
        }
    }
}

impl FromStr for Session {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Session::Regular),
            "phrase_free" => Ok(Session::PhraseFree),
            _ => Err(Error::validation(format!("unknown session {s:?}"))),
        }
    }
}

/// One HSV point. Hue in degrees `[0, 360)`, saturation and value as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorLabel {
    pub hue_deg: f64,
    pub saturation: f64,
    pub value: f64,
}

impl ColorLabel {
    /// Validating constructor. Hue is normalized into `[0, 360)`; saturation
    /// and value must already lie in `[0, 1]`.
    pub fn new(hue_deg: f64, saturation: f64, value: f64) -> Result<Self> {
        let hue_deg = circular::normalize_deg(hue_deg)
            .map_err(|_| Error::validation(format!("hue {hue_deg} is not finite")))?;
        for (name, x) in [("saturation", saturation), ("value", value)] {
            if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                return Err(Error::validation(format!("{name} {x} outside [0, 1]")));
            }
        }
        Ok(ColorLabel {
            hue_deg,
            saturation,
            value,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..360.0).contains(&self.hue_deg) {
            return Err(Error::validation(format!(
                "hue {} outside [0, 360)",
                self.hue_deg
            )));
        }
        ColorLabel::new(self.hue_deg, self.saturation, self.value).map(|_| ())
    }

    pub fn to_rgb(&self) -> (u8, u8, u8) {
        hsv_to_rgb(self)
    }

    /// `#RRGGBB`, uppercase.
    pub fn to_hex(&self) -> String {
        let (r, g, b) = self.to_rgb();
        format!("#{r:02X}{g:02X}{b:02X}")
    }
}

/// One annotator's color for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub utterance_id: String,
    pub annotator_id: String,
    pub hue_deg: f64,
    pub saturation: f64,
    pub value: f64,
    pub submitted_at: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn color(&self) -> Result<ColorLabel> {
        ColorLabel::new(self.hue_deg, self.saturation, self.value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.utterance_id.is_empty() {
            return Err(Error::validation("empty utterance_id"));
        }
        if self.annotator_id.is_empty() {
            return Err(Error::validation("empty annotator_id"));
        }
        self.color().map(|_| ())
    }
}

/// Corpus manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub utterance_id: String,
    pub speaker_id: String,
    pub session: Session,
    pub emotion: Emotion,
    pub audio_path: String,
}

/// Final per-utterance label with its annotator dispersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub utterance_id: String,
    pub label: ColorLabel,
    pub n_annotations: usize,
    pub hue_circ_std_deg: f64,
    pub sat_std: f64,
    pub val_std: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub(crate) fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Aggregates one utterance's annotations into its final label.
pub fn aggregate_utterance(records: &[AnnotationRecord]) -> Result<AggregatedLabel> {
    aggregate_with_quorum(records, DEFAULT_QUORUM)
}

/// [`aggregate_utterance`] with an explicit quorum; fewer records than the
/// quorum only logs a warning.
pub fn aggregate_with_quorum(records: &[AnnotationRecord], quorum: usize) -> Result<AggregatedLabel> {
    let first = records
        .first()
        .ok_or_else(|| Error::validation("no annotation records"))?;
    if let Some(other) = records.iter().find(|r| r.utterance_id != first.utterance_id) {
        return Err(Error::validation(format!(
            "mixed utterance ids {:?} and {:?}",
            first.utterance_id, other.utterance_id
        )));
    }
    for r in records {
        r.validate()?;
    }
    if records.len() < quorum {
        tracing::warn!(
            utterance = %first.utterance_id,
            n = records.len(),
            quorum,
            "aggregating below quorum"
        );
    }

    let hues: Vec<f64> = records.iter().map(|r| r.hue_deg).collect();
    let sats: Vec<f64> = records.iter().map(|r| r.saturation).collect();
    let vals: Vec<f64> = records.iter().map(|r| r.value).collect();

    let summary = circular::summarize(&hues)?;
    Ok(AggregatedLabel {
        utterance_id: first.utterance_id.clone(),
        label: ColorLabel::new(summary.mean_deg, mean(&sats).clamp(0.0, 1.0), mean(&vals).clamp(0.0, 1.0))?,
        n_annotations: records.len(),
        hue_circ_std_deg: summary.circ_std_deg,
        sat_std: population_std(&sats),
        val_std: population_std(&vals),
    })
}

/// Groups records by utterance and aggregates each group. Output is sorted by
/// utterance id.
pub fn aggregate_all(records: &[AnnotationRecord], quorum: usize) -> Result<Vec<AggregatedLabel>> {
    let mut groups: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.utterance_id.as_str()).or_default().push(r.clone());
    }
    groups
        .values()
        .map(|g| aggregate_with_quorum(g, quorum))
        .collect()
}

/// Corpus-level agreement: unweighted means of the per-utterance dispersions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusAgreement {
    pub mean_hue_circ_std_deg: f64,
    pub mean_sat_std: f64,
    pub mean_val_std: f64,
}

pub fn corpus_agreement(aggregates: &[AggregatedLabel]) -> Result<CorpusAgreement> {
    if aggregates.is_empty() {
        return Err(Error::domain("no aggregated labels"));
    }
    let n = aggregates.len() as f64;
    let sum = |f: fn(&AggregatedLabel) -> f64| aggregates.iter().map(f).sum::<f64>() / n;
    Ok(CorpusAgreement {
        mean_hue_circ_std_deg: sum(|a| a.hue_circ_std_deg),
        mean_sat_std: sum(|a| a.sat_std),
        mean_val_std: sum(|a| a.val_std),
    })
}

/// Five-number summary plus mean, quartiles by linear interpolation between
/// order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quartiles {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: mean(&v),
        })
    }
}

/// Histogram bin of a hue: `[0, 18)` is bin 0, `[342, 360)` is bin 19.
pub fn hue_bin(hue_deg: f64) -> Result<usize> {
    let h = circular::normalize_deg(hue_deg)?;
    Ok(((h / HUE_BIN_DEG).floor() as usize).min(HUE_BINS - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionStats {
    pub emotion: Emotion,
    pub n: usize,
    /// `None` when the emotion has no utterances or its hues cancel out.
    pub mean_hue_deg: Option<f64>,
    pub hue_histogram: Vec<usize>,
    pub saturation: Option<Quartiles>,
    pub value: Option<Quartiles>,
}

/// Per-emotion hue mean, hue histogram and saturation/value summaries over
/// final labels. Every emotion appears in the result, possibly with `n = 0`.
pub fn per_emotion_stats(
    aggregates: &[AggregatedLabel],
    metas: &[UtteranceMeta],
) -> Result<BTreeMap<Emotion, EmotionStats>> {
    let by_id: BTreeMap<&str, &UtteranceMeta> =
        metas.iter().map(|m| (m.utterance_id.as_str(), m)).collect();

    let mut groups: BTreeMap<Emotion, Vec<&ColorLabel>> =
        Emotion::ALL.iter().map(|e| (*e, Vec::new())).collect();
    for a in aggregates {
        let meta = by_id.get(a.utterance_id.as_str()).ok_or_else(|| {
            Error::validation(format!("utterance {:?} not in manifest", a.utterance_id))
        })?;
        groups.get_mut(&meta.emotion).unwrap().push(&a.label);
    }

    groups
        .into_iter()
        .map(|(emotion, labels)| {
            let hues: Vec<f64> = labels.iter().map(|l| l.hue_deg).collect();
            let sats: Vec<f64> = labels.iter().map(|l| l.saturation).collect();
            let vals: Vec<f64> = labels.iter().map(|l| l.value).collect();
            let mut hist = vec![0usize; HUE_BINS];
            for h in &hues {
                hist[hue_bin(*h)?] += 1;
            }
            let mean_hue_deg = if hues.is_empty() {
                None
            } else {
                match circular::circular_mean(&hues) {
                    Ok(m) => Some(m),
                    Err(Error::UndefinedMean { .. }) => None,
                    Err(e) => return Err(e),
                }
            };
            Ok((
                emotion,
                EmotionStats {
                    emotion,
                    n: labels.len(),
                    mean_hue_deg,
                    hue_histogram: hist,
                    saturation: Quartiles::of(&sats),
                    value: Quartiles::of(&vals),
                },
            ))
        })
        .collect()
}

/// Standard sector-based HSV → RGB, channels rounded to the nearest integer.
pub fn hsv_to_rgb(color: &ColorLabel) -> (u8, u8, u8) {
    let h = color.hue_deg.rem_euclid(360.0) / 60.0;
    let c = color.value * color.saturation;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = color.value - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let q = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (q(r), q(g), q(b))
}

// ---------------------------------------------------------------------------
// file formats

const MANIFEST_HEADER: [&str; 5] = ["utterance_id", "speaker_id", "session", "emotion", "audio_path"];

/// Parses the manifest CSV. Line numbers in errors are 1-based file lines.
pub fn parse_manifest(text: &str) -> Result<Vec<UtteranceMeta>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", MANIFEST_HEADER.join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let field = |k: usize| row.get(k).unwrap_or("").trim();
        let wrap = |e: Error| Error::Parse { line, message: e.to_string() };
        let meta = UtteranceMeta {
            utterance_id: field(0).to_string(),
            speaker_id: field(1).to_string(),
            session: field(2).parse().map_err(wrap)?,
            emotion: field(3).parse().map_err(wrap)?,
            audio_path: field(4).to_string(),
        };
        if meta.utterance_id.is_empty() || meta.speaker_id.is_empty() {
            return Err(Error::Parse { line, message: "empty utterance_id or speaker_id".into() });
        }
        if !seen.insert(meta.utterance_id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate utterance id {:?}", meta.utterance_id),
            });
        }
        out.push(meta);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(metas: &[UtteranceMeta], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for m in metas {
        wtr.write_record([
            m.utterance_id.as_str(),
            m.speaker_id.as_str(),
            m.session.as_str(),
            m.emotion.as_str(),
            m.audio_path.as_str(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("csv: {e}"))
}

/// Parses annotation JSON Lines; blank lines are skipped. Rejects invalid
/// colors and duplicate `(utterance_id, annotator_id)` pairs.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(raw)
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        rec.validate()
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if !seen.insert((rec.utterance_id.clone(), rec.annotator_id.clone())) {
            return Err(Error::Parse {
                line,
                message: format!(
                    "duplicate annotation by {:?} for {:?}",
                    rec.annotator_id, rec.utterance_id
                ),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// One JSON object per line, same keys [`parse_annotations`] reads.
pub fn annotation_line(rec: &AnnotationRecord) -> String {
    serde_json::to_string(rec).expect("annotation records always serialize")
}

pub fn write_annotations<W: Write>(records: &[AnnotationRecord], mut w: W) -> Result<()> {
    for r in records {
        writeln!(w, "{}", annotation_line(r)).map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

const AGGREGATE_HEADER: [&str; 8] = [
    "utterance_id",
    "hue_deg",
    "saturation",
    "value",
    "n",
    "hue_circ_std_deg",
    "sat_std",
    "val_std",
];

/// Writes aggregated labels at full precision.
pub fn write_aggregated<W: Write>(labels: &[AggregatedLabel], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(AGGREGATE_HEADER).map_err(csv_err)?;
    for a in labels {
        wtr.write_record([
            a.utterance_id.clone(),
            a.label.hue_deg.to_string(),
            a.label.saturation.to_string(),
            a.label.value.to_string(),
            a.n_annotations.to_string(),
            a.hue_circ_std_deg.to_string(),
            a.sat_std.to_string(),
            a.val_std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn parse_aggregated(text: &str) -> Result<Vec<AggregatedLabel>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != AGGREGATE_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", AGGREGATE_HEADER.join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let num = |k: usize| -> Result<f64> {
            row.get(k)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, message: format!("column {}: {e}", AGGREGATE_HEADER[k]) })
        };
        let label = ColorLabel::new(num(1)?, num(2)?, num(3)?)
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let n = row
            .get(4)
            .unwrap_or("")
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse { line, message: format!("column n: {e}") })?;
        let agg = AggregatedLabel {
            utterance_id: row.get(0).unwrap_or("").trim().to_string(),
            label,
            n_annotations: n,
            hue_circ_std_deg: num(5)?,
            sat_std: num(6)?,
            val_std: num(7)?,
        };
        if agg.utterance_id.is_empty() || n == 0 {
            return Err(Error::Parse { line, message: "empty id or zero annotation count".into() });
        }
        if !seen.insert(agg.utterance_id.clone()) {
            return Err(Error::Parse { line, message: format!("duplicate utterance id {:?}", agg.utterance_id) });
        }
        out.push(agg);
    }
    Ok(out)
}

/// HSV → hex conformance rows for every annotation tile at `hue_deg`: the 20
/// hue tiles at full saturation/value, then the 25 saturation/value tiles and
/// the black tile. Columns: `hue_deg,saturation,value,hex`.
pub fn tile_fixture_csv(hue_deg: f64) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["hue_deg", "saturation", "value", "hex"]).map_err(csv_err)?;
    let mut rows: Vec<ColorLabel> = (0..HUE_BINS)
        .map(|i| ColorLabel::new(i as f64 * HUE_BIN_DEG, 1.0, 1.0))
        .collect::<Result<_>>()?;
    for &(s, v) in SV_GRID.iter() {
        rows.push(ColorLabel::new(hue_deg, s, v)?);
    }
    rows.push(ColorLabel::new(hue_deg, 0.0, 0.0)?);
    for c in rows {
        wtr.write_record([
            c.hue_deg.to_string(),
            c.saturation.to_string(),
            c.value.to_string(),
            c.to_hex(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
