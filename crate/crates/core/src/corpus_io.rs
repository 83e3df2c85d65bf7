//! Data model and file formats for features, probabilities, annotations and
//! events.
//!
//! Intervals are half-open `[start, end)` frame ranges everywhere.
//!
//! Matrices are stored either as CSV (header row of column names, one row per
//! frame) or in a compact little-endian binary container:
//!
//! ```text
//! offset 0   b"VSTA"
//! offset 4   u32 version (1)
//! offset 8   u32 rows (T)
//! offset 12  u32 cols (C or D)
//! offset 16  rows*cols f32, row-major
//! ```
//!
//! The binary container carries no column names; callers supply them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::taxonomy::LabelTaxonomy;

pub const CONTAINER_MAGIC: &[u8; 4] = b"VSTA";
pub const CONTAINER_VERSION: u32 = 1;

/// Per-frame class probabilities for one video, `T x C`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub video_id: String,
    class_names: Vec<String>,
    frames: usize,
    values: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(video_id: impl Into<String>, class_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let c = class_names.len();
        if c == 0 {
            bail!(Shape, "probability matrix needs at least one class");
        }
        if !values.len().is_multiple_of(c) {
            bail!(Shape, "{} values do not fill rows of width {c}", values.len());
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            bail!(
                Validation,
                "probability {v} at frame {}, class `{}` is outside [0, 1]",
                i / c,
                class_names[i % c]
            );
        }
        Ok(Self {
            video_id: video_id.into(),
            frames: values.len() / c,
            class_names,
            values,
        })
    }

    /// Builds a matrix without the range check; values must already lie in [0, 1].
    pub(crate) fn from_parts(video_id: String, class_names: Vec<String>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len() % class_names.len(), 0);
        Self {
            video_id,
            frames: values.len() / class_names.len(),
            class_names,
            values,
        }
    }

    pub fn filled(video_id: impl Into<String>, class_names: Vec<String>, frames: usize, value: f64) -> Result<Self> {
        let n = frames * class_names.len();
        Self::new(video_id, class_names, vec![value; n])
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.class_names.len() + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.class_names.len();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.class_names.len())
            .copied()
            .collect()
    }

    pub fn same_shape(&self, other: &ProbabilityMatrix) -> Result<()> {
        if self.frames != other.frames || self.class_names != other.class_names {
            bail!(
                Shape,
                "matrices for `{}` ({}x{}) and `{}` ({}x{}) differ in shape or classes",
                self.video_id,
                self.frames,
                self.num_classes(),
                other.video_id,
                other.frames,
                other.num_classes()
            );
        }
        Ok(())
    }

    /// Applies `f` to every entry, clamping the result into [0, 1].
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.video_id.clone(),
            self.class_names.clone(),
            self.values.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        )
    }
}

/// Frame x class booleans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub video_id: String,
    class_names: Vec<String>,
    frames: usize,
    values: Vec<bool>,
}

impl BinaryMatrix {
    pub fn new(video_id: impl Into<String>, class_names: Vec<String>, values: Vec<bool>) -> Result<Self> {
        let c = class_names.len();
        if c == 0 || !values.len().is_multiple_of(c) {
            bail!(Shape, "{} cells do not fill rows of width {c}", values.len());
        }
        Ok(Self {
            video_id: video_id.into(),
            frames: values.len() / c,
            class_names,
            values,
        })
    }

    pub fn falses(video_id: impl Into<String>, class_names: Vec<String>, frames: usize) -> Self {
        let n = frames * class_names.len();
        Self {
            video_id: video_id.into(),
            frames,
            class_names,
            values: vec![false; n],
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> bool {
        self.values[t * self.class_names.len() + c]
    }

    pub fn set(&mut self, t: usize, c: usize, v: bool) {
        let w = self.class_names.len();
        self.values[t * w + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<bool> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.class_names.len())
            .copied()
            .collect()
    }

    pub fn set_column(&mut self, c: usize, column: &[bool]) {
        assert_eq!(column.len(), self.frames, "column length must equal frame count");
        let w = self.class_names.len();
        for (t, &v) in column.iter().enumerate() {
            self.values[t * w + c] = v;
        }
    }
}

/// Backbone features for one video, `T x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub video_id: String,
    pub backbone_tag: String,
    frames: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureTable {
    pub fn new(
        video_id: impl Into<String>,
        backbone_tag: impl Into<String>,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            bail!(Shape, "feature width must be >= 1");
        }
        if values.is_empty() || !values.len().is_multiple_of(dim) {
            bail!(Shape, "{} values do not fill rows of width {dim}", values.len());
        }
        Ok(Self {
            video_id: video_id.into(),
            backbone_tag: backbone_tag.into(),
            frames: values.len() / dim,
            dim,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// A labelled half-open frame interval, scored for predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub label: String,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Event {
    pub fn new(label: impl Into<String>, start: usize, end: usize, score: Option<f64>) -> Self {
        Self {
            label: label.into(),
            start,
            end,
            score,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Events of one video, kept sorted by `(label, start)`; same-label events never overlap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSet {
    pub video_id: String,
    events: Vec<Event>,
}

impl EventSet {
    pub fn new(video_id: impl Into<String>, mut events: Vec<Event>) -> Result<Self> {
        let video_id = video_id.into();
        for e in &events {
            if e.start >= e.end {
                bail!(Validation, "event `{}` [{}, {}) in `{video_id}` is empty", e.label, e.start, e.end);
            }
            if let Some(s) = e.score {
                if !(0.0..=1.0).contains(&s) {
                    bail!(Validation, "event score {s} in `{video_id}` is outside [0, 1]");
                }
            }
        }
        canonical_sort(&mut events);
        for w in events.windows(2) {
            if w[0].label == w[1].label && w[1].start < w[0].end {
                bail!(
                    Validation,
                    "overlapping `{}` events [{}, {}) and [{}, {}) in `{video_id}`",
                    w[0].label,
                    w[0].start,
                    w[0].end,
                    w[1].start,
                    w[1].end
                );
            }
        }
        Ok(Self { video_id, events })
    }

    pub fn empty(video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            events: Vec::new(),
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| e.label == label)
    }

    /// Drops scores, turning predictions into ground-truth style events.
    pub fn unscored(&self) -> Self {
        Self {
            video_id: self.video_id.clone(),
            events: self
                .events
                .iter()
                .map(|e| Event { score: None, ..e.clone() })
                .collect(),
        }
    }
}

fn canonical_sort(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.label
            .cmp(&b.label)
            .then(a.start.cmp(&b.start))
            .then(a.end.cmp(&b.end))
    });
}

/// Ground-truth intervals plus the video length they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub video_id: String,
    pub frames: usize,
    pub intervals: Vec<Event>,
}

impl AnnotationSet {
    pub fn from_events(events: &EventSet, frames: usize) -> Self {
        Self {
            video_id: events.video_id.clone(),
            frames,
            intervals: events.unscored().events,
        }
    }
}

/// Marks every frame covered by an interval of each class.
pub fn frames_from_intervals(ann: &AnnotationSet, taxonomy: &LabelTaxonomy) -> Result<BinaryMatrix> {
    let mut out = BinaryMatrix::falses(ann.video_id.clone(), taxonomy.classes().to_vec(), ann.frames);
    for iv in &ann.intervals {
        let c = taxonomy
            .class_index(&iv.label)
            .map_err(|_| Error::Taxonomy(format!("annotation label `{}` is not in the taxonomy", iv.label)))?;
        if iv.start >= iv.end || iv.end > ann.frames {
            bail!(
                Bounds,
                "interval `{}` [{}, {}) is outside [0, {}) in `{}`",
                iv.label,
                iv.start,
                iv.end,
                ann.frames,
                ann.video_id
            );
        }
        for t in iv.start..iv.end {
            out.set(t, c, true);
        }
    }
    Ok(out)
}

/// Merges overlapping or touching same-label intervals.
pub fn merge_intervals(events: &[Event]) -> Vec<Event> {
    let mut sorted: Vec<Event> = events.iter().map(|e| Event { score: None, ..e.clone() }).collect();
    canonical_sort(&mut sorted);
    let mut out: Vec<Event> = Vec::with_capacity(sorted.len());
    for e in sorted {
        match out.last_mut() {
            Some(last) if last.label == e.label && e.start <= last.end => {
                last.end = last.end.max(e.end);
            }
            _ => out.push(e),
        }
    }
    out
}

// --- binary container -------------------------------------------------------

pub fn write_container<W: Write>(w: &mut W, rows: usize, cols: usize, values: impl IntoIterator<Item = f32>) -> std::io::Result<()> {
    let narrow = |n: usize| {
        u32::try_from(n).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))
    };
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&narrow(rows)?.to_le_bytes())?;
    w.write_all(&narrow(cols)?.to_le_bytes())?;
    let mut written = 0usize;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
        written += 1;
    }
    if written != rows * cols {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("wrote {written} values for a {rows}x{cols} container"),
        ));
    }
    Ok(())
}

/// Reads one container, returning `(rows, cols, values)`.
pub fn read_container<R: Read>(r: &mut R) -> Result<(usize, usize, Vec<f32>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated container header: {e}")))?;
    if &header[0..4] != CONTAINER_MAGIC {
        bail!(Format, "bad container magic {:?}", &header[0..4]);
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != CONTAINER_VERSION {
        bail!(Format, "unsupported container version {version}");
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("container dimensions overflow".into()))?;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated container body ({rows}x{cols}): {e}")))?;
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

fn is_binary_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("vsta") | Some("bin")
    )
}

fn video_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Streams a CSV matrix; returns header and row-major values.
fn read_csv_matrix(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(open(path)?);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        bail!(Format, "{}: header row must name every column", path.display());
    }
    let mut values = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1usize;
    while reader
        .read_record(&mut record)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
    {
        line += 1;
        if record.len() != header.len() {
            bail!(
                Format,
                "{}: row {line} has {} fields, expected {}",
                path.display(),
                record.len(),
                header.len()
            );
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("{}: row {line}: `{field}` is not a number", path.display())))?;
            values.push(v);
        }
    }
    Ok((header, values))
}

fn write_csv_matrix(path: &Path, header: &[String], cols: usize, values: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut col = 0;
    for v in values {
        if col > 0 {
            w.write_all(b",").map_err(io)?;
        }
        w.write_all(v.as_bytes()).map_err(io)?;
        col += 1;
        if col == cols {
            w.write_all(b"\n").map_err(io)?;
            col = 0;
        }
    }
    w.flush().map_err(io)
}

/// Loads a probability matrix from CSV or the binary container.
///
/// CSV headers must equal `class_names`; the binary container takes them as given.
/// The video id is the file stem.
pub fn load_probability_matrix(path: impl AsRef<Path>, class_names: &[String]) -> Result<ProbabilityMatrix> {
    let path = path.as_ref();
    let id = video_id_of(path);
    if is_binary_path(path) {
        let (_, cols, values) = read_container(&mut open(path)?)?;
        if cols != class_names.len() {
            bail!(Taxonomy, "{}: {cols} columns but {} classes", path.display(), class_names.len());
        }
        ProbabilityMatrix::new(id, class_names.to_vec(), values.into_iter().map(f64::from).collect())
    } else {
        let pm = read_probability_csv(path)?;
        if pm.class_names() != class_names {
            bail!(
                Taxonomy,
                "{}: header {:?} does not match classes {:?}",
                path.display(),
                pm.class_names(),
                class_names
            );
        }
        Ok(pm)
    }
}

/// Reads a CSV probability matrix, taking class names from its header.
pub fn read_probability_csv(path: impl AsRef<Path>) -> Result<ProbabilityMatrix> {
    let path = path.as_ref();
    let (header, values) = read_csv_matrix(path)?;
    ProbabilityMatrix::new(video_id_of(path), header, values)
}

/// Writes CSV (shortest round-trip decimal) or the binary container (f32), by extension.
pub fn store_probability_matrix(pm: &ProbabilityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_binary_path(path) {
        let mut w = create(path)?;
        write_container(&mut w, pm.frames(), pm.num_classes(), pm.values().iter().map(|&v| v as f32))
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    } else {
        write_csv_matrix(
            path,
            pm.class_names(),
            pm.num_classes(),
            pm.values().iter().map(|v| format!("{v}")),
        )
    }
}

pub fn load_feature_table(path: impl AsRef<Path>, backbone_tag: &str) -> Result<FeatureTable> {
    let path = path.as_ref();
    let id = video_id_of(path);
    if is_binary_path(path) {
        let (_, cols, values) = read_container(&mut open(path)?)?;
        FeatureTable::new(id, backbone_tag, cols, values)
    } else {
        let (header, values) = read_csv_matrix(path)?;
        FeatureTable::new(id, backbone_tag, header.len(), values.into_iter().map(|v| v as f32).collect())
    }
}

pub fn store_feature_table(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_binary_path(path) {
        let mut w = create(path)?;
        write_container(&mut w, table.frames(), table.dim(), table.values().iter().copied())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    } else {
        let header: Vec<String> = (0..table.dim()).map(|i| format!("f{i}")).collect();
        write_csv_matrix(path, &header, table.dim(), table.values().iter().map(|v| format!("{v}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    video_id: String,
    label: String,
    start_frame: usize,
    end_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

pub fn events_to_json(sets: &[EventSet]) -> String {
    let records: Vec<EventRecord> = sets
        .iter()
        .flat_map(|s| {
            s.events().iter().map(|e| EventRecord {
                video_id: s.video_id.clone(),
                label: e.label.clone(),
                start_frame: e.start,
                end_frame: e.end,
                score: e.score,
            })
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("events serialize")
}

/// Parses an events document, grouping by video id (sorted) and canonicalizing order.
pub fn events_from_json(text: &str) -> Result<Vec<EventSet>> {
    let records: Vec<EventRecord> = serde_json::from_str(text)?;
    let mut by_video: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for r in records {
        by_video
            .entry(r.video_id)
            .or_default()
            .push(Event::new(r.label, r.start_frame, r.end_frame, r.score));
    }
    by_video
        .into_iter()
        .map(|(id, events)| EventSet::new(id, events))
        .collect()
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<EventSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    events_from_json(&text)
}

pub fn store_events(sets: &[EventSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(events_to_json(sets).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes any serializable value as pretty JSON, creating parent directories.
pub fn store_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let reader = open(path)?;
    Ok(serde_json::from_reader(reader)?)
}
