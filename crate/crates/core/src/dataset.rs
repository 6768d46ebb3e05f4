//! Feature datasets: validated containers, file formats, probe splits and
//! the synthetic Gaussian-mixture generator.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DtcError, Result};
use crate::rng;

const BINARY_MAGIC: &[u8; 4] = b"DTCF";
const BINARY_VERSION: u8 = 1;
const MAX_PLACEMENT_ATTEMPTS: usize = 2000;

/// N rows of d-dimensional finite feature vectors with unique row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, ids: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(DtcError::Validation("feature dimension must be >= 1".into()));
        }
        if ids.len() != values.nrows() {
            return Err(DtcError::Validation(format!(
                "{} ids for {} rows",
                ids.len(),
                values.nrows()
            )));
        }
        for (row, id) in values.rows().into_iter().zip(&ids) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DtcError::Validation(format!(
                    "row {id} contains a non-finite value"
                )));
            }
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(DtcError::Validation(format!("duplicate row id {id}")));
            }
        }
        Ok(FeatureMatrix { values, ids })
    }

    /// Rows get ids `0..N`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::new(values, ids)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Subset of rows in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), rows),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
        }
    }

    /// Same ids, new values (e.g. after an embedding). Values must be finite.
    pub fn with_values(&self, values: Array2<f64>) -> Result<FeatureMatrix> {
        FeatureMatrix::new(values, self.ids.clone())
    }
}

/// Feature rows with a class index per row; classes are `0..n_classes` and
/// each has at least one member.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: FeatureMatrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledSet {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(DtcError::Validation(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; n_classes];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(DtcError::Validation(format!("class {missing} has no members")));
        }
        Ok(LabeledSet {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Row indices whose label is in `classes`, in row order.
    pub fn rows_of(&self, classes: &BTreeSet<usize>) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| classes.contains(l))
            .map(|(i, _)| i)
            .collect()
    }

    /// Restricts to `classes` and relabels them densely in ascending class order.
    pub fn restrict(&self, classes: &BTreeSet<usize>) -> Result<LabeledSet> {
        let rows = self.rows_of(classes);
        let dense: Vec<usize> = classes.iter().copied().collect();
        let labels = rows
            .iter()
            .map(|&r| dense.binary_search(&self.labels[r]).unwrap_or_else(|_| unreachable!()))
            .collect();
        LabeledSet::new(self.features.select(&rows), labels)
    }
}

/// Class-level split of the labelled classes for count estimation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSplit {
    pub anchor_classes: BTreeSet<usize>,
    pub validation_classes: BTreeSet<usize>,
    pub training_classes: BTreeSet<usize>,
}

impl ProbeSplit {
    pub fn probe_classes(&self) -> BTreeSet<usize> {
        self.anchor_classes
            .union(&self.validation_classes)
            .copied()
            .collect()
    }

    pub fn n_probe(&self) -> usize {
        self.anchor_classes.len() + self.validation_classes.len()
    }
}

pub const DEFAULT_ANCHOR_RATIO: f64 = 0.8;

pub fn split_probes(
    labeled: &LabeledSet,
    n_probe: usize,
    anchor_ratio: f64,
    seed: u64,
) -> Result<ProbeSplit> {
    let n_classes = labeled.n_classes();
    if n_probe < 2 || n_probe >= n_classes {
        return Err(DtcError::param(format!(
            "probe class count must satisfy 2 <= L_r < L (got L_r={n_probe}, L={n_classes})"
        )));
    }
    if !(anchor_ratio > 0.0 && anchor_ratio < 1.0) {
        return Err(DtcError::param(format!(
            "anchor ratio must lie in (0, 1), got {anchor_ratio}"
        )));
    }
    let n_anchor = ((anchor_ratio * n_probe as f64).round() as usize).clamp(1, n_probe - 1);

    let mut classes: Vec<usize> = (0..n_classes).collect();
    classes.shuffle(&mut rng::stream(seed, 0x5052_4f42));
    let anchor_classes = classes[..n_anchor].iter().copied().collect();
    let validation_classes = classes[n_anchor..n_probe].iter().copied().collect();
    let training_classes = classes[n_probe..].iter().copied().collect();
    Ok(ProbeSplit {
        anchor_classes,
        validation_classes,
        training_classes,
    })
}

/// Output of [`synth_mixture`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub labeled: LabeledSet,
    pub unlabeled: FeatureMatrix,
    pub unlabeled_truth: Vec<usize>,
    /// Means of the labelled classes followed by the unlabelled ones.
    pub means: Array2<f64>,
}

/// Isotropic unit-variance Gaussian classes whose means are pairwise at least
/// `separation` apart. Labelled rows get ids `l0..`, unlabelled rows `u0..`.
pub fn synth_mixture(
    n_labeled_classes: usize,
    n_unlabeled_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<SyntheticData> {
    if n_labeled_classes == 0 || n_unlabeled_classes == 0 || per_class == 0 || dim == 0 {
        return Err(DtcError::param("all counts must be >= 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(DtcError::param("separation must be positive"));
    }
    let n_total = n_labeled_classes + n_unlabeled_classes;
    let means = place_means(n_total, dim, separation, seed)?;

    let mut noise_rng = rng::stream(seed, 0x4e4f_4953);
    let mut draw = |class: usize, rows: &mut Vec<f64>| {
        for _ in 0..per_class {
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                rows.push(means[[class, j]] + z);
            }
        }
    };

    let mut lab_values = Vec::with_capacity(n_labeled_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_labeled_classes * per_class);
    for class in 0..n_labeled_classes {
        draw(class, &mut lab_values);
        labels.extend(std::iter::repeat_n(class, per_class));
    }
    let mut unl_values = Vec::with_capacity(n_unlabeled_classes * per_class * dim);
    let mut truth = Vec::with_capacity(n_unlabeled_classes * per_class);
    for class in 0..n_unlabeled_classes {
        draw(n_labeled_classes + class, &mut unl_values);
        truth.extend(std::iter::repeat_n(class, per_class));
    }

    let n_lab = labels.len();
    let n_unl = truth.len();
    let lab = Array2::from_shape_vec((n_lab, dim), lab_values).expect("shape");
    let unl = Array2::from_shape_vec((n_unl, dim), unl_values).expect("shape");
    let labeled = LabeledSet::new(
        FeatureMatrix::new(lab, (0..n_lab).map(|i| format!("l{i}")).collect())?,
        labels,
    )?;
    let unlabeled = FeatureMatrix::new(unl, (0..n_unl).map(|i| format!("u{i}")).collect())?;
    Ok(SyntheticData {
        labeled,
        unlabeled,
        unlabeled_truth: truth,
        means,
    })
}

/// Sequential rejection sampling of class means from N(0, s^2 I), where `s`
/// puts the typical pairwise distance slightly above `separation`.
fn place_means(n: usize, dim: usize, separation: f64, seed: u64) -> Result<Array2<f64>> {
    let scale = 1.25 * separation / (2.0 * dim as f64).sqrt();
    let mut rng = rng::stream(seed, 0x4d45_414e);
    let mut means = Array2::<f64>::zeros((n, dim));
    let min_sq = separation * separation;
    for i in 0..n {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                means[[i, j]] = scale * z;
            }
            let ok = (0..i).all(|p| {
                let d: f64 = means
                    .row(i)
                    .iter()
                    .zip(means.row(p))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d >= min_sq
            });
            if ok {
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DtcError::param(format!(
                "could not place {n} class means with separation {separation} in {dim} dimensions; \
                 use a larger dimension or a smaller separation"
            )));
        }
    }
    Ok(means)
}

/// On-disk feature file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// `.csv` is CSV; everything else is the binary layout.
    pub fn from_path(path: &Path) -> FeatureFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

/// A parsed feature file: features plus the optional label column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<usize>>,
}

impl FeatureFile {
    pub fn into_labeled(self) -> Result<LabeledSet> {
        let labels = self
            .labels
            .ok_or_else(|| DtcError::Validation("feature file has no label column".into()))?;
        LabeledSet::new(self.features, labels)
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    Ok(read_feature_file(path, format)?.features)
}

pub fn read_feature_file(path: &Path, format: FeatureFormat) -> Result<FeatureFile> {
    match format {
        FeatureFormat::Csv => {
            let file = fs::File::open(path)?;
            parse_csv(BufReader::new(file))
        }
        FeatureFormat::Binary => parse_binary(&fs::read(path)?),
    }
}

pub fn save_features(
    path: &Path,
    format: FeatureFormat,
    features: &FeatureMatrix,
    labels: Option<&[usize]>,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != features.rows() {
            return Err(DtcError::param("label count does not match row count"));
        }
    }
    let bytes = match format {
        FeatureFormat::Csv => encode_csv(features, labels).into_bytes(),
        FeatureFormat::Binary => encode_binary(features, labels)?,
    };
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

fn encode_csv(features: &FeatureMatrix, labels: Option<&[usize]>) -> String {
    let mut out = String::from("id");
    for j in 0..features.dim() {
        out.push_str(&format!(",f{j}"));
    }
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in features.values.rows().into_iter().enumerate() {
        out.push_str(&features.ids[i]);
        for v in row {
            // Display for f64 is the shortest exact round-trip form.
            out.push_str(&format!(",{v}"));
        }
        if let Some(l) = labels {
            out.push_str(&format!(",{}", l[i]));
        }
        out.push('\n');
    }
    out
}

fn parse_csv<R: BufRead>(reader: R) -> Result<FeatureFile> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(csv_err(1, "missing header")),
        }
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") {
        return Err(csv_err(1, "header must start with `id`"));
    }
    let has_label = cols.last() == Some(&"label");
    let dim = cols.len() - 1 - usize::from(has_label);
    if dim == 0 {
        return Err(csv_err(1, "header declares no feature columns"));
    }
    for (j, name) in cols[1..=dim].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(csv_err(1, &format!("expected column f{j}, found `{name}`")));
        }
    }

    let mut values = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(csv_err(
                lineno,
                &format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        ids.push(fields[0].to_string());
        for tok in &fields[1..=dim] {
            let v: f64 = tok
                .parse()
                .map_err(|_| csv_err(lineno, &format!("invalid number `{tok}`")))?;
            values.push(v);
        }
        if has_label {
            let tok = fields[dim + 1];
            let l: usize = tok
                .parse()
                .map_err(|_| csv_err(lineno, &format!("invalid label `{tok}`")))?;
            labels.push(l);
        }
    }
    if ids.is_empty() {
        return Err(DtcError::Validation("no rows".into()));
    }
    let n = ids.len();
    let values = Array2::from_shape_vec((n, dim), values).expect("shape");
    Ok(FeatureFile {
        features: FeatureMatrix::new(values, ids)?,
        labels: has_label.then_some(labels),
    })
}

fn csv_err(line: usize, message: &str) -> DtcError {
    DtcError::Parse {
        location: format!("line {line}"),
        message: message.to_string(),
    }
}

fn encode_binary(features: &FeatureMatrix, labels: Option<&[usize]>) -> Result<Vec<u8>> {
    let (n, d) = features.values.dim();
    let n32 = u32::try_from(n).map_err(|_| DtcError::param("too many rows for binary format"))?;
    let d32 = u32::try_from(d).map_err(|_| DtcError::param("dimension too large"))?;
    let mut out = Vec::with_capacity(14 + n * d * 8 + labels.map_or(0, |_| n * 4));
    out.extend_from_slice(BINARY_MAGIC);
    out.push(BINARY_VERSION);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    out.push(u8::from(labels.is_some()));
    for v in features.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = labels {
        for &l in labels {
            let l = u32::try_from(l).map_err(|_| DtcError::param("label exceeds u32"))?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

fn parse_binary(bytes: &[u8]) -> Result<FeatureFile> {
    let mut cur = ByteCursor { bytes, pos: 0 };
    if cur.take(4)? != BINARY_MAGIC {
        return Err(cur.err("bad magic, expected DTCF"));
    }
    let version = cur.u8()?;
    if version != BINARY_VERSION {
        return Err(cur.err(&format!("unsupported version {version}")));
    }
    let n = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    let has_labels = match cur.u8()? {
        0 => false,
        1 => true,
        other => return Err(cur.err(&format!("invalid label flag {other}"))),
    };
    if n == 0 {
        return Err(DtcError::Validation("no rows".into()));
    }
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        values.push(cur.f64()?);
    }
    let labels = if has_labels {
        let mut l = Vec::with_capacity(n);
        for _ in 0..n {
            l.push(cur.u32()? as usize);
        }
        Some(l)
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(cur.err("trailing bytes"));
    }
    let values = Array2::from_shape_vec((n, d), values).expect("shape");
    Ok(FeatureFile {
        features: FeatureMatrix::from_values(values)?,
        labels,
    })
}

pub(crate) struct ByteCursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn err(&self, message: &str) -> DtcError {
        DtcError::Parse {
            location: format!("offset {}", self.pos),
            message: message.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Cursor;

    fn labeled(n_classes: usize, per: usize) -> LabeledSet {
        let n = n_classes * per;
        let values = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let labels = (0..n).map(|i| i / per).collect();
        LabeledSet::new(FeatureMatrix::from_values(values).unwrap(), labels).unwrap()
    }

    #[test]
    fn csv_three_rows() {
        let text = "id,f0,f1\na,1.0,2.0\nb,3,4\nc,-5e-1,6\n";
        let file = parse_csv(Cursor::new(text)).unwrap();
        assert_eq!(file.features.rows(), 3);
        assert_eq!(file.features.dim(), 2);
        assert_eq!(file.features.values()[[2, 0]], -0.5);
        assert_eq!(file.features.ids(), &["a", "b", "c"]);
        assert!(file.labels.is_none());
    }

    #[test]
    fn csv_with_labels() {
        let text = "id,f0,label\nx,1.5,0\ny,2.5,1\n";
        let set = parse_csv(Cursor::new(text)).unwrap().into_labeled().unwrap();
        assert_eq!(set.labels(), &[0, 1]);
        assert_eq!(set.n_classes(), 2);
    }

    #[test]
    fn csv_empty_data_section() {
        let err = parse_csv(Cursor::new("id,f0,f1\n")).unwrap_err();
        assert!(err.to_string().contains("no rows"), "{err}");
    }

    #[test]
    fn csv_nan_names_row() {
        let err = parse_csv(Cursor::new("id,f0\nok,1\nbad_row,NaN\n")).unwrap_err();
        assert!(matches!(err, DtcError::Validation(_)));
        assert!(err.to_string().contains("bad_row"), "{err}");
    }

    #[test]
    fn csv_malformed_reports_line() {
        let err = parse_csv(Cursor::new("id,f0,f1\na,1,2\nb,1\n")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_csv(Cursor::new("id,f0\na,xyz\n")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_csv(Cursor::new("id,f0\na,1\na,2\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn binary_errors_report_offset() {
        let err = parse_binary(b"DTCX\x01").unwrap_err();
        assert!(err.to_string().contains("magic"));
        let fm = FeatureMatrix::from_values(array![[1.0, 2.0]]).unwrap();
        let mut bytes = encode_binary(&fm, None).unwrap();
        bytes.pop();
        let err = parse_binary(&bytes).unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
    }

    #[test]
    fn binary_layout() {
        let fm = FeatureMatrix::from_values(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let bytes = encode_binary(&fm, Some(&[7, 9])).unwrap();
        assert_eq!(&bytes[..4], b"DTCF");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(bytes[13], 1);
        assert_eq!(&bytes[14..22], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 4 * 8 + 2 * 4);
        let back = parse_binary(&bytes).unwrap();
        assert_eq!(back.labels, Some(vec![7, 9]));
        assert_eq!(back.features.values(), fm.values());
    }

    #[test]
    fn probe_split_default_ratio() {
        let set = labeled(10, 3);
        let split = split_probes(&set, 5, 0.8, 3).unwrap();
        assert_eq!(split.anchor_classes.len(), 4);
        assert_eq!(split.validation_classes.len(), 1);
        assert_eq!(split.training_classes.len(), 5);
    }

    #[test]
    fn probe_split_minimum() {
        let set = labeled(3, 2);
        let split = split_probes(&set, 2, 0.5, 0).unwrap();
        assert_eq!(split.anchor_classes.len(), 1);
        assert_eq!(split.validation_classes.len(), 1);
        assert_eq!(split.training_classes.len(), 1);
    }

    #[test]
    fn probe_split_deterministic() {
        let set = labeled(12, 2);
        assert_eq!(
            split_probes(&set, 6, 0.8, 42).unwrap(),
            split_probes(&set, 6, 0.8, 42).unwrap()
        );
    }

    #[test]
    fn probe_split_rejects_bad_counts() {
        let set = labeled(4, 2);
        assert!(split_probes(&set, 4, 0.8, 0).is_err());
        assert!(split_probes(&set, 1, 0.8, 0).is_err());
        assert!(split_probes(&set, 2, 1.0, 0).is_err());
    }

    #[test]
    fn synth_sizes() {
        let data = synth_mixture(5, 5, 100, 20, 6.0, 1).unwrap();
        assert_eq!(data.labeled.features().rows(), 500);
        assert_eq!(data.unlabeled.rows(), 500);
        assert_eq!(data.labeled.n_classes(), 5);
        assert_eq!(data.unlabeled_truth.len(), 500);
    }

    #[test]
    fn synth_degenerate_two_clusters() {
        let data = synth_mixture(1, 1, 10, 2, 3.0, 5).unwrap();
        assert_eq!(data.labeled.features().rows(), 10);
        assert_eq!(data.unlabeled.rows(), 10);
        let d: f64 = data
            .means
            .row(0)
            .iter()
            .zip(data.means.row(1))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d >= 3.0);
    }

    #[test]
    fn synth_placement_failure_is_reported() {
        let err = synth_mixture(50, 50, 1, 1, 100.0, 0).unwrap_err();
        assert!(err.to_string().contains("larger dimension"), "{err}");
    }

    #[test]
    fn restrict_relabels_densely() {
        let set = labeled(4, 2);
        let sub = set.restrict(&[1, 3].into_iter().collect()).unwrap();
        assert_eq!(sub.labels(), &[0, 0, 1, 1]);
        assert_eq!(sub.features().ids(), &["2", "3", "6", "7"]);
    }
}
