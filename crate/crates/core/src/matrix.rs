//! On-disk matrix interchange: the `GMX1` binary layout and a headerless CSV
//! fallback.
//!
//! Binary layout (all integers little-endian):
//!
//! | bytes  | content                          |
//! |--------|----------------------------------|
//! | 0..4   | magic `GMX1`                     |
//! | 4      | version, `0x01`                  |
//! | 5      | dtype, `0x00` = f32, `0x01` = i64 |
//! | 6..10  | rows (u32)                       |
//! | 10..14 | cols (u32)                       |
//! | 14..   | row-major payload                |

use std::fs;
use std::path::Path;

use faer::Mat;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GMX1";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    I64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0x00,
            Dtype::I64 => 0x01,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I64 => 8,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0x00 => Some(Dtype::F32),
            0x01 => Some(Dtype::I64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatrixData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

/// A dense row-major matrix as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    rows: usize,
    cols: usize,
    data: MatrixData,
}

impl MatrixFile {
    pub fn f32(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(rows, cols, MatrixData::F32(values))
    }

    pub fn i64(rows: usize, cols: usize, values: Vec<i64>) -> Result<Self> {
        Self::new(rows, cols, MatrixData::I64(values))
    }

    /// A column vector of labels.
    pub fn labels(values: Vec<i64>) -> Result<Self> {
        let n = values.len();
        Self::i64(n, 1, values)
    }

    pub fn new(rows: usize, cols: usize, data: MatrixData) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        let len = match &data {
            MatrixData::F32(v) => v.len(),
            MatrixData::I64(v) => v.len(),
        };
        if len != rows * cols {
            return Err(Error::LengthMismatch {
                left: len,
                right: rows * cols,
            });
        }
        if let MatrixData::F32(v) = &data {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteValue {
                    path: "<memory>".into(),
                    offset: (HEADER_LEN + 4 * i) as u64,
                });
            }
        }
        Ok(MatrixFile { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            MatrixData::F32(_) => Dtype::F32,
            MatrixData::I64(_) => Dtype::I64,
        }
    }

    pub fn data(&self) -> &MatrixData {
        &self.data
    }

    /// Converts to an f32 matrix. i64 payloads are cast.
    pub fn into_dense(self) -> DenseMatrix {
        let data = match self.data {
            MatrixData::F32(v) => v,
            MatrixData::I64(v) => v.into_iter().map(|x| x as f32).collect(),
        };
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Interprets the matrix as a label vector (one row or one column).
    /// f32 payloads are accepted when every value is integral, which is what
    /// CSV label files produce.
    pub fn into_labels(self) -> Result<Vec<i64>> {
        if self.rows != 1 && self.cols != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.cols.min(self.rows),
            });
        }
        match self.data {
            MatrixData::I64(v) => Ok(v),
            MatrixData::F32(v) => v
                .into_iter()
                .map(|x| {
                    if x.fract() == 0.0 {
                        Ok(x as i64)
                    } else {
                        Err(Error::OutOfRange {
                            what: "label",
                            value: x as f64,
                        })
                    }
                })
                .collect(),
        }
    }
}

/// Row-major f32 matrix used for activations and logits in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies into a faer matrix in double precision.
    pub fn to_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j) as f64)
    }

    pub fn to_file(&self) -> Result<MatrixFile> {
        MatrixFile::f32(self.rows, self.cols, self.data.clone())
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    let path = path.as_ref();
    if is_csv(path) {
        return read_csv(path);
    }
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact { path: path.into() }
        } else {
            Error::io(path, e)
        }
    })?;
    decode(path, &bytes)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<MatrixFile> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            offset: 0,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            offset: bytes.len() as u64,
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::BadHeader {
            path: path.into(),
            offset: 4,
            reason: format!("unsupported version {:#04x}", bytes[4]),
        });
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or_else(|| Error::BadHeader {
        path: path.into(),
        offset: 5,
        reason: format!("unknown dtype {:#04x}", bytes[5]),
    })?;
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::BadHeader {
            path: path.into(),
            offset: if rows == 0 { 6 } else { 10 },
            reason: format!("empty shape {rows}x{cols}"),
        });
    }
    let expected = rows as u64 * cols as u64 * dtype.size() as u64;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            offset: HEADER_LEN as u64 + found,
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::BadHeader {
            path: path.into(),
            offset: HEADER_LEN as u64 + expected,
            reason: format!("{} trailing bytes after payload", found - expected),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let data = match dtype {
        Dtype::F32 => {
            let mut v = Vec::with_capacity(rows * cols);
            for (i, chunk) in payload.chunks_exact(4).enumerate() {
                let x = f32::from_le_bytes(chunk.try_into().unwrap());
                if !x.is_finite() {
                    return Err(Error::NonFiniteValue {
                        path: path.into(),
                        offset: (HEADER_LEN + 4 * i) as u64,
                    });
                }
                v.push(x);
            }
            MatrixData::F32(v)
        }
        Dtype::I64 => MatrixData::I64(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(MatrixFile { rows, cols, data })
}

pub fn encode(matrix: &MatrixFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.rows * matrix.cols * matrix.dtype().size());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(matrix.dtype().code());
    out.extend_from_slice(&(matrix.rows as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.cols as u32).to_le_bytes());
    match &matrix.data {
        MatrixData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        MatrixData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Writes `matrix` as GMX1, or as CSV when the path ends in `.csv`.
pub fn write_matrix(path: impl AsRef<Path>, matrix: &MatrixFile) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    if is_csv(path) {
        return write_csv(path, matrix);
    }
    fs::write(path, encode(matrix)).map_err(|e| Error::io(path, e))
}

fn read_csv(path: &Path) -> Result<MatrixFile> {
    let file = fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact { path: path.into() }
        } else {
            Error::io(path, e)
        }
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut cols = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let offset = record.position().map_or(0, |p| p.byte());
        for field in record.iter() {
            let x: f32 = field.parse().map_err(|_| Error::Csv {
                path: path.into(),
                line,
                reason: format!("not a number: {field:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.into(),
                    offset,
                });
            }
            values.push(x);
        }
        cols = record.len();
        rows += 1;
    }
    MatrixFile::f32(rows, cols, values).map_err(|e| match e {
        Error::EmptyMatrix { .. } => Error::Csv {
            path: path.into(),
            line: 0,
            reason: "empty CSV".into(),
        },
        other => other,
    })
}

fn write_csv(path: &Path, matrix: &MatrixFile) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.into(),
            line: 0,
            reason: e.to_string(),
        })?;
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.into(),
        line: 0,
        reason: e.to_string(),
    };
    for i in 0..matrix.rows {
        let row: Vec<String> = match &matrix.data {
            MatrixData::F32(v) => v[i * matrix.cols..(i + 1) * matrix.cols]
                .iter()
                .map(|x| x.to_string())
                .collect(),
            MatrixData::I64(v) => v[i * matrix.cols..(i + 1) * matrix.cols]
                .iter()
                .map(|x| x.to_string())
                .collect(),
        };
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Per-row argmax; ties go to the lowest column index.
pub fn predictions_of(logits: &DenseMatrix) -> Vec<i64> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate().skip(1) {
                if x > row[best] {
                    best = j;
                }
            }
            best as i64
        })
        .collect()
}

/// `true` wherever the prediction differs from the label.
pub fn fault_mask(predictions: &[i64], labels: &[i64]) -> Result<Vec<bool>> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| p != l)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_decode_to_f32_2x3() {
        let mut bytes = vec![0x47, 0x4D, 0x58, 0x31, 0x01, 0x00];
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for i in 0..6 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let m = decode(Path::new("x"), &bytes).unwrap();
        assert_eq!(m.dtype(), Dtype::F32);
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.data(), &MatrixData::F32(vec![0., 1., 2., 3., 4., 5.]));
    }

    #[test]
    fn identity_2x2_is_30_bytes() {
        let m = MatrixFile::f32(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let bytes = encode(&m);
        assert_eq!(bytes.len(), 14 + 16);
        assert_eq!(&bytes[..6], &[0x47, 0x4D, 0x58, 0x31, 0x01, 0x00]);
    }

    #[test]
    fn label_vector_payload_is_40_bytes() {
        let m = MatrixFile::labels(vec![0, 1, 2, 3, 4]).unwrap();
        assert_eq!(encode(&m).len() - HEADER_LEN, 40);
        assert_eq!(encode(&m)[5], 0x01);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(matches!(
            MatrixFile::f32(0, 3, vec![]),
            Err(Error::EmptyMatrix { .. })
        ));
    }

    #[test]
    fn bad_magic_truncation_and_nan() {
        let p = Path::new("m.gmx");
        assert!(matches!(decode(p, b"GMX2\x01\x00"), Err(Error::BadMagic { offset: 0, .. })));

        let m = MatrixFile::f32(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let bytes = encode(&m);
        match decode(p, &bytes[..bytes.len() - 3]) {
            Err(Error::TruncatedPayload { offset, expected, found, .. }) => {
                assert_eq!(expected, 16);
                assert_eq!(found, 13);
                assert_eq!(offset, 27);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut bytes = bytes;
        bytes[HEADER_LEN + 8..HEADER_LEN + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode(p, &bytes),
            Err(Error::NonFiniteValue { offset: 22, .. })
        ));
    }

    #[test]
    fn csv_2x2() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2\n3,4\n").unwrap();
        let m = read_matrix(&path).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.data(), &MatrixData::F32(vec![1., 2., 3., 4.]));
    }

    #[test]
    fn csv_rejects_garbage_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2\n3,x\n").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Csv { line: 2, .. })));
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Csv { .. })));
        fs::write(&path, "1,nan\n").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::NonFiniteValue { .. })));
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        assert!(matches!(
            read_matrix("/nonexistent/a.gmx"),
            Err(Error::MissingArtifact { .. })
        ));
    }

    #[test]
    fn argmax_and_tie_break() {
        let l = DenseMatrix::from_rows(&[vec![0.1, 0.9]]).unwrap();
        assert_eq!(predictions_of(&l), vec![1]);
        let l = DenseMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(predictions_of(&l), vec![0]);
        let l = DenseMatrix::from_rows(&[vec![3., 1., 2.], vec![0., 0., 5.]]).unwrap();
        assert_eq!(predictions_of(&l), vec![0, 2]);
    }

    #[test]
    fn fault_mask_cases() {
        assert_eq!(fault_mask(&[1, 2], &[1, 2]).unwrap(), vec![false, false]);
        assert_eq!(fault_mask(&[0, 1], &[1, 1]).unwrap(), vec![true, false]);
        assert_eq!(fault_mask(&[1; 5], &[0; 5]).unwrap(), vec![true; 5]);
        assert!(matches!(fault_mask(&[1], &[1, 2]), Err(Error::LengthMismatch { .. })));
    }

    fn arb_matrix() -> impl Strategy<Value = MatrixFile> {
        (1usize..6, 1usize..6, any::<bool>()).prop_flat_map(|(r, c, is_f32)| {
            if is_f32 {
                prop::collection::vec(-1e30f32..1e30, r * c)
                    .prop_map(move |v| MatrixFile::f32(r, c, v).unwrap())
                    .boxed()
            } else {
                prop::collection::vec(any::<i64>(), r * c)
                    .prop_map(move |v| MatrixFile::i64(r, c, v).unwrap())
                    .boxed()
            }
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bitwise(m in arb_matrix()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.gmx");
            write_matrix(&path, &m).unwrap();
            let back = read_matrix(&path).unwrap();
            prop_assert_eq!(encode(&back), encode(&m));
        }

        #[test]
        fn fault_popcount_matches_loop(rows in prop::collection::vec(prop::collection::vec(-3f32..3.0, 3), 1..30),
                                       labels_seed in prop::collection::vec(0i64..3, 30)) {
            let logits = DenseMatrix::from_rows(&rows).unwrap();
            let labels = &labels_seed[..rows.len()];
            let mask = fault_mask(&predictions_of(&logits), labels).unwrap();
            let mut exact = 0;
            for (i, row) in rows.iter().enumerate() {
                let mut best = 0;
                for j in 0..row.len() {
                    if row[j] > row[best] { best = j; }
                }
                if best as i64 == labels[i] { exact += 1; }
            }
            prop_assert_eq!(mask.iter().filter(|&&b| b).count(), rows.len() - exact);
        }
    }
}
