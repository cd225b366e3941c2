//! Binary dataset container.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! b"ILRD" | u32 version | u64 header_len | header (UTF-8 JSON)
//! per context: w_true (d × f64) | X row-major (n·d × f64) | Y (n × f64)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_input_cov, BasisMode, Context, NoiseSpec, PriorSpec, TaskDataset};
use crate::error::{IlrError, Result};
use crate::numerics::{Mat, Real};

pub const DATASET_MAGIC: &[u8; 4] = b"ILRD";
pub const DATASET_VERSION: u32 = 1;

/// JSON header of the dataset container.
///
/// `prior_mean` and `prior_basis` (row-major `d × r_w`) carry the drawn prior
/// so a file is self-contained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub d: usize,
    pub n: usize,
    pub n_s: usize,
    pub r_w: usize,
    pub sigma_eps: f64,
    pub kappa: f64,
    pub seed: u64,
    pub prior_mean_mode: String,
    pub eigvals: Vec<f64>,
    pub prior_basis_mode: BasisMode,
    pub prior_mean: Vec<f64>,
    pub prior_basis: Vec<f64>,
}

impl DatasetHeader {
    fn of<T: Real>(ds: &TaskDataset<T>) -> Self {
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
        Self {
            d: ds.prior.d,
            n: ds.n,
            n_s: ds.contexts.len(),
            r_w: ds.prior.rank,
            sigma_eps: ds.noise.sigma_eps.to_f64_lossy(),
            kappa: ds.input.kappa.to_f64_lossy(),
            seed: ds.seed,
            prior_mean_mode: ds.prior.mean_mode.clone(),
            eigvals: f(&ds.prior.eigvals),
            prior_basis_mode: ds.prior.basis_mode,
            prior_mean: f(&ds.prior.mean),
            prior_basis: f(ds.prior.basis.as_slice()),
        }
    }

    fn record_len(&self) -> usize {
        self.d + self.n * self.d + self.n
    }
}

pub fn write_dataset<T: Real>(ds: &TaskDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let header = serde_json::to_vec(&DatasetHeader::of(ds))
        .map_err(|e| IlrError::format("header", e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut put = |xs: &[T]| -> std::io::Result<()> {
        for x in xs {
            w.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    };
    for c in &ds.contexts {
        put(&c.w_true)?;
        put(c.x.as_slice())?;
        put(&c.y)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<T: Real>(path: impl AsRef<Path>) -> Result<TaskDataset<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_dataset(&bytes)
}

pub(crate) fn decode_dataset<T: Real>(bytes: &[u8]) -> Result<TaskDataset<T>> {
    if bytes.len() < 16 {
        return Err(IlrError::format("magic", "file shorter than the fixed preamble"));
    }
    if &bytes[0..4] != DATASET_MAGIC {
        return Err(IlrError::format("magic", format!("expected ILRD, found {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(IlrError::format("version", format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(IlrError::format("header_len", "header extends past end of file"));
    }
    let header: DatasetHeader = serde_json::from_slice(&body[..header_len])
        .map_err(|e| IlrError::format("header", e.to_string()))?;
    validate_header(&header)?;

    let payload = &body[header_len..];
    let expected = header.n_s * header.record_len() * 8;
    if payload.len() != expected {
        return Err(IlrError::format(
            "n_s",
            format!(
                "header declares {} contexts ({expected} payload bytes) but payload has {} bytes",
                header.n_s,
                payload.len()
            ),
        ));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    let mut take = |k: usize| -> Vec<T> { values.by_ref().take(k).collect() };
    let (d, n) = (header.d, header.n);
    let mut contexts = Vec::with_capacity(header.n_s);
    for j in 0..header.n_s {
        let w_true = take(d);
        let x = Mat::from_vec(n, d, take(n * d))?;
        let y = take(n);
        contexts.push(Context {
            x,
            y,
            w_true,
            id: j as u64,
        });
    }

    let lit = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    let prior = PriorSpec {
        d,
        rank: header.r_w,
        mean: lit(&header.prior_mean),
        basis: Mat::from_vec(d, header.r_w, lit(&header.prior_basis))?,
        eigvals: lit(&header.eigvals),
        mean_mode: header.prior_mean_mode.clone(),
        basis_mode: header.prior_basis_mode,
    };
    let input = build_input_cov(d, T::lit(header.kappa))
        .map_err(|e| IlrError::format("kappa", e.to_string()))?;
    let noise = NoiseSpec::new(T::lit(header.sigma_eps))
        .map_err(|e| IlrError::format("sigma_eps", e.to_string()))?;
    Ok(TaskDataset {
        prior,
        input,
        noise,
        n,
        seed: header.seed,
        contexts,
    })
}

fn validate_header(h: &DatasetHeader) -> Result<()> {
    if h.d == 0 {
        return Err(IlrError::format("d", "must be positive"));
    }
    if h.n == 0 {
        return Err(IlrError::format("n", "must be positive"));
    }
    if h.r_w == 0 || h.r_w > h.d {
        return Err(IlrError::format("r_w", format!("{} outside 1..={}", h.r_w, h.d)));
    }
    if h.eigvals.len() != h.r_w {
        return Err(IlrError::format("eigvals", format!("{} values for r_w = {}", h.eigvals.len(), h.r_w)));
    }
    if h.prior_mean.len() != h.d {
        return Err(IlrError::format("prior_mean", format!("length {} for d = {}", h.prior_mean.len(), h.d)));
    }
    if h.prior_basis.len() != h.d * h.r_w {
        return Err(IlrError::format("prior_basis", format!("length {} for d·r_w = {}", h.prior_basis.len(), h.d * h.r_w)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::taskgen::{build_prior, sample_dataset, EigenMode, MeanMode, PRIOR_STREAM};

    fn dataset() -> TaskDataset<f64> {
        let prior = build_prior(
            6,
            2,
            &MeanMode::RandomUnit,
            &EigenMode::Explicit(vec![2.0, 0.5]),
            BasisMode::Random,
            &mut RngStream::new(4, PRIOR_STREAM),
        )
        .unwrap();
        let input = build_input_cov(6, 1.25).unwrap();
        sample_dataset(&prior, &input, &NoiseSpec::new(0.05).unwrap(), 3, 7, 99).unwrap()
    }

    fn encode(ds: &TaskDataset<f64>) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.ilrd");
        write_dataset(ds, &path).unwrap();
        std::fs::read(path).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = dataset();
        let back: TaskDataset<f64> = decode_dataset(&encode(&ds)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&dataset());
        bytes[0] = b'X';
        let err = decode_dataset::<f64>(&bytes).unwrap_err();
        assert!(matches!(err, IlrError::Format { field: "magic", .. }));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&dataset());
        bytes[4] = 2;
        let err = decode_dataset::<f64>(&bytes).unwrap_err();
        assert!(matches!(err, IlrError::Format { field: "version", .. }));
    }

    #[test]
    fn declared_count_must_match_payload() {
        let ds = dataset();
        let bytes = encode(&ds);
        // Drop the last record: header still declares 7 contexts.
        let rec = (6 + 3 * 6 + 3) * 8;
        let short = &bytes[..bytes.len() - rec];
        let err = decode_dataset::<f64>(short).unwrap_err();
        assert!(matches!(err, IlrError::Format { field: "n_s", .. }));
        // Truncated mid-record.
        let err = decode_dataset::<f64>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, IlrError::Format { field: "n_s", .. }));
    }
}
