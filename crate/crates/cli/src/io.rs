//! Signal matrix readers and atomic output writers.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ballwise::glm::SignalMatrix;
use sha2::{Digest, Sha256};

use crate::config::DataFormat;
use crate::CliError;

pub fn read_signals(path: &Path, format: DataFormat, n_points: usize) -> Result<SignalMatrix, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("data file {} does not exist", path.display())));
    }
    match format {
        DataFormat::Csv => read_signals_csv(path, n_points),
        DataFormat::Binary => read_signals_binary(path, n_points),
    }
}

fn data_error(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {msg}", path.display()))
}

/// Header cells are grid-point ids in any order; columns are rearranged to
/// grid order.
fn read_signals_csv(path: &Path, n_points: usize) -> Result<SignalMatrix, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| data_error(path, e))?;
    let header = reader.headers().map_err(|e| data_error(path, e))?.clone();
    if header.len() != n_points {
        return Err(data_error(
            path,
            format!("{} columns but the domain grid has {n_points} points", header.len()),
        ));
    }
    let mut column_of = vec![usize::MAX; n_points];
    for (c, cell) in header.iter().enumerate() {
        let id: usize = cell
            .parse()
            .map_err(|_| data_error(path, format!("header cell `{cell}` is not a grid-point id")))?;
        if id >= n_points || column_of[id] != usize::MAX {
            return Err(data_error(path, format!("grid-point id {id} is out of range or repeated")));
        }
        column_of[id] = c;
    }
    let mut rows = Vec::new();
    let mut n_obs = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_error(path, e))?;
        let values: Vec<f64> = record
            .iter()
            .map(|cell| cell.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| data_error(path, format!("row {}: {e}", r + 2)))?;
        rows.extend(column_of.iter().map(|&c| values[c]));
        n_obs += 1;
    }
    SignalMatrix::from_rows(n_obs, n_points, &rows).map_err(|e| data_error(path, e))
}

fn read_signals_binary(path: &Path, n_points: usize) -> Result<SignalMatrix, CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| data_error(path, e))?;
    if bytes.len() < 16 {
        return Err(data_error(path, "truncated header"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap());
    let (n_obs, m) = (word(0) as usize, word(1) as usize);
    if m != n_points {
        return Err(data_error(path, format!("{m} points but the domain grid has {n_points}")));
    }
    let expected = n_obs.checked_mul(m).and_then(|c| c.checked_mul(8)).and_then(|c| c.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(data_error(path, format!("size does not match {n_obs} x {m} values")));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SignalMatrix::from_rows(n_obs, m, &values).map_err(|e| data_error(path, e))
}

pub fn write_signals_binary(signals: &SignalMatrix, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(&(signals.n_obs() as u64).to_le_bytes())?;
    w.write_all(&(signals.n_points() as u64).to_le_bytes())?;
    for v in signals.to_row_major() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes through a temporary file in the target directory, renamed into
/// place once `fill` succeeds.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let fail = |e: &dyn std::fmt::Display| CliError::Output(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| fail(&e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).map_err(|e| fail(&e))?;
        w.flush().map_err(|e| fail(&e))?;
    }
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_follow_header_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        std::fs::write(&path, "2,0,1\n1,2,3\n4,5,6\n").unwrap();
        let s = read_signals(&path, DataFormat::Csv, 3).unwrap();
        assert_eq!(s.n_obs(), 2);
        assert_eq!(s.to_row_major(), vec![2.0, 3.0, 1.0, 5.0, 6.0, 4.0]);
        assert!(read_signals(&path, DataFormat::Csv, 4).is_err());
        std::fs::write(&path, "0,0,1\n1,2,3\n4,5,6\n").unwrap();
        assert!(read_signals(&path, DataFormat::Csv, 3).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.bin");
        let s = SignalMatrix::from_rows(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        write_atomic(&path, |w| write_signals_binary(&s, w)).unwrap();
        let back = read_signals(&path, DataFormat::Binary, 3).unwrap();
        assert_eq!(back.to_row_major(), s.to_row_major());
        assert!(read_signals(&path, DataFormat::Binary, 2).is_err());
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        assert!(read_signals(&path, DataFormat::Binary, 3).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_signals(Path::new("/no/such/y.csv"), DataFormat::Csv, 3).unwrap_err();
        assert!(err.to_string().contains("/no/such/y.csv"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        let err = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            Err(std::io::Error::other("boom"))
        });
        assert!(err.is_err());
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
