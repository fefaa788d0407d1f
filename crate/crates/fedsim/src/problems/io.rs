//! Flat binary export/import of partitioned classification datasets.
//!
//! Layout (all integers little endian):
//! - magic `"FSIM1"` (5 bytes)
//! - `u32` worker count P, `u32` feature dimension d, `u32` per-worker count
//! - per worker: `count * d` features as `f64`, then `count` labels as `i32`
//!
//! Deterministic given the generating seed: the same problem always produces
//! the same bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::classification::calibrate_meta;
use super::mlp::{MlpFamily, MlpLocal, WorkerData};
use super::{InitSpec, LocalObjective, Problem, ProblemError};
use crate::rng::SeedTree;

pub const DATASET_MAGIC: &[u8; 5] = b"FSIM1";

/// Writes the train partition of a classification problem.
pub fn export_dataset(problem: &Problem, path: &Path) -> Result<(), ProblemError> {
    let locals: Vec<&MlpLocal> = problem
        .locals()
        .iter()
        .map(|l| {
            l.as_mlp().ok_or_else(|| {
                ProblemError::InvalidConfig(
                    "only classification problems can be exported as datasets".into(),
                )
            })
        })
        .collect::<Result<_, _>>()?;
    let per_worker = locals[0].data().count();
    if locals.iter().any(|l| l.data().count() != per_worker) {
        return Err(ProblemError::InvalidConfig(
            "unequal per-worker dataset sizes".into(),
        ));
    }
    let d = locals[0].data().feature_dim;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(locals.len() as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(per_worker as u32).to_le_bytes())?;
    for local in &locals {
        for v in &local.data().features {
            w.write_all(&v.to_le_bytes())?;
        }
        for &l in &local.data().labels {
            w.write_all(&(l as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a pooled evaluation set (a single-worker file).
pub fn export_test_set(problem: &Problem, path: &Path) -> Result<(), ProblemError> {
    let test = problem
        .test_set()
        .and_then(|t| t.as_mlp())
        .ok_or_else(|| ProblemError::InvalidConfig("problem has no exportable test set".into()))?;
    let d = test.data().feature_dim;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(test.data().count() as u32).to_le_bytes())?;
    for v in &test.data().features {
        w.write_all(&v.to_le_bytes())?;
    }
    for &l in &test.data().labels {
        w.write_all(&(l as i32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, ProblemError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_workers(path: &Path) -> Result<Vec<WorkerData>, ProblemError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(ProblemError::MalformedDataset("bad magic".into()));
    }
    let p = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    if p == 0 || d == 0 || count == 0 {
        return Err(ProblemError::MalformedDataset("empty dimensions".into()));
    }
    let mut workers = Vec::with_capacity(p);
    for _ in 0..p {
        let mut features = vec![0.0f64; count * d];
        for v in features.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let mut labels = vec![0u32; count];
        for l in labels.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            let raw = i32::from_le_bytes(b);
            if raw < 0 {
                return Err(ProblemError::MalformedDataset("negative label".into()));
            }
            *l = raw as u32;
        }
        workers.push(WorkerData {
            feature_dim: d,
            features,
            labels,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ProblemError::MalformedDataset("trailing bytes".into()));
    }
    Ok(workers)
}

/// Reconstructs a classification problem from exported files, re-running the
/// empirical meta calibration under `seed`.
pub fn import_dataset(
    train: &Path,
    test: Option<&Path>,
    model: &MlpFamily,
    seed: u64,
) -> Result<Problem, ProblemError> {
    let workers = read_workers(train)?;
    let d = workers[0].feature_dim;
    let classes = workers
        .iter()
        .flat_map(|w| w.labels.iter())
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
        .max(2);
    let spec = model.bind(d, classes)?;
    let locals: Vec<Arc<dyn LocalObjective>> = workers
        .into_iter()
        .map(|w| Ok(Arc::new(MlpLocal::new(spec.clone(), Arc::new(w))?) as Arc<dyn LocalObjective>))
        .collect::<Result<_, ProblemError>>()?;
    let test_set = match test {
        Some(path) => {
            let mut sets = read_workers(path)?;
            if sets.len() != 1 {
                return Err(ProblemError::MalformedDataset(
                    "test file must hold exactly one worker".into(),
                ));
            }
            Some(Arc::new(MlpLocal::new(spec.clone(), Arc::new(sets.remove(0)))?)
                as Arc<dyn LocalObjective>)
        }
        None => None,
    };
    let meta = calibrate_meta(&spec, &locals, &SeedTree::new(seed))?;
    Problem::new(meta, locals, test_set, InitSpec::Mlp(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_classification, mlp_objective, ClassPartitionConfig};

    #[test]
    fn export_import_round_trips_bitwise() {
        let cfg = ClassPartitionConfig {
            q: 0.5,
            num_classes: 4,
            samples_per_class: 24,
            feature_dim: 6,
            label_noise: 0.0,
        };
        let model = mlp_objective(5, 1e-3).unwrap();
        let (problem, _) = gen_classification(&cfg, &model, 13).unwrap();
        let dir = std::env::temp_dir().join("fedsim_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let train = dir.join("train.fsim");
        let test = dir.join("test.fsim");
        export_dataset(&problem, &train).unwrap();
        export_test_set(&problem, &test).unwrap();

        let back = import_dataset(&train, Some(&test), &model, 13).unwrap();
        assert_eq!(back.workers(), 4);
        for w in 0..4 {
            let a = problem.local(w).as_mlp().unwrap().data().clone();
            let b = back.local(w).as_mlp().unwrap().data().clone();
            assert_eq!(a.labels, b.labels);
            assert!(a
                .features
                .iter()
                .zip(&b.features)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let t = back.test_set().unwrap();
        assert_eq!(t.support_size(), problem.test_set().unwrap().support_size());

        // Same bytes when exported twice.
        let train2 = dir.join("train2.fsim");
        export_dataset(&problem, &train2).unwrap();
        assert_eq!(std::fs::read(&train).unwrap(), std::fs::read(&train2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = std::env::temp_dir().join("fedsim_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.fsim");
        std::fs::write(&path, b"NOPE!aaaaaaaaaaaaaaaa").unwrap();
        let model = mlp_objective(5, 0.0).unwrap();
        assert!(matches!(
            import_dataset(&path, None, &model, 0),
            Err(ProblemError::MalformedDataset(_))
        ));
    }
}
