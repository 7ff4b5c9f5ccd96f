//! File helpers: atomic writes and scan/label files on disk.

use crate::error::{Error, Result};
use crate::pointcloud::{decode_labels, decode_scan, encode_labels, encode_scan, LabelArray, PointCloud};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes `bytes` to a temp file in the destination directory, then renames
/// it over `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_scan(path: &Path) -> Result<PointCloud> {
    decode_scan(&read_bytes(path)?)
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, &encode_scan(cloud))
}

pub fn read_labels(path: &Path, ignore_label: u16) -> Result<LabelArray> {
    decode_labels(&read_bytes(path)?, ignore_label)
}

pub fn write_labels(path: &Path, labels: &LabelArray) -> Result<()> {
    write_atomic(path, &encode_labels(labels))
}

/// Label file paired with a scan: `a/b/000001.bin` → `a/b/000001.label`.
pub fn label_path_for(scan: &Path) -> PathBuf {
    scan.with_extension("label")
}

/// `.bin` files directly inside `dir`, sorted by name; a file path is
/// returned as a one-element list.
pub fn list_scans(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "bin") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads a scan and, when present, its paired label file.
pub fn read_scene(scan: &Path, ignore_label: u16) -> Result<(PointCloud, Option<LabelArray>)> {
    let cloud = read_scan(scan)?;
    let lp = label_path_for(scan);
    let labels = if lp.exists() {
        let l = read_labels(&lp, ignore_label)?;
        l.check_paired(&cloud)?;
        Some(l)
    } else {
        None
    };
    Ok((cloud, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn scene_files_round_trip_and_list_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let c = PointCloud::from_points(&[[1.0, 2.0, 3.0, 0.5], [4.0, 5.0, 6.0, 0.25]]).unwrap();
        let l = LabelArray::new(vec![1, 255], 255);
        for name in ["b.bin", "a.bin"] {
            let p = dir.path().join(name);
            write_scan(&p, &c).unwrap();
            write_labels(&label_path_for(&p), &l).unwrap();
        }
        let scans = list_scans(dir.path()).unwrap();
        assert_eq!(scans.len(), 2);
        assert!(scans[0].ends_with("a.bin"));
        let (c2, l2) = read_scene(&scans[0], 255).unwrap();
        assert_eq!(c2, c);
        assert_eq!(l2.unwrap(), l);
    }
}
