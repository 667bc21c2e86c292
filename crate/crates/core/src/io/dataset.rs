//! Dataset persistence: a directory of PPM images and PGM segmaps with an
//! index file naming each pair and its split membership, one line per
//! sample: `<image-file> <segmap-file> <labelled|unlabelled>`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::netpbm::{read_ppm, read_segmap, write_pgm_bytes, write_ppm};
use crate::scenes::{Dataset, ExperimentData};
use crate::tensor::{Image, SegMap};

pub const INDEX_FILE: &str = "index.txt";

fn write_pairs(dir: &Path, items: &[(Image, SegMap)], labelled: impl Fn(usize) -> bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut index = String::new();
    for (i, (img, seg)) in items.iter().enumerate() {
        let img_name = format!("img_{i:04}.ppm");
        let seg_name = format!("seg_{i:04}.pgm");
        write_ppm(&dir.join(&img_name), img)?;
        write_pgm_bytes(&dir.join(&seg_name), seg.w, seg.h, &seg.data)?;
        let tag = if labelled(i) { "labelled" } else { "unlabelled" };
        index.push_str(&format!("{img_name} {seg_name} {tag}\n"));
    }
    fs::write(dir.join(INDEX_FILE), index).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(())
}

/// Persist train and eval pools under `<dir>/train` and `<dir>/eval`.
/// Evaluation samples are fully labelled by construction.
pub fn save_dataset(dir: &Path, data: &ExperimentData) -> Result<()> {
    let is_labelled: Vec<bool> = {
        let mut v = vec![false; data.train.items.len()];
        for &i in &data.train.labelled {
            v[i] = true;
        }
        v
    };
    write_pairs(&dir.join("train"), &data.train.items, |i| is_labelled[i])?;
    write_pairs(&dir.join("eval"), &data.eval, |_| true)?;
    Ok(())
}

fn read_pairs(dir: &Path) -> Result<(Vec<(Image, SegMap)>, Vec<usize>, Vec<usize>)> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(index_path.display().to_string(), e))?;
    let mut items = Vec::new();
    let mut labelled = Vec::new();
    let mut unlabelled = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Format {
                path: index_path.display().to_string(),
                msg: format!("line {}: expected 3 fields", lineno + 1),
            });
        }
        let img = read_ppm(&dir.join(fields[0]))?;
        let seg = read_segmap(&dir.join(fields[1]))?;
        if img.shape()[0] != seg.h || img.shape()[1] != seg.w {
            return Err(Error::Format {
                path: index_path.display().to_string(),
                msg: format!("line {}: image and segmap sizes differ", lineno + 1),
            });
        }
        match fields[2] {
            "labelled" => labelled.push(items.len()),
            "unlabelled" => unlabelled.push(items.len()),
            other => {
                return Err(Error::Format {
                    path: index_path.display().to_string(),
                    msg: format!("line {}: unknown split tag {other:?}", lineno + 1),
                })
            }
        }
        items.push((img, seg));
    }
    Ok((items, labelled, unlabelled))
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<ExperimentData> {
    let (items, labelled, unlabelled) = read_pairs(&dir.join("train"))?;
    let (eval_items, _, _) = read_pairs(&dir.join("eval"))?;
    Ok(ExperimentData {
        train: Dataset {
            items,
            labelled,
            unlabelled,
        },
        eval: eval_items,
    })
}
