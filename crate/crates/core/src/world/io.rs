//! Dataset export/import: P5/P6 images plus a text manifest.
//!
//! Layout: one directory per split holding `<id>.ppm` visuals and `<id>.pgm`
//! maps, and a `manifest.txt` at the root with one record per sample. Visual
//! values live on the 1/255 lattice and audio is printed with 17 significant
//! digits, so export -> import -> export is bit-exact.

use super::{AudioVisualPair, BoxPx, PairRecord, SampleId, SizeBand, Split, SplitSet};
use crate::error::{DmtError, Result};
use crate::maps::BinaryMap;
use crate::tensor::Tensor;
use std::fs;
use std::io::Write;
use std::path::Path;

pub(crate) fn write_pgm(path: &Path, h: usize, w: usize, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", w, h)?;
    f.write_all(bytes)?;
    Ok(())
}

fn write_ppm(path: &Path, visual: &Tensor) -> Result<()> {
    let (h, w) = (visual.shape()[0], visual.shape()[1]);
    let bytes: Vec<u8> = visual
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", w, h)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn read_pnm(path: &Path, magic: &str) -> Result<(usize, usize, Vec<u8>)> {
    let raw = fs::read(path)?;
    let header_err = || DmtError::Format(format!("{}: bad {} header", path.display(), magic));
    // header: magic \n width space height \n maxval \n
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < raw.len() {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| header_err())?.to_string());
    }
    if fields.len() != 4 || fields[0] != magic || fields[3] != "255" {
        return Err(header_err());
    }
    pos += 1; // single whitespace after maxval
    let w: usize = fields[1].parse().map_err(|_| header_err())?;
    let h: usize = fields[2].parse().map_err(|_| header_err())?;
    let ch = if magic == "P6" { 3 } else { 1 };
    let body = raw[pos..].to_vec();
    if body.len() != w * h * ch {
        return Err(DmtError::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            w * h * ch,
            body.len()
        )));
    }
    Ok((h, w, body))
}

fn fmt_audio(audio: &[f64]) -> String {
    audio
        .iter()
        .map(|v| format!("{:.17e}", v))
        .collect::<Vec<_>>()
        .join(",")
}

fn record_line(r: &PairRecord) -> String {
    let box_s = match r.bbox {
        Some(b) => format!("{},{},{},{}", b.x, b.y, b.w, b.h),
        None => "-".into(),
    };
    let class_s = r.class_id.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
    let band_s = r.band.map(|b| b.name().to_string()).unwrap_or_else(|| "-".into());
    format!(
        "id={} split={} class={} box={} band={} fp={} audio={}",
        r.pair.id.0,
        r.pair.split.name(),
        class_s,
        box_s,
        band_s,
        r.pair.is_false_positive as u8,
        fmt_audio(&r.pair.audio)
    )
}

/// Write all four splits under `dir`.
pub fn export_splits(dir: &Path, splits: &SplitSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("dmt-dataset v1\n");
    for split in [Split::Labeled, Split::Unlabeled, Split::Val, Split::Test] {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub)?;
        for r in splits.split(split) {
            manifest.push_str(&record_line(r));
            manifest.push('\n');
            write_ppm(&sub.join(format!("{}.ppm", r.pair.id.0)), &r.pair.visual)?;
            let gt = r.pair.gt.as_ref().or(r.hidden_gt.as_ref());
            if let Some(m) = gt {
                let bytes: Vec<u8> = m.data().iter().map(|&v| v * 255).collect();
                write_pgm(&sub.join(format!("{}.pgm", r.pair.id.0)), m.h(), m.w(), &bytes)?;
            }
        }
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

fn parse_field<'a>(token: &'a str, key: &str) -> Result<&'a str> {
    token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| DmtError::Format(format!("manifest token `{token}` does not match `{key}=`")))
}

/// Read a dataset written by [`export_splits`].
pub fn import_splits(dir: &Path) -> Result<SplitSet> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut lines = manifest.lines();
    match lines.next() {
        Some("dmt-dataset v1") => {}
        other => {
            return Err(DmtError::Format(format!(
                "unsupported dataset header {:?}",
                other
            )))
        }
    }
    let mut out = SplitSet {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 7 {
            return Err(DmtError::Format(format!("manifest line `{line}` malformed")));
        }
        let id: u64 = parse_field(tokens[0], "id")?
            .parse()
            .map_err(|_| DmtError::Format(format!("bad id in `{line}`")))?;
        let split = Split::from_name(parse_field(tokens[1], "split")?)
            .ok_or_else(|| DmtError::Format(format!("bad split in `{line}`")))?;
        let class_s = parse_field(tokens[2], "class")?;
        let class_id = if class_s == "-" {
            None
        } else {
            Some(class_s.parse().map_err(|_| DmtError::Format(format!("bad class in `{line}`")))?)
        };
        let box_s = parse_field(tokens[3], "box")?;
        let bbox = if box_s == "-" {
            None
        } else {
            let parts: Vec<usize> = box_s
                .split(',')
                .map(|p| p.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| DmtError::Format(format!("bad box in `{line}`")))?;
            if parts.len() != 4 {
                return Err(DmtError::Format(format!("bad box in `{line}`")));
            }
            Some(BoxPx {
                x: parts[0],
                y: parts[1],
                w: parts[2],
                h: parts[3],
            })
        };
        let band_s = parse_field(tokens[4], "band")?;
        let band = if band_s == "-" {
            None
        } else {
            Some(match band_s {
                "small" => SizeBand::Small,
                "medium" => SizeBand::Medium,
                "large" => SizeBand::Large,
                "huge" => SizeBand::Huge,
                _ => return Err(DmtError::Format(format!("bad band in `{line}`"))),
            })
        };
        let is_fp = parse_field(tokens[5], "fp")? == "1";
        let audio: Vec<f64> = parse_field(tokens[6], "audio")?
            .split(',')
            .map(|p| p.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| DmtError::Format(format!("bad audio in `{line}`")))?;

        let sub = dir.join(split.name());
        let (h, w, bytes) = read_pnm(&sub.join(format!("{id}.ppm")), "P6")?;
        let visual = Tensor::new(
            vec![h, w, 3],
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )?;
        let map_path = sub.join(format!("{id}.pgm"));
        let gt = if map_path.exists() {
            let (mh, mw, mbytes) = read_pnm(&map_path, "P5")?;
            Some(BinaryMap::new(
                mh,
                mw,
                mbytes.iter().map(|&b| (b > 127) as u8).collect(),
            )?)
        } else {
            None
        };
        let (public_gt, hidden_gt) = if split == Split::Unlabeled {
            (None, gt)
        } else {
            (gt, None)
        };
        let record = PairRecord {
            pair: AudioVisualPair {
                id: SampleId(id),
                visual,
                audio,
                gt: public_gt,
                is_false_positive: is_fp,
                split,
            },
            class_id,
            bbox,
            band,
            hidden_gt,
        };
        match split {
            Split::Labeled => out.labeled.push(record),
            Split::Unlabeled => out.unlabeled.push(record),
            Split::Val => out.val.push(record),
            Split::Test => out.test.push(record),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{make_splits, WorldConfig};

    #[test]
    fn export_import_round_trips_bit_exactly() {
        let cfg = WorldConfig {
            n_unlabeled: 30,
            labeled_ratio: 0.2,
            n_val: 5,
            n_test: 8,
            fp_rate_unlabeled: 0.3,
            ..WorldConfig::default()
        };
        let splits = make_splits(&cfg, 42).unwrap();
        let dir = std::env::temp_dir().join(format!("dmt_io_test_{}", std::process::id()));
        export_splits(&dir, &splits).unwrap();
        let back = import_splits(&dir).unwrap();

        for (orig, imported) in [
            (&splits.labeled, &back.labeled),
            (&splits.unlabeled, &back.unlabeled),
            (&splits.val, &back.val),
            (&splits.test, &back.test),
        ] {
            assert_eq!(orig.len(), imported.len());
            for (a, b) in orig.iter().zip(imported.iter()) {
                assert_eq!(a.pair.id, b.pair.id);
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a.pair.visual.data()), bits(b.pair.visual.data()));
                assert_eq!(bits(&a.pair.audio), bits(&b.pair.audio));
                assert_eq!(a.pair.gt, b.pair.gt);
                assert_eq!(a.hidden_gt, b.hidden_gt);
                assert_eq!(a.bbox, b.bbox);
            }
        }

        // second export of the imported set produces identical bytes
        let dir2 = dir.join("again");
        export_splits(&dir2, &back).unwrap();
        let m1 = fs::read(dir.join("manifest.txt")).unwrap();
        let m2 = fs::read(dir2.join("manifest.txt")).unwrap();
        assert_eq!(m1, m2);
        let probe = &splits.labeled[0].pair.id.0;
        let v1 = fs::read(dir.join("labeled").join(format!("{probe}.ppm"))).unwrap();
        let v2 = fs::read(dir2.join("labeled").join(format!("{probe}.ppm"))).unwrap();
        assert_eq!(v1, v2);
        fs::remove_dir_all(&dir).ok();
    }
}
