//! Writes a tiny IDX image/label pair and loads it back.

use std::fs;

use ckasr::data::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

fn main() -> ckasr::Result<()> {
    let dir = std::env::temp_dir().join(format!("ckasr-idx-{}", std::process::id()));
    fs::create_dir_all(&dir).expect("temp dir");

    let (count, side) = (3u32, 4u32);
    let mut images = Vec::new();
    for v in [IDX_IMAGES_MAGIC, count, side, side] {
        images.extend(v.to_be_bytes());
    }
    images.extend((0..count * side * side).map(|i| (i * 5 % 256) as u8));
    let mut labels = Vec::new();
    labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend(count.to_be_bytes());
    labels.extend([2u8, 0, 1]);

    let (ip, lp) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
    fs::write(&ip, images).expect("write images");
    fs::write(&lp, labels).expect("write labels");

    let ds = load_idx(&ip, &lp)?;
    println!("{} images of {} pixels, {} classes, labels {:?}", ds.len(), ds.dim(), ds.num_classes, ds.labels);
    println!("first row: {:?}", &ds.features.row(0)[..6]);
    println!("point data.kind=idx, data.images and data.labels at real files to train on them");
    fs::remove_dir_all(dir).ok();
    Ok(())
}
