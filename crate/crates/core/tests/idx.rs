use ckasr::data::{dataset_from_idx, load_idx, parse_idx_images, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use ckasr::Error;
use proptest::prelude::*;
use tempfile::TempDir;

fn images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
        b.extend(v.to_be_bytes());
    }
    b.extend(pixels);
    b
}

fn labels(ls: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend(IDX_LABELS_MAGIC.to_be_bytes());
    b.extend((ls.len() as u32).to_be_bytes());
    b.extend(ls);
    b
}

#[test]
fn two_tiny_images_load_exactly() {
    let img = [
        0x00, 0x00, 0x08, 0x03, // magic
        0x00, 0x00, 0x00, 0x02, // count
        0x00, 0x00, 0x00, 0x02, // rows
        0x00, 0x00, 0x00, 0x02, // cols
        0, 255, 51, 102, //
        255, 0, 0, 204,
    ];
    let lab = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 1, 0];
    let ds = dataset_from_idx(&img, &lab).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.features.as_slice(), &[0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 0.8]);
    assert_eq!(ds.labels, vec![1, 0]);
    assert_eq!(ds.num_classes, 2);
}

#[test]
fn wrong_magic_is_rejected() {
    let mut img = images(1, 1, 1, &[7]);
    img[3] = 0x01;
    let err = dataset_from_idx(&img, &labels(&[0])).unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
    // label file passed as the image file
    assert!(parse_idx_images(&labels(&[0])).is_err());
}

#[test]
fn truncated_files_are_rejected() {
    let img = images(2, 2, 2, &[1, 2, 3, 4, 5, 6, 7]);
    let err = dataset_from_idx(&img, &labels(&[0, 1])).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
    assert!(dataset_from_idx(&img[..10], &labels(&[0, 1])).is_err());
    let mut lab = labels(&[0, 1]);
    lab.pop();
    assert!(dataset_from_idx(&images(2, 1, 1, &[1, 2]), &lab).is_err());
}

#[test]
fn count_mismatch_is_rejected() {
    let err = dataset_from_idx(&images(2, 1, 1, &[1, 2]), &labels(&[0, 1, 1])).unwrap_err();
    assert!(err.to_string().contains("2 images but 3 labels"), "{err}");
}

#[test]
fn missing_file_names_the_path() {
    let err = load_idx("/nonexistent/imgs", "/nonexistent/labels").unwrap_err();
    assert!(matches!(err, Error::Idx(_)), "{err:?}");
    assert!(err.to_string().contains("/nonexistent/imgs"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn written_files_round_trip(
        rows in 1u32..5,
        cols in 1u32..5,
        data in prop::collection::vec((any::<u8>(), 0u8..10), 10..30),
    ) {
        let per = (rows * cols) as usize;
        let pixels: Vec<u8> = (0..data.len() * per).map(|i| data[i / per].0.wrapping_add(i as u8)).collect();
        let ls: Vec<u8> = data.iter().map(|d| d.1).collect();
        let tmp = TempDir::new().unwrap();
        let (ip, lp) = (tmp.path().join("images.idx"), tmp.path().join("labels.idx"));
        std::fs::write(&ip, images(data.len() as u32, rows, cols, &pixels)).unwrap();
        std::fs::write(&lp, labels(&ls)).unwrap();

        let ds = load_idx(&ip, &lp).unwrap();
        prop_assert_eq!(ds.len(), data.len());
        prop_assert_eq!(ds.dim(), per);
        for (f, &p) in ds.features.as_slice().iter().zip(&pixels) {
            prop_assert_eq!(*f, p as f64 / 255.0);
        }
        prop_assert_eq!(ds.labels, ls.iter().map(|&l| l as usize).collect::<Vec<_>>());
    }
}
