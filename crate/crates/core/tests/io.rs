mod common;

use common::random_image;
use iwmf_core::io::{decode_raw, encode_raw, read_raw, write_raw};
use iwmf_core::{load_image, save_image, ImageTensor};

#[test]
fn raw_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(1, 3, 7, 5);
    let path = dir.path().join("a.iwt");
    save_image(&img, &path).unwrap();
    assert_eq!(load_image(&path).unwrap(), img);
    assert_eq!(decode_raw(&encode_raw(&img)).unwrap(), img);
}

#[test]
fn raw_streams_hold_several_tensors() {
    let a = random_image(2, 1, 4, 4);
    let b = random_image(3, 3, 2, 6);
    let mut buf = Vec::new();
    write_raw(&mut buf, &a).unwrap();
    write_raw(&mut buf, &b).unwrap();
    let mut r = buf.as_slice();
    assert_eq!(read_raw(&mut r).unwrap(), a);
    assert_eq!(read_raw(&mut r).unwrap(), b);
    assert!(read_raw(&mut r).is_err());
}

#[test]
fn png_round_trip_quantizes_to_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    for ch in [1, 3, 4] {
        let img = random_image(4, ch, 9, 11);
        let path = dir.path().join(format!("c{ch}.png"));
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-6);
        save_image(&back, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), back);
    }
}

#[test]
fn sixteen_bit_png_loads_at_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g16.png");
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![0u16, 65535]).unwrap();
    buf.save(&path).unwrap();
    let img = load_image(&path).unwrap();
    assert_eq!(img.data(), &[0.0, 1.0]);
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_image(dir.path().join("x.bmp")).is_err());
    assert!(load_image(dir.path().join("missing.png")).is_err());
    assert!(decode_raw(b"IWT1").is_err());
    let mut bytes = encode_raw(&ImageTensor::filled(1, 2, 2, 0.5).unwrap());
    bytes.pop();
    assert!(decode_raw(&bytes).is_err());
    let two = ImageTensor::filled(2, 3, 3, 0.5).unwrap();
    assert!(save_image(&two, dir.path().join("two.png")).is_err());
}
