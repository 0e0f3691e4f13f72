use super::*;

fn small_cluttered(seed: u64) -> CanvasSpec {
    CanvasSpec::cluttered(40, seed)
}

#[test]
fn same_seed_gives_identical_containers() {
    let a = synth_cluttered(&small_cluttered(7), 20).unwrap();
    let b = synth_cluttered(&small_cluttered(7), 20).unwrap();
    assert_eq!(a.encode(), b.encode());
    let c = synth_cluttered(&small_cluttered(8), 20).unwrap();
    assert_ne!(a.images, c.images);
}

#[test]
fn examples_do_not_depend_on_dataset_size() {
    let a = synth_multidigit(&CanvasSpec::wild(48, 96, 20, 3), 5).unwrap();
    let b = synth_multidigit(&CanvasSpec::wild(48, 96, 20, 3), 12).unwrap();
    for i in 0..5 {
        assert_eq!(a.image(i), b.image(i));
        assert_eq!(a.labels[i], b.labels[i]);
    }
}

#[test]
fn plain_digits_without_clutter() {
    let spec = CanvasSpec {
        height: 20,
        width: 12,
        glyph_height: 20,
        clutter: 0,
        ..small_cluttered(1)
    };
    let d = synth_cluttered(&spec, 30).unwrap();
    assert_eq!((d.height, d.width, d.arity), (20, 12, 1));
    for i in 0..d.len() {
        assert_eq!(d.labels[i].len(), 1);
        assert!(d.image(i).iter().any(|&p| p > 100));
    }
}

#[test]
fn cluttered_canvases_hold_one_digit_and_ink() {
    let d = synth_cluttered(&small_cluttered(2), 50).unwrap();
    let mut seen = [false; 10];
    for i in 0..d.len() {
        assert_eq!(d.labels[i].len(), 1);
        seen[d.labels[i][0] as usize] = true;
        assert!(d.image(i).iter().filter(|&&p| p > 0).count() > 40);
    }
    assert!(seen.iter().filter(|&&s| s).count() >= 8);
}

#[test]
fn single_length_multidigit_is_single_digit() {
    let spec = CanvasSpec {
        digits: (1, 1),
        ..CanvasSpec::wild(40, 40, 20, 4)
    };
    let d = synth_multidigit(&spec, 20).unwrap();
    assert_eq!(d.arity, 1);
    assert!(d.labels.iter().all(|l| l.len() == 1));
}

#[test]
fn centred_digits_span_the_canvas_height() {
    let spec = CanvasSpec {
        margin: 0,
        glyph_height: 24,
        clutter: 0,
        noise: 0.0,
        ..CanvasSpec::centred(24, 48, 5)
    };
    let d = synth_multidigit(&spec, 40).unwrap();
    let (mut top, mut bottom) = (false, false);
    for i in 0..d.len() {
        let img = d.image(i);
        top |= img[..48].iter().any(|&p| p > 0);
        bottom |= img[23 * 48..].iter().any(|&p| p > 0);
        let lit_rows = (0..24).filter(|r| img[r * 48..(r + 1) * 48].iter().any(|&p| p > 0)).count();
        assert!(lit_rows >= 18, "{lit_rows}");
    }
    assert!(top && bottom);
}

#[test]
fn lengths_are_uniform() {
    let n = 10_000;
    let d = synth_multidigit(&CanvasSpec::centred(12, 32, 6), n).unwrap();
    let mut counts = [0usize; 5];
    for l in &d.labels {
        counts[l.len() - 1] += 1;
    }
    let expected = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9% quantile of chi-square with 4 degrees of freedom
    assert!(chi2 < 18.47, "{counts:?}");
    for &c in &counts {
        assert!((c as f64 / n as f64 - 0.2).abs() < 0.03);
    }
}

#[test]
fn infeasible_geometry_is_rejected() {
    let too_big = CanvasSpec {
        glyph_height: 50,
        ..small_cluttered(0)
    };
    assert!(matches!(synth_cluttered(&too_big, 1), Err(Error::Geometry(_))));
    let too_many = CanvasSpec {
        digits: (1, 6),
        ..CanvasSpec::centred(24, 48, 0)
    };
    assert!(matches!(synth_multidigit(&too_many, 1), Err(Error::Geometry(_))));
    let wide = CanvasSpec {
        fragment: 41,
        ..small_cluttered(0)
    };
    assert!(matches!(synth_cluttered(&wide, 1), Err(Error::Geometry(_))));
    assert!(synth_cluttered(&CanvasSpec::centred(24, 48, 0), 1).is_err());
}

#[test]
fn container_round_trip_and_errors() {
    let d = synth_multidigit(&CanvasSpec::centred(24, 48, 9), 7).unwrap();
    let bytes = d.encode();
    assert_eq!(bytes.len(), 28 + 7 * (24 * 48 + 1 + 5));
    assert_eq!(Dataset::decode(&bytes).unwrap(), d);

    let empty = Dataset::new(3, 4, 1);
    assert_eq!(Dataset::decode(&empty.encode()).unwrap(), empty);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Dataset::decode(&bad), Err(Error::BadMagic { .. })));
    assert!(matches!(Dataset::decode(&bytes[..20]), Err(Error::Truncated(_))));
    assert!(matches!(
        Dataset::decode(&bytes[..bytes.len() - 1]),
        Err(Error::LengthMismatch { .. })
    ));
    let mut long_label = bytes.clone();
    long_label[28 + 24 * 48] = 6;
    assert!(matches!(Dataset::decode(&long_label), Err(Error::Malformed(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_container(&d, &path).unwrap();
    assert_eq!(read_container(&path).unwrap(), d);
    assert!(matches!(read_container(&dir.path().join("none")), Err(Error::MissingPath(_))));
}

#[test]
fn split_holds_out_the_tail() {
    let d = synth_cluttered(&small_cluttered(3), 25).unwrap();
    let (train, held) = d.split(0.1);
    assert_eq!((train.len(), held.len()), (22, 3));
    assert_eq!(held.image(0), d.image(22));
}

#[test]
fn tensors_and_pgm() {
    let d = synth_cluttered(&small_cluttered(3), 3).unwrap();
    let t: Tensor<f32> = to_tensor(&d, &[2, 0]).unwrap();
    assert_eq!(t.shape(), &[2, 1, 40, 40]);
    assert_eq!(t.data()[0], d.image(2)[0] as f32 / 255.0);
    assert!(to_tensor::<f32>(&d, &[3]).is_err());

    let bytes = pgm_bytes(&[0, 128, 255, 7, 8, 9], 2, 3).unwrap();
    assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
    assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 7, 8, 9]);
    assert!(pgm_bytes(&[0; 5], 2, 3).is_err());
    assert_eq!(normalize_to_u8(&[1.0, 3.0, 2.0]), vec![0, 255, 128]);
    assert_eq!(normalize_to_u8(&[2.0, 2.0]), vec![0, 0]);
}

#[test]
fn external_glyphs_replace_the_font() {
    let mut src = Dataset::new(8, 8, 1);
    for d in 0..10u8 {
        src.push(&[d * 20; 64], vec![d]).unwrap();
    }
    let set = GlyphSet::from_dataset(&src).unwrap();
    let data = synth_with_glyphs(&CanvasSpec::cluttered(40, 1), &set, 3).unwrap();
    assert_eq!(data.len(), 3);
    src.labels[0] = vec![1];
    assert!(GlyphSet::from_dataset(&src).is_err());
}

#[test]
fn random_crops_are_windows_of_the_source() {
    let data = synth_multidigit(&CanvasSpec::centred(40, 80, 4), 6).unwrap();
    let crops = data.random_crops(24, 48, 9).unwrap();
    assert_eq!((crops.len(), crops.height, crops.width), (6, 24, 48));
    assert_eq!(crops.labels, data.labels);
    for i in 0..data.len() {
        let src = data.image(i);
        let found = (0..=16).any(|top| {
            (0..=32).any(|left| {
                (0..24).all(|r| crops.image(i)[r * 48..(r + 1) * 48] == src[(top + r) * 80 + left..(top + r) * 80 + left + 48])
            })
        });
        assert!(found, "crop {i} is not a window of its source");
    }
    assert_eq!(crops, data.random_crops(24, 48, 9).unwrap());
    assert!(data.random_crops(41, 10, 9).is_err());
}
