use seqbox_demo::{box_iou, dim_curve, footprint, Walk};

const UNIT: [f64; 7] = [0.0, 0.0, 4.0, 1.0, 1.0, 1.0, 0.0];

#[test]
fn iou_of_shifted_unit_cubes() {
    assert!((box_iou(&UNIT, &UNIT).unwrap() - 1.0).abs() < 1e-12);
    // half overlap along x: intersection 0.5, union 1.5
    let shifted = [0.5, 0.0, 4.0, 1.0, 1.0, 1.0, 0.0];
    assert!((box_iou(&UNIT, &shifted).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!(box_iou(&UNIT, &[0.0; 6]).is_err());
    assert!(box_iou(&UNIT, &[0.0, 0.0, 4.0, -1.0, 1.0, 1.0, 0.0]).is_err());
}

#[test]
fn footprint_spans_the_box_extent() {
    let fp = footprint(&[1.0, 0.0, 5.0, 2.0, 1.0, 4.0, 0.0]).unwrap();
    let xs: Vec<f64> = fp.iter().step_by(2).copied().collect();
    let zs: Vec<f64> = fp.iter().skip(1).step_by(2).copied().collect();
    let span = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    assert!((span(&xs) - 2.0).abs() < 1e-12 && (span(&zs) - 4.0).abs() < 1e-12);
    // a quarter turn swaps the extents
    let fp = footprint(&[1.0, 0.0, 5.0, 2.0, 1.0, 4.0, std::f64::consts::FRAC_PI_2]).unwrap();
    let xs: Vec<f64> = fp.iter().step_by(2).copied().collect();
    assert!((span(&xs) - 4.0).abs() < 1e-9);
}

#[test]
fn dim_curve_is_smallest_near_either_assignment() {
    let c = dim_curve([1.0, 1.0, 2.0], 1.0, 2.0, 0.2, 3.0, 141).unwrap();
    assert_eq!(c.len(), 3 * 141);
    let (i, _) = c.chunks(3).enumerate().min_by(|a, b| a.1[1].total_cmp(&b.1[1])).unwrap();
    assert!((c[3 * i] - 1.0).abs() < 0.03);
    // the gradient column changes sign across the minimum
    assert!(c[2] < 0.0 && c[c.len() - 1] > 0.0);
    assert!(dim_curve([1.0, 1.0, 1.0], 1.0, 1.0, 1.0, 0.5, 10).is_err());
}

#[test]
fn walk_frames_and_annotations() {
    let w = Walk::new(3, 4, 6).unwrap();
    assert_eq!(w.clip.len(), 6);
    let k = w.clip.frames[0].intrinsics;
    let px = w.rgba(0).unwrap();
    assert_eq!(px.len(), (k.width * k.height * 4) as usize);
    assert!(px.chunks(4).all(|p| p[3] == 255));
    for i in 0..6 {
        for o in w.objects(i).unwrap() {
            assert_eq!(o.corners.len(), 8);
            assert!(o.depth > 0.0);
        }
    }
    assert!(w.rgba(6).is_err());
    assert_eq!(Walk::new(3, 4, 6).unwrap().clip, w.clip);
}
