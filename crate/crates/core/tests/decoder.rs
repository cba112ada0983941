use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqbox::annotate::{annotate_clip, AnnotationConfig};
use seqbox::clip::SequenceClip;
use seqbox::decoder::*;
use seqbox::geometry::{Rect, RigidTransform};
use seqbox::scene::{generate_scene, record_sequence, segment_clips, CameraConfig, SceneConfig};

fn weights(mode: MaskMode, seed: u64) -> DecoderWeights {
    DecoderWeights::new(&DecoderConfig { dim: 16, mask: mode, seed }).unwrap()
}

fn demo_clip(frames: usize) -> SequenceClip {
    let scene = generate_scene(&SceneConfig::default(), 4).unwrap();
    let raw = record_sequence("s", "sc", &scene, &CameraConfig::default(), frames, 4).unwrap();
    let clip = segment_clips(&raw, frames, frames).unwrap().remove(0);
    annotate_clip(&clip, &scene, &AnnotationConfig::default()).unwrap()
}

#[test]
fn mask_enumeration() {
    let m = build_causal_mask(3, 2);
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(m.allows(i, j), j / 2 <= i / 2);
        }
    }
}

#[test]
fn attention_examples() {
    let q = Matrix::from_vec(1, 2, vec![0.3, -1.0]).unwrap();
    let k = Matrix::from_vec(3, 2, vec![1.0, 2.0, 0.5, 0.5, -1.0, 0.0]).unwrap();
    let v = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let only_middle = CausalMask { rows: 1, cols: 3, allow: vec![false, true, false] };
    assert_eq!(attention(&q, &k, &v, &only_middle).unwrap().data, vec![3.0, 4.0]);

    let same = Matrix::from_vec(3, 2, vec![0.2, 0.1, 0.2, 0.1, 0.2, 0.1]).unwrap();
    let all = CausalMask { rows: 1, cols: 3, allow: vec![true; 3] };
    let out = attention(&q, &same, &v, &all).unwrap();
    assert!((out.data[0] - 3.0).abs() < 1e-12 && (out.data[1] - 4.0).abs() < 1e-12);

    let partial = CausalMask { rows: 1, cols: 3, allow: vec![true, true, false] };
    let mut v2 = v.clone();
    v2.row_mut(2).copy_from_slice(&[1e9, -7.0]);
    assert_eq!(attention(&q, &k, &v, &partial).unwrap(), attention(&q, &k, &v2, &partial).unwrap());

    let none = CausalMask { rows: 1, cols: 3, allow: vec![false; 3] };
    assert_eq!(attention(&q, &k, &v, &none).unwrap().data, vec![0.0, 0.0]);

    let bad = Matrix::from_vec(1, 3, vec![0.0; 3]).unwrap();
    assert!(matches!(attention(&bad, &k, &v, &all), Err(seqbox::Error::DimMismatch(_))));
}

#[test]
fn zero_output_weights_give_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cab = CabWeights::random(16, &mut rng);
    cab.zero_outputs();
    let inputs = DecoderInputs::random(3, 2, 4, 4, 16, &mut rng);
    let (t, e) = cab_forward(&inputs.tokens, &inputs.e_img, MaskMode::FrameBlock, &cab).unwrap();
    assert_eq!(t, inputs.tokens);
    assert_eq!(e, inputs.e_img);
}

#[test]
fn decoder_shapes_and_determinism() {
    let w = weights(MaskMode::FrameBlock, 1);
    let inputs = DecoderInputs::random(4, 3, 5, 7, 16, &mut ChaCha8Rng::seed_from_u64(3));
    let a = decoder_forward(&inputs.tokens, &inputs.e_img, &inputs.e_geo, &w).unwrap();
    assert_eq!((a.states.frames, a.states.per_frame, a.states.dim()), (4, 3, 16));
    assert_eq!((a.g_control.frames, a.g_control.per_frame), (4, 7));
    assert_eq!(a, decoder_forward(&inputs.tokens, &inputs.e_img, &inputs.e_geo, &weights(MaskMode::FrameBlock, 1)).unwrap());
    let h = heads_forward(&a.states, &w.heads);
    for p in &h.poses {
        let n: f64 = p.quaternion.iter().map(|q| q * q).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert!(p.fov > 0.0);
    }
    assert!(h.boxes.iter().flatten().all(|b| b.dims.x > 0.0 && b.dims.y > 0.0 && b.dims.z > 0.0 && b.center.is_finite()));

    let short = DecoderInputs::random(3, 3, 5, 6, 16, &mut ChaCha8Rng::seed_from_u64(3));
    assert!(decoder_forward(&inputs.tokens, &short.e_img, &inputs.e_geo, &w).is_err());
}

#[test]
fn single_frame_is_unmasked_within_frame() {
    // with one frame the causal mask allows everything, so permuting the
    // valid tokens permutes the outputs
    let w = weights(MaskMode::FrameBlock, 5);
    let mut inputs = DecoderInputs::random(1, 3, 4, 4, 16, &mut ChaCha8Rng::seed_from_u64(8));
    inputs.tokens.valid = vec![true; 3];
    let mut swapped = inputs.clone();
    let (r0, r2) = (inputs.tokens.values.row(0).to_vec(), inputs.tokens.values.row(2).to_vec());
    swapped.tokens.values.row_mut(0).copy_from_slice(&r2);
    swapped.tokens.values.row_mut(2).copy_from_slice(&r0);
    let a = decoder_forward(&inputs.tokens, &inputs.e_img, &inputs.e_geo, &w).unwrap().states;
    let b = decoder_forward(&swapped.tokens, &swapped.e_img, &swapped.e_geo, &w).unwrap().states;
    for (x, y) in a.values.row(0).iter().zip(b.values.row(2)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn causality_and_padding_for_every_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in [MaskMode::FrameBlock, MaskMode::TokenCausal] {
        let w = weights(mode, 7);
        for block in Block::ALL {
            for _ in 0..10 {
                let frames = rng.random_range(2..=5);
                let inputs = DecoderInputs::random(frames, rng.random_range(1..=3), 3, 4, 16, &mut rng);
                let t = rng.random_range(0..frames - 1);
                assert!(causality_trial(block, &inputs, &w, t, &mut rng).unwrap() <= 1e-6, "{block:?} {mode:?}");
                assert!(padding_trial(block, &inputs, &w, &mut rng).unwrap() <= 1e-6, "{block:?} {mode:?}");
            }
        }
    }
}

#[test]
fn causality_trial_detects_leaks() {
    // a mask that lets frame 0 see frame 1 must be caught
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = weights(MaskMode::FrameBlock, 2);
    let inputs = DecoderInputs::random(2, 2, 3, 3, 16, &mut rng);
    let (q, k) = (&inputs.tokens.values, &inputs.e_img.values);
    let full = CausalMask { rows: q.rows, cols: k.rows, allow: vec![true; q.rows * k.rows] };
    let causal = CausalMask::frame_block(2, 2, 3);
    let mut perturbed = inputs.e_img.values.clone();
    perturbed.row_mut(4).iter_mut().for_each(|v| *v += 1.0);
    let a = w.cab_a.token_to_embed.forward(q, k, &full).unwrap();
    let b = w.cab_a.token_to_embed.forward(q, &perturbed, &full).unwrap();
    assert!(a.max_abs_diff_rows(&b, |i| i < 2) > 1e-3);
    let a = w.cab_a.token_to_embed.forward(q, k, &causal).unwrap();
    let b = w.cab_a.token_to_embed.forward(q, &perturbed, &causal).unwrap();
    assert_eq!(a.max_abs_diff_rows(&b, |i| i < 2), 0.0);
}

#[test]
fn padding_queries() {
    let mut clip = demo_clip(3);
    let template = clip.frames.iter().flat_map(|f| f.objects.iter()).next().expect("demo scene has an annotation").clone();
    for (f, count) in clip.frames.iter_mut().zip([2usize, 3, 1]) {
        f.objects = (0..count).rev().map(|i| seqbox::clip::ObjectAnnotation { instance_id: 10 + i as u32, ..template.clone() }).collect();
    }
    let q = pad_queries(&clip, 16).unwrap();
    assert_eq!(q.tokens.per_frame, 3);
    let counts: Vec<usize> = q.loss_mask().iter().map(|f| f.iter().filter(|m| **m).count()).collect();
    assert_eq!(counts, vec![2, 3, 1]);
    assert_eq!(q.ids[1], vec![Some(10), Some(11), Some(12)]);
    assert_eq!(q.ids[0][2], None);
    assert!(q.tokens.values.row(2).iter().all(|v| *v == 0.0));

    for f in &mut clip.frames {
        f.objects.truncate(1);
    }
    clip.frames[2].objects.clear();
    let q = pad_queries(&clip, 16).unwrap();
    assert_eq!(q.tokens.per_frame, 1);
    assert_eq!(q.loss_mask(), vec![vec![true], vec![true], vec![false]]);
}

#[test]
fn embeddings_and_prompts() {
    let clip = demo_clip(3);
    let (img, geo) = clip_embeddings(&clip, 4, 16).unwrap();
    assert_eq!((img.frames, img.per_frame, img.dim()), (3, 16, 16));
    assert_eq!(geo.per_frame, 32);
    assert!(img.values.data.iter().chain(&geo.values.data).all(|v| v.is_finite()));
    let k = seqbox::geometry::CameraIntrinsics::default();
    let a = prompt_embedding(&Rect::new(0.0, 0.0, 64.0, 64.0), &k, 16);
    assert_eq!(a.len(), 16);
    assert!((a[2] - (std::f64::consts::PI * 0.5).sin()).abs() < 1e-12);
    assert_ne!(a, prompt_embedding(&Rect::new(0.0, 0.0, 64.0, 65.0), &k, 16));
}

#[test]
fn cropping() {
    let clip = demo_clip(8);
    let a = crop_sequence(&clip, 5, 3).unwrap();
    assert_eq!(a, crop_sequence(&clip, 5, 3).unwrap());
    assert!((1..=5).contains(&a.len()));
    assert_eq!(a.frames[0].pose, RigidTransform::identity());
    let start = a.frames[0].source_index - clip.frames[0].source_index;
    for (i, f) in a.frames.iter().enumerate() {
        assert_eq!(f.source_index, clip.frames[start + i].source_index);
    }
    let lens: std::collections::BTreeSet<usize> = (0..200).map(|s| crop_sequence(&clip, 5, s).unwrap().len()).collect();
    assert_eq!(lens, (1..=5).collect());

    let single = SequenceClip { frames: clip.frames[..1].to_vec(), ..clip.clone() };
    assert_eq!(crop_sequence(&single, 4, 0).unwrap(), single);
    assert!(crop_sequence(&clip, 0, 0).is_err());
}

#[test]
fn gradient_through_decoder() {
    for seed in 0..2 {
        let g = decoder_grad_check(seed, 1e-5).unwrap();
        assert!(g.max_rel_err() < 1e-3, "seed {seed}: {}", g.max_rel_err());
        assert_eq!(g.analytic.len(), 3 * 2 * 16);
    }
}

#[test]
fn demo_report_passes() {
    let cfg = DemoConfig { trials: 6, grad_seeds: 1, ..Default::default() };
    let report = decoder_demo(&cfg).unwrap();
    let text = report.format();
    assert!(report.passed(), "{text}");
    assert!(text.contains("causality decoder"));
    assert!(text.ends_with("result: PASS\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn attention_rows_are_stochastic(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Matrix::from_vec(rows, 4, (0..rows * 4).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let k = Matrix::from_vec(cols, 4, (0..cols * 4).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let mask = CausalMask { rows, cols, allow: (0..rows * cols).map(|_| rng.random_bool(0.6)).collect() };
        let p = attention_probs(&q, &k, &mask).unwrap();
        for i in 0..rows {
            let sum: f64 = p.row(i).iter().sum();
            let any = (0..cols).any(|j| mask.allows(i, j));
            let ok = if any { (sum - 1.0).abs() < 1e-9 } else { sum == 0.0 };
            prop_assert!(ok, "row {} sums to {}", i, sum);
            for j in 0..cols {
                prop_assert!(mask.allows(i, j) || p.get(i, j) == 0.0);
            }
        }
    }
}
