mod common;

use common::{central_diff, random_cloud, rel_err, rng};
use proptest::prelude::*;
use rand::Rng;
use talksplat_core::audio::{AudioFeatureTrack, SmootherShape, SmootherWeights, KERNEL, LEAKY_SLOPE};
use talksplat_core::deform::{deform_head, deform_torso, DeformField, HIDDEN};
use talksplat_core::encoder::{EncoderConfig, TriPlaneHashEncoder};
use talksplat_core::math;
use talksplat_core::mlp::Mlp;
use talksplat_core::model::{Condition, DeformableModel};
use talksplat_core::raster::{render_forward, Pose, RenderOptions};

fn small_encoder() -> EncoderConfig {
    EncoderConfig { levels: 5, log2_table_size: 12, base_resolution: 16, max_resolution: 128, ..EncoderConfig::default() }
}

fn random_tables(seed: u64) -> TriPlaneHashEncoder {
    let mut r = rng(seed);
    let mut e = TriPlaneHashEncoder::zeros(small_encoder()).unwrap();
    for v in e.tables.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    e
}

#[test]
fn encoder_position_gradient_matches_finite_differences() {
    let enc = random_tables(1);
    let mut r = rng(2);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let p = [r.random_range(-0.9..0.9), r.random_range(-0.9..0.9), r.random_range(-0.9..0.9)];
        let up: Vec<f64> = (0..enc.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = |q: &[f64; 3]| enc.encode(q).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let mut out = vec![0.0; enc.output_dim()];
        let (rec, _) = enc.encode_recorded(&p, &mut out).unwrap();
        let mut tg = vec![0.0; enc.tables.len()];
        let dp = enc.encode_backward(&rec, &up, &mut tg).unwrap();
        for k in 0..3 {
            let h = 1e-7;
            // Skip coordinates within one step of a cell boundary at any level.
            let u = (p[k] + 1.0) / 2.0;
            if enc.resolutions().iter().any(|&res| {
                let pos = u * res as f64;
                (pos - pos.round()).abs() < 2.0 * h * res as f64
            }) {
                continue;
            }
            let n = central_diff(|v| { let mut q = p; q[k] = v; f(&q) }, p[k], h);
            worst = worst.max(rel_err(dp[k], n, 1e-6));
            checked += 1;
        }
    }
    assert!(checked > 100);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn encoder_zero_upstream_and_partition_of_unity() {
    let enc = random_tables(3);
    let mut r = rng(4);
    for _ in 0..20 {
        let p = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let mut out = vec![0.0; enc.output_dim()];
        let (rec, _) = enc.encode_recorded(&p, &mut out).unwrap();
        let mut tg = vec![0.0; enc.tables.len()];
        assert_eq!(enc.encode_backward(&rec, &vec![0.0; enc.output_dim()], &mut tg).unwrap(), [0.0; 3]);
        assert!(tg.iter().all(|v| *v == 0.0));
        // Per plane-level block the scattered weights sum to the upstream value.
        let up: Vec<f64> = (0..enc.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut per_block = vec![0.0; enc.output_dim()];
        enc.encode_backward_with(&rec, &up, |k, v| {
            let block = (0..enc.output_dim()).rev().find(|&b| enc.block_offset(b / 5, b % 5) <= k).unwrap();
            per_block[block] += v;
        })
        .unwrap();
        for b in 0..enc.output_dim() {
            assert!((per_block[b] - up[b]).abs() < 1e-12);
        }
    }
}

#[test]
fn encoder_cell_center_is_corner_mean() {
    let enc = random_tables(5);
    let res = enc.resolutions()[0] as f64;
    // Cell (3, 7) on xy, (7, 3) on yz, (3, 3) on xz at level 0.
    let u = [3.5 / res, 7.5 / res, 3.5 / res];
    let p = u.map(|v| v * 2.0 - 1.0);
    let out = enc.encode(&p).unwrap();
    let side = enc.resolutions()[0] + 1;
    let corner = |plane: usize, x: usize, y: usize| enc.tables[enc.block_offset(plane, 0) + y * side + x];
    let mean = |plane: usize, x: usize, y: usize| 0.25 * (corner(plane, x, y) + corner(plane, x + 1, y) + corner(plane, x, y + 1) + corner(plane, x + 1, y + 1));
    assert!((out[0] - mean(0, 3, 7)).abs() < 1e-6);
    assert!((out[5] - mean(1, 7, 3)).abs() < 1e-6);
    assert!((out[10] - mean(2, 3, 3)).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encoder_lipschitz_within_a_cell(p in prop::array::uniform3(-0.95f64..0.95), d in prop::array::uniform3(-1e-4f64..1e-4)) {
        let enc = random_tables(6);
        let table_max = enc.tables.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res_max = *enc.resolutions().last().unwrap() as f64;
        // |∂f/∂u| ≤ 2·res·max|table| per axis; u = (x+1)/2.
        let k = 2.0 * res_max * table_max * 0.5 * 2.0;
        let a = enc.encode(&p).unwrap();
        let q = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
        let b = enc.encode(&q).unwrap();
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= k * dist + 1e-12);
        }
    }
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut r = rng(7);
    let mut m = Mlp::new(&[6, 9, 7, 4], &mut r).unwrap();
    for v in m.params.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let x: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let up: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    let f = |m: &Mlp, x: &[f64]| m.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
    let (_, tape) = m.forward_recorded(&x).unwrap();
    let mut dp = vec![0.0; m.params.len()];
    let dx = m.backward(&tape, &up, &mut dp).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..m.params.len() {
        let n = central_diff(|v| { let mut mm = m.clone(); mm.params[i] = v; f(&mm, &x) }, m.params[i], 1e-6);
        worst = worst.max(rel_err(dp[i], n, 1e-6));
    }
    for i in 0..6 {
        let n = central_diff(|v| { let mut xx = x.clone(); xx[i] = v; f(&m, &xx) }, x[i], 1e-6);
        worst = worst.max(rel_err(dx[i], n, 1e-6));
    }
    assert!(worst < 1e-5, "{worst}");
}

fn field(cond: usize, seed: u64) -> DeformField {
    let mut r = rng(seed);
    DeformField::new(Some(small_encoder()), cond, &HIDDEN, &mut r).unwrap()
}

fn randomize_output(f: &mut DeformField, seed: u64, amp: f64) {
    let mut r = rng(seed);
    let n = f.mlp.params.len();
    for v in &mut f.mlp.params[n - 10 * (HIDDEN[1] + 1)..] {
        *v = r.random_range(-amp..amp);
    }
}

#[test]
fn zero_init_is_identity_and_renders_identically() {
    let mut r = rng(8);
    let mut cloud = random_cloud(&mut r, 20, 1, 0.6, (0.05, 0.2));
    for q in cloud.rotations.iter_mut() {
        *q = math::quat_normalize(q);
    }
    let f = field(5, 9);
    let out = deform_head(&cloud, &f, &[0.1, 0.2, 0.3, 0.4], 0.5).unwrap();
    assert_eq!(out.means, cloud.means);
    assert_eq!(out.scales_raw, cloud.scales_raw);
    assert_eq!(out.sh, cloud.sh);
    assert_eq!(out.opacities_raw, cloud.opacities_raw);
    // Renormalizing an already unit quaternion may move the last bit.
    for (a, b) in out.rotations.iter().zip(&cloud.rotations) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15));
    }
    let cam = common::camera(32, 32);
    let a = render_forward(&cloud, &cam, &[0.0; 3], &RenderOptions::default()).unwrap();
    let b = render_forward(&out, &cam, &[0.0; 3], &RenderOptions::default()).unwrap();
    assert!(a.rgb.iter().zip(&b.rgb).all(|(x, y)| (x - y).abs() <= 1e-7));
}

#[test]
fn constant_field_shifts_every_mean() {
    let mut r = rng(10);
    let cloud = random_cloud(&mut r, 10, 1, 0.6, (0.05, 0.2));
    let mut f = field(2, 11);
    // Zero everything in the last layer except the Δx bias.
    let n = f.mlp.params.len();
    f.mlp.params[n - 10] = 0.1;
    let out = deform_head(&cloud, &f, &[0.0], 0.0).unwrap();
    for i in 0..cloud.len() {
        assert_eq!(out.means[i], [cloud.means[i][0] + 0.1, cloud.means[i][1], cloud.means[i][2]]);
    }
    assert_eq!(out.sh, cloud.sh);
    assert_eq!(out.opacities_raw, cloud.opacities_raw);
}

#[test]
fn deformation_invariants_on_random_fields() {
    let mut r = rng(12);
    for seed in 0..5 {
        let cloud = random_cloud(&mut r, 30, 2, 0.8, (0.05, 0.3));
        let mut f = field(84, 100 + seed);
        randomize_output(&mut f, 200 + seed, 0.3);
        let p1 = Pose::look_at(&[0.1, 0.0, -1.0], &[0.0; 3], &[0.0, -1.0, 0.0]);
        let p2 = Pose { translation: [0.2, 0.1, 0.0], ..p1 };
        let a = deform_torso(&cloud, &f, &p1).unwrap();
        let b = deform_torso(&cloud, &f, &p2).unwrap();
        assert_eq!(a, deform_torso(&cloud, &f, &p1).unwrap());
        assert_ne!(a.means, b.means);
        for d in [&a, &b] {
            assert_eq!(d.sh, cloud.sh);
            assert_eq!(d.opacities_raw, cloud.opacities_raw);
            assert!(d.rotations.iter().all(|q| (math::quat_norm(q) - 1.0).abs() < 1e-9));
        }
    }
    let f = field(84, 1);
    let bad = Pose { rotation: [2.0, 0.0, 0.0, 0.0], translation: [0.0; 3] };
    assert!(deform_torso(&random_cloud(&mut r, 2, 0, 0.5, (0.1, 0.2)), &f, &bad).is_err());
    assert!(deform_head(&random_cloud(&mut r, 2, 0, 0.5, (0.1, 0.2)), &f, &[0.0; 3], 0.0).is_err());
}

#[test]
fn end_to_end_gradients_small_scene() {
    // 3 Gaussians, 16×16, pose-conditioned field.
    let mut r = rng(14);
    let cloud = random_cloud(&mut r, 3, 1, 0.3, (0.25, 0.45));
    let mut f = field(84, 15);
    randomize_output(&mut f, 16, 0.05);
    if let Some(e) = f.encoder.as_mut() {
        for v in e.tables.iter_mut() {
            *v = r.random_range(-0.3..0.3);
        }
    }
    let model = DeformableModel { cloud, field: Some(f), smoother: None };
    let pose = Pose::look_at(&[0.3, 0.1, -1.0], &[0.0; 3], &[0.0, -1.0, 0.0]);
    let cam = common::camera(16, 16);
    let w: Vec<f64> = (0..16 * 16 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let eval = |m: &DeformableModel| {
        let o = m.forward(&Condition::Pose(&pose), &cam, &[0.1, 0.1, 0.1], true).unwrap();
        (o.output.rgb.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>(), o.output.contributor_signature())
    };
    let fwd = model.forward(&Condition::Pose(&pose), &cam, &[0.1, 0.1, 0.1], true).unwrap();
    let g = model.backward(&fwd, &w, None).unwrap();
    let (_, sig) = eval(&model);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut check = |analytic: f64, set: &dyn Fn(&mut DeformableModel, f64), x0: f64| {
        let mut m = model.clone();
        set(&mut m, x0 + h);
        let (fp, sp) = eval(&m);
        set(&mut m, x0 - h);
        let (fm, sm) = eval(&m);
        set(&mut m, x0);
        let (f0, _) = eval(&m);
        let (fw, bw) = ((fp - f0) / h, (f0 - fm) / h);
        if sp != sig || sm != sig || rel_err(fw, bw, 1e-5) > 1e-3 {
            return;
        }
        worst = worst.max(rel_err(analytic, (fp - fm) / (2.0 * h), 1e-5));
        checked += 1;
    };
    for i in 0..3 {
        for k in 0..3 {
            check(g.cloud.means[i][k], &|m, v| m.cloud.means[i][k] = v, model.cloud.means[i][k]);
            check(g.cloud.scales_raw[i][k], &|m, v| m.cloud.scales_raw[i][k] = v, model.cloud.scales_raw[i][k]);
        }
        for k in 0..4 {
            check(g.cloud.rotations[i][k], &|m, v| m.cloud.rotations[i][k] = v, model.cloud.rotations[i][k]);
        }
    }
    let f = model.field.as_ref().unwrap();
    let top = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
        idx.truncate(25);
        idx
    };
    for i in top(&g.mlp) {
        check(g.mlp[i], &|m, v| m.field.as_mut().unwrap().mlp.params[i] = v, f.mlp.params[i]);
    }
    for i in top(&g.tables) {
        check(g.tables[i], &|m, v| m.field.as_mut().unwrap().encoder.as_mut().unwrap().tables[i] = v, f.encoder.as_ref().unwrap().tables[i]);
    }
    assert!(checked > 60, "{checked}");
    assert!(worst < 1e-3, "{worst}");
}

/// Straight-line smoother: explicit loops with different indexing.
fn reference_smoother(w: &SmootherWeights, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let s = *w.shape();
    let (t_len, c, d, da) = (s.window, s.channels, s.input_dim, s.output_dim);
    let mut off = 0;
    let mut next = |n: usize| {
        let r = w.params[off..off + n].to_vec();
        off += n;
        r
    };
    let conv = |input: &Vec<Vec<f64>>, wt: &[f64], b: &[f64], cin: usize| -> Vec<Vec<f64>> {
        (0..t_len)
            .map(|t| {
                (0..c)
                    .map(|o| {
                        let mut acc = b[o];
                        for k in 0..KERNEL {
                            let src = t as isize + k as isize - 1;
                            if (0..t_len as isize).contains(&src) {
                                for i in 0..cin {
                                    acc += wt[o * cin * KERNEL + i * KERNEL + k] * input[src as usize][i];
                                }
                            }
                        }
                        if acc > 0.0 { acc } else { LEAKY_SLOPE * acc }
                    })
                    .collect()
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = (0..t_len).map(|t| x[t * d..(t + 1) * d].to_vec()).collect();
    let (w0, b0) = (next(c * d * KERNEL), next(c));
    let h0 = conv(&rows, &w0, &b0, d);
    let (w1, b1) = (next(c * c * KERNEL), next(c));
    let h = conv(&h0, &w1, &b1, c);
    let linear = |input: &Vec<Vec<f64>>, wt: &[f64], b: &[f64], out: usize| -> Vec<Vec<f64>> {
        input.iter().map(|row| (0..out).map(|o| b[o] + (0..c).map(|i| wt[o * c + i] * row[i]).sum::<f64>()).collect()).collect()
    };
    let (wq, bq) = (next(c * c), next(c));
    let (wk, bk) = (next(c * c), next(c));
    let (wv, bv) = (next(c * c), next(c));
    let (wo, bo) = (next(da * c), next(da));
    let (q, k, v) = (linear(&h, &wq, &bq, c), linear(&h, &wk, &bk, c), linear(&h, &wv, &bv, c));
    let mut attn = vec![vec![0.0; t_len]; t_len];
    for i in 0..t_len {
        let logits: Vec<f64> = (0..t_len).map(|j| (0..c).map(|m| q[i][m] * k[j][m]).sum::<f64>() / (c as f64).sqrt()).collect();
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        attn[i] = e.iter().map(|v| v / z).collect();
    }
    let z: Vec<Vec<f64>> = (0..t_len).map(|i| (0..c).map(|m| (0..t_len).map(|j| attn[i][j] * v[j][m]).sum()).collect()).collect();
    let o = linear(&z, &wo, &bo, da);
    let f = (0..da).map(|dd| o.iter().map(|row| row[dd]).sum::<f64>() / t_len as f64).collect();
    (f, attn)
}

fn smoother(seed: u64, d: usize) -> SmootherWeights {
    SmootherWeights::new(SmootherShape::new(d), &mut rng(seed)).unwrap()
}

fn random_track(seed: u64, t: usize, d: usize) -> AudioFeatureTrack {
    let mut r = rng(seed);
    AudioFeatureTrack::new(t, d, (0..t * d).map(|_| r.random_range(-2.0f32..2.0)).collect(), "test").unwrap()
}

#[test]
fn smoother_matches_reference_and_attention_is_a_simplex() {
    for seed in 0..5 {
        let w = smoother(seed, 29);
        let track = random_track(seed + 50, 40, 29);
        for center in [0, 7, 20, 39] {
            let x = w.gather(&track, center).unwrap();
            let (f, tape) = w.forward_recorded(&x).unwrap();
            let (f_ref, attn_ref) = reference_smoother(&w, &x);
            for (a, b) in f.iter().zip(&f_ref) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            let attn = SmootherWeights::attention(&tape);
            for (i, row) in attn_ref.iter().enumerate() {
                let got = &attn[i * 16..(i + 1) * 16];
                assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(got.iter().all(|v| *v >= 0.0));
                for (a, b) in got.iter().zip(row) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn smoother_uniform_attention_and_time_invariance() {
    let mut w = smoother(1, 3);
    for range in w.query_key_ranges() {
        w.params[range].fill(0.0);
    }
    let track = random_track(2, 30, 3);
    let x = w.gather(&track, 10).unwrap();
    let (_, tape) = w.forward_recorded(&x).unwrap();
    assert!(SmootherWeights::attention(&tape).iter().all(|v| (v - 1.0 / 16.0).abs() < 1e-15));

    let w = smoother(3, 3);
    let constant = AudioFeatureTrack::new(20, 3, [0.5f32, -1.0, 2.0].repeat(20), "c").unwrap();
    let first = w.smooth_window(&constant, 0).unwrap();
    for c in 1..20 {
        assert_eq!(w.smooth_window(&constant, c).unwrap(), first);
    }

    // Shifting the track and the center together keeps interior outputs.
    let track = random_track(4, 60, 3);
    let shifted = AudioFeatureTrack::new(55, 3, track.data()[5 * 3..].to_vec(), "s").unwrap();
    for c in 20..40 {
        assert_eq!(w.smooth_window(&track, c).unwrap(), w.smooth_window(&shifted, c - 5).unwrap());
    }
}

#[test]
fn smoother_gradients_match_finite_differences() {
    let w = smoother(5, 6);
    let track = random_track(6, 25, 6);
    let mut r = rng(7);
    let up: Vec<f64> = (0..w.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
    let x = w.gather(&track, 12).unwrap();
    let f = |ww: &SmootherWeights| ww.forward_recorded(&x).unwrap().0.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
    let (_, tape) = w.forward_recorded(&x).unwrap();
    let mut g = vec![0.0; w.params.len()];
    w.backward(&tape, &up, &mut g).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in (0..w.params.len()).step_by(7) {
        let h = 1e-6;
        let mut ww = w.clone();
        ww.params[i] += h;
        let fp = f(&ww);
        ww.params[i] -= 2.0 * h;
        let fm = f(&ww);
        let fwd = (fp - f(&w)) / h;
        let bwd = (f(&w) - fm) / h;
        if rel_err(fwd, bwd, 1e-6) > 1e-4 {
            continue;
        }
        worst = worst.max(rel_err(g[i], (fp - fm) / (2.0 * h), 1e-6));
        checked += 1;
    }
    assert!(checked > 500, "{checked}");
    assert!(worst < 1e-4, "{worst}");
}
