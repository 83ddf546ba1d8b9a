use partfuse::data::{generate_shape, LabeledShape, ShapeFamily, ShapeSpec};
use partfuse::fusion::{fuse_cross_level, fuse_single_level, ProbMatrix};
use partfuse::model::*;
use partfuse::numerics::Matrix;
use partfuse::FusionMode;

fn shape(points: usize, seed: u64) -> LabeledShape {
    let full = generate_shape(&ShapeSpec::new(ShapeFamily::Lamp { heads: 2 }, 256), seed).unwrap();
    let idx: Vec<usize> = (0..points)
        .map(|i| (i * 97 + seed as usize) % 256)
        .collect();
    full.select(&idx).unwrap()
}

fn config(mode: FusionMode) -> ModelConfig {
    ModelConfig {
        fusion: mode,
        precision: Precision::F64,
        feature_dim: 8,
        encoder_width: 8,
        sem_hidden: 6,
        offset_hidden: 6,
        ..ModelConfig::default()
    }
}

fn close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) -> bool {
    a.max_abs_diff(b).unwrap() <= tol
}

#[test]
fn forward_is_permutation_equivariant() {
    let s = shape(40, 1);
    for mode in FusionMode::ALL {
        let c = config(mode);
        let p = init_params(&c, 7).unwrap();
        let perm: Vec<usize> = (0..40).map(|i| (i * 17 + 5) % 40).collect();
        let pts: Vec<_> = perm.iter().map(|&i| s.points[i]).collect();
        let a = forward(&p, &c, &s.points).unwrap();
        let b = forward(&p, &c, &pts).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert!(
                close(&la.o_inst.select_rows(&perm), &lb.o_inst, 1e-12),
                "{mode}"
            );
            assert!(
                close(&la.o_region.select_rows(&perm), &lb.o_region, 1e-12),
                "{mode}"
            );
            assert!(
                close(&la.f_ins.select_rows(&perm), &lb.f_ins, 1e-12),
                "{mode}"
            );
            assert!(
                close(
                    &la.p_sem.matrix().select_rows(&perm),
                    lb.p_sem.matrix(),
                    1e-12
                ),
                "{mode}"
            );
        }
    }
}

#[test]
fn single_point_gives_valid_probabilities() {
    let c = config(FusionMode::Cross);
    let p = init_params(&c, 0).unwrap();
    let out = forward(&p, &c, &[[0.1, -0.2, 0.3]]).unwrap();
    for (l, &classes) in out.levels.iter().zip(&c.classes) {
        assert_eq!(l.p_sem.matrix().shape(), (1, classes));
        let s: f64 = l.p_sem.matrix().as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn empty_point_set_is_rejected() {
    let c = config(FusionMode::None);
    let p = init_params(&c, 0).unwrap();
    assert!(forward(&p, &c, &[]).is_err());
}

/// Parameters of a `none` model taken from a fused one: the offset head
/// keeps only its `F` rows and the first per-level encoder becomes the
/// shared one.
fn transplant(from: &ModelParams, from_cfg: &ModelConfig, to_cfg: &ModelConfig) -> ModelParams {
    let l = from_cfg.feature_dim;
    let drop = from_cfg.fusion.fused_width(l, from_cfg.levels()) - l - 3;
    let named = param_layout(to_cfg)
        .into_iter()
        .map(|(name, r, c)| {
            let src = match (name.strip_prefix("enc."), from_cfg.fusion) {
                (Some(rest), FusionMode::Single) => format!("enc1.{rest}"),
                _ => name.clone(),
            };
            let t = from.get(&src).unwrap();
            let t = if t.rows() == r {
                t.clone()
            } else {
                Matrix::from_fn(r, c, |i, j| t[(i + drop, j)])
            };
            (name, t)
        })
        .collect();
    ModelParams::from_named(named).unwrap()
}

#[test]
fn zero_fusion_weights_reduce_to_no_fusion() {
    let s = shape(30, 2);
    let none_cfg = config(FusionMode::None);
    let none = init_params(&none_cfg, 3).unwrap();
    let base = forward(&none, &none_cfg, &s.points).unwrap();
    for mode in [FusionMode::Single, FusionMode::Multi, FusionMode::Cross] {
        let cfg = config(mode);
        let agg = cfg.fusion.fused_width(8, 3) - 8 - 3;
        let named = param_layout(&cfg)
            .into_iter()
            .map(|(name, r, c)| {
                let src = if name.starts_with("enc") {
                    format!("enc{}", &name[name.find('.').unwrap()..])
                } else {
                    name.clone()
                };
                let t = none.get(&src).unwrap();
                let t = if t.rows() == r {
                    t.clone()
                } else {
                    Matrix::from_fn(r, c, |i, j| {
                        if (agg..agg + 8).contains(&i) {
                            t[(i - agg, j)]
                        } else {
                            0.0
                        }
                    })
                };
                (name, t)
            })
            .collect();
        let params = ModelParams::from_named(named).unwrap();
        let out = forward(&params, &cfg, &s.points).unwrap();
        for (a, b) in base.levels.iter().zip(&out.levels) {
            assert!(
                close(&a.f_ins, &b.f_ins, 1e-12),
                "{mode} f_ins {:?}",
                a.f_ins.max_abs_diff(&b.f_ins)
            );
            assert!(
                close(&a.o_inst, &b.o_inst, 1e-12),
                "{mode} {:?}",
                a.o_inst.max_abs_diff(&b.o_inst)
            );
            assert!(close(&a.o_region, &b.o_region, 1e-12), "{mode}");
        }
        let back = transplant(&params, &cfg, &none_cfg);
        assert_eq!(back, none);
    }
}

#[test]
fn offset_head_matches_explicit_fused_features() {
    let s = shape(25, 4);
    for mode in [FusionMode::Single, FusionMode::Multi, FusionMode::Cross] {
        for one_hot in [false, true] {
            let c = ModelConfig {
                one_hot,
                ..config(mode)
            };
            let p = init_params(&c, 5).unwrap();
            let out = forward(&p, &c, &s.points).unwrap();
            let pos = positions_matrix::<f64>(&s.points);
            let probs: Vec<ProbMatrix<f64>> = out
                .levels
                .iter()
                .map(|l| {
                    if one_hot {
                        ProbMatrix::new(partfuse::fusion::one_hot_projection(l.p_sem.matrix()))
                            .unwrap()
                    } else {
                        l.p_sem.clone()
                    }
                })
                .collect();
            for (k, level) in out.levels.iter().enumerate() {
                let fused = if mode == FusionMode::Cross {
                    let feats: Vec<Matrix<f64>> =
                        out.levels.iter().map(|l| l.f_ins.clone()).collect();
                    fuse_cross_level(&probs, &feats, &pos)
                        .unwrap()
                        .swap_remove(k)
                } else {
                    fuse_single_level(&probs[k], &level.f_ins, &pos).unwrap()
                };
                let name = format!("l{}", k + 1);
                let w1 = p.get(&format!("{name}.off.w1")).unwrap();
                let b1 = p.get(&format!("{name}.off.b1")).unwrap();
                let mut h = fused.matmul(w1).unwrap();
                for r in 0..h.rows() {
                    for (x, &b) in h.row_mut(r).iter_mut().zip(b1.as_slice()) {
                        *x = (*x + b).max(0.0);
                    }
                }
                let mut o = h.matmul(p.get(&format!("{name}.oi.w")).unwrap()).unwrap();
                let b = p.get(&format!("{name}.oi.b")).unwrap();
                for r in 0..o.rows() {
                    for (x, &y) in o.row_mut(r).iter_mut().zip(b.as_slice()) {
                        *x += y;
                    }
                }
                assert!(close(&o, &level.o_inst, 1e-10), "{mode} one_hot={one_hot}");
            }
        }
    }
}

#[test]
fn semantic_loss_examples() {
    let uniform = ProbMatrix::new(Matrix::filled(4, 5, 0.2)).unwrap();
    assert!((loss_semantic(&uniform, &[1, 2, 3, 5]).unwrap() - 5f64.ln()).abs() < 1e-12);
    let hot = ProbMatrix::new(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
    assert_eq!(loss_semantic(&hot, &[2, 1]).unwrap(), 0.0);
    let p = ProbMatrix::new(Matrix::from_rows(&[[0.7, 0.3]]).unwrap()).unwrap();
    assert!((loss_semantic(&p, &[1]).unwrap() - 0.356675).abs() < 1e-6);
    assert!(loss_semantic(&p, &[3]).is_err());
    assert!(loss_semantic(&p, &[0]).is_err());
}

#[test]
fn offset_loss_examples() {
    let o = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 3.0, 4.0]]).unwrap();
    assert_eq!(loss_offset(&o, &[[0.0; 3], [0.0; 3]]).unwrap(), 3.0);
    assert_eq!(
        loss_offset(&o, &[[1.0, 0.0, 0.0], [0.0, 3.0, 4.0]]).unwrap(),
        0.0
    );
    let one = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
    assert_eq!(loss_offset(&one, &[[0.0; 3]]).unwrap(), 1.0);
}

#[test]
fn total_loss_is_sum_of_terms() {
    let s = shape(20, 6);
    let c = config(FusionMode::Cross);
    let p = init_params(&c, 1).unwrap();
    let out = forward(&p, &c, &s.points).unwrap();
    let mut sum = 0.0;
    for (o, l) in out.levels.iter().zip(&s.levels) {
        sum += loss_semantic(&o.p_sem, &l.sem).unwrap();
        sum += loss_offset(&o.o_inst, &l.inst_offset).unwrap();
        sum += loss_offset(&o.o_region, &l.region_offset).unwrap();
    }
    let total = total_loss(&out, &s).unwrap();
    assert!((total - sum).abs() < 1e-12);
    let (breakdown, _) = loss_and_gradient(&p, &c, &s).unwrap();
    assert!((breakdown.total() - total).abs() < 1e-10);
}

#[test]
fn identical_levels_scale_the_loss() {
    let s = shape(20, 6);
    let one = LabeledShape {
        points: s.points.clone(),
        levels: vec![s.levels[0].clone()],
    };
    let three = LabeledShape {
        points: s.points.clone(),
        levels: vec![s.levels[0].clone(); 3],
    };
    let c = ModelConfig {
        classes: vec![s.levels[0].classes],
        ..config(FusionMode::None)
    };
    let p = init_params(&c, 1).unwrap();
    let out = forward(&p, &c, &s.points).unwrap();
    let tripled = ForwardOutputs {
        levels: vec![out.levels[0].clone(); 3],
    };
    let a = total_loss(&out, &one).unwrap();
    let b = total_loss(&tripled, &three).unwrap();
    assert!((b - 3.0 * a).abs() < 1e-12);
}

#[test]
fn stop_grad_isolates_semantic_branch() {
    let s = shape(24, 8);
    let mut reference: Option<Vec<Matrix<f64>>> = None;
    for mode in [FusionMode::None, FusionMode::Multi, FusionMode::Cross] {
        let c = config(mode);
        let none_cfg = config(FusionMode::None);
        let p = init_params(&none_cfg, 2).unwrap();
        let p = widen(&p, &c);
        let (_, g) = loss_and_gradient(&p, &c, &s).unwrap();
        let sem: Vec<Matrix<f64>> = p
            .names()
            .iter()
            .zip(g)
            .filter(|(n, _)| n.contains(".sem."))
            .map(|(_, g)| g)
            .collect();
        match &reference {
            None => reference = Some(sem),
            Some(r) => assert_eq!(r, &sem, "{mode}"),
        }
    }
}

/// Copies shared tensors and pads the offset head with random fusion rows.
fn widen(p: &ModelParams, cfg: &ModelConfig) -> ModelParams {
    let full = init_params(cfg, 99).unwrap();
    let named = param_layout(cfg)
        .into_iter()
        .map(|(name, r, _)| {
            let t = p.get(&name).unwrap();
            let t = if t.rows() == r {
                t.clone()
            } else {
                full.get(&name).unwrap().clone()
            };
            (name, t)
        })
        .collect();
    ModelParams::from_named(named).unwrap()
}

#[test]
fn gradient_check_every_mode() {
    let s = shape(32, 9);
    for mode in FusionMode::ALL {
        for (one_hot, stop_grad, two_dir) in [
            (false, false, false),
            (false, false, true),
            (true, true, false),
        ] {
            let c = ModelConfig {
                one_hot,
                stop_grad,
                two_dir,
                ..config(mode)
            };
            let p = jitter_biases(&init_params(&c, 11).unwrap(), 0.1, 12);
            let report = gradient_check(
                &p,
                &c,
                &s,
                &GradcheckParams {
                    fraction: 0.2,
                    step: 1e-6,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                report.passed(),
                "{mode} one_hot={one_hot} stop_grad={stop_grad} two_dir={two_dir}: max rel {}",
                report.max_rel_error()
            );
        }
    }
}

#[test]
fn stop_grad_blocks_fusion_gradient_exactly() {
    let s = shape(32, 3);
    for mode in [FusionMode::Single, FusionMode::Multi, FusionMode::Cross] {
        let on = config(mode);
        let p = init_params(&on, 1).unwrap();
        assert_eq!(
            fusion_leak_into_semantic(&p, &on, &s).unwrap(),
            0.0,
            "{mode}"
        );
        let hot = ModelConfig {
            one_hot: true,
            stop_grad: false,
            ..config(mode)
        };
        assert_eq!(
            fusion_leak_into_semantic(&p, &hot, &s).unwrap(),
            0.0,
            "{mode}"
        );
        let off = ModelConfig {
            stop_grad: false,
            ..config(mode)
        };
        assert!(
            fusion_leak_into_semantic(&p, &off, &s).unwrap() > 0.0,
            "{mode}"
        );
    }
}

#[test]
fn zero_iterations_keep_init() {
    let data: Vec<_> = (0..3).map(|i| shape(16, i)).collect();
    let c = ModelConfig {
        iterations: 0,
        ..config(FusionMode::Cross)
    };
    let init = init_params(&c, c.seed).unwrap();
    let (p, log) = train(&data, &c).unwrap();
    assert_eq!(p, init);
    assert!(log.entries.is_empty());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data: Vec<_> = (0..4).map(|i| shape(64, i)).collect();
    for precision in [Precision::F32, Precision::F64] {
        let c = ModelConfig {
            iterations: 60,
            batch_size: 2,
            log_every: 10,
            learning_rate: 0.05,
            precision,
            seed: 4,
            ..config(FusionMode::Cross)
        };
        let (a, log_a) = train(&data, &c).unwrap();
        let (b, log_b) = train(&data, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.entries.len(), 7);
        assert_eq!(log_a.entries.last().unwrap().iteration, 59);
        let mean = |p: &ModelParams| {
            data.iter()
                .map(|s| total_loss(&forward(p, &c, &s.points).unwrap(), s).unwrap())
                .sum::<f64>()
        };
        assert!(mean(&a) < mean(&init_params(&c, c.seed).unwrap()));
    }
}

#[test]
fn class_count_mismatch_is_rejected() {
    let data = vec![shape(16, 0)];
    let c = ModelConfig {
        classes: vec![2, 2, 2],
        ..config(FusionMode::None)
    };
    assert!(train(&data, &c).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let c = ModelConfig {
        two_dir: true,
        learning_rate: 0.03,
        ..config(FusionMode::Multi)
    };
    let p = init_params(&c, 21).unwrap();
    let bytes = write_checkpoint(&c, &p);
    let (c2, p2) = read_checkpoint(&bytes).unwrap();
    assert_eq!(c2, c);
    assert_eq!(p2, p);
    assert_eq!(write_checkpoint(&c2, &p2), bytes);
    assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    assert!(read_checkpoint(b"PFCK 2\ndata\n").is_err());
}

#[test]
fn f32_and_f64_forward_agree_closely() {
    let s = shape(50, 3);
    let c = config(FusionMode::Cross);
    let p = init_params(&c, 0).unwrap();
    let a = forward(&p, &c, &s.points).unwrap();
    let b = forward(
        &p,
        &ModelConfig {
            precision: Precision::F32,
            ..c.clone()
        },
        &s.points,
    )
    .unwrap();
    for (x, y) in a.levels.iter().zip(&b.levels) {
        assert!(close(&x.o_inst, &y.o_inst, 1e-4));
        assert!(close(x.p_sem.matrix(), y.p_sem.matrix(), 1e-4));
    }
}
