mod common;

use common::{model_grad_error, small_corpus, tiny_config, tiny_instance};
use editfollower::courtesy::{CourtesyKind, DiscourtesyLabel};
use editfollower::models::idm::{ACCEL_MAX, ACCEL_MIN};
use editfollower::models::transformer::positional_encoding;
use editfollower::models::{
    idm_accel, init_params, Architecture, FollowerModel, IdmParams, ModelConfig, Standardizer,
};

#[test]
fn parameter_gradients_match_finite_differences() {
    let corpus = small_corpus(8, 11);
    for arch in Architecture::ALL {
        for conditioned in [true, false] {
            for seed in 0..4 {
                let (model, sample) = tiny_instance(arch, conditioned, CourtesyKind::Speed, &corpus, seed);
                let err = model_grad_error(&model, &sample, 1.0);
                assert!(err < 1e-4, "{arch} conditioned={conditioned} seed={seed}: {err:e}");
            }
        }
    }
}

#[test]
fn kinematic_courtesy_gradients_match_finite_differences() {
    let corpus = small_corpus(8, 12);
    for arch in Architecture::ALL {
        for kind in [CourtesyKind::Acceleration, CourtesyKind::Jerk] {
            let (model, sample) = tiny_instance(arch, true, kind, &corpus, 5);
            let err = model_grad_error(&model, &sample, 2.0);
            assert!(err < 1e-4, "{arch} {kind}: {err:e}");
        }
    }
}

#[test]
fn future_leader_speeds_do_not_leak_backwards() {
    let corpus = small_corpus(4, 13);
    for arch in Architecture::ALL {
        let (model, sample) = tiny_instance(arch, true, CourtesyKind::Speed, &corpus, 1);
        let base = model.predict(&sample.input).unwrap().speeds;
        let mut input = sample.input.clone();
        let last = input.future_lv.len() - 1;
        input.future_lv[last] += 7.0;
        let moved = model.predict(&input).unwrap().speeds;
        assert_eq!(base[..last], moved[..last], "{arch}");
    }
}

#[test]
fn output_shapes_follow_conditioning() {
    let corpus = small_corpus(4, 14);
    for arch in Architecture::ALL {
        let (edit, sample) = tiny_instance(arch, true, CourtesyKind::Speed, &corpus, 2);
        assert_eq!(sample.input.features(), 5);
        assert_eq!(edit.predict(&sample.input).unwrap().speeds.len(), 3);
        let (base, sample) = tiny_instance(arch, false, CourtesyKind::Speed, &corpus, 2);
        assert_eq!(sample.input.features(), 4);
        assert_eq!(base.predict(&sample.input).unwrap().speeds.len(), 3);
        assert!(base.params.num_values() < edit.params.num_values());
        assert!(edit.predict(&sample.input).is_err(), "width mismatch must be rejected");
    }
}

#[test]
fn only_the_idm_head_reports_parameters() {
    let corpus = small_corpus(4, 15);
    for arch in Architecture::ALL {
        let (model, sample) = tiny_instance(arch, true, CourtesyKind::Speed, &corpus, 3);
        let idm = model.predict(&sample.input).unwrap().idm;
        assert_eq!(idm.is_some(), arch == Architecture::LstmIdm, "{arch}");
        if let Some(p) = idm {
            assert!(p.within_bounds());
        }
    }
}

#[test]
fn zero_psi_weights_match_the_baseline() {
    let corpus = small_corpus(4, 16);
    for arch in Architecture::ALL {
        let (mut model, sample) = tiny_instance(arch, true, CourtesyKind::Speed, &corpus, 4);
        model.standardizer.mean[4] = 0.0;
        model.standardizer.std[4] = 1.0;
        let mut input = sample.input.clone();
        input.psi = Some(DiscourtesyLabel { kind: CourtesyKind::Speed, value: 0.0 });
        let zeroed = model.input_for(&corpus.events[0], input.psi, sample.window);
        let base = model.unconditioned_counterpart().unwrap();
        let plain = base.input_for(&corpus.events[0], None, sample.window).unwrap();
        let a = model.predict(&zeroed.unwrap()).unwrap().speeds;
        let b = base.predict(&plain).unwrap().speeds;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{arch}: {x} vs {y}");
        }
    }
}

#[test]
fn initialization_is_deterministic() {
    for arch in Architecture::ALL {
        let cfg = tiny_config(arch, true);
        assert_eq!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 9).unwrap());
        assert_ne!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 10).unwrap());
    }
}

#[test]
fn transformer_width_must_split_across_heads() {
    let cfg = ModelConfig {
        heads: 3,
        ..tiny_config(Architecture::Transformer, true)
    };
    assert!(init_params(&cfg, 0).is_err());
}

#[test]
fn courtesy_kind_must_match_conditioning() {
    let cfg = tiny_config(Architecture::Lstm, true);
    assert!(FollowerModel::new(cfg, Standardizer::default(), None, 0).is_err());
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(3, 4);
    let d = pe.data();
    assert_eq!(&d[0..4], &[0.0, 1.0, 0.0, 1.0]);
    assert!((d[4] - 1f64.sin()).abs() < 1e-15);
    assert!((d[5] - 1f64.cos()).abs() < 1e-15);
    assert!((d[6] - 0.01f64.sin()).abs() < 1e-15);
    assert!((d[11] - 0.02f64.cos()).abs() < 1e-15);
}

fn grid() -> Vec<IdmParams> {
    let mut out = Vec::new();
    for t in [0.6, 1.0, 1.5, 2.2, 3.0] {
        for s0 in [0.5, 1.5, 2.5, 4.0, 6.0] {
            out.push(IdmParams {
                t_headway: t,
                s_jam: s0,
                ..IdmParams::default()
            });
        }
    }
    out
}

#[test]
fn idm_equilibrium_grid() {
    for p in grid() {
        for v in [2.0, 8.0, 15.0, 22.0, 29.0] {
            let s = p.equilibrium_spacing(v);
            let a = idm_accel(v, 0.0, s, &p).unwrap();
            assert!(a.abs() < 1e-9, "v={v} {p:?}: {a:e}");
        }
    }
}

#[test]
fn idm_accel_is_monotone_in_spacing() {
    for p in grid() {
        for v in [2.0, 8.0, 15.0, 22.0, 29.0] {
            let s_eq = p.equilibrium_spacing(v);
            let accels: Vec<f64> = [0.3, 0.6, 0.9, 1.0, 1.1, 1.5, 3.0]
                .iter()
                .map(|k| idm_accel(v, 0.0, k * s_eq, &p).unwrap())
                .collect();
            for w in accels.windows(2) {
                let unclipped = w[0] > ACCEL_MIN && w[1] < ACCEL_MAX;
                assert!(w[1] >= w[0]);
                assert!(!unclipped || w[1] > w[0], "v={v} {p:?}: {accels:?}");
            }
        }
    }
}
