use std::collections::BTreeSet;

use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;

use super::*;
use crate::gaussian::visual_projection;

fn quiet(n_persons: usize, n_frames: usize) -> ScenarioConfig {
    ScenarioConfig {
        n_persons,
        n_frames,
        clutter_rate_visual: 0.0,
        detection_prob: 1.0,
        audio: AudioConfig {
            clutter_rate: 0.0,
            ..AudioConfig::default()
        },
        ..ScenarioConfig::default()
    }
}

fn small_reference() -> ReferenceMappingSpec {
    ReferenceMappingSpec {
        n_subbands: 4,
        j: 4,
        n_experts: 3,
        ..ReferenceMappingSpec::default()
    }
}

#[test]
fn zero_noise_constant_velocity_is_a_straight_line() {
    let cfg = ScenarioConfig {
        dynamics_noise: DynamicsNoise {
            position: 0.0,
            size: 0.0,
            velocity: 0.0,
        },
        persons: vec![PersonScript {
            appear_at: 0,
            state: Some([100.0, 500.0, 100.0, 120.0, 2.0, 0.0]),
        }],
        ..quiet(1, 50)
    };
    let (gt, _) = generate_trajectories(&cfg).unwrap();
    for f in &gt {
        let s = f.persons[0].state;
        assert_eq!(s[0], 100.0 + 2.0 * f.t as f64);
        assert_eq!(s[1], 500.0);
        assert_eq!((s[4], s[5]), (2.0, 0.0));
    }
}

#[test]
fn reflection_negates_velocity_at_border() {
    let cfg = ScenarioConfig {
        dynamics_noise: DynamicsNoise {
            position: 0.0,
            size: 0.0,
            velocity: 0.0,
        },
        persons: vec![PersonScript {
            appear_at: 0,
            state: Some([1910.0, 500.0, 100.0, 120.0, 4.0, 0.0]),
        }],
        ..quiet(1, 6)
    };
    let (gt, _) = generate_trajectories(&cfg).unwrap();
    let xs: Vec<f64> = gt.iter().map(|f| f.persons[0].state[0]).collect();
    assert_eq!(xs, vec![1910.0, 1914.0, 1918.0, 1918.0, 1914.0, 1910.0]);
    assert_eq!(gt[5].persons[0].state[4], -4.0);
    assert!(gt.iter().all(|f| f.persons[0].state[0] <= 1920.0));
}

#[test]
fn same_seed_gives_identical_scenarios_and_files() {
    let cfg = ScenarioConfig {
        n_frames: 60,
        audio: AudioConfig {
            reference: small_reference(),
            active_subbands: [1, 4],
            ..AudioConfig::default()
        },
        seed: 11,
        ..ScenarioConfig::default()
    };
    let m = scenario_mapping(&cfg).unwrap();
    let a = simulate(&cfg, &m).unwrap();
    let b = simulate(&cfg, &m).unwrap();
    assert_eq!(a, b);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.write(da.path()).unwrap();
    b.write(db.path()).unwrap();
    for f in [GT_FILE, VISUAL_FILE, AUDIO_FILE, META_FILE] {
        let ta = std::fs::read(da.path().join(f)).unwrap();
        assert_eq!(ta, std::fs::read(db.path().join(f)).unwrap(), "{f}");
        let text = String::from_utf8(ta).unwrap();
        assert!(text.lines().all(|l| l == l.trim_end()), "{f} has trailing whitespace");
    }
    let back = Scenario::read(da.path()).unwrap();
    assert_eq!(back, a);

    let other = simulate(&ScenarioConfig { seed: 12, ..cfg }, &m).unwrap();
    assert_ne!(other.gt, a.gt);
}

#[test]
fn perfect_detection_without_noise_returns_projected_states() {
    let cfg = ScenarioConfig {
        visual_noise: [0.0; 4],
        ..quiet(3, 20)
    };
    let (gt, protos) = generate_trajectories(&cfg).unwrap();
    let vis = render_visual(&gt, &protos, &cfg);
    let pf = visual_projection();
    for (f, obs) in gt.iter().zip(&vis) {
        assert_eq!(obs.len(), 3);
        for p in &f.persons {
            let s = Vector6::from_row_slice(&p.state);
            let v: Vector4<f64> = pf * s;
            assert!(obs.iter().any(|o| o.v == v));
        }
        for o in obs {
            assert!((o.u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_detection_probability_leaves_only_clutter() {
    let cfg = ScenarioConfig {
        detection_prob: 0.0,
        clutter_rate_visual: 3.0,
        ..quiet(3, 300)
    };
    let (gt, protos) = generate_trajectories(&cfg).unwrap();
    let vis = render_visual(&gt, &protos, &cfg);
    let total: usize = vis.iter().map(Vec::len).sum();
    let mean = total as f64 / 300.0;
    assert!((mean - 3.0).abs() < 0.3, "clutter mean {mean}");
    for o in vis.iter().flatten() {
        assert!(o.v[2] >= 0.0 && o.v[2] <= MAX_BOX && o.v[3] >= 0.0 && o.v[3] <= MAX_BOX);
        assert!(o.v[0] >= 0.0 && o.v[0] <= 1920.0 && o.v[1] >= 0.0 && o.v[1] <= 1200.0);
    }
}

#[test]
fn detection_rate_and_noise_covariance_match_config() {
    let cfg = ScenarioConfig {
        detection_prob: 0.8,
        visual_noise: [3.0, 4.0, 2.0, 1.5],
        ..quiet(5, 2000)
    };
    let (gt, protos) = generate_trajectories(&cfg).unwrap();
    let vis = render_visual(&gt, &protos, &cfg);
    let pf = visual_projection();
    let mut person_frames = 0usize;
    let mut detected = 0usize;
    let mut cov = Matrix4::zeros();
    for (f, obs) in gt.iter().zip(&vis) {
        for p in &f.persons {
            person_frames += 1;
            let v: Vector4<f64> = pf * Vector6::from_row_slice(&p.state);
            // Persons are far apart relative to the noise, so nearest match is the source.
            let nearest = obs
                .iter()
                .map(|o| o.v - v)
                .min_by(|a, b| a.norm().total_cmp(&b.norm()))
                .filter(|e| e.norm() < 25.0);
            if let Some(e) = nearest {
                detected += 1;
                cov += e * e.transpose();
            }
        }
    }
    assert!(person_frames >= 10_000);
    let rate = detected as f64 / person_frames as f64;
    assert!((rate - 0.8).abs() <= 0.01, "detection rate {rate}");
    let cov = cov / detected as f64;
    let phi = cfg.phi();
    let rel = (cov - phi).norm() / phi.norm();
    assert!(rel <= 0.10, "relative Frobenius error {rel}");
}

#[test]
fn partial_fov_masks_exactly_the_blind_strips() {
    let full = ScenarioConfig {
        clutter_rate_visual: 2.0,
        ..quiet(4, 200)
    };
    let partial = ScenarioConfig {
        fov: FieldOfView::Partial {
            strip_width: DEFAULT_STRIP_WIDTH,
        },
        ..full.clone()
    };
    let (gt, protos) = generate_trajectories(&full).unwrap();
    let a = render_visual(&gt, &protos, &full);
    let b = render_visual(&gt, &protos, &partial);
    let key = |o: &VisualObservation| o.v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    for (fa, fb) in a.iter().zip(&b) {
        let expect: BTreeSet<_> = fa
            .iter()
            .filter(|o| o.v[0] >= 576.0 && o.v[0] <= 1344.0)
            .map(key)
            .collect();
        let got: BTreeSet<_> = fb.iter().map(key).collect();
        assert_eq!(got, expect);
    }
}

#[test]
fn person_in_left_blind_strip_is_not_detected() {
    let cfg = ScenarioConfig {
        fov: FieldOfView::Partial {
            strip_width: DEFAULT_STRIP_WIDTH,
        },
        dynamics_noise: DynamicsNoise {
            position: 0.0,
            size: 0.0,
            velocity: 0.0,
        },
        persons: vec![PersonScript {
            appear_at: 0,
            state: Some([100.0, 600.0, 100.0, 120.0, 0.0, 0.0]),
        }],
        ..quiet(1, 30)
    };
    let (gt, protos) = generate_trajectories(&cfg).unwrap();
    assert!(render_visual(&gt, &protos, &cfg).iter().all(Vec::is_empty));
}

#[test]
fn silence_gives_no_audio() {
    let cfg = ScenarioConfig {
        speech: SpeechConfig {
            silent: vec![0, 1, 2],
            ..SpeechConfig::default()
        },
        audio: AudioConfig {
            reference: small_reference(),
            active_subbands: [1, 4],
            clutter_rate: 0.5,
            ..AudioConfig::default()
        },
        ..quiet(3, 100)
    };
    let s = simulate(&cfg, &scenario_mapping(&cfg).unwrap()).unwrap();
    assert!(s.audio.iter().all(Vec::is_empty));
}

#[test]
fn noiseless_doa_equals_speaker_position() {
    let cfg = ScenarioConfig {
        speech: SpeechConfig {
            always_speaking: vec![0],
            silent: vec![1],
            ..SpeechConfig::default()
        },
        audio: AudioConfig {
            mode: AudioMode::DoaPoint,
            sigma_doa: 0.0,
            active_subbands: [1, 4],
            clutter_rate: 0.0,
            ..AudioConfig::default()
        },
        ..quiet(2, 50)
    };
    let s = simulate(&cfg, &scenario_mapping(&cfg).unwrap()).unwrap();
    for (f, obs) in s.gt.iter().zip(&s.audio) {
        let p = f.persons.iter().find(|p| p.id == 0).unwrap();
        assert!(!obs.is_empty());
        for o in obs {
            assert_eq!((o.g[0], o.g[1]), (p.state[0], p.state[1]));
        }
    }
}

#[test]
fn single_speaker_features_lie_near_an_expert_prediction() {
    let cfg = ScenarioConfig {
        speech: SpeechConfig {
            always_speaking: vec![0],
            ..SpeechConfig::default()
        },
        audio: AudioConfig {
            reference: ReferenceMappingSpec::default(),
            clutter_rate: 0.0,
            ..AudioConfig::default()
        },
        ..quiet(1, 800)
    };
    let m = scenario_mapping(&cfg).unwrap();
    let s = simulate(&cfg, &m).unwrap();
    let (mut within, mut total) = (0usize, 0usize);
    for (f, obs) in s.gt.iter().zip(&s.audio) {
        let x = Vector2::new(f.persons[0].state[0], f.persons[0].state[1]);
        for o in obs {
            // Whitened residual under the closest expert, checked per component.
            let band = m.subband(o.k).unwrap();
            let z = band
                .experts()
                .iter()
                .map(|e| {
                    let chol = e.sigma().clone().cholesky().unwrap();
                    chol.l().solve_lower_triangular(&(&o.g - e.predict(&x))).unwrap()
                })
                .min_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap();
            total += z.len();
            within += z.iter().filter(|v| v.abs() <= 4.0).count();
        }
    }
    assert!(total > 10_000);
    let frac = within as f64 / total as f64;
    assert!(frac >= 0.999, "fraction within 4 sigma {frac}");
}

#[test]
fn speech_segments_respect_minimum_length() {
    let cfg = ScenarioConfig {
        speech: SpeechConfig {
            mean_speech: 8.0,
            mean_silence: 10.0,
            ..SpeechConfig::default()
        },
        ..quiet(4, 2000)
    };
    let (gt, _) = generate_trajectories(&cfg).unwrap();
    let mut speaking_frames = 0;
    for p in 0..4u64 {
        let flags: Vec<bool> = gt
            .iter()
            .map(|f| f.persons.iter().find(|q| q.id == p).unwrap().speaking)
            .collect();
        speaking_frames += flags.iter().filter(|f| **f).count();
        let mut run = 0;
        for (t, &f) in flags.iter().enumerate() {
            if f {
                run += 1;
            } else {
                assert!(run == 0 || run >= 5, "person {p}: segment of {run} ending at {t}");
                run = 0;
            }
        }
    }
    assert!(speaking_frames > 0);
}

#[test]
fn late_appearance_and_config_errors() {
    let cfg = ScenarioConfig {
        persons: vec![
            PersonScript {
                appear_at: 0,
                state: None,
            },
            PersonScript {
                appear_at: 10,
                state: None,
            },
        ],
        ..quiet(2, 20)
    };
    let (gt, _) = generate_trajectories(&cfg).unwrap();
    assert_eq!(gt[9].persons.len(), 1);
    assert_eq!(gt[10].persons.len(), 2);

    let bad = ScenarioConfig {
        detection_prob: 1.5,
        ..ScenarioConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "detection_prob"));
    assert!(serde_json::from_str::<ScenarioConfig>(r#"{"n_persons": 2, "oops": 1}"#).is_err());
    let c: ScenarioConfig = serde_json::from_str(r#"{"fov": {"kind": "partial", "strip_width": 768}}"#).unwrap();
    assert_eq!(c.fov, FieldOfView::Partial { strip_width: 768.0 });
}

#[test]
fn audio_subband_range_beyond_mapping_is_an_input_error() {
    let cfg = ScenarioConfig {
        audio: AudioConfig {
            reference: small_reference(),
            active_subbands: [6, 8],
            ..AudioConfig::default()
        },
        speech: SpeechConfig {
            always_speaking: vec![0],
            ..SpeechConfig::default()
        },
        ..quiet(1, 5)
    };
    let m = scenario_mapping(&cfg).unwrap();
    assert!(matches!(simulate(&cfg, &m), Err(Error::Input(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trajectories_stay_in_image_with_positive_sizes(seed in any::<u64>(), n in 1usize..5) {
        let cfg = ScenarioConfig {
            dynamics_noise: DynamicsNoise { position: 5.0, size: 3.0, velocity: 1.0 },
            seed,
            ..quiet(n, 200)
        };
        let (gt, protos) = generate_trajectories(&cfg).unwrap();
        prop_assert_eq!(protos.len(), n);
        for f in &gt {
            prop_assert_eq!(f.persons.len(), n);
            for p in &f.persons {
                prop_assert!(p.state[0] >= 0.0 && p.state[0] <= 1920.0);
                prop_assert!(p.state[1] >= 0.0 && p.state[1] <= 1200.0);
                prop_assert!(p.state[2] > 0.0 && p.state[3] > 0.0);
            }
        }
    }
}
