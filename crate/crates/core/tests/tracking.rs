use avtrack::metrics::{evaluate_mot, trackset_from_gt, trackset_from_records, MatchConfig};
use avtrack::nalgebra::Vector4;
use avtrack::sim::{scenario_mapping, simulate, PersonScript, Scenario, ScenarioConfig};
use avtrack::tracker::{sequence_marginal_likelihood, FrameRecord, Tracker, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn track(sc: &Scenario, with_audio: bool) -> Vec<FrameRecord> {
    let mapping = with_audio.then(|| scenario_mapping(&sc.meta.config).unwrap());
    let mut tr = Tracker::new(TrackerConfig::default(), mapping).unwrap();
    sc.frames()
        .map(|mut f| {
            if !with_audio {
                f.audios.clear();
            }
            tr.step(&f).unwrap().to_record()
        })
        .collect()
}

#[test]
fn crossing_persons_keep_their_identities() {
    let mut cfg = ScenarioConfig {
        n_persons: 2,
        n_frames: 200,
        clutter_rate_visual: 0.02,
        seed: 42,
        ..ScenarioConfig::default()
    };
    cfg.dynamics_noise.velocity = 0.01;
    cfg.persons = vec![
        PersonScript { appear_at: 0, state: Some([500.0, 600.0, 110.0, 140.0, 4.0, 0.0]) },
        PersonScript { appear_at: 0, state: Some([1300.0, 630.0, 100.0, 130.0, -4.0, 0.0]) },
    ];
    let sc = simulate(&cfg, &scenario_mapping(&cfg).unwrap()).unwrap();
    // the two centres pass within a box width of each other
    let closest = sc
        .gt
        .iter()
        .map(|f| (f.persons[0].state[0] - f.persons[1].state[0]).abs())
        .fold(f64::INFINITY, f64::min);
    assert!(closest < 50.0, "no crossing: {closest}");
    let recs = track(&sc, true);
    let r = evaluate_mot(&trackset_from_gt(&sc.gt), &trackset_from_records(&recs), &MatchConfig::default()).unwrap();
    assert_eq!(r.ids, 0);
    assert!(r.mota > 95.0, "MOTA {}", r.mota);
}

#[test]
fn clutter_alone_gives_no_births() {
    let mut clean = 0;
    for seed in 0..100 {
        let cfg = ScenarioConfig {
            seed,
            n_persons: 0,
            n_frames: 50,
            clutter_rate_visual: 1.0,
            ..ScenarioConfig::default()
        };
        let sc = simulate(&cfg, &scenario_mapping(&cfg).unwrap()).unwrap();
        let births: usize = track(&sc, false).iter().map(|r| r.births.len()).sum();
        if births == 0 {
            clean += 1;
        }
    }
    assert!(clean >= 99, "{clean}/100 seeds without births");
}

#[test]
fn uniform_scatter_falls_below_the_birth_threshold() {
    let tc = TrackerConfig::default();
    let phi = ScenarioConfig::default().phi();
    let dynamics = tc.initial_dynamics.dynamics();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (w, h) = (tc.image.width, tc.image.height);
    let mut above = 0;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let seq: Vec<Vector4<f64>> = (0..=tc.birth_window)
            .map(|_| {
                Vector4::new(
                    rng.random_range(0.0..w),
                    rng.random_range(0.0..h),
                    rng.random_range(80.0..140.0),
                    rng.random_range(100.0..160.0),
                )
            })
            .collect();
        let ll = sequence_marginal_likelihood(&seq, &vec![phi; seq.len()], &dynamics, tc.birth_prior_cov_scale).unwrap();
        best = best.max(ll);
        if ll > tc.birth_threshold {
            above += 1;
        }
    }
    assert_eq!(above, 0, "best {best}");
}

#[test]
fn tracking_a_bundle_read_back_from_disk_matches_memory() {
    let cfg = ScenarioConfig {
        n_frames: 120,
        seed: 3,
        ..ScenarioConfig::default()
    };
    let sc = simulate(&cfg, &scenario_mapping(&cfg).unwrap()).unwrap();
    let dir = tempfile::TempDir::new().unwrap();
    sc.write(dir.path()).unwrap();
    let back = Scenario::read(dir.path()).unwrap();
    assert_eq!(track(&sc, true), track(&back, true));
}
