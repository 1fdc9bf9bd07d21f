use spiralx::ebrrl::{Event, Orchestrator, TrainSet};
use spiralx::nets::Target;
use spiralx::pipeline::Model;
use spiralx::synth::{generate_dataset, Sample};
use spiralx::{Image, RunConfig};

fn small_config(stem: bool) -> RunConfig {
    RunConfig {
        image_size: 32,
        stem_block: stem,
        ..RunConfig::default()
    }
}

fn data(n: usize) -> (Vec<Image>, Vec<Vec<Target>>) {
    let ds = generate_dataset(n, 1, 1, 11, 32).unwrap();
    let targets = |s: &Sample| {
        s.boxes
            .iter()
            .map(|b| Target::from_pixels(&b.to_bbox(), b.class.id(), 32))
            .collect()
    };
    (
        ds.train.iter().map(|s| s.image.clone()).collect(),
        ds.train.iter().map(targets).collect(),
    )
}

fn orchestrator(cfg: &RunConfig) -> Orchestrator {
    let model = Model::new(cfg).unwrap();
    Orchestrator::new(cfg.train_hold_config(), model.detector, model.predictor).unwrap()
}

fn round_events(events: &[Event], round: u64) -> Vec<Event> {
    events
        .iter()
        .copied()
        .filter(|e| match *e {
            Event::PredictorAct { round: r }
            | Event::ChildScores { round: r }
            | Event::HoldBegin { round: r }
            | Event::DetectorStep { round: r, .. }
            | Event::HoldEnd { round: r }
            | Event::Reward { round: r }
            | Event::PredictorUpdate { round: r }
            | Event::ReplayUpdate { round: r, .. }
            | Event::ReplaySkipped { round: r, .. } => r == round,
        })
        .collect()
}

#[test]
fn rounds_alternate_act_hold_reward() {
    let cfg = small_config(true);
    let (images, targets) = data(8);
    let mut orch = orchestrator(&cfg);
    for round in 1..=3 {
        let report = orch
            .train_hold_step(TrainSet {
                images: &images,
                targets: &targets,
            })
            .unwrap();
        assert_eq!(report.round, round);
        assert_eq!(report.predictor_steps, 8 * round);
        let r = report.reward.unwrap();
        assert!((0.0..=1.0).contains(&r));
        assert!(report.detector_loss.is_finite());
        assert_eq!(
            round_events(&orch.events, round),
            vec![
                Event::PredictorAct { round },
                Event::ChildScores { round },
                Event::HoldBegin { round },
                Event::DetectorStep { round, batch: 0 },
                Event::HoldEnd { round },
                Event::Reward { round },
                Event::PredictorUpdate { round },
            ]
        );
    }
    assert_eq!(orch.stem.as_ref().unwrap().buffer.len(), 24);
}

#[test]
fn replay_fires_at_each_thousand_steps() {
    let cfg = small_config(true);
    let (images, targets) = data(8);
    let mut orch = orchestrator(&cfg);
    let set = TrainSet {
        images: &images,
        targets: &targets,
    };
    // 8 steps per round: the 1000th step lands on round 125.
    for _ in 0..125 {
        let report = orch.train_hold_step(set).unwrap();
        let expect = usize::from(report.round == 125);
        assert_eq!(report.replay_updates, expect, "round {}", report.round);
        assert_eq!(report.replay_loss.is_some(), expect == 1);
    }
    let replays: Vec<Event> = orch
        .events
        .iter()
        .copied()
        .filter(|e| matches!(e, Event::ReplayUpdate { .. } | Event::ReplaySkipped { .. }))
        .collect();
    assert_eq!(
        replays,
        vec![Event::ReplayUpdate {
            round: 125,
            at_step: 1000
        }]
    );
    assert_eq!(orch.predictor_steps, 1000);
}

#[test]
fn replay_skips_while_buffer_is_short() {
    let mut cfg = small_config(true);
    cfg.sampling_frequency = 4;
    let (images, targets) = data(8);
    let mut orch = orchestrator(&cfg);
    let report = orch
        .train_hold_step(TrainSet {
            images: &images,
            targets: &targets,
        })
        .unwrap();
    // Eight new steps cross 4 and 8; the buffer holds 8 < 64 transitions.
    assert_eq!(report.replay_updates, 0);
    let skipped: Vec<Event> = orch
        .events
        .iter()
        .copied()
        .filter(|e| matches!(e, Event::ReplaySkipped { .. }))
        .collect();
    assert_eq!(
        skipped,
        vec![
            Event::ReplaySkipped {
                round: 1,
                at_step: 4
            },
            Event::ReplaySkipped {
                round: 1,
                at_step: 8
            }
        ]
    );
}

#[test]
fn without_stem_only_the_detector_trains() {
    let cfg = small_config(false);
    let (images, targets) = data(8);
    let mut orch = orchestrator(&cfg);
    let report = orch
        .train_hold_step(TrainSet {
            images: &images,
            targets: &targets,
        })
        .unwrap();
    assert_eq!(report.reward, None);
    assert_eq!(report.predictor_steps, 0);
    assert_eq!(
        orch.events,
        vec![
            Event::HoldBegin { round: 1 },
            Event::DetectorStep { round: 1, batch: 0 },
            Event::HoldEnd { round: 1 }
        ]
    );
}

#[test]
fn mismatched_targets_leave_state_untouched() {
    let cfg = small_config(true);
    let (images, targets) = data(8);
    let mut orch = orchestrator(&cfg);
    let err = orch.train_hold_step(TrainSet {
        images: &images,
        targets: &targets[..7],
    });
    assert!(err.is_err());
    assert_eq!(orch.round, 0);
    assert!(orch.events.is_empty());
    assert!(orch.stem.as_ref().unwrap().buffer.is_empty());
}

#[test]
fn channel_count_must_match_stem_setting() {
    let with_stem = Model::new(&small_config(true)).unwrap();
    let cfg = small_config(false);
    assert!(Orchestrator::new(cfg.train_hold_config(), with_stem.detector, None).is_err());
}

#[test]
fn detector_loss_falls_over_rounds() {
    let cfg = small_config(true);
    let (images, targets) = data(8);
    let mut orch = orchestrator(&cfg);
    let set = TrainSet {
        images: &images,
        targets: &targets,
    };
    let losses: Vec<f64> = (0..30)
        .map(|_| orch.train_hold_step(set).unwrap().detector_loss)
        .collect();
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[25..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
}
