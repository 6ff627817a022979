//! Frozen outputs for fixed seeds. A change here means generated data or
//! model numerics changed and existing datasets/checkpoints are stale.

mod common;

use sha2::{Digest, Sha256};
use vdrive::language::teacher_text;
use vdrive::model::Variant;
use vdrive::numerics::Tape;
use vdrive::synth::{sample_scenario, Command, Hazard, LaneGeometry};
use vdrive::tokenizer::SymbolVocab;

#[test]
fn seed_zero_scenario() {
    let sc = sample_scenario(0);
    let r = match sc.lane {
        LaneGeometry::RightArc { radius } => radius,
        other => panic!("{other:?}"),
    };
    assert_eq!(r, 22.909495113267525);
    assert_eq!(sc.command, Command::TurnRight);
    assert_eq!(
        sc.hazard,
        Hazard::LeadVehicle {
            distance: 18.065771487337898,
            speed: 4.198125075157786
        }
    );
    assert_eq!(sc.ego.v, 9.315937904095996);
    assert_eq!(sc.target_distance, 22.89400269872312);

    let s = common::sample(0);
    // right arc centred at (0, −R), walked at unit arc length
    for (k, p) in s.path.iter().enumerate() {
        let phi = (k + 1) as f64 / r;
        let want = [r * phi.sin(), -r * (1.0 - phi.cos())];
        assert!(
            (p[0] - want[0]).abs() < 1e-12 && (p[1] - want[1]).abs() < 1e-12,
            "{k}"
        );
    }
    // decelerate by 2 m/s per step from 9.3159… to the lead's speed, then hold
    let v0 = 9.315937904095996;
    let lead = 4.198125075157786;
    let mut want = vec![v0 - 2.0, v0 - 4.0];
    want.extend([lead; 8]);
    assert_eq!(s.speeds, want);

    let v = SymbolVocab::standard();
    assert_eq!(
        v.render(&s.instruction),
        "SYM_LEAD SYM_TURN_RIGHT SYM_SLOW EOS"
    );
    assert_eq!(v.render(&s.goal), "GOAL_REACH GOAL_RIGHT GOAL_FAR");
    assert_eq!(v.render(&[s.command]), "CMD_TURN_RIGHT");

    let digest = Sha256::digest(serde_json::to_string(&s).unwrap().as_bytes());
    assert_eq!(
        format!("{digest:x}"),
        "71e6024a161f06956e4262178c989695f731a64c2de1a798269f76181260a023"
    );
}

#[test]
fn seed_zero_forward_hash() {
    let m = common::small_model(Variant::Full, 0);
    let s = common::sample(0);
    let values: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = common::state_from(&values, 0.3);
    let mut tape = Tape::new(&m.store);
    let f = m
        .forward(&mut tape, &s, &teacher_text(&s.instruction), Some(&x))
        .unwrap();
    let mut h = Sha256::new();
    for v in tape.value(f.hidden).data() {
        h.update(v.to_le_bytes());
    }
    assert_eq!(
        format!("{:x}", h.finalize()),
        "835bb55d2ee4245ac9c5f29be5fd0836105e6c22b205ed9e0dbffc7bab25368e"
    );
}
