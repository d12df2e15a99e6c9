use std::time::Duration;

use bevdrive::flat_vehicle::VehicleState;
use bevdrive::policy::external::{ExternalConfig, ExternalPolicy, RasterTransfer};
use bevdrive::policy::{Observation, Policy, PolicyError};

fn config(timeout_ms: u64) -> ExternalConfig {
    ExternalConfig {
        timeout: Duration::from_millis(timeout_ms),
        rasters: RasterTransfer::None,
        history_len: 1,
    }
}

fn obs() -> Observation {
    Observation::single(0, VehicleState::new(0.0, 0.0, 0.0, 2.0).unwrap())
}

#[test]
fn shell_server_round_trip() {
    let zeros = vec!["[0,0]"; 40].join(",");
    let script = format!(
        r#"read l; echo '{{"type":"hello","schema_version":1}}'; while read l; do echo '{{"type":"decision","waypoints":[{zeros}]}}'; done"#
    );
    let mut p = ExternalPolicy::spawn(&script, config(5000)).unwrap();
    for _ in 0..3 {
        let d = p.decide(&obs(), None).unwrap();
        assert_eq!(d.waypoints().len(), 40);
        assert!(d.waypoints().iter().all(|w| w.norm() == 0.0));
    }
}

#[test]
fn echo_process_passes_handshake_then_fails_protocol() {
    let mut p = ExternalPolicy::spawn("cat", config(5000)).unwrap();
    match p.decide(&obs(), None) {
        Err(PolicyError::Protocol(_)) => {}
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn exiting_process_is_a_process_error() {
    match ExternalPolicy::spawn("exit 0", config(5000)) {
        Err(PolicyError::Process(_)) => {}
        other => panic!("expected process error, got {:?}", other.err()),
    }
}

#[test]
fn silent_process_times_out() {
    match ExternalPolicy::spawn("sleep 5", config(200)) {
        Err(PolicyError::Timeout(d)) => assert_eq!(d, Duration::from_millis(200)),
        other => panic!("expected timeout, got {:?}", other.err()),
    }
}

#[test]
fn wrong_schema_version_is_rejected() {
    let script = r#"read l; echo '{"type":"hello","schema_version":2}'; cat >/dev/null"#;
    match ExternalPolicy::spawn(script, config(5000)) {
        Err(PolicyError::Protocol(m)) => assert!(m.contains("version")),
        other => panic!("expected protocol error, got {:?}", other.err()),
    }
}
