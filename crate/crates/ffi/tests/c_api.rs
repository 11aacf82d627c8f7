use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use navguard_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ng_last_error()) }.to_string_lossy().into_owned()
}

const ROOM: &str = r#"{
  "bounds": [0, 0, 4, 4],
  "max_range": 10,
  "wall_albedo": [0.8, 0.8, 0.8],
  "floor_albedo": [0.3, 0.3, 0.3],
  "obstacles": [{"vertices": [[2, 1], [3, 1], [3, 2], [2, 2]], "albedo": [0.5, 0.5, 0.5], "height": 1}]
}"#;

#[test]
fn scene_queries() {
    let json = CString::new(ROOM).unwrap();
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { ng_scene_from_json(json.as_ptr(), &mut scene) }, NgStatus::Ok);
    assert_eq!(unsafe { ng_scene_obstacle_count(scene) }, 1);

    let mut d = 0.0;
    assert_eq!(unsafe { ng_scene_point_clearance(scene, 1.0, 1.5, &mut d) }, NgStatus::Ok);
    assert!((d - 1.0).abs() < 1e-12);

    let (mut dist, mut hit) = (0.0, 0i64);
    assert_eq!(unsafe { ng_scene_raycast(scene, 0.5, 1.5, 1.0, 0.0, &mut dist, &mut hit) }, NgStatus::Ok);
    assert!((dist - 1.5).abs() < 1e-12);
    assert_eq!(hit, 0);
    assert_eq!(unsafe { ng_scene_raycast(scene, 0.5, 3.0, 1.0, 0.0, &mut dist, &mut hit) }, NgStatus::Ok);
    assert!((dist - 3.5).abs() < 1e-12);
    assert_eq!(hit, -1);
    assert_eq!(unsafe { ng_scene_raycast(scene, 0.5, 3.0, 0.0, 0.0, &mut dist, &mut hit) }, NgStatus::InvalidArgument);
    unsafe { ng_scene_free(scene) };
}

#[test]
fn errors_are_reported() {
    let bad = CString::new(r#"{"bounds": [0, 0, 1, 1], "obstacles": [{"vertices": [[0.1, 0.1], [0.2, 0.1]]}]}"#).unwrap();
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { ng_scene_from_json(bad.as_ptr(), &mut scene) }, NgStatus::InvalidArgument);
    assert!(scene.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { ng_scene_from_json(ptr::null(), &mut scene) }, NgStatus::NullPointer);
    assert!(last_error().contains("json"));

    let missing = CString::new("/nonexistent/scene.json").unwrap();
    assert_eq!(unsafe { ng_scene_load(missing.as_ptr(), &mut scene) }, NgStatus::Io);

    let mut policy = ptr::null_mut();
    assert_eq!(unsafe { ng_policy_load(missing.as_ptr(), &mut policy) }, NgStatus::Io);
    unsafe { ng_scene_free(ptr::null_mut()) };
}

#[test]
fn reward_and_drive() {
    assert_eq!(ng_compute_reward(0.3, -0.2, false, -100.0), 0.5);
    assert_eq!(ng_compute_reward(0.3, -0.2, true, -100.0), -100.0);
    let (mut l, mut r) = (0.0, 0.0);
    assert_eq!(unsafe { ng_differential_drive(0.0, 1.0, 0.06, 0.3, &mut l, &mut r) }, NgStatus::Ok);
    assert!((l + 2.5).abs() < 1e-12 && (r - 2.5).abs() < 1e-12);
    assert_eq!(unsafe { ng_differential_drive(1.0, 0.0, 0.0, 0.3, &mut l, &mut r) }, NgStatus::InvalidArgument);
}

#[test]
fn mpc_handle() {
    let mut mpc = ptr::null_mut();
    assert_eq!(unsafe { ng_mpc_new(ptr::null(), &mut mpc) }, NgStatus::Ok);
    let (mut v, mut it) = (1.0, 99usize);
    assert_eq!(unsafe { ng_mpc_step(mpc, 0.0, 0.0, 0.0, 0.0, 0.0, &mut v, &mut it) }, NgStatus::Ok);
    assert!(v.abs() < 1e-6);
    unsafe { ng_mpc_reset(mpc) };
    unsafe { ng_mpc_free(mpc) };

    let mut config = ng_mpc_default_config();
    assert_eq!(config.horizon, 50);
    config.horizon = 1;
    assert_eq!(unsafe { ng_mpc_new(&config, &mut mpc) }, NgStatus::InvalidArgument);
    assert!(last_error().contains("horizon"));
}

#[test]
fn policy_round_trip() {
    use navguard::agent::{Agent, AgentConfig, PolicyCheckpoint};
    use rand::SeedableRng;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let agent = Agent::new(AgentConfig::tiny(), &mut rng).unwrap();
    PolicyCheckpoint::new(&agent, 0, None).save(&path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut policy = ptr::null_mut();
    assert_eq!(unsafe { ng_policy_load(c_path.as_ptr(), &mut policy) }, NgStatus::Ok);
    let obs = vec![0.1f32; ng_policy_obs_dim()];
    let mut action = [0.0f64; 2];
    assert_eq!(unsafe { ng_policy_act(policy, obs.as_ptr(), obs.len(), action.as_mut_ptr()) }, NgStatus::Ok);
    assert_eq!(action, agent.actor.deterministic_action(&obs));
    assert_eq!(unsafe { ng_policy_act(policy, obs.as_ptr(), 3, action.as_mut_ptr()) }, NgStatus::InvalidArgument);
    unsafe { ng_policy_free(policy) };
}

#[test]
fn header_is_generated_and_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/navguard.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["ng_scene_load", "ng_scene_raycast", "ng_compute_reward", "ng_differential_drive", "ng_mpc_step", "ng_policy_act", "ng_last_error", "NG_STATUS_OK", "typedef struct NgScene NgScene"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use_header.c");
    std::fs::write(
        &src,
        "#include \"navguard.h\"\nint main(void) { NgScene *s = 0; double d; return ng_scene_point_clearance(s, 0.0, 0.0, &d) == NG_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include]).arg(&src).status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile as C99"),
        Err(e) => eprintln!("no C compiler available ({e}); header syntax check skipped"),
    }
}
