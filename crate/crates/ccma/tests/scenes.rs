//! Scene construction, serialization round-trips, and structural facts.

mod common;

use ccma::assembly::{initial_assembly, load_scene, serialize_scene, SceneError};
use ccma::canonical::{build_canonical, CANONICAL_NAMES};
use ccma::constraints::{evaluate, KinCache};
use common::scene;

#[test]
fn canonical_names_build_and_assemble() {
    for name in CANONICAL_NAMES {
        let (model, s0, u0) = scene(name);
        assert_eq!(model.name, name);
        assert!(common::max_block_residual(&model, &s0, &u0.values) < 1e-9, "{name}");
    }
}

#[test]
fn unknown_scene_is_an_error() {
    assert!(build_canonical("ccma-no-such-scene").is_err());
}

#[test]
fn malformed_scene_text_is_an_error() {
    assert!(matches!(load_scene("{ not json"), Err(SceneError::Parse { .. })));
    assert!(load_scene("{}").is_err());
}

#[test]
fn serialize_round_trip_preserves_structure() {
    for name in CANONICAL_NAMES {
        let model = build_canonical(name).unwrap();
        let text = serialize_scene(&model);
        let back = load_scene(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(back.name, model.name);
        assert_eq!(back.n_bodies(), model.n_bodies());
        assert_eq!(back.n_bases(), model.n_bases());
        assert_eq!(back.n_rows(), model.n_rows());
        assert_eq!(back.control_dim(), model.control_dim());
        assert_eq!(back.task_mask, model.task_mask);
        assert_eq!(back.end_effector, model.end_effector);
        // serialization is canonical: a second round trip is textual identity
        assert_eq!(serialize_scene(&back), text);
    }
}

#[test]
fn committed_scene_files_match_builders() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    for name in CANONICAL_NAMES {
        let path = dir.join(format!("{name}.json"));
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("missing {}: {e}", path.display()));
        let model = build_canonical(name).unwrap();
        assert_eq!(text.trim_end(), serialize_scene(&model), "{name} drifted from scenes/");
    }
}

/// The paper's control-dimension facts: the reduced 4-DOF system exposes 6
/// free control variables, the complete one 9.
#[test]
fn control_dimensions_match_actuation_schemes() {
    let (reduced, _, _) = scene("ccma-4dof-reduced");
    assert_eq!(reduced.num_free_controls(), 6);
    let (complete, _, _) = scene("ccma-4dof-complete");
    assert_eq!(complete.num_free_controls(), 9);
    let (six, _, _) = scene("ccma-6dof-6agents");
    assert_eq!(six.n_bases(), 6);
    assert_eq!(six.num_free_controls(), 18);
}

#[test]
fn task_masks_match_scene_dof() {
    for name in ["ccma-4dof-reduced", "ccma-4dof-complete"] {
        let (model, _, _) = scene(name);
        assert_eq!(model.task_mask, [true, true, true, true, false, false], "{name}");
    }
    for name in ["ccma-6dof-sym", "ccma-6dof-asym", "ccma-6dof-6agents"] {
        let (model, _, _) = scene(name);
        assert_eq!(model.task_mask, [true; 6], "{name}");
    }
}

/// Every canonical mechanism is rigid given its controls: the constraint
/// Jacobian over the body states has full column rank 6 n_b.
#[test]
fn canonical_scenes_are_rigid() {
    for name in CANONICAL_NAMES {
        let (model, s0, u0) = scene(name);
        let cache = KinCache::new(&s0);
        let ev = evaluate(&model.blocks, &cache, &u0.values, model.control_dim(), true, false, false)
            .unwrap();
        let svd = ev.jac_s.unwrap().svd(false, false);
        let rank = svd.singular_values.iter().filter(|&&sv| sv > 1e-8).count();
        assert_eq!(rank, model.state_dim(), "{name} is not rigid");
    }
}

#[test]
fn initial_assembly_rejects_broken_geometry() {
    // stretch one link target far beyond reach by editing the serialized form
    let model = build_canonical("ccma-4dof-reduced").unwrap();
    let text = serialize_scene(&model).replace("0.45", "9.45");
    if let Ok(broken) = load_scene(&text) {
        assert!(initial_assembly(&broken).is_err());
    }
}
