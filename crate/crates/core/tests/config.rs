use amgrasp::config::RunConfig;
use amgrasp::Error;

fn field_of(text: &str) -> String {
    let err = RunConfig::from_toml_str(text).and_then(|c| c.build_scenario().map(|_| c)).unwrap_err();
    match err {
        Error::Config { field, .. } => field,
        other => panic!("expected a configuration error, got {other}"),
    }
}

#[test]
fn empty_document_is_the_default_run() {
    let c = RunConfig::from_toml_str("").unwrap();
    assert_eq!(c, RunConfig::default());
    let sc = c.build_scenario().unwrap();
    assert_eq!(sc.spec.name, "two_am_grasp");
    assert!(sc.gains.compensate_forces);
}

#[test]
fn errors_name_the_offending_field() {
    assert_eq!(field_of("dt = \"fast\""), "dt");
    assert_eq!(field_of("dt = -0.001"), "dt");
    assert_eq!(field_of("log_every = 0"), "log_every");
    assert_eq!(field_of("substeps = 0"), "substeps");
    assert_eq!(field_of("[gains]\nk_y = [200.0, -1.0, 2.0]"), "gains.k_y");
    assert_eq!(field_of("[gains]\nattitude_filter = 0.0"), "gains.attitude_filter");
    assert_eq!(field_of("[scenario]\npreset = \"nope\""), "scenario.preset");
    assert_eq!(field_of("[scenario]\ntouch_end = 4.0"), "scenario.touch_end");
    assert_eq!(field_of("[scenario]\npreset = \"free_flight\"\nobject = { shape = { kind = \"box\", half_extents = [0.1, 0.1, 0.1] }, mass = 1.0 }"), "scenario.object");
    assert_eq!(field_of("[table]\nmu = -0.5"), "table.mu");
    assert_eq!(field_of("[contact]\nk_n = 0.0"), "contact.k_n");
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let err = RunConfig::from_toml_str("[gains]\nk_yy = [1.0, 1.0, 1.0]").unwrap_err();
    let text = err.to_string();
    assert!(text.contains("gains") && text.contains("k_yy"), "{text}");
    let err = RunConfig::from_toml_str("[monitors]\nlift = true\nlfit = false").unwrap_err();
    assert!(err.to_string().contains("lfit"), "{err}");
}

#[test]
fn overrides_reach_the_scenario() {
    let text = "seed = 7\nduration = 3.0\n[scenario]\npreset = \"two_am_grasp_nocomp\"\ngrasp_depth = 0.03\n[gains]\nk_y = [150.0, 150.0, 2.0]";
    let sc = RunConfig::from_toml_str(text).unwrap().build_scenario().unwrap();
    assert_eq!(sc.settings.seed, 7);
    assert_eq!(sc.spec.duration, 3.0);
    assert_eq!(sc.spec.grasp_depth, 0.03);
    assert_eq!(sc.gains.k_y[(0, 0)], 150.0);
    assert!(!sc.gains.compensate_forces);
}

#[test]
fn resolved_configuration_round_trips() {
    for preset in amgrasp::sim::PRESETS {
        let c = RunConfig::from_toml_str(&format!("[scenario]\npreset = \"{preset}\"")).unwrap();
        let resolved = c.resolved().unwrap();
        let text = resolved.to_toml().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, resolved, "{preset}");
        assert_eq!(back.resolved().unwrap(), resolved);
        let (a, b) = (c.build_scenario().unwrap(), back.build_scenario().unwrap());
        assert_eq!(a.gains, b.gains);
        assert_eq!(a.spec, b.spec);
    }
}

#[test]
fn files_load_and_missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "seed = 3").unwrap();
    assert_eq!(RunConfig::from_file(&path).unwrap().seed, 3);
    let err = RunConfig::from_file(&dir.path().join("missing.toml")).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}
