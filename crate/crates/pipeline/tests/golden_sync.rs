mod common;

#[test]
fn bundled_fixture_matches_the_generator() {
    let files = procopt::golden::generate();
    let dir = common::golden_dir();
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();
    let hint = "regenerate with `cargo run -p procopt --example generate_golden`";
    assert_eq!(read("config.toml"), files.config, "{hint}");
    assert_eq!(read("line_a.csv"), files.line_a, "{hint}");
    assert_eq!(read("line_b.kv"), files.line_b, "{hint}");
}

#[test]
fn bundled_config_loads_and_validates() {
    let config = common::golden_config();
    assert_eq!(config.sources.files.len(), 2);
    assert!(config.sources.files.iter().all(|f| f.content.is_some()));
    assert_eq!(config.objectives.outputs(), vec!["yield".to_string(), "uniformity".to_string()]);
}
