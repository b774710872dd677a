use probias::embedder::{
    fetch_description, render_prompt, stub_description, CodeDescription, DescriptionCache,
    DescriptionSource, FetchMode, FrozenHashEmbedder, LlmConfig, LLM_TOKEN_ENV,
};

#[test]
fn prompt_covers_the_three_content_sections() {
    let p = render_prompt("270.6", "urea cycle disorder").unwrap();
    assert!(p.contains("270.6"));
    assert!(p.contains("urea cycle disorder"));
    assert!(p.contains("## Clinical context"));
    assert!(p.contains("## Procedural and diagnostic detail"));
    assert!(p.contains("## Common comorbidities"));
    // same inputs, same prompt
    assert_eq!(p, render_prompt("270.6", "urea cycle disorder").unwrap());
}

#[test]
fn prompt_rejects_empty_name() {
    assert!(render_prompt("270.6", "").is_err());
}

#[test]
fn stub_description_is_deterministic_and_mentions_the_code() {
    let s = stub_description("428.0", "congestive heart failure");
    assert_eq!(s, stub_description("428.0", "congestive heart failure"));
    assert!(s.contains("428.0"));
    assert!(s.contains("congestive heart failure"));
    assert_ne!(s, stub_description("428.1", "congestive heart failure"));
}

#[test]
fn token_env_var_name_is_stable() {
    assert_eq!(LLM_TOKEN_ENV, "PROBIAS_LLM_TOKEN");
}

#[test]
fn stub_fetch_populates_cache_and_rereads_from_it() {
    let mut cache = DescriptionCache::default();
    let llm = LlmConfig::default();
    let first =
        fetch_description("042", "hiv disease", FetchMode::Stub, &llm, &mut cache, false).unwrap();
    assert_eq!(first.source, DescriptionSource::Stub);
    assert_eq!(cache.len(), 1);
    // second fetch hits the cache and reports it, text unchanged
    let second =
        fetch_description("042", "hiv disease", FetchMode::Stub, &llm, &mut cache, false).unwrap();
    assert_eq!(second.source, DescriptionSource::Cache);
    assert_eq!(second.text, first.text);
    assert_eq!(cache.len(), 1);
}

#[test]
fn remote_without_endpoint_errors_or_falls_back() {
    let mut cache = DescriptionCache::default();
    let llm = LlmConfig::default();
    let err = fetch_description("042", "hiv disease", FetchMode::Remote, &llm, &mut cache, false);
    assert!(err.is_err());
    let ok =
        fetch_description("042", "hiv disease", FetchMode::Remote, &llm, &mut cache, true).unwrap();
    assert_eq!(ok.source, DescriptionSource::Stub);
    assert_eq!(ok.text, stub_description("042", "hiv disease"));
}

#[test]
fn cache_round_trips_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("descriptions.jsonl");
    let mut cache = DescriptionCache::default();
    cache.insert(CodeDescription {
        code: "038.9".into(),
        text: "a long description".into(),
        source: DescriptionSource::Remote,
    });
    cache.insert(CodeDescription {
        code: "244.9".into(),
        text: "another".into(),
        source: DescriptionSource::Stub,
    });
    cache.save(&path).unwrap();
    let loaded = DescriptionCache::load(&path).unwrap();
    assert_eq!(loaded.len(), 2);
    assert_eq!(loaded.get("038.9").unwrap().text, "a long description");
    assert_eq!(loaded.get("038.9").unwrap().source, DescriptionSource::Remote);
    assert!(loaded.get("999").is_none());
    // a missing file is just an empty cache
    assert!(DescriptionCache::load(&dir.path().join("absent.jsonl"))
        .unwrap()
        .is_empty());
}

#[test]
fn cache_load_reports_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"code\":\"1\",\"description\":\"x\",\"source\":\"stub\"}\nnot json\n")
        .unwrap();
    let err = DescriptionCache::load(&path).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn frozen_embedder_is_a_pure_function_of_text() {
    let e = FrozenHashEmbedder::new(16, 0x1234);
    let a = e.embed("urea cycle disorder");
    assert_eq!(a, e.embed("urea cycle disorder"));
    // tokenization is case-insensitive and whitespace-driven
    assert_eq!(a, e.embed("  Urea   CYCLE disorder "));
    assert_ne!(a, e.embed("urea cycle disorders"));
    assert_ne!(a, FrozenHashEmbedder::new(16, 0x9999).embed("urea cycle disorder"));
    assert_eq!(a.shape(), &[16]);
    assert!(a.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn embedding_is_the_mean_of_token_vectors() {
    let e = FrozenHashEmbedder::new(8, 7);
    let a = e.embed("fever");
    let b = e.embed("cough");
    let both = e.embed("fever cough");
    for i in 0..8 {
        let want = (a.data()[i] + b.data()[i]) / 2.0;
        assert!((both.data()[i] - want).abs() < 1e-15);
    }
    // repeated tokens shift the mean toward that token
    let heavy = e.embed("fever fever cough");
    for i in 0..8 {
        let want = (2.0 * a.data()[i] + b.data()[i]) / 3.0;
        assert!((heavy.data()[i] - want).abs() < 1e-15);
    }
    assert!(e.embed("").data().iter().all(|&v| v == 0.0));
}

#[test]
fn embed_all_stacks_rows_in_input_order() {
    let e = FrozenHashEmbedder::new(4, 1);
    let texts = vec!["alpha".to_string(), "beta".to_string()];
    let m = e.embed_all(&texts);
    assert_eq!(m.shape(), &[2, 4]);
    assert_eq!(m.row(0), e.embed("alpha").data());
    assert_eq!(m.row(1), e.embed("beta").data());
}
