//! Pipeline combinations driven by scripted backends.

use std::sync::Arc;

use pseudonym::detection::Gazetteer;
use pseudonym::detection::{detect_prompt, DetectionPromptTemplate};
use pseudonym::generation::CandidatePool;
use pseudonym::model::EntityCategory;
use pseudonym::pipeline::{
    pseudonymize, restore_output, BackendSet, DetectorKind, GeneratorKind, PipelineConfig,
    ReplacerKind,
};
use pseudonym::replacement::replace_direct;
use pseudonym_mocks::{ChatScriptStep, ScriptedChatClient, ScriptedPredictor};

fn location_pool() -> Arc<CandidatePool> {
    Arc::new(
        CandidatePool::new(
            [
                "Erlangen",
                "Keswick",
                "Bristol",
                "Marsden",
                "Thompson",
                "Lyon City",
            ]
            .into_iter()
            .map(|e| (e.to_string(), EntityCategory::Location)),
        )
        .unwrap(),
    )
}

#[test]
fn prompt_detection_parses_and_locates() {
    let client = ScriptedChatClient::new([ChatScriptStep::content(
        r#"[{"text": "Alice", "category": "person"}]"#,
    )]);
    let detection =
        detect_prompt("Alice left.", &client, &DetectionPromptTemplate::default()).unwrap();
    assert_eq!(detection.entities.len(), 1);
    let occ = &detection.entities.occurrences()[0];
    assert_eq!((occ.start, occ.end), (0, 5));
    assert_eq!(occ.category, EntityCategory::Person);
    assert!(detection.dropped.is_empty());
}

#[test]
fn prompt_detection_drops_hallucinated_entities() {
    let client = ScriptedChatClient::new([ChatScriptStep::content(
        r#"[{"text": "Zurich", "category": "location"}]"#,
    )]);
    let detection =
        detect_prompt("Alice left.", &client, &DetectionPromptTemplate::default()).unwrap();
    assert!(detection.entities.is_empty());
    assert_eq!(detection.dropped, vec!["Zurich".to_string()]);
}

#[test]
fn prompt_detection_empty_answer_is_empty_set() {
    let client = ScriptedChatClient::new([ChatScriptStep::content("[]")]);
    let detection =
        detect_prompt("Alice left.", &client, &DetectionPromptTemplate::default()).unwrap();
    assert!(detection.entities.is_empty());
}

#[test]
fn prompt_detection_retries_after_malformed_output() {
    let client = ScriptedChatClient::new([
        ChatScriptStep::content("Sure! The entities are Alice (a person)."),
        ChatScriptStep::content(r#"[{"text": "Alice", "category": "person"}]"#),
    ]);
    let detection =
        detect_prompt("Alice left.", &client, &DetectionPromptTemplate::default()).unwrap();
    assert_eq!(detection.entities.len(), 1);
    // The retry nudge is the second request.
    let captures = client.captures().all();
    assert_eq!(captures.len(), 2);
    assert!(captures[1].last().unwrap().content.contains("valid JSON"));
}

#[test]
fn prompt_detection_fails_after_two_malformed_outputs() {
    let client = ScriptedChatClient::new([
        ChatScriptStep::content("no json 1"),
        ChatScriptStep::content("still no json"),
    ]);
    let err =
        detect_prompt("Alice left.", &client, &DetectionPromptTemplate::default()).unwrap_err();
    assert!(err.to_string().contains("unparseable"));
}

#[test]
fn generative_pipeline_matches_direct_pipeline() {
    let text = "Thann lies outside Mulhouse, and Thann is small.";
    let gazetteer = Arc::new(
        Gazetteer::new([
            ("Thann".to_string(), EntityCategory::Location),
            ("Mulhouse".to_string(), EntityCategory::Location),
        ])
        .unwrap(),
    );
    let direct_config = PipelineConfig::new(
        DetectorKind::Gazetteer,
        GeneratorKind::Random,
        ReplacerKind::Direct,
    )
    .with_seed(11);
    let generative_config = PipelineConfig::new(
        DetectorKind::Gazetteer,
        GeneratorKind::Random,
        ReplacerKind::Generative,
    )
    .with_seed(11);

    let direct_backends = BackendSet {
        gazetteer: Some(gazetteer.clone()),
        pool: Some(location_pool()),
        ..BackendSet::default()
    };
    let generative_backends = BackendSet {
        gazetteer: Some(gazetteer),
        pool: Some(location_pool()),
        predictor_factory: Some(Arc::new(|source: &str| {
            Box::new(ScriptedPredictor::echo(source)) as Box<dyn pseudonym::TokenPredictor>
        })),
        ..BackendSet::default()
    };

    let (direct, direct_session) = pseudonymize(text, &direct_config, &direct_backends).unwrap();
    let (generative, generative_session) =
        pseudonymize(text, &generative_config, &generative_backends).unwrap();
    assert_eq!(direct.text, generative.text);
    assert_eq!(direct_session.mapping, generative_session.mapping);
    assert_eq!(restore_output(&generative.text, &generative_session), text);
}

#[test]
fn tag_replace_pipeline_consumes_every_placeholder() {
    let text = "John Edward Bates, formerly of Spalding, is now living in London.";
    let tagged = "<ENT>, formerly of <ENT>, is now living in <ENT>.";
    let pool = Arc::new(
        CandidatePool::new(
            ["Mary Ann Clark", "Keswick", "Bristol"]
                .into_iter()
                .map(|e| (e.to_string(), EntityCategory::Person)),
        )
        .unwrap(),
    );
    let config = PipelineConfig::new(
        DetectorKind::TagRep,
        GeneratorKind::Random,
        ReplacerKind::Generative,
    )
    .with_seed(3);
    let backends = BackendSet {
        pool: Some(pool),
        predictor_factory: Some(Arc::new(move |_source: &str| {
            Box::new(ScriptedPredictor::emit_tagged(tagged)) as Box<dyn pseudonym::TokenPredictor>
        })),
        ..BackendSet::default()
    };
    let (result, session) = pseudonymize(text, &config, &backends).unwrap();
    assert!(!result.text.contains("<ENT>"));
    assert_eq!(session.mapping.len(), 3);
    assert_eq!(result.offset_map.len(), 3);
    assert_eq!(restore_output(&result.text, &session), text);
}

#[test]
fn tag_mark_pipeline_with_prompt_generator() {
    let text = "Spalding is quiet.";
    let tagged = "<ENT>Spalding</ENT> is quiet.";
    let chat = Arc::new(ScriptedChatClient::new([ChatScriptStep::content(
        "Keswick",
    )]));
    let config = PipelineConfig::new(
        DetectorKind::TagMark,
        GeneratorKind::Prompt,
        ReplacerKind::Generative,
    );
    let backends = BackendSet {
        chat: Some(chat),
        predictor_factory: Some(Arc::new(move |_source: &str| {
            Box::new(ScriptedPredictor::emit_tagged(tagged)) as Box<dyn pseudonym::TokenPredictor>
        })),
        ..BackendSet::default()
    };
    let (result, session) = pseudonymize(text, &config, &backends).unwrap();
    assert_eq!(result.text, "Keswick is quiet.");
    assert_eq!(session.mapping.len(), 1);
    assert_eq!(restore_output(&result.text, &session), text);
}

#[test]
fn prompt_replacer_pipeline_validates_and_falls_back() {
    let text = "Thann is small.";
    let gazetteer =
        Arc::new(Gazetteer::new([("Thann".to_string(), EntityCategory::Location)]).unwrap());
    // The rewrite leaks the original, so the direct replacer output wins.
    let chat = Arc::new(ScriptedChatClient::new([ChatScriptStep::content(
        "Thann is still here.",
    )]));
    let config = PipelineConfig::new(
        DetectorKind::Gazetteer,
        GeneratorKind::Random,
        ReplacerKind::Prompt,
    )
    .with_seed(5);
    let backends = BackendSet {
        gazetteer: Some(gazetteer),
        pool: Some(location_pool()),
        chat: Some(chat),
        ..BackendSet::default()
    };
    let (result, session) = pseudonymize(text, &config, &backends).unwrap();
    assert_eq!(session.mapping.len(), 1);
    let expected = replace_direct(text, &session.mapping);
    assert_eq!(result.text, expected.text);
}
