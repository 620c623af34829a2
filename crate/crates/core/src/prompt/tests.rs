use super::*;
use crate::bank::tests::ok_record;
use crate::presets;

fn spots() -> TaskDescriptor {
    let mut td = TaskDescriptor::new(presets::SYNTH_SPOTS);
    presets::apply(&mut td);
    td
}

const LIMITS: CoderLimits = CoderLimits { pairs: 3, round_cap: 20 };

fn sealed_records() -> Vec<TrialRecord> {
    (0..8)
        .map(|i| {
            let mut r = ok_record("base-r00", 0.1 * i as f64, 424242.0);
            r.trial_id = format!("base-r00-t{i:04}");
            r.created_seq = i as u64;
            r
        })
        .collect()
}

#[test]
fn base_agent_bundle() {
    let agent = AgentConfig::default();
    let bundle = assemble_coder_prompts(&spots(), &agent, LIMITS, None).unwrap();
    let text = &bundle.initial_user_message;
    assert!(text.contains(DATA_HEADING) && text.contains(API_HEADING));
    assert!(text.contains("skimage.feature.peak_local_max"));
    assert!(!text.contains(EXPERT_HEADING) && !text.contains(BANK_HEADING));
    for name in ["preprocess_images_1", "preprocess_images_3", "postprocess_preds_3"] {
        assert!(bundle.system_instructions.contains(name), "{name}");
    }
    assert!(bundle.system_instructions.contains("exactly one fenced code block"));
    assert!(bundle.system_instructions.contains("preprocess_images_<i>:<metric>:<score>"));
    assert!(bundle.system_instructions.contains(TERMINATE));
}

#[test]
fn no_api_list_omits_section() {
    let agent = AgentConfig {
        api_list_enabled: false,
        ..AgentConfig::default()
    };
    let bundle = assemble_coder_prompts(&spots(), &agent, LIMITS, None).unwrap();
    assert!(!bundle.initial_user_message.contains(API_HEADING));
    assert!(!bundle.initial_user_message.contains("peak_local_max`"));
    assert_eq!(bundle.component_fingerprint["api_list"], false);
}

#[test]
fn expert_source_embedded() {
    let agent = AgentConfig {
        expert_functions_enabled: true,
        ..AgentConfig::default()
    };
    let task = spots();
    let bundle = assemble_coder_prompts(&task, &agent, LIMITS, None).unwrap();
    assert!(bundle.initial_user_message.contains(EXPERT_HEADING));
    assert!(bundle
        .initial_user_message
        .contains(task.expert_post_source.as_deref().unwrap().trim_end()));
}

#[test]
fn toggles_are_faithful_for_all_combinations() {
    let records = sealed_records();
    let refs: Vec<&TrialRecord> = records.iter().collect();
    let block = render_bank_sample(&refs[5..], &refs[..2]).unwrap();
    for mask in 0..16u8 {
        let agent = AgentConfig {
            data_prompt_enabled: mask & 1 != 0,
            api_list_enabled: mask & 2 != 0,
            expert_functions_enabled: mask & 4 != 0,
            function_bank_enabled: mask & 8 != 0,
            ..AgentConfig::default()
        };
        let sample = agent.function_bank_enabled.then_some(&block);
        let bundle = assemble_coder_prompts(&spots(), &agent, LIMITS, sample).unwrap();
        let text = &bundle.initial_user_message;
        assert_eq!(text.contains(DATA_HEADING), agent.data_prompt_enabled, "{mask}");
        assert_eq!(text.contains(API_HEADING), agent.api_list_enabled, "{mask}");
        assert_eq!(text.contains(EXPERT_HEADING), agent.expert_functions_enabled, "{mask}");
        assert_eq!(text.contains(BANK_HEADING), agent.function_bank_enabled, "{mask}");
        assert_eq!(bundle.component_fingerprint["data_prompt"], agent.data_prompt_enabled);
        assert_eq!(bundle.component_fingerprint["function_bank"], agent.function_bank_enabled);
        assert!(!text.contains("424242"));
    }
}

#[test]
fn rendering_is_deterministic() {
    let records = sealed_records();
    let refs: Vec<&TrialRecord> = records.iter().collect();
    let agent = AgentConfig {
        function_bank_enabled: true,
        ..AgentConfig::default()
    };
    let a = render_bank_sample(&refs[..3], &refs[5..]).unwrap();
    let b = render_bank_sample(&refs[..3], &refs[5..]).unwrap();
    assert_eq!(
        assemble_coder_prompts(&spots(), &agent, LIMITS, Some(&a)).unwrap(),
        assemble_coder_prompts(&spots(), &agent, LIMITS, Some(&b)).unwrap()
    );
}

#[test]
fn bank_block_labels_and_format() {
    let records = sealed_records();
    let refs: Vec<&TrialRecord> = records.iter().collect();
    let block = render_bank_sample(&[refs[7], refs[6]], &[refs[0]]).unwrap();
    let labels: Vec<&str> = block.entries.iter().map(|e| e.rank_label.as_str()).collect();
    assert_eq!(labels, ["Top-1", "Top-2", "Bottom-1"]);
    let text = block.render();
    assert!(text.contains("### Top-1 (validation objective 0.7000;"));
    assert!(text.contains("### Bottom-1 (validation objective 0.0000;"));
    assert!(text.contains(&records[7].candidate.pre_source));
    assert!(!text.contains("424242"));
    assert_eq!(
        render_bank_sample(&[refs[1]], &[refs[1]]),
        Err(OverlapError(refs[1].trial_id.clone()))
    );
}

#[test]
fn tuned_variant_renders_bound_parameters() {
    let mut record = ok_record("a", 0.9, 0.1);
    record.params.insert("f1_pre_p1".into(), serde_json::json!(0.73));
    record.params.insert("f1_pre_flag".into(), serde_json::json!(true));
    let block = render_bank_sample(&[&record], &[]).unwrap();
    let text = block.render();
    assert!(text.contains("f1_pre_p1 = 0.73\n"));
    assert!(text.contains("f1_pre_flag = True\n"));
}

#[test]
fn feedback_formats() {
    let mut ok = ExecutionResult::failed("x", ExecStatus::Ok, "");
    ok.metrics_val.insert("f1_score".into(), 0.91);
    ok.metrics_test.insert("f1_score".into(), 424242.0);
    assert_eq!(format_execution_feedback("preprocess_images_2", &ok), "preprocess_images_2:f1_score:0.9100");

    let long = format!("Traceback\n{}ZeroDivisionError: division by zero", "x".repeat(10_000));
    let err = ExecutionResult::failed("y", ExecStatus::Error, long.clone());
    let text = format_execution_feedback("preprocess_images_1", &err);
    assert!(text.contains("[... "));
    assert!(text.ends_with("ZeroDivisionError: division by zero"));
    let body = text.split_once("truncated ...]\n").unwrap().1;
    assert_eq!(body.chars().count(), FEEDBACK_LIMIT);

    let mut timeout = ExecutionResult::failed("z", ExecStatus::Timeout, "");
    timeout.duration_s = 2.0;
    assert_eq!(
        format_execution_feedback("preprocess_images_3", &timeout),
        "preprocess_images_3: execution timed out after 2s"
    );
}

#[test]
fn truncation_keeps_short_text() {
    assert_eq!(truncate_tail("abc", 4000), "abc");
    assert_eq!(truncate_tail("ééééé", 2), "[... 3 earlier characters truncated ...]\néé");
}

#[test]
fn automl_prompt_enumerates_entries() {
    let records = sealed_records();
    let refs: Vec<&TrialRecord> = records.iter().rev().take(3).collect();
    let bundle = assemble_automl_prompt(&spots(), &refs, 3).unwrap();
    let text = &bundle.initial_user_message;
    for i in 1..=3 {
        assert!(text.contains(&format!("### Entry {i} ")));
        assert!(text.contains(&format!("`preprocess_images_{i}`")));
        assert!(text.contains(&format!("`postprocess_preds_{i}`")));
    }
    assert!(!text.contains("424242"));
    assert!(text.contains("\"default_params\""));
    assert!(bundle.system_instructions.contains("exactly one ```python block containing the 6 functions"));
    assert_eq!(
        assemble_automl_prompt(&spots(), &refs[..1], 3),
        Err(PromptError::Arity(ArityError { expected: 3, found: 1 }))
    );
}

#[test]
fn templates_have_no_unknown_placeholders() {
    let hashes = template_hashes();
    assert_eq!(hashes.len(), 8);
    assert!(hashes.values().all(|h| h.len() == 64));
}
