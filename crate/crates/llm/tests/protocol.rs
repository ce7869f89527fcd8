use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use reversal_core::metrics::run_metrics;
use reversal_core::storage::TrialRecord;
use reversal_core::{Action, EnvConfig, Exec, RunStatus};
use reversal_llm::*;

fn trial(t: usize, action: Action, win: bool) -> TrialRecord {
    TrialRecord {
        t,
        action,
        label_shown: None,
        win: win as u8,
        coins: if win { 100 } else { -100 },
        state: None,
        segment: None,
        switch_after: None,
        retries: 0,
        timestamp_ms: None,
    }
}

fn transcript(msgs: &[ChatMessage]) -> String {
    msgs.iter()
        .map(|m| format!("[{}]\n{}\n", serde_json::to_value(m.role).unwrap().as_str().unwrap(), m.content))
        .collect()
}

fn example_history() -> Vec<TrialRecord> {
    vec![trial(1, Action::A0, true), trial(2, Action::A0, false), trial(3, Action::A1, false)]
}

#[test]
fn golden_prompt() {
    let msgs = render_prompt(&example_history(), 4, &PromptVariant::default(), &EnvConfig::default());
    let golden = include_str!("golden/trial4_ev.txt");
    assert_eq!(transcript(&msgs), golden);
    assert!(msgs[1].content.ends_with("\nAnswer:"));
    // pure function of its inputs
    let again = render_prompt(&example_history(), 4, &PromptVariant::default(), &EnvConfig::default());
    assert_eq!(msgs, again);
}

#[test]
fn relabelled_prompt_has_no_default_labels() {
    for name in ["xy", "wl"] {
        let v: PromptVariant = name.parse().unwrap();
        let msgs = render_prompt(&example_history(), 4, &v, &EnvConfig::default());
        for m in &msgs {
            let bare = m
                .content
                .split(|c: char| !c.is_ascii_alphanumeric())
                .any(|w| w == "E" || w == "V");
            assert!(!bare, "{name}: {}", m.content);
        }
        assert!(msgs[1].content.contains(&format!("- Trial 3: choice={}, outcome=-100", v.a1)));
    }
}

#[test]
fn retry_paths() {
    let v = PromptVariant::default();
    let msgs = render_prompt(&[], 1, &v, &EnvConfig::default());

    match run_llm_trial(&MockModel::scripted(["V"]), msgs.clone(), &v, 5, 1) {
        TrialOutcome::Valid { action, log } => {
            assert_eq!(action, Action::A1);
            assert_eq!(log.attempts.len(), 1);
        }
        other => panic!("{other:?}"),
    }

    match run_llm_trial(&MockModel::scripted(["ok", "E"]), msgs.clone(), &v, 5, 1) {
        TrialOutcome::Valid { action, log } => {
            assert_eq!(action, Action::A0);
            assert_eq!(log.attempts.len(), 2);
            assert_eq!(log.count(AttemptOutcome::InvalidFormat), 1);
            assert_eq!(log.attempts[0].raw.as_deref(), Some("ok"));
        }
        other => panic!("{other:?}"),
    }

    let six_bad = MockModel::scripted(["e", "E.", "E V", "", "Venus", "EV", "E"]);
    match run_llm_trial(&six_bad, msgs.clone(), &v, 5, 1) {
        TrialOutcome::NonCompliant { log } => {
            assert_eq!(log.attempts.len(), 6);
            assert!(!log.valid);
        }
        other => panic!("{other:?}"),
    }
    // the seventh reply was never requested
    assert_eq!(six_bad.complete(&msgs).unwrap(), "E");
}

#[test]
fn corrective_message_is_appended_to_the_transcript() {
    let v = PromptVariant::default();
    let seen = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    let seen2 = seen.clone();
    let model = MockModel::from_fn(move |view| {
        seen2.lock().unwrap().push(view.messages.to_vec());
        Ok(if view.corrections == 0 { "Planet E".into() } else { "E".into() })
    });
    let msgs = render_prompt(&[], 1, &v, &EnvConfig::default());
    assert!(matches!(run_llm_trial(&model, msgs, &v, 5, 1), TrialOutcome::Valid { .. }));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let second = &seen[1];
    assert_eq!(second.len(), 4);
    assert_eq!(second[2], ChatMessage::assistant("Planet E"));
    assert_eq!(
        second[3].content,
        "Invalid response. Respond with exactly one uppercase character: E or V."
    );
}

#[test]
fn transport_failures_share_the_budget_and_are_logged_apart() {
    let v = PromptVariant::default();
    let model = MockModel::scripted_results([
        Err(TransportError::new("connection reset")),
        Ok("x".into()),
        Err(TransportError::new("HTTP 503")),
        Ok("V".into()),
    ]);
    let msgs = render_prompt(&[], 1, &v, &EnvConfig::default());
    let out = run_llm_trial(&model, msgs, &v, 5, 1);
    let log = out.log();
    assert_eq!(log.count(AttemptOutcome::Transport), 2);
    assert_eq!(log.count(AttemptOutcome::InvalidFormat), 1);
    assert_eq!(log.attempts[0].error.as_deref(), Some("connection reset"));
    assert!(matches!(out, TrialOutcome::Valid { action: Action::A1, .. }));
}

#[test]
fn experiment_with_valid_mock() {
    let v = PromptVariant::default();
    let res = run_llm_experiment(
        &MockModel::wsls(v),
        &LlmEndpointConfig::default(),
        &EnvConfig::default(),
        &v,
        5,
        Exec::Parallel,
    )
    .unwrap();
    assert_eq!(res.runs.len(), 5);
    for r in &res.runs {
        assert_eq!(r.status, RunStatus::Complete);
        assert_eq!(r.trials.len(), 250);
        r.validate().unwrap();
        assert!(r.trials.iter().all(|t| t.label_shown == Some(v.label(t.action))));
    }
    assert_eq!(res.summary.n_complete, 5);
    assert_eq!(res.summary.total_attempts, 1250);
    assert_eq!(res.summary.invalid_rate, 0.0);
}

#[test]
fn failure_at_trial_100_keeps_99_trials() {
    let v = PromptVariant::default();
    let model = MockModel::failing_from(100, MockModel::wsls(v));
    let res = run_llm_experiment(&model, &LlmEndpointConfig::default(), &EnvConfig::default(), &v, 2, Exec::Sequential)
        .unwrap();
    for r in &res.runs {
        assert_eq!(r.status, RunStatus::Incomplete);
        assert_eq!(r.trials.len(), 99);
        assert_eq!(r.invalid_attempt_count, 6);
        let m = run_metrics(r).unwrap();
        assert_eq!(m.n_trials, 99);
        assert_eq!(m.total_wins, r.trials.iter().filter(|t| t.win == 1).count());
    }
    let s = &res.summary;
    assert_eq!(s.n_incomplete, 2);
    assert_eq!(s.total_attempts, 2 * (99 + 6));
    assert_eq!(s.invalid_attempts, 12);
    assert_eq!(s.invalid_rate, 12.0 / 210.0);
}

#[test]
fn order_swap_keeps_abstract_trajectories() {
    let ev = PromptVariant::default();
    let ve: PromptVariant = "ve".parse().unwrap();
    let run = |v: PromptVariant| {
        run_llm_experiment(&MockModel::wsls(v), &LlmEndpointConfig::default(), &EnvConfig::default(), &v, 3, Exec::Sequential)
            .unwrap()
            .runs
    };
    let a = run(ev);
    let b = run(ve);
    for (x, y) in a.iter().zip(&b) {
        let ax: Vec<Action> = x.trials.iter().map(|t| t.action).collect();
        let ay: Vec<Action> = y.trials.iter().map(|t| t.action).collect();
        assert_eq!(ax, ay);
    }
}

/// One-shot HTTP server answering a single request with `body`.
fn serve_once(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let response = format!(
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream);
        let mut head = String::new();
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).unwrap();
        reader.get_mut().write_all(response.as_bytes()).unwrap();
        head + &String::from_utf8(body).unwrap()
    });
    (format!("http://{addr}/v1"), handle)
}

#[test]
fn openai_compatible_client_round_trip() {
    let (url, server) = serve_once("200 OK", r#"{"choices":[{"message":{"role":"assistant","content":" V\n"}}]}"#);
    let cfg = LlmEndpointConfig {
        base_url: url,
        model: "test-model".into(),
        api_key_env: "REVERSAL_TEST_NO_SUCH_KEY".into(),
        ..Default::default()
    };
    let client = OpenAiCompatible::new(cfg).unwrap();
    let v = PromptVariant::default();
    let msgs = render_prompt(&[], 1, &v, &EnvConfig::default());
    let out = run_llm_trial(&client, msgs, &v, 0, 1);
    assert!(matches!(out, TrialOutcome::Valid { action: Action::A1, .. }), "{out:?}");
    let request = server.join().unwrap();
    assert!(request.starts_with("POST /v1/chat/completions "));
    let body: serde_json::Value = serde_json::from_str(request.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["top_p"], 1.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
}

#[test]
fn http_errors_are_transport_failures() {
    let (url, server) = serve_once("503 Service Unavailable", r#"{"error":"busy"}"#);
    let cfg = LlmEndpointConfig {
        base_url: url,
        api_key_env: "REVERSAL_TEST_NO_SUCH_KEY".into(),
        ..Default::default()
    };
    let client = OpenAiCompatible::new(cfg).unwrap();
    let err = client.complete(&[ChatMessage::user("hi")]).unwrap_err();
    assert!(err.message.contains("503"), "{err}");
    server.join().unwrap();
}
