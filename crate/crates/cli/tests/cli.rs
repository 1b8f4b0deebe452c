use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name).to_string_lossy().into_owned()
}

fn tmp(name: &str) -> String {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name).to_string_lossy().into_owned()
}

fn limavg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limavg")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn solve_exit_codes() {
    let yes = limavg(&["solve", &fixture("example1.pomdp")]);
    assert_eq!(code(&yes), 0, "{}", String::from_utf8_lossy(&yes.stderr));
    assert!(stdout(&yes).starts_with("verdict: YES\n"));
    let no = limavg(&["solve", &fixture("blind_zero.pomdp")]);
    assert_eq!(code(&no), 1);
    assert!(stdout(&no).starts_with("verdict: NO\n"));
    let cap = limavg(&["--max-states", "50", "solve", &fixture("example1.pomdp")]);
    assert_eq!(code(&cap), 3);
    assert!(String::from_utf8_lossy(&cap.stderr).contains("50"));
}

#[test]
fn solve_output_is_deterministic() {
    let a = limavg(&["solve", &fixture("example2.pomdp")]);
    let b = limavg(&["solve", &fixture("example2.pomdp")]);
    assert_eq!(a.stdout, b.stdout);
    assert!(!stdout(&a).contains("wall time"));
    let timed = limavg(&["--timing", "solve", &fixture("example2.pomdp")]);
    assert!(stdout(&timed).contains("wall time"));
}

#[test]
fn synthesised_strategy_validates() {
    let out = tmp("example1.strategy");
    assert_eq!(code(&limavg(&["solve", &fixture("example1.pomdp"), "--strategy-out", &out])), 0);
    let v = limavg(&["validate", &fixture("example1.pomdp"), &out]);
    assert_eq!(code(&v), 0, "{}", stdout(&v));
}

#[test]
fn validate_exit_codes() {
    assert_eq!(code(&limavg(&["validate", &fixture("example1.pomdp"), &fixture("sigma4.strategy")])), 0);
    let bad = limavg(&["validate", &fixture("example1.pomdp"), &fixture("sigma1.strategy")]);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("diagnosis"));
}

#[test]
fn input_errors_exit_with_two() {
    assert_eq!(code(&limavg(&["solve", &tmp("does-not-exist.pomdp")])), 2);
    let broken = tmp("broken.pomdp");
    std::fs::write(&broken, "states: s0\nactions a\n").unwrap();
    let out = limavg(&["solve", &broken]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(code(&limavg(&["frobnicate"])), 2);
    assert_eq!(code(&limavg(&["--help"])), 0);
    let t = limavg(&["analyze-chain", &fixture("example1.pomdp"), &fixture("sigma4.strategy"), "--threshold", "2"]);
    assert_eq!(code(&t), 2);
}

#[test]
fn simulate_is_seeded() {
    let args = ["--seed", "4", "simulate", &fixture("example1.pomdp"), &fixture("sigma4.strategy"), "--steps", "500", "--runs", "8"];
    let a = limavg(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, limavg(&args).stdout);
}

#[test]
fn analyze_chain_reports_classes() {
    let out = limavg(&["analyze-chain", &fixture("example1.pomdp"), &fixture("sigma4.strategy"), "--threshold", "1/2"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.matches("recurrent class").count(), 2, "{text}");
    assert!(text.contains("almost-sure LimAvg > 1/2: yes"));
    let s1 = limavg(&["analyze-chain", &fixture("example1.pomdp"), &fixture("sigma1.strategy")]);
    assert_eq!(code(&s1), 1);
}

#[test]
fn pfa_reductions_match_the_library() {
    let p = limavg::format::parse_pfa(&std::fs::read_to_string(fixture("fig5.pfa")).unwrap()).unwrap();
    for (cmd, red) in [
        ("reduce-pfa-quant", limavg::pfa::reduce_quantitative(&p).unwrap()),
        ("reduce-pfa-value1", limavg::pfa::reduce_value1(&p).unwrap()),
    ] {
        let out = tmp(&format!("{cmd}.pomdp"));
        assert_eq!(code(&limavg(&[cmd, &fixture("fig5.pfa"), "--out", &out])), 0);
        let (g, r) = limavg::format::parse_model(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(g, red.pomdp);
        assert_eq!(
            limavg::format::emit_rewards(&g, &r.unwrap()),
            limavg::format::emit_rewards(&red.pomdp, &red.rewards)
        );
    }
}

#[test]
fn belief_observation_check() {
    assert_eq!(code(&limavg(&["check-belief-obs", &fixture("example1.pomdp")])), 0);
    assert_eq!(code(&limavg(&["check-belief-obs", "--reduced", &fixture("example1.pomdp")])), 0);
}

#[test]
fn collapse_writes_a_valid_strategy() {
    let out = tmp("collapsed.strategy");
    let c = limavg(&["collapse", &fixture("example1.pomdp"), &fixture("sigma4.strategy"), "--out", &out]);
    assert_eq!(code(&c), 0, "{}", String::from_utf8_lossy(&c.stderr));
    assert_eq!(code(&limavg(&["validate", &fixture("example1.pomdp"), &out])), 0);
}
