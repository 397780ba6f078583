//! Self-ask agent: the model poses follow-up questions one at a time, each
//! answered by retrieval plus the reader, until it commits to an answer.

use serde::{Deserialize, Serialize};

use super::{answer_question, classify_answer, Answer};
use crate::discourse::Paragraph;
use crate::error::{Error, Result};
use crate::evidence::EvidenceSet;
use crate::gateway::{merge_ledgers, Gateway, UsageLedger, STAGE_SELFASK};
use crate::prompts::{FINAL_ANSWER, FOLLOW_UP, FOLLOW_UPS_NEEDED, INTERMEDIATE_ANSWER, SELFASK_PREAMBLE};

pub const DEFAULT_MAX_HOPS: usize = 4;
pub const SELFASK_REPLY_TOKENS: usize = 128;
/// Consecutive replies without a marker before giving up.
pub const MAX_MALFORMED: usize = 2;

/// Evidence found for one sub-question.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Retrieved {
    pub evidence: EvidenceSet,
    pub paragraphs: Vec<Paragraph>,
}

/// Retrieval used for each follow-up question.
pub trait SubQuestionRetriever {
    fn retrieve(&self, question: &str, ledger: &mut UsageLedger) -> Result<Retrieved>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAskStep {
    pub follow_up: String,
    pub evidence: EvidenceSet,
    pub intermediate_answer: String,
    /// Agent call, retrieval and reader usage of this step.
    pub ledger: UsageLedger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FinalAnswer,
    Malformed,
    Forced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAskState {
    pub question: String,
    pub steps: Vec<SelfAskStep>,
    pub malformed: usize,
    /// Agent calls that did not add a step.
    pub control: UsageLedger,
    pub outcome: Option<(Answer, Termination)>,
}

impl SelfAskState {
    pub fn new(question: &str) -> Self {
        SelfAskState {
            question: question.to_string(),
            steps: Vec::new(),
            malformed: 0,
            control: UsageLedger::new(),
            outcome: None,
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn scratchpad(&self) -> String {
        let mut s = format!("Question: {}\n{FOLLOW_UPS_NEEDED}\n", self.question);
        for step in &self.steps {
            s.push_str(&format!(
                "{FOLLOW_UP} {}\n{INTERMEDIATE_ANSWER} {}\n",
                step.follow_up, step.intermediate_answer
            ));
        }
        s
    }

    fn step_evidence_text(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.intermediate_answer.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAskTrace {
    pub question: String,
    pub steps: Vec<SelfAskStep>,
    #[serde(rename = "final")]
    pub final_answer: Answer,
    pub termination: Termination,
    pub control_ledger: UsageLedger,
    /// Merge of every step ledger and the control ledger.
    pub ledger: UsageLedger,
}

impl SelfAskTrace {
    pub fn evidence(&self) -> EvidenceSet {
        let mut out = EvidenceSet::new();
        for s in &self.steps {
            out.extend(s.evidence.clone());
        }
        out
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Move {
    FollowUp(String),
    Final(String),
    Malformed,
}

fn rest_of_line(s: &str) -> String {
    s.lines().next().unwrap_or_default().trim().to_string()
}

/// The earliest marker in the reply decides the move.
fn parse_move(reply: &str) -> Move {
    let follow = reply.find(FOLLOW_UP);
    let fin = reply.find(FINAL_ANSWER);
    match (follow, fin) {
        (Some(f), Some(a)) if a < f => Move::Final(rest_of_line(&reply[a + FINAL_ANSWER.len()..])),
        (Some(f), _) => {
            let q = rest_of_line(&reply[f + FOLLOW_UP.len()..]);
            if q.is_empty() {
                Move::Malformed
            } else {
                Move::FollowUp(q)
            }
        }
        (None, Some(a)) => Move::Final(rest_of_line(&reply[a + FINAL_ANSWER.len()..])),
        (None, None) => Move::Malformed,
    }
}

fn final_text(s: &str) -> &str {
    s.trim().trim_end_matches('.').trim()
}

fn agent_call(state: &SelfAskState, gateway: &Gateway, suffix: &str, ledger: &mut UsageLedger) -> Result<String> {
    let prompt = format!("{SELFASK_PREAMBLE}{}{suffix}", state.scratchpad());
    let req = gateway.request(prompt, SELFASK_REPLY_TOKENS);
    let resp = gateway
        .complete(&req, ledger, STAGE_SELFASK)
        .map_err(|source| Error::AtCall {
            stage: STAGE_SELFASK.to_string(),
            index: state.steps.len(),
            source,
        })?;
    Ok(resp.text)
}

/// Advances the agent by one model call.
pub fn selfask_step(state: &mut SelfAskState, gateway: &Gateway, retriever: &dyn SubQuestionRetriever) -> Result<()> {
    if state.is_terminated() {
        return Err(Error::Config("self-ask state already terminated".into()));
    }
    let mut ledger = UsageLedger::new();
    let reply = agent_call(state, gateway, "", &mut ledger)?;
    match parse_move(&reply) {
        Move::FollowUp(follow_up) => {
            state.malformed = 0;
            let found = retriever.retrieve(&follow_up, &mut ledger)?;
            let answer = answer_question(&follow_up, &found.paragraphs, gateway, &mut ledger)?;
            state.steps.push(SelfAskStep {
                follow_up,
                evidence: found.evidence,
                intermediate_answer: answer.text,
                ledger,
            });
        }
        Move::Final(text) => {
            state.control.absorb(&ledger);
            let answer = classify_answer(final_text(&text), &state.step_evidence_text());
            state.outcome = Some((answer, Termination::FinalAnswer));
        }
        Move::Malformed => {
            state.control.absorb(&ledger);
            state.malformed += 1;
            tracing::debug!(reply, "self-ask reply had no marker");
            if state.malformed >= MAX_MALFORMED {
                state.outcome = Some((Answer::unanswerable(), Termination::Malformed));
            }
        }
    }
    Ok(())
}

/// Runs the agent until it answers, gives up, or uses `max_hops` follow-up
/// steps, after which one final-answer prompt forces a conclusion.
pub fn selfask_run(
    question: &str,
    gateway: &Gateway,
    retriever: &dyn SubQuestionRetriever,
    max_hops: usize,
) -> Result<SelfAskTrace> {
    if max_hops == 0 {
        return Err(Error::Config("max_hops must be at least 1".into()));
    }
    let mut state = SelfAskState::new(question);
    while !state.is_terminated() && state.steps.len() < max_hops {
        selfask_step(&mut state, gateway, retriever)?;
    }
    if !state.is_terminated() {
        let mut ledger = UsageLedger::new();
        let reply = agent_call(&state, gateway, FINAL_ANSWER, &mut ledger)?;
        state.control.absorb(&ledger);
        let text = match reply.find(FINAL_ANSWER) {
            Some(i) => rest_of_line(&reply[i + FINAL_ANSWER.len()..]),
            None => rest_of_line(&reply),
        };
        let answer = classify_answer(final_text(&text), &state.step_evidence_text());
        state.outcome = Some((answer, Termination::Forced));
    }
    let (final_answer, termination) = state.outcome.expect("terminated");
    let ledger = state
        .steps
        .iter()
        .fold(state.control.clone(), |acc, s| merge_ledgers(&acc, &s.ledger));
    Ok(SelfAskTrace {
        question: state.question,
        steps: state.steps,
        final_answer,
        termination,
        control_ledger: state.control,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptRule, ScriptedBackend, STAGE_ANSWER};
    use crate::qa::AnswerKind;
    use std::cell::RefCell;
    use std::sync::Arc;

    struct Recording {
        asked: RefCell<Vec<String>>,
    }

    impl SubQuestionRetriever for Recording {
        fn retrieve(&self, question: &str, _ledger: &mut UsageLedger) -> Result<Retrieved> {
            self.asked.borrow_mut().push(question.to_string());
            Ok(Retrieved {
                evidence: EvidenceSet::from_local([self.asked.borrow().len() as u32]),
                paragraphs: vec![],
            })
        }
    }

    fn recording() -> Recording {
        Recording {
            asked: RefCell::new(vec![]),
        }
    }

    fn contains(all: &[&str], none: &[&str], reply: &str) -> ScriptRule {
        ScriptRule::Contains {
            all: all.iter().map(|s| s.to_string()).collect(),
            none: none.iter().map(|s| s.to_string()).collect(),
            reply: reply.into(),
        }
    }

    fn gateway(rules: Vec<ScriptRule>) -> Gateway {
        Gateway::new(Arc::new(ScriptedBackend::new(rules)))
    }

    #[test]
    fn marker_parsing() {
        assert_eq!(
            parse_move("Follow up: When was X founded?"),
            Move::FollowUp("When was X founded?".into())
        );
        assert_eq!(parse_move("So the final answer is: 1998"), Move::Final("1998".into()));
        assert_eq!(
            parse_move("So the final answer is: 7\nFollow up: more?"),
            Move::Final("7".into())
        );
        assert_eq!(parse_move("I think so"), Move::Malformed);
        assert_eq!(parse_move("Follow up:   "), Move::Malformed);
    }

    #[test]
    fn one_follow_up_step() {
        let g = gateway(vec![
            contains(&["Follow up: Who founded X?"], &[], "So the final answer is: 1950"),
            contains(&[FOLLOW_UPS_NEEDED], &[], "Follow up: Who founded X?"),
        ]);
        let mut state = SelfAskState::new("When was the founder of X born?");
        let r = recording();
        selfask_step(&mut state, &g, &r).unwrap();
        assert_eq!(state.steps.len(), 1);
        assert_eq!(state.steps[0].follow_up, "Who founded X?");
        assert_eq!(*r.asked.borrow(), vec!["Who founded X?"]);
        selfask_step(&mut state, &g, &r).unwrap();
        let (answer, how) = state.outcome.clone().unwrap();
        assert_eq!((answer.text.as_str(), how), ("1950", Termination::FinalAnswer));
        assert!(selfask_step(&mut state, &g, &r).is_err());
    }

    #[test]
    fn direct_final_answer_has_no_steps() {
        let g = gateway(vec![ScriptRule::Default {
            reply: "So the final answer is: 1998.".into(),
        }]);
        let r = recording();
        let t = selfask_run("Q?", &g, &r, DEFAULT_MAX_HOPS).unwrap();
        assert!(t.steps.is_empty());
        assert_eq!(t.final_answer.text, "1998");
        assert!(r.asked.borrow().is_empty());
        assert_eq!(t.ledger.stage(STAGE_SELFASK).api_calls, 1);
    }

    #[test]
    fn two_malformed_replies_give_up() {
        let g = gateway(vec![ScriptRule::Default { reply: "hmm".into() }]);
        let t = selfask_run("Q?", &g, &recording(), DEFAULT_MAX_HOPS).unwrap();
        assert_eq!(t.termination, Termination::Malformed);
        assert_eq!(t.final_answer.kind, AnswerKind::Unanswerable);
        assert_eq!(t.ledger.stage(STAGE_SELFASK).api_calls, 2);
    }

    #[test]
    fn hop_cap_forces_finalization() {
        let g = gateway(vec![
            contains(&["Follow up: again?\nIntermediate answer:"], &[], "Follow up: again?"),
            contains(&["Answer the question concisely"], &[], "partial"),
            contains(&[FOLLOW_UPS_NEEDED], &["Follow up: again?\n"], "Follow up: again?"),
        ]);
        let t = selfask_run("Q?", &g, &recording(), 1).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.termination, Termination::Forced);
        assert!(selfask_run("Q?", &g, &recording(), 0).is_err());
    }

    #[test]
    fn trace_ledger_is_merge_of_step_ledgers() {
        let g = gateway(vec![
            contains(&["Intermediate answer: Ann"], &[], "So the final answer is: 1950"),
            contains(&["Answer the question concisely"], &[], "Ann"),
            contains(&[FOLLOW_UPS_NEEDED], &[], "Follow up: Who founded X?"),
        ]);
        let t = selfask_run("Q?", &g, &recording(), 4).unwrap();
        assert_eq!(t.steps.len(), 1);
        let merged = t
            .steps
            .iter()
            .fold(t.control_ledger.clone(), |a, s| merge_ledgers(&a, &s.ledger));
        assert_eq!(t.ledger, merged);
        assert_eq!(t.ledger.stage(STAGE_SELFASK).api_calls, 2);
        assert_eq!(t.ledger.stage(STAGE_ANSWER).api_calls, 1);
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["final"]["text"], "1950");
        assert_eq!(json["steps"][0]["evidence"], serde_json::json!(["1"]));
    }
}
