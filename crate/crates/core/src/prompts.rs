//! Prompt templates. Each builder is the single place its wording lives;
//! the scripted oracle backend recognises prompts by these markers.

pub const SECTION_HEADER_PREFIX: &str = "* Section: ";
pub const SECTION_STRUCTURE_HEAD: &str = "Document section structure:";
pub const QUESTION_HEAD: &str = "Question:";

pub const SECTION_INSTRUCTION: &str = "List all section names that may be relevant for answering the question. Respond with comma-separated section name list. Provide an empty response if none of the sections are relevant.";

pub const BASE_INSTRUCTION: &str = "Find paragraph ids that contains relevant information for answering the question. Respond with comma-separated id list. Provide an empty response if none of the paragraphs are relevant.";

pub const PARAGRAPH_HEAD: &str = "Paragraph:";
pub const BOOLEAN_INSTRUCTION: &str = "Is this paragraph relevant for answering the question? Answer Yes or No.";

pub const EVIDENCE_HEAD: &str = "Evidence:";
pub const ANSWER_INSTRUCTION: &str = "Answer the question concisely using only the evidence above. Reply \"Yes\" or \"No\" if it is a yes/no question. Reply exactly \"Unanswerable\" if the evidence is insufficient.";

pub const SUMMARIZE_HEAD: &str = "Summarize the following text in at most";
pub const SUMMARY_TAIL: &str = "Summary:";

pub const FOLLOW_UP: &str = "Follow up:";
pub const INTERMEDIATE_ANSWER: &str = "Intermediate answer:";
pub const FINAL_ANSWER: &str = "So the final answer is:";
pub const FOLLOW_UPS_NEEDED: &str = "Are follow up questions needed here: Yes.";

pub const SELFASK_PREAMBLE: &str = "Answer the question by breaking it into simpler follow-up questions. Each follow-up question is answered from the documents and the answer is shown after \"Intermediate answer:\". Ask one follow-up question at a time using \"Follow up:\". When the answer is known, reply \"So the final answer is:\" followed by the answer.\n\n";

pub fn section_prompt(condensed_rendering: &str, question: &str) -> String {
    format!("{SECTION_STRUCTURE_HEAD}\n{condensed_rendering}\n{QUESTION_HEAD}\n{question}\n{SECTION_INSTRUCTION}")
}

pub fn base_prompt(annotated_paragraphs: &str, question: &str) -> String {
    format!("{annotated_paragraphs}\n{QUESTION_HEAD}\n{question}\n{BASE_INSTRUCTION}")
}

pub fn boolean_prompt(paragraph: &str, question: &str) -> String {
    format!("{PARAGRAPH_HEAD}\n{paragraph}\n{QUESTION_HEAD}\n{question}\n{BOOLEAN_INSTRUCTION}")
}

pub fn answer_prompt(evidence: &str, question: &str) -> String {
    format!("{EVIDENCE_HEAD}\n{evidence}\n{QUESTION_HEAD}\n{question}\n{ANSWER_INSTRUCTION}")
}

pub fn summarize_prompt(text: &str, budget_tokens: usize) -> String {
    format!("{SUMMARIZE_HEAD} {budget_tokens} tokens.\nText:\n{text}\n{SUMMARY_TAIL}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_prompt_golden() {
        let got = section_prompt("* Section: Data\nWe use SQuAD.", "What dataset?");
        let want = "Document section structure:\n* Section: Data\nWe use SQuAD.\nQuestion:\nWhat dataset?\nList all section names that may be relevant for answering the question. Respond with comma-separated section name list. Provide an empty response if none of the sections are relevant.";
        assert_eq!(got, want);
    }

    #[test]
    fn base_prompt_golden() {
        let got = base_prompt("[0] alpha\n[3] beta", "Which?");
        let want = "[0] alpha\n[3] beta\nQuestion:\nWhich?\nFind paragraph ids that contains relevant information for answering the question. Respond with comma-separated id list. Provide an empty response if none of the paragraphs are relevant.";
        assert_eq!(got, want);
    }

    #[test]
    fn boolean_prompt_golden() {
        let got = boolean_prompt("Text.", "Q?");
        assert_eq!(
            got,
            "Paragraph:\nText.\nQuestion:\nQ?\nIs this paragraph relevant for answering the question? Answer Yes or No."
        );
    }
}
