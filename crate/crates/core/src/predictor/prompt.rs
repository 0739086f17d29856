use serde::{Deserialize, Serialize};

/// Instruction line, one block per demonstration, then the query block with
/// an empty output slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub instruction: String,
    #[serde(default = "default_input")]
    pub input_label: String,
    #[serde(default = "default_output")]
    pub output_label: String,
}

fn default_input() -> String {
    "Input:".into()
}
fn default_output() -> String {
    "Output:".into()
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { instruction: String::new(), input_label: default_input(), output_label: default_output() }
    }
}

impl PromptTemplate {
    pub fn question_answer(instruction: impl Into<String>) -> Self {
        Self { instruction: instruction.into(), input_label: "Question:".into(), output_label: "Answer:".into() }
    }

    /// `demos` are `(input, output)` pairs in prompt order. The result ends
    /// right after the query's output label, so a continuation should start
    /// with a space.
    pub fn render(&self, demos: &[(&str, &str)], query: &str) -> String {
        let mut out = String::new();
        if !self.instruction.is_empty() {
            out.push_str(&self.instruction);
            out.push_str("\n\n");
        }
        for (input, output) in demos {
            out.push_str(&format!("{} {}\n{} {}\n\n", self.input_label, input, self.output_label, output));
        }
        out.push_str(&format!("{} {}\n{}", self.input_label, query, self.output_label));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_blocks_in_order() {
        let t = PromptTemplate { instruction: "Classify the topic.".into(), ..PromptTemplate::default() };
        let p = t.render(&[("stocks fell", "Business"), ("late goal", "Sports")], "new chip");
        assert_eq!(
            p,
            "Classify the topic.\n\nInput: stocks fell\nOutput: Business\n\nInput: late goal\nOutput: Sports\n\nInput: new chip\nOutput:"
        );
    }

    #[test]
    fn no_instruction_no_demos() {
        let t = PromptTemplate::question_answer("");
        assert_eq!(t.render(&[], "who?"), "Question: who?\nAnswer:");
    }
}
