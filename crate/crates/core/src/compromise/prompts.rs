//! Prompt templates for the four generation strategies.
//!
//! Multi-line view text is collapsed onto one line so that every labelled
//! field occupies exactly one line of the prompt.

use std::fmt::Write;

use crate::text::single_line;

use super::Decomposition;

pub const PREAMBLE: &str = "You are an intelligent AI assistant!";

pub const STEP_1: &str = "Step 1: Identify the suggestions in view_A.";
pub const STEP_2: &str = "Step 2: Identify the suggestions in view_B.";
pub const STEP_3: &str = "Step 3: Identify similarities in suggestion between view_A and view_B.";
pub const STEP_5: &str =
    "Step 5: Estimate empathy similarity scores between each compromise and view_A/view_B, respectively.";

pub const LABEL_VIEW_A: &str = "view_A:";
pub const LABEL_VIEW_B: &str = "view_B:";
pub const LABEL_SUGGESTIONS_A: &str = "Suggestions A:";
pub const LABEL_SUGGESTIONS_B: &str = "Suggestions B:";
pub const LABEL_SIMILARITIES: &str = "Similarities:";
pub const LABEL_POSITIVE: &str = "Positive view:";
pub const LABEL_NEGATIVE: &str = "Negative view:";

/// Marker phrase identifying the external-feedback refinement prompt.
pub const REFINE_MARKER: &str = "scores from the empathic similarity model";

fn response_format(out: &mut String, n: usize) {
    for k in 1..=n {
        let _ = writeln!(out, "Response {k}: [Insert response {k} here]");
    }
}

fn views(out: &mut String, view_a: &str, view_b: &str) {
    let _ = writeln!(out, "{LABEL_VIEW_A} {}", single_line(view_a));
    let _ = writeln!(out, "{LABEL_VIEW_B} {}", single_line(view_b));
}

fn decomposition(out: &mut String, d: &Decomposition) {
    let _ = writeln!(
        out,
        "{LABEL_SUGGESTIONS_A} {}",
        single_line(&d.suggestions_a)
    );
    let _ = writeln!(
        out,
        "{LABEL_SUGGESTIONS_B} {}",
        single_line(&d.suggestions_b)
    );
    let _ = writeln!(out, "{LABEL_SIMILARITIES} {}", single_line(&d.similarities));
}

fn scored_list(out: &mut String, items: &[(String, f64, f64)]) {
    for (k, (text, a, b)) in items.iter().enumerate() {
        let _ = writeln!(out, "Response {}: {}", k + 1, single_line(text));
        let _ = writeln!(out, "Score {}: {a:.4}, {b:.4}", k + 1);
    }
}

/// The basic single prompt with the two rendered views filled in.
pub fn single_prompt(positive: &str, negative: &str, n: usize) -> String {
    let mut p = String::new();
    let _ = write!(
        p,
        "{PREAMBLE}\n\n\
         I need you to generate a third person response strictly based on two contrasting views called positive story and negative story.\n\n\
         The positive and negative story should be equally empathetic towards the response. The response should be a specific suggestion. It should be a compromise between the positive and negative stories based on the context of both stories.\n\n\
         Please generate {n} responses with a fixed format. Try to be as specific and short instead of being comprehensive.\n\n\
         Please provide your response in the following format:\n"
    );
    let _ = writeln!(p, "{LABEL_POSITIVE} {}", single_line(positive));
    let _ = writeln!(p, "{LABEL_NEGATIVE} {}", single_line(negative));
    response_format(&mut p, n);
    p
}

/// Steps 1-3: one request producing the three cached sections.
pub fn decompose(view_a: &str, view_b: &str) -> String {
    let mut p = format!("{PREAMBLE}\n\n");
    views(&mut p, view_a, view_b);
    let _ = write!(
        p,
        "\n{STEP_1}\n{STEP_2}\n{STEP_3}\n\n\
         Please provide your answer in the following format:\n\
         {LABEL_SUGGESTIONS_A} [suggestions in view_A]\n\
         {LABEL_SUGGESTIONS_B} [suggestions in view_B]\n\
         {LABEL_SIMILARITIES} [similarities in suggestion between view_A and view_B]\n"
    );
    p
}

pub fn step4_instruction(n: usize) -> String {
    format!("Step 4: Create {n} empathically neutral compromises using the similarities.")
}

pub fn step6_instruction(n: usize) -> String {
    format!("Step 6: Create {n} better response with higher empathy similarity score.")
}

/// Step 4 given the cached decomposition.
pub fn cot_generate(view_a: &str, view_b: &str, d: &Decomposition, n: usize) -> String {
    let mut p = format!("{PREAMBLE}\n\n");
    views(&mut p, view_a, view_b);
    decomposition(&mut p, d);
    let _ = write!(
        p,
        "\n{}\n\nPlease provide your response in the following format:\n",
        step4_instruction(n)
    );
    response_format(&mut p, n);
    p
}

/// Step 5: ask the model to score its own compromises.
pub fn self_evaluate(
    view_a: &str,
    view_b: &str,
    d: &Decomposition,
    compromises: &[String],
) -> String {
    let mut p = format!("{PREAMBLE}\n\n");
    views(&mut p, view_a, view_b);
    decomposition(&mut p, d);
    p.push_str("\nCompromises:\n");
    for (k, c) in compromises.iter().enumerate() {
        let _ = writeln!(p, "Response {}: {}", k + 1, single_line(c));
    }
    let _ = write!(
        p,
        "\n{STEP_5}\n\n\
         Please provide your scores in the following format, each score between -1 and 1:\n"
    );
    for k in 1..=compromises.len() {
        let _ = writeln!(p, "Score {k}: [score for view_A], [score for view_B]");
    }
    p
}

/// Step 6: improve using the model's own scores.
pub fn self_improve(
    view_a: &str,
    view_b: &str,
    d: &Decomposition,
    scored: &[(String, f64, f64)],
    n: usize,
) -> String {
    let mut p = format!("{PREAMBLE}\n\n");
    views(&mut p, view_a, view_b);
    decomposition(&mut p, d);
    p.push_str("\nCompromises with estimated empathy similarity scores (view_A, view_B):\n");
    scored_list(&mut p, scored);
    let _ = write!(
        p,
        "\n{}\n\nPlease provide your response in the following format:\n",
        step6_instruction(n)
    );
    response_format(&mut p, n);
    p
}

/// Iterative refinement with externally computed scores. Only the cached
/// decomposition and the previous compromises are given, not the views.
pub fn refine(d: &Decomposition, scored: &[(String, f64, f64)], n: usize) -> String {
    let mut p = format!("{PREAMBLE}\n\n");
    decomposition(&mut p, d);
    let _ = writeln!(
        p,
        "\nPrevious compromises with empathy similarity {REFINE_MARKER} \
         (score_A for view_A, score_B for view_B):"
    );
    scored_list(&mut p, scored);
    let _ = write!(
        p,
        "\nA neutral compromise has a high score_A and a high score_B that are as close to each other as possible.\n\
         Create {n} better responses with higher empathy similarity score.\n\n\
         Please provide your response in the following format:\n"
    );
    response_format(&mut p, n);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_prompt_matches_template() {
        let p = single_prompt("pos text", "neg\ntext", 4);
        let expected = "You are an intelligent AI assistant!\n\n\
I need you to generate a third person response strictly based on two contrasting views called positive story and negative story.\n\n\
The positive and negative story should be equally empathetic towards the response. The response should be a specific suggestion. It should be a compromise between the positive and negative stories based on the context of both stories.\n\n\
Please generate 4 responses with a fixed format. Try to be as specific and short instead of being comprehensive.\n\n\
Please provide your response in the following format:\n\
Positive view: pos text\n\
Negative view: neg text\n\
Response 1: [Insert response 1 here]\n\
Response 2: [Insert response 2 here]\n\
Response 3: [Insert response 3 here]\n\
Response 4: [Insert response 4 here]\n";
        assert_eq!(p, expected);
    }

    #[test]
    fn cot_prompt_carries_decomposition_and_n() {
        let d = Decomposition {
            pair_id: "p".into(),
            suggestions_a: "fences".into(),
            suggestions_b: "leash laws".into(),
            similarities: "safety".into(),
        };
        let p = cot_generate("a", "b", &d, 3);
        assert!(p.contains("Suggestions B: leash laws\n"));
        assert!(
            p.contains("Step 4: Create 3 empathically neutral compromises using the similarities.")
        );
        assert!(p.contains("Response 3: [Insert response 3 here]"));
        assert!(!p.contains("Response 4:"));
    }
}
