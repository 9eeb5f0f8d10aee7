use serde::Serialize;

const WELCOME: &str = include_str!("../../resources/instructions/welcome.txt");
const STORY_A_INTRO: &str = include_str!("../../resources/instructions/story_a_intro.txt");
const STORY_A_AFTER: &str = include_str!("../../resources/instructions/story_a_after.txt");
const STORY_B_INTRO: &str = include_str!("../../resources/instructions/story_b_intro.txt");
const RATING_INTRO: &str = include_str!("../../resources/instructions/rating_intro.txt");

/// Asked once, after the last item.
pub const DEMOGRAPHIC_QUESTIONS: [&str; 6] = [
    "age",
    "gender",
    "income",
    "education",
    "ethnicity",
    "household",
];

/// Verbatim texts shown to raters at each step of the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Instructions {
    pub welcome: &'static str,
    pub story_a_intro: &'static str,
    pub story_a_after: &'static str,
    pub story_b_intro: &'static str,
    /// Template with `{view_a}` and `{view_b}` placeholders; see [`rating_intro`].
    pub rating_intro: &'static str,
    pub demographic_questions: [&'static str; 6],
}

pub fn instructions() -> Instructions {
    Instructions {
        welcome: WELCOME.trim_end(),
        story_a_intro: STORY_A_INTRO.trim_end(),
        story_a_after: STORY_A_AFTER.trim_end(),
        story_b_intro: STORY_B_INTRO.trim_end(),
        rating_intro: RATING_INTRO.trim_end(),
        demographic_questions: DEMOGRAPHIC_QUESTIONS,
    }
}

/// The rating-page preamble with both original suggestions filled in.
pub fn rating_intro(view_a: &str, view_b: &str) -> String {
    RATING_INTRO
        .trim_end()
        .replace("{view_a}", view_a)
        .replace("{view_b}", view_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texts_are_packaged() {
        let i = instructions();
        assert!(i.welcome.starts_with("Welcome to the study."));
        assert!(i
            .story_b_intro
            .ends_with("Press the blue button when you are ready."));
        assert!(i.rating_intro.contains("{view_a}"));
    }

    #[test]
    fn rating_intro_fills_views() {
        let s = rating_intro("more lights", "fewer dogs");
        assert!(s.contains("A's suggested modification: more lights"));
        assert!(s.contains("B's suggested modification: fewer dogs"));
        assert!(!s.contains('{'));
    }
}
