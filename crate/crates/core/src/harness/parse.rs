use crate::benchmark::AnswerOption;

/// Recorded in every result so scores can be traced to the extraction rules.
pub const PARSER_VERSION: &str = "cascade-v1";

/// Extracts the chosen option letter from a model response.
///
/// Rules, first hit wins:
/// 1. the whole response is one option letter, optionally followed by `.` or `)`;
/// 2. the first standalone single-letter token that is an option letter;
/// 3. the text of exactly one option appears verbatim.
///
/// Rules 1 and 2 ignore case.
pub fn parse_choice(response: &str, options: &[AnswerOption]) -> Option<char> {
    let as_option = |c: char| {
        let up = c.to_ascii_uppercase();
        options.iter().any(|o| o.letter == up).then_some(up)
    };

    let trimmed = response.trim();
    let core = trimmed
        .strip_suffix('.')
        .or_else(|| trimmed.strip_suffix(')'))
        .unwrap_or(trimmed);
    let mut chars = core.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if let Some(l) = as_option(c) {
            return Some(l);
        }
    }

    let token = response
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() == 1)
        .find_map(|t| t.chars().next().and_then(as_option));
    if token.is_some() {
        return token;
    }

    let mut hits = options
        .iter()
        .filter(|o| !o.text.is_empty() && response.contains(o.text.as_str()));
    match (hits.next(), hits.next()) {
        (Some(o), None) => Some(o.letter),
        _ => None,
    }
}
