//! Self-contained explanation reports and their heatmap renderings.

use std::fmt::Write as _;

use promptlens_core::metrics::{AccuracyReport, FidelityReport};
use promptlens_core::pipeline::Explanation;
use promptlens_core::surrogate::Sign;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub fidelity: Option<FidelityReport>,
    pub accuracy: Option<AccuracyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderHints {
    pub title: String,
    pub show_p_values: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub explanation: Explanation,
    pub metrics: MetricsBlock,
    pub render: RenderHints,
}

#[derive(Debug)]
pub struct SchemaMismatch(pub String);

impl std::fmt::Display for SchemaMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "not a valid report: {}", self.0)
    }
}

impl std::error::Error for SchemaMismatch {}

impl ReportDocument {
    pub fn new(explanation: Explanation) -> Self {
        let show_p_values = explanation.config.significance.enabled;
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            metrics: MetricsBlock {
                fidelity: explanation.fidelity.clone(),
                accuracy: None,
            },
            render: RenderHints {
                title: "Token attribution".into(),
                show_p_values,
            },
            explanation,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaMismatch> {
        let doc: Self = serde_json::from_str(text).map_err(|e| SchemaMismatch(e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(SchemaMismatch(format!(
                "schema version {:?}, expected {SCHEMA_VERSION:?}",
                doc.schema_version
            )));
        }
        let e = &doc.explanation;
        if e.attributions.len() != e.prompt.perturbable_count() {
            return Err(SchemaMismatch(
                "attribution count does not match the prompt".into(),
            ));
        }
        Ok(doc)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Walks the prompt, yielding each gap and token with its attribution slot.
fn walk(e: &Explanation, mut visit: impl FnMut(&str, &str, Option<usize>)) {
    let gaps = e.prompt.separators();
    let mut slot = 0;
    for (i, token) in e.prompt.tokens.iter().enumerate() {
        let k = token.perturbable.then(|| {
            slot += 1;
            slot - 1
        });
        visit(&gaps[i], &token.surface, k);
    }
    visit(gaps.last().map(String::as_str).unwrap_or(""), "", None);
}

pub fn render_html(doc: &ReportDocument) -> String {
    let e = &doc.explanation;
    let mut body = String::new();
    walk(e, |gap, surface, slot| {
        body.push_str(&escape(gap));
        let Some(k) = slot else {
            body.push_str(&escape(surface));
            return;
        };
        let a = &e.attributions[k];
        let mut title = format!("score {:.6}", a.score);
        if doc.render.show_p_values {
            match e.token_p_values.get(k).copied().flatten() {
                Some(p) => write!(title, "; mean p {p:.3}").unwrap(),
                None => title.push_str("; mean p n/a"),
            }
        }
        let style = match a.sign {
            Sign::Zero => String::new(),
            Sign::Positive => format!(
                " style=\"background-color: rgba(220, 38, 38, {:.3})\"",
                a.intensity
            ),
            Sign::Negative => format!(
                " style=\"background-color: rgba(37, 99, 235, {:.3})\"",
                a.intensity
            ),
        };
        write!(
            body,
            "<span class=\"token\" data-index=\"{}\" title=\"{}\"{style}>{}</span>",
            a.token_index,
            escape(&title),
            escape(surface)
        )
        .unwrap();
    });
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n</head>\n<body>\n<h1>{title}</h1>\n\
         <p class=\"heatmap\" style=\"font-family: monospace; font-size: 1.2em; line-height: 2; white-space: pre-wrap\">{body}</p>\n\
         <p style=\"font-size: 0.85em\">Red marks a positive coefficient and blue a negative one; opacity is the \
         magnitude relative to the strongest token. Hover a token for its raw score.</p>\n</body>\n</html>\n",
        title = escape(&doc.render.title)
    )
}

const RED_RAMP: [u8; 6] = [231, 224, 217, 210, 203, 196];
const BLUE_RAMP: [u8; 6] = [231, 189, 153, 111, 69, 27];

/// 256-color background shade for an attribution.
pub fn ansi_color(sign: Sign, intensity: f64) -> Option<u8> {
    let step = (intensity.clamp(0.0, 1.0) * 5.0).round() as usize;
    match sign {
        Sign::Zero => None,
        Sign::Positive => Some(RED_RAMP[step]),
        Sign::Negative => Some(BLUE_RAMP[step]),
    }
}

pub fn render_ansi(doc: &ReportDocument) -> String {
    let e = &doc.explanation;
    let mut out = String::new();
    walk(e, |gap, surface, slot| {
        out.push_str(gap);
        match slot.and_then(|k| ansi_color(e.attributions[k].sign, e.attributions[k].intensity)) {
            Some(c) => write!(out, "\x1b[48;5;{c}m\x1b[38;5;16m{surface}\x1b[0m").unwrap(),
            None => out.push_str(surface),
        }
    });
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use promptlens_core::gateway::{Gateway, MockLexicon};
    use promptlens_core::pipeline::{explain, ExplainConfig};

    fn doc(prompt: &str, lexicon: MockLexicon) -> ReportDocument {
        let mut cfg = ExplainConfig {
            n_perturbations: 20,
            ..Default::default()
        };
        cfg.significance.enabled = false;
        ReportDocument::new(explain(prompt, &Gateway::mock(lexicon), &cfg).unwrap())
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let d = doc("what is the meaning of life", MockLexicon::echo());
        let back = ReportDocument::from_json(&d.to_json()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_json(), d.to_json());
    }

    #[test]
    fn bad_documents_are_rejected() {
        assert!(ReportDocument::from_json("{").is_err());
        assert!(ReportDocument::from_json("{\"schema_version\": \"1\"}").is_err());
        let mut d = doc("a b c", MockLexicon::echo());
        d.schema_version = "0".into();
        assert!(ReportDocument::from_json(&d.to_json()).is_err());
    }

    #[test]
    fn html_has_one_span_per_perturbable_token() {
        let d = doc("what is the meaning of life?", MockLexicon::echo());
        let html = render_html(&d);
        assert_eq!(html.matches("<span").count(), 6);
        assert!(html.contains("life</span>?"));
        assert!(!html.contains("mean p"));
    }

    #[test]
    fn zero_scores_give_plain_spans() {
        let mut d = doc("a b c", MockLexicon::echo());
        for a in &mut d.explanation.attributions {
            a.score = 0.0;
            a.intensity = 0.0;
            a.sign = Sign::Zero;
        }
        let html = render_html(&d);
        assert_eq!(html.matches("<span").count(), 3);
        assert!(!html.contains("background-color"));
        assert!(!render_ansi(&d).contains('\x1b'));
    }

    #[test]
    fn markup_in_prompts_is_escaped() {
        let d = doc("<b>bold</b> & more", MockLexicon::echo());
        let html = render_html(&d);
        assert!(html.contains("&lt;"));
        assert!(!html.contains("<b>"));
    }

    #[test]
    fn shade_tracks_magnitude() {
        assert_eq!(ansi_color(Sign::Positive, 1.0), Some(196));
        assert_eq!(ansi_color(Sign::Negative, 1.0), Some(27));
        assert_eq!(ansi_color(Sign::Zero, 0.7), None);
        let shades: Vec<usize> = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|i| {
                RED_RAMP
                    .iter()
                    .position(|c| Some(*c) == ansi_color(Sign::Positive, *i))
                    .unwrap()
            })
            .collect();
        assert!(shades.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn intensity_order_follows_score_magnitude() {
        let d = doc(
            "the quick brown fox jumps high",
            MockLexicon::new([("fox", "animal den")], "{token}"),
        );
        let a = &d.explanation.attributions;
        for x in a {
            for y in a {
                if x.score.abs() > y.score.abs() {
                    assert!(x.intensity > y.intensity);
                }
            }
        }
        assert!(a.iter().any(|x| x.intensity == 1.0));
    }

    #[test]
    fn ansi_output_reconstructs_the_prompt() {
        let d = doc("what is  life?", MockLexicon::echo());
        let plain: String = {
            let s = render_ansi(&d);
            let mut out = String::new();
            let mut chars = s.chars().peekable();
            while let Some(c) = chars.next() {
                if c == '\x1b' {
                    for c in chars.by_ref() {
                        if c == 'm' {
                            break;
                        }
                    }
                } else {
                    out.push(c);
                }
            }
            out
        };
        assert_eq!(plain, "what is  life?\n");
    }
}
