use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Tag names for the three sections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaTemplate {
    pub see: String,
    pub think: String,
    pub answer: String,
}

impl Default for StaTemplate {
    fn default() -> Self {
        StaTemplate {
            see: "see".into(),
            think: "think".into(),
            answer: "answer".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaResponse {
    pub see: String,
    pub think: String,
    pub answer: String,
    pub well_formed: bool,
    pub raw: String,
}

impl StaResponse {
    /// A well-formed response with the given sections, as [`render_sta`] would
    /// produce it.
    pub fn from_sections(see: &str, think: &str, answer: &str) -> Self {
        let mut r = StaResponse {
            see: see.into(),
            think: think.into(),
            answer: answer.into(),
            well_formed: true,
            raw: String::new(),
        };
        r.raw = render_sta(&r);
        r
    }
}

/// Compiled matcher for one tag template.
#[derive(Debug, Clone)]
pub struct StaParser {
    template: StaTemplate,
    strict: Regex,
    sections: [Regex; 3],
    tags: Vec<String>,
}

impl StaParser {
    pub fn new(template: StaTemplate) -> Result<Self, regex::Error> {
        let open = |t: &str| format!("<{}>", regex::escape(t));
        let close = |t: &str| format!("</{}>", regex::escape(t));
        let strict = Regex::new(&format!(
            r"(?s)\A\s*{}(.*?){}\s*{}(.*?){}\s*{}(.*?){}\s*\z",
            open(&template.see),
            close(&template.see),
            open(&template.think),
            close(&template.think),
            open(&template.answer),
            close(&template.answer),
        ))?;
        let section = |t: &str| Regex::new(&format!(r"(?s){}(.*?){}", open(t), close(t)));
        let sections = [section(&template.see)?, section(&template.think)?, section(&template.answer)?];
        let tags = [&template.see, &template.think, &template.answer]
            .iter()
            .flat_map(|t| [format!("<{t}>"), format!("</{t}>")])
            .collect();
        Ok(StaParser {
            template,
            strict,
            sections,
            tags,
        })
    }

    pub fn template(&self) -> &StaTemplate {
        &self.template
    }

    fn clean(&self, section: &str) -> bool {
        !section.trim().is_empty() && !self.tags.iter().any(|t| section.contains(t.as_str()))
    }

    /// Total: any deviation from the strict layout yields `well_formed ==
    /// false` with sections extracted best-effort.
    pub fn parse(&self, raw: &str) -> StaResponse {
        if let Some(c) = self.strict.captures(raw) {
            let (see, think, answer) = (&c[1], &c[2], &c[3]);
            if self.clean(see) && self.clean(think) && self.clean(answer) {
                return StaResponse {
                    see: see.to_string(),
                    think: think.to_string(),
                    answer: answer.to_string(),
                    well_formed: true,
                    raw: raw.to_string(),
                };
            }
        }
        let grab = |re: &Regex| re.captures(raw).map(|c| c[1].to_string()).unwrap_or_default();
        StaResponse {
            see: grab(&self.sections[0]),
            think: grab(&self.sections[1]),
            answer: grab(&self.sections[2]),
            well_formed: false,
            raw: raw.to_string(),
        }
    }

    pub fn render(&self, r: &StaResponse) -> String {
        let t = &self.template;
        format!(
            "<{s}>{}</{s}>\n<{k}>{}</{k}>\n<{a}>{}</{a}>",
            r.see,
            r.think,
            r.answer,
            s = t.see,
            k = t.think,
            a = t.answer
        )
    }
}

static DEFAULT_PARSER: LazyLock<StaParser> = LazyLock::new(|| StaParser::new(StaTemplate::default()).expect("default template compiles"));

pub fn parse_sta(raw: &str) -> StaResponse {
    DEFAULT_PARSER.parse(raw)
}

/// Canonical text form with the default tags.
pub fn render_sta(r: &StaResponse) -> String {
    DEFAULT_PARSER.render(r)
}

pub fn format_reward(resp: &StaResponse) -> u8 {
    u8::from(resp.well_formed)
}
