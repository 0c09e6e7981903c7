use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncodeError, EncodeJob};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placeholder {
    Input,
    Output,
    Qp,
    K,
    FrameGroup,
    Scope,
    Width,
    Height,
    FrameCount,
    FrameRate,
    PixFmt,
    Reference,
    Distorted,
    Report,
}

impl Placeholder {
    const ALL: [Placeholder; 14] = [
        Placeholder::Input,
        Placeholder::Output,
        Placeholder::Qp,
        Placeholder::K,
        Placeholder::FrameGroup,
        Placeholder::Scope,
        Placeholder::Width,
        Placeholder::Height,
        Placeholder::FrameCount,
        Placeholder::FrameRate,
        Placeholder::PixFmt,
        Placeholder::Reference,
        Placeholder::Distorted,
        Placeholder::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Input => "input",
            Placeholder::Output => "output",
            Placeholder::Qp => "qp",
            Placeholder::K => "k",
            Placeholder::FrameGroup => "frame_group",
            Placeholder::Scope => "scope",
            Placeholder::Width => "width",
            Placeholder::Height => "height",
            Placeholder::FrameCount => "frame_count",
            Placeholder::FrameRate => "frame_rate",
            Placeholder::PixFmt => "pix_fmt",
            Placeholder::Reference => "reference",
            Placeholder::Distorted => "distorted",
            Placeholder::Report => "report",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    fn is_clip_field(self) -> bool {
        matches!(
            self,
            Placeholder::Width | Placeholder::Height | Placeholder::FrameCount | Placeholder::FrameRate | Placeholder::PixFmt
        )
    }
}

/// Finds every `{name}` in `s`, rejecting unknown names and unbalanced braces.
fn scan(s: &str) -> Result<Vec<Placeholder>, String> {
    let mut found = Vec::new();
    let mut rest = s;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| format!("unterminated placeholder in `{s}`"))?;
        let name = &after[..close];
        let p = Placeholder::parse(name).ok_or_else(|| format!("unknown placeholder {{{name}}}"))?;
        found.push(p);
        rest = &after[close + 1..];
    }
    Ok(found)
}

fn check(template: &str, which: &str, allowed: &[Placeholder], required: &[Placeholder]) -> Result<(), EncodeError> {
    let tokens: Vec<&str> = template.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(EncodeError::Template(format!("{which} template is empty")));
    }
    let mut seen = Vec::new();
    for tok in &tokens {
        for p in scan(tok).map_err(EncodeError::Template)? {
            if !allowed.contains(&p) && !p.is_clip_field() {
                return Err(EncodeError::Template(format!("{{{}}} is not allowed in the {which} template", p.name())));
            }
            if seen.contains(&p) {
                return Err(EncodeError::Template(format!("{{{}}} used more than once in the {which} template", p.name())));
            }
            seen.push(p);
        }
    }
    if let Some(missing) = required.iter().find(|p| !seen.contains(p)) {
        return Err(EncodeError::Template(format!("{which} template must contain {{{}}}", missing.name())));
    }
    Ok(())
}

/// Encoder and metric command lines. Templates are split on whitespace into
/// an argument vector before substitution and run without a shell, so
/// substituted values never get re-split or interpreted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTemplate {
    pub encoder_template: String,
    pub metric_template: String,
}

impl CommandTemplate {
    pub fn new(encoder_template: impl Into<String>, metric_template: impl Into<String>) -> Result<Self, EncodeError> {
        let t = CommandTemplate { encoder_template: encoder_template.into(), metric_template: metric_template.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        use Placeholder::*;
        check(
            &self.encoder_template,
            "encoder",
            &[Input, Output, Qp, K, FrameGroup, Scope],
            &[Input, Output, Qp],
        )?;
        check(&self.metric_template, "metric", &[Reference, Distorted, Report], &[Distorted, Report])
    }

    pub fn render_encoder(&self, job: &EncodeJob, output: &Path) -> Vec<String> {
        render(&self.encoder_template, job, |p| match p {
            Placeholder::Input => Some(job.input_path().display().to_string()),
            Placeholder::Output => Some(output.display().to_string()),
            Placeholder::Qp => Some(job.qp.to_string()),
            Placeholder::K => Some(job.k.to_string()),
            Placeholder::FrameGroup => Some(job.group.as_str().to_string()),
            Placeholder::Scope => Some(job.scope.as_str().to_string()),
            _ => None,
        })
    }

    pub fn render_metric(&self, job: &EncodeJob, distorted: &Path, report: &Path) -> Vec<String> {
        render(&self.metric_template, job, |p| match p {
            Placeholder::Reference => Some(job.input_path().display().to_string()),
            Placeholder::Distorted => Some(distorted.display().to_string()),
            Placeholder::Report => Some(report.display().to_string()),
            _ => None,
        })
    }
}

fn render(template: &str, job: &EncodeJob, value: impl Fn(Placeholder) -> Option<String>) -> Vec<String> {
    let clip = &job.clip;
    template
        .split_whitespace()
        .map(|tok| {
            // Single left-to-right pass so substituted text is never rescanned.
            let mut out = String::with_capacity(tok.len());
            let mut rest = tok;
            while let Some(open) = rest.find('{') {
                out.push_str(&rest[..open]);
                let after = &rest[open + 1..];
                let Some((p, close)) = after.find('}').and_then(|c| Placeholder::parse(&after[..c]).map(|p| (p, c)))
                else {
                    out.push('{');
                    rest = after;
                    continue;
                };
                let v = value(p).unwrap_or_else(|| match p {
                    Placeholder::Width => clip.width.to_string(),
                    Placeholder::Height => clip.height.to_string(),
                    Placeholder::FrameCount => clip.frame_count.to_string(),
                    Placeholder::FrameRate => clip.frame_rate.to_string(),
                    Placeholder::PixFmt => clip.pix_fmt.clone(),
                    _ => String::new(),
                });
                out.push_str(&v);
                rest = &after[close + 1..];
            }
            out.push_str(rest);
            out
        })
        .collect()
}
