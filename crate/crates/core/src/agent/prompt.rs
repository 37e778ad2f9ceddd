//! Canonical policy input: an ordered list of text and image-reference segments.

use serde::{Deserialize, Serialize};

use super::policy::{crop_ref, PolicyView};
use crate::sim::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Eqa,
    Goat,
}

impl PromptMode {
    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Question => PromptMode::Eqa,
            TaskKind::ObjectGoal => PromptMode::Goat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Segment {
    Text { text: String },
    Image { image_ref: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub mode: PromptMode,
    pub segments: Vec<Segment>,
}

impl PromptDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prompt serialization is infallible")
    }

    pub fn image_refs(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Image { image_ref } => Some(image_ref.as_str()),
            Segment::Text { .. } => None,
        })
    }
}

fn text(t: impl Into<String>) -> Segment {
    Segment::Text { text: t.into() }
}

fn image(r: impl Into<String>) -> Segment {
    Segment::Image { image_ref: r.into() }
}

/// Task text, then one block per snapshot (image, then its kept classes; in
/// Goat mode each class is followed by an object crop), then one bare image
/// per frontier, then the reply instructions.
pub fn build_prompt(view: &PolicyView, mode: PromptMode) -> PromptDocument {
    let mut segments = vec![text(format!("Task: {}", view.task.text))];
    for s in &view.snapshots {
        segments.push(image(&s.image_ref));
        match mode {
            PromptMode::Eqa => segments.push(text(format!("Snapshot {}: {}", s.id.0, s.classes.join(", ")))),
            PromptMode::Goat => {
                segments.push(text(format!("Snapshot {}:", s.id.0)));
                for class in &s.classes {
                    segments.push(text(class.clone()));
                    if let Some(o) = s.objects.iter().find(|o| &o.category == class) {
                        segments.push(image(crop_ref(s.frame, o.id)));
                    }
                }
            }
        }
    }
    for f in &view.frontiers {
        segments.push(image(&f.image_ref));
    }
    let frontier_ids: Vec<String> = view.frontiers.iter().map(|f| f.id.0.to_string()).collect();
    let answer_field = match mode {
        PromptMode::Eqa => r#""answer": "<text>""#,
        PromptMode::Goat => r#""object": <object id>"#,
    };
    segments.push(text(format!(
        "Frontier images above are, in order, frontiers [{}]. Reply with JSON only: \
         {{\"choose\": \"frontier\", \"id\": <frontier id>, \"rationale\": \"<text>\"}} to explore, or \
         {{\"choose\": \"snapshot\", \"id\": <snapshot id>, {answer_field}}} to finish.",
        frontier_ids.join(", ")
    )));
    PromptDocument { mode, segments }
}
