//! Fixed vocabularies the mock draws its default replies from.

use crate::knowledge::ElementKind;

pub const SCENES: &[&str] = &[
    "a quiet beach at dusk",
    "a busy city street at noon",
    "a family gathered in a living room",
    "a narrow mountain trail",
    "a child playing in a park",
    "an empty classroom",
    "an old house on a hill",
    "a market square in the rain",
];

pub const ENTITIES: &[&str] = &[
    "person", "child", "dog", "tree", "window", "car", "table", "sky", "building", "bench",
];

pub const ELEMENTS: &[(&str, ElementKind)] = &[
    ("a bouquet of balloons", ElementKind::Object),
    ("colorful toys", ElementKind::Object),
    ("a lit candle", ElementKind::Object),
    ("a stray dog", ElementKind::Object),
    ("a red umbrella", ElementKind::Object),
    ("a birthday cake", ElementKind::Object),
    ("fallen leaves", ElementKind::Object),
    ("a wilted flower", ElementKind::Object),
    ("a glowing lantern", ElementKind::Object),
    ("a broken chair", ElementKind::Object),
    ("a hot air balloon", ElementKind::Object),
    ("dark clouds", ElementKind::Object),
    ("a sunset sky", ElementKind::BackgroundScene),
    ("snow-capped peaks", ElementKind::BackgroundScene),
    ("a night scene", ElementKind::BackgroundScene),
    ("a stormy sea", ElementKind::BackgroundScene),
    ("a blooming meadow", ElementKind::BackgroundScene),
    ("a foggy forest", ElementKind::BackgroundScene),
    ("a starry sky", ElementKind::BackgroundScene),
    ("children playing", ElementKind::Action),
    ("people dancing", ElementKind::Action),
    ("a person running away", ElementKind::Action),
    ("a crowd cheering", ElementKind::Action),
    ("a broad smile", ElementKind::FacialExpression),
    ("crying", ElementKind::FacialExpression),
    ("a frightened look", ElementKind::FacialExpression),
    ("a disgusted grimace", ElementKind::FacialExpression),
    ("an angry frown", ElementKind::FacialExpression),
    ("warm golden", ElementKind::ColorTone),
    ("cold blue", ElementKind::ColorTone),
    ("greenish", ElementKind::ColorTone),
    ("desaturated gray", ElementKind::ColorTone),
    ("vivid neon", ElementKind::ColorTone),
    ("glowing", ElementKind::Attribute),
    ("rusty", ElementKind::Attribute),
    ("sparkling", ElementKind::Attribute),
    ("withered", ElementKind::Attribute),
    ("brightly colored", ElementKind::Attribute),
];

pub const RATIONALE: &[&str] = &[
    "Identify the dominant visual elements and their arrangement.",
    "Relate color, lighting and subject matter to emotional cues.",
    "Weigh the cues against the target emotion and conclude.",
];
