//! Corpus ingestion, task construction and input serialization.

pub mod import;
pub mod jsonl;
pub mod rules;
pub mod serialize;
pub mod story;
pub mod synthetic;
pub mod tasks;

pub use rules::{
    aggregate_rules, cluster_dimension, parse_rule, Connective, DimensionRule, GlucoseRecord, RelationType, RuleBundle,
    RuleFlavor, RuleText,
};
pub use story::{Story, StoryState};
pub use tasks::{build_nsc, build_seg, CsiContext, CsiExample, NscExample, SegExample, SilverPair};
