//! Skill ingestion, signature-keyed paraphrase sets, training-pair sampling
//! and the five training-data formats.

mod reformat;
mod sets;
mod skill;
mod types;
mod vocab;

pub use reformat::{
    anon_marker, bundle_values, parse_anon, read_pairs_jsonl, reformat, reformat_delex,
    DataFormat, FormattedPair, ReformatConfig, SlotMapEntry, SlotValueBundle, SourceToken,
    TargetToken,
};
pub use sets::{
    build_paraphrase_sets, clean_sets, merge_sets, paraphrase_sets_from_skills,
    sample_training_pairs, CleanupConfig, ParaphraseSets, TrainingPair, PAIRS_PER_UTTERANCE,
};
pub use skill::{read_skills, split_value, SampleUtterance, SkillDefinition};
pub use types::{
    delexicalize, signature_of, AnnotatedUtterance, DelexToken, DelexUtterance, Signature,
    SlotCatalog, SlotSpan,
};
pub use vocab::{build_vocab, token_counts, Vocab, BOS, EOS, PAD, SPECIALS, UNK};
