//! Dataset construction: Java-lite lexing, API usage extraction,
//! deduplication, domain assignment, splits, synthetic generation, and
//! file formats.

pub mod extract;
pub mod io;
pub mod lexer;
pub mod pipeline;
pub mod sample;
pub mod synth;

pub use extract::{extract_api_usages, parse_imports, split_methods, ImportTable};
pub use lexer::{is_java_keyword, lex_java};
pub use pipeline::{
    assign_domains, dedup, leakage_check, split_id, split_ood, DomainAssignment, Violation,
};
pub use sample::{
    check_specs_disjoint, content_hash, ApiSite, DomainEntry, DomainSpec, MethodSample,
    ScenarioData, SplitSet,
};
pub use synth::{domain_methods, gen_synthetic, SynthConfig};
