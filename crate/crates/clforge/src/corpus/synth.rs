//! Synthetic Java-lite corpus generator.
//!
//! Emits method source text from a small statement grammar, then runs the
//! real lexer and extractor over it, so generated samples exercise exactly
//! the same pipeline as ingested code. Methods destined for an OOD domain
//! contain usages of that domain's APIs only; everything else draws from a
//! built-in "common" API library that belongs to no domain.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::extract::{extract_api_usages, ImportTable};
use crate::corpus::lexer::lex_java;
use crate::corpus::sample::{check_specs_disjoint, DomainSpec, MethodSample};
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub domains: Vec<DomainSpec>,
    pub methods_per_domain: usize,
    pub id_methods: usize,
    /// Inclusive token-length bounds for generated methods.
    pub length_range: (usize, usize),
    pub seed: u64,
}

/// Common APIs woven through ID methods; packages outside every domain.
const COMMON_APIS: &[(&str, &str, &[&str])] = &[
    ("java.common", "Strings", &["stringsJoin", "stringsSplit", "stringsTrim", "stringsUpper"]),
    ("java.common", "Maths", &["mathsAbs", "mathsMin", "mathsMax", "mathsClamp"]),
    ("java.common", "Lists", &["listsAdd", "listsGet", "listsSort", "listsSize"]),
    ("java.common", "Maps", &["mapsPut", "mapsGet", "mapsRemove", "mapsClear"]),
    ("java.common", "Files", &["filesOpen", "filesRead", "filesWrite", "filesClose"]),
    ("java.common", "Logs", &["logsInfo", "logsWarn", "logsError", "logsTrace"]),
];

const METHOD_SUFFIXES: &[&str] = &["Create", "Apply", "Resolve"];

/// Method tokens shared across domains: roughly a third of interfaces use
/// one of these instead of an interface-specific method, so later
/// fine-tuning keeps rehearsing part of every earlier domain's answer space.
pub const SHARED_METHODS: &[&str] = &["sharedInit", "sharedRead", "sharedSend", "sharedClose"];

const VERBS: &[&str] = &[
    "compute", "handle", "process", "update", "build", "check", "merge", "scan", "load", "store",
    "count", "filter",
];
const NOUNS: &[&str] = &[
    "Value", "Entry", "Batch", "Record", "Index", "Buffer", "Chunk", "State", "Frame", "Slot",
];
const LOCALS: &[&str] = &[
    "a", "b", "c", "d", "e", "g", "h", "k", "m", "n", "p", "q", "r", "s", "t", "u", "v", "w",
    "x", "y", "z", "acc", "sum", "tmp", "len", "idx", "pos", "cnt", "buf", "out",
];

fn fnv(text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The method token an interface's usages carry: a fixed function of the
/// interface, so usages are predictable from the receiver. Roughly 30% of
/// interfaces draw from the shared pool instead of their own methods.
pub fn usage_method(interface: &str, methods: &[String]) -> String {
    if fnv(&format!("{interface}#generic")) % 10 < 3 {
        SHARED_METHODS[fnv(interface) as usize % SHARED_METHODS.len()].to_string()
    } else {
        methods[fnv(interface) as usize % methods.len()].clone()
    }
}

/// Method names generated for a domain interface: lowerCamel(interface) plus
/// a fixed suffix set, e.g. BigInteger -> bigIntegerCreate.
pub fn domain_methods(interface: &str) -> Vec<String> {
    let mut base = String::new();
    let mut chars = interface.chars();
    if let Some(first) = chars.next() {
        base.extend(first.to_lowercase());
    }
    base.extend(chars);
    METHOD_SUFFIXES.iter().map(|s| format!("{base}{s}")).collect()
}

struct MethodBuilder<'a> {
    rng: &'a mut Rng,
    text: String,
    tokens: usize,
    imports: ImportTable,
}

impl<'a> MethodBuilder<'a> {
    fn new(rng: &'a mut Rng) -> Self {
        MethodBuilder { rng, text: String::new(), tokens: 0, imports: ImportTable::new() }
    }

    fn emit(&mut self, piece: &str, token_count: usize) {
        self.text.push_str(piece);
        self.text.push(' ');
        self.tokens += token_count;
    }

    fn local(&mut self) -> &'static str {
        LOCALS[self.rng.below(LOCALS.len())]
    }

    fn header(&mut self) {
        let name = format!(
            "{}{}",
            VERBS[self.rng.below(VERBS.len())],
            NOUNS[self.rng.below(NOUNS.len())]
        );
        let ret = ["int", "void", "long", "String"][self.rng.below(4)];
        let n_params = self.rng.below(3);
        let mut sig = format!("{ret} {name} (");
        let mut count = 3; // ret name (
        for i in 0..n_params {
            if i > 0 {
                sig.push_str(" ,");
                count += 1;
            }
            let ty = ["int", "long", "String"][self.rng.below(3)];
            let p = LOCALS[self.rng.below(LOCALS.len())];
            sig.push_str(&format!(" {ty} {p}"));
            count += 2;
        }
        sig.push_str(" ) {");
        count += 2;
        self.emit(&sig, count);
    }

    fn arg(&mut self) -> (String, usize) {
        match self.rng.below(4) {
            0 => (format!("{}", self.rng.below(100)), 1),
            1 => ("\"s\"".to_string(), 1),
            _ => (self.local().to_string(), 1),
        }
    }

    /// `Type r = Interface . method ( args ) ;` or a bare call statement.
    /// The method is a fixed function of the interface, so it is predictable
    /// from the left context once the mapping has been seen in training.
    fn usage(&mut self, package: &str, interface: &str, methods: &[String]) {
        let method = &usage_method(interface, methods);
        self.imports
            .insert(interface.to_string(), format!("{package}.{interface}"));
        let n_args = self.rng.below(3);
        let mut args = String::new();
        let mut count = 0;
        for i in 0..n_args {
            if i > 0 {
                args.push_str(" , ");
                count += 1;
            }
            let (a, c) = self.arg();
            args.push_str(&a);
            count += c;
        }
        if self.rng.below(2) == 0 {
            let ret = ["int", "long", "String"][self.rng.below(3)];
            let v = self.local();
            self.emit(
                &format!("{ret} {v} = {interface} . {method} ( {args} ) ;"),
                9 + count,
            );
        } else {
            self.emit(&format!("{interface} . {method} ( {args} ) ;"), 6 + count);
        }
    }

    /// One filler statement no longer than `budget` tokens. Returns false
    /// when nothing fits.
    fn filler(&mut self, budget: usize) -> bool {
        let choices: &[usize] = if budget >= 22 {
            &[0, 1, 2, 3, 4, 5]
        } else if budget >= 12 {
            &[0, 1, 2, 4, 5]
        } else if budget >= 6 {
            &[0, 1, 4, 5]
        } else if budget >= 5 {
            &[0, 4]
        } else {
            return false;
        };
        match choices[self.rng.below(choices.len())] {
            0 => {
                let v = self.local();
                let lit = self.rng.below(100);
                self.emit(&format!("int {v} = {lit} ;"), 5);
            }
            1 => {
                let (v, w) = (self.local(), self.local());
                let lit = self.rng.below(10);
                self.emit(&format!("{v} = {w} + {lit} ;"), 6);
            }
            2 => {
                let (v, w) = (self.local(), self.local());
                self.emit(&format!("if ( {v} < {w} ) {{ {v} = {w} ; }}"), 12);
            }
            3 => {
                let (i, v) = (self.local(), self.local());
                self.emit(
                    &format!("for ( int {i} = 0 ; {i} < {v} ; {i} ++ ) {{ {v} = {v} - 1 ; }}"),
                    22,
                );
            }
            4 => {
                let s = self.local();
                self.emit(&format!("String {s} = \"msg\" ;"), 5);
            }
            _ => {
                let (v, w) = (self.local(), self.local());
                self.emit(&format!("{v} = {v} * {w} ;"), 6);
            }
        }
        true
    }

    fn finish(mut self) -> (String, ImportTable) {
        let v = self.local();
        self.emit(&format!("return {v} ; }}"), 4);
        (self.text, self.imports)
    }
}

/// Per-interface API pools for one domain.
fn domain_api_pool(spec: &DomainSpec) -> Vec<(String, String, Vec<String>)> {
    spec.entries
        .iter()
        .map(|e| (e.package.clone(), e.interface.clone(), domain_methods(&e.interface)))
        .collect()
}

fn check_vocabularies(domains: &[DomainSpec]) -> Result<()> {
    check_specs_disjoint(domains)?;
    let mut ifaces: HashSet<&str> = COMMON_APIS.iter().map(|(_, i, _)| *i).collect();
    for spec in domains {
        for e in &spec.entries {
            if !ifaces.insert(&e.interface) {
                return Err(Error::Data(format!(
                    "overlapping API vocabularies: interface '{}' is not unique",
                    e.interface
                )));
            }
        }
    }
    Ok(())
}

/// Generate the full corpus: `id_methods` ID methods followed by
/// `methods_per_domain` methods per domain, in spec order. Deterministic in
/// the seed, hash for hash.
pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<MethodSample>> {
    check_vocabularies(&config.domains)?;
    let (lo, hi) = config.length_range;
    if lo < 30 || hi < lo + 8 || hi < 56 {
        return Err(Error::Data(format!(
            "length_range ({lo}, {hi}) too tight; need lo >= 30, hi >= lo + 8 and hi >= 56"
        )));
    }
    let rng = Rng::new(config.seed);
    let mut samples = Vec::new();

    let specs = config.domains.clone();
    for i in 0..config.id_methods {
        let mut mrng = rng.split(i as u64);
        samples.push(gen_method(&mut mrng, None, &specs, lo, hi)?);
    }
    for (d, spec) in config.domains.iter().enumerate() {
        let pool = domain_api_pool(spec);
        for i in 0..config.methods_per_domain {
            let label = (1 + d as u64) << 32 | i as u64;
            let mut mrng = rng.split(label);
            samples.push(gen_method(&mut mrng, Some(&pool), &specs, lo, hi)?);
        }
    }
    Ok(samples)
}

fn gen_method(
    rng: &mut Rng,
    domain_pool: Option<&[(String, String, Vec<String>)]>,
    specs: &[DomainSpec],
    lo: usize,
    hi: usize,
) -> Result<MethodSample> {
    let target = rng.range((lo + 8).min(hi), hi);
    let mut b = MethodBuilder::new(rng);
    b.header();

    // Usage plan: domain methods carry 1-3 domain usages; ID methods carry
    // 0-2 common usages, mostly one.
    let usages: Vec<(String, String, Vec<String>)> = match domain_pool {
        Some(pool) => {
            let n = 2 + b.rng.below(2);
            (0..n).map(|_| pool[b.rng.below(pool.len())].clone()).collect()
        }
        None => {
            let n = match b.rng.below(10) {
                0 => 0,
                8 | 9 => 2,
                _ => 1,
            };
            (0..n)
                .map(|_| {
                    let (pkg, iface, methods) = COMMON_APIS[b.rng.below(COMMON_APIS.len())];
                    (
                        pkg.to_string(),
                        iface.to_string(),
                        methods.iter().map(|m| m.to_string()).collect(),
                    )
                })
                .collect()
        }
    };
    for (pkg, iface, methods) in &usages {
        b.usage(pkg, iface, methods);
    }
    // Fill towards the target, reserving 4 tokens for the footer.
    while b.tokens + 4 < target {
        if !b.filler(target - b.tokens - 4) {
            break;
        }
    }
    let (source, imports) = b.finish();
    let tokens = lex_java(&source)?;
    let sample = extract_api_usages(&tokens, &imports, specs);
    if domain_pool.is_some() && sample.sites.is_empty() {
        return Err(Error::Data(
            "generator invariant broken: domain method produced no sites".into(),
        ));
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::pipeline::assign_domains;
    use crate::corpus::sample::DomainEntry;

    fn small_domains() -> Vec<DomainSpec> {
        ["Alpha", "Beta", "Gamma", "Delta", "Epsilon"]
            .iter()
            .enumerate()
            .map(|(i, name)| DomainSpec {
                name: (*name).to_string(),
                entries: (0..3)
                    .map(|j| DomainEntry {
                        package: format!("dom.{}", name.to_lowercase()),
                        interface: format!("{name}Api{j}"),
                    })
                    .collect(),
                position: i + 1,
                notes: vec![],
            })
            .collect()
    }

    fn cfg(domains: Vec<DomainSpec>, per_domain: usize, id: usize) -> SynthConfig {
        SynthConfig {
            domains,
            methods_per_domain: per_domain,
            id_methods: id,
            length_range: (34, 72),
            seed: 7,
        }
    }

    #[test]
    fn zero_ood_methods_gives_pure_id_corpus() {
        let config = cfg(small_domains(), 0, 40);
        let samples = gen_synthetic(&config).unwrap();
        assert_eq!(samples.len(), 40);
        for s in &samples {
            for site in &s.sites {
                assert_eq!(site.package, "java.common");
            }
        }
    }

    #[test]
    fn domain_methods_assign_cleanly() {
        // 5 domains x 200 methods: after assignment every domain holds
        // exactly 200 samples, none discarded (verified by site scan).
        let config = cfg(small_domains(), 200, 50);
        let samples = gen_synthetic(&config).unwrap();
        let specs = config.domains.clone();
        let out = assign_domains(samples, &specs).unwrap();
        assert_eq!(out.discarded, 0);
        assert_eq!(out.id_samples.len(), 50);
        for pool in &out.domain_samples {
            assert_eq!(pool.len(), 200);
        }
        // Brute-force scan: every domain sample's in-spec sites reference its
        // own spec only.
        for (spec, pool) in specs.iter().zip(&out.domain_samples) {
            for sample in pool {
                let mut in_spec = 0;
                for site in &sample.sites {
                    for other in &specs {
                        if other.contains(&site.package, &site.interface) {
                            assert_eq!(other.name, spec.name);
                            in_spec += 1;
                        }
                    }
                }
                assert!(in_spec >= 1);
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let config = cfg(small_domains(), 10, 20);
        let a = gen_synthetic(&config).unwrap();
        let b = gen_synthetic(&config).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.hash, y.hash);
        }
    }

    #[test]
    fn lengths_respect_range() {
        let config = cfg(small_domains(), 15, 30);
        for s in gen_synthetic(&config).unwrap() {
            let len = s.tokens.len();
            assert!((34..=72).contains(&len), "len {len}");
        }
    }

    #[test]
    fn overlapping_vocabulary_rejected() {
        let mut domains = small_domains();
        domains[1].entries[0].interface = domains[0].entries[0].interface.clone();
        let config = cfg(domains, 5, 5);
        assert!(gen_synthetic(&config).is_err());
    }
}
