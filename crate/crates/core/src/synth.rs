//! Seeded generator for a generic base corpus and a project-specific domain
//! corpus, used to pretrain the toy model and then measure adaptation.
//!
//! The base corpus is Python-like code over generic names. In it, a handful
//! of zero-argument "chain" methods (`strip`, `read`, ...) are always followed
//! by another chained call, and method calls always take a single argument.
//! The domain corpus repeats a fixed set of API patterns over names that never
//! occur in the base corpus, and breaks both habits: chain methods usually end
//! the line, and domain calls usually take two arguments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const VARS: &[&str] = &[
    "x", "y", "z", "i", "j", "k", "n", "m", "a", "b", "data", "result", "value", "items", "item", "key", "val",
    "count", "total", "name", "path", "line", "text", "buf", "node", "out", "res", "tmp", "obj", "args",
];
const FUNCS: &[&str] = &[
    "process",
    "compute",
    "load",
    "save",
    "parse",
    "update",
    "handle",
    "run",
    "build",
    "check",
    "make",
    "render",
    "merge",
    "split_all",
    "collect",
];
const METHODS: &[&str] = &[
    "append",
    "extend",
    "pop",
    "insert",
    "get",
    "format",
    "join",
    "replace",
    "startswith",
    "endswith",
    "count",
    "index",
    "remove",
    "add",
    "discard",
];
const MODULES: &[&str] = &["os", "sys", "json", "re", "math", "time", "random", "logging"];
const EXCEPTIONS: &[&str] = &["ValueError", "KeyError", "TypeError", "RuntimeError"];

/// Zero-argument methods and the call that always follows them in the base
/// corpus.
const CHAINS: &[(&str, &str)] = &[
    ("strip", "lower"),
    ("read", "decode"),
    ("copy", "items"),
    ("keys", "sort"),
    ("upper", "title"),
    ("encode", "hex"),
];

const DOMAIN_OBJECTS: &[&str] = &[
    "client",
    "session",
    "repo",
    "cache",
    "queue",
    "ledger",
    "router",
    "broker",
    "vault",
    "tracker",
    "registry",
    "scheduler",
];
const DOMAIN_METHODS: &[&str] = &[
    "fetch_user",
    "push_event",
    "open_ticket",
    "close_ticket",
    "sync_state",
    "lookup_id",
    "emit_metric",
    "lease",
    "revoke",
    "enqueue",
    "dequeue",
    "checkpoint",
    "rollback",
    "attach",
    "detach",
    "publish",
    "subscribe",
    "resolve_ref",
    "bind_port",
    "flush_all",
    "reserve",
    "release",
    "tag_build",
    "audit",
    "snapshot",
    "migrate",
    "throttle",
    "route",
    "notify_all",
    "archive",
];
const DOMAIN_ARGS: &[&str] = &[
    "uid",
    "ticket_id",
    "event",
    "payload",
    "ref_name",
    "port",
    "ttl",
    "tenant",
    "build_id",
    "region",
    "quota",
    "shard",
    "token",
    "topic",
    "lease_id",
    "span",
    "level",
    "retries",
    "deadline",
    "owner",
];
const DOMAIN_VARS: &[&str] = &["acct", "evt", "tkt", "rec", "msg", "cfg", "hdr", "doc", "ent", "row"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Approximate number of tokens in the base corpus.
    pub base_tokens: usize,
    /// Approximate number of tokens in the domain corpus (train + test).
    pub domain_tokens: usize,
    /// Number of distinct domain API patterns.
    pub patterns: usize,
    /// Fraction of domain blocks held out for testing.
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 7, base_tokens: 200_000, domain_tokens: 40_000, patterns: 50, test_fraction: 0.2 }
    }
}

/// Generated source text. Every corpus ends with a newline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthCorpora {
    pub base: String,
    pub domain_train: String,
    pub domain_test: String,
}

/// One project-specific call: `[lhs =] object . method ( args )`.
#[derive(Clone, Debug, PartialEq, Eq)]
struct ApiPattern {
    lhs: Option<&'static str>,
    object: &'static str,
    method: &'static str,
    args: [&'static str; 2],
}

impl ApiPattern {
    fn render(&self, two_args: bool) -> String {
        let call = if two_args {
            format!("{} . {} ( {} , {} )", self.object, self.method, self.args[0], self.args[1])
        } else {
            format!("{} . {} ( {} )", self.object, self.method, self.args[0])
        };
        match self.lhs {
            Some(lhs) => format!("{lhs} = {call}"),
            None => call,
        }
    }
}

fn pick<R: Rng>(rng: &mut R, xs: &[&'static str]) -> &'static str {
    xs.choose(rng).copied().expect("non-empty pool")
}

/// Rough token count of a line: whitespace-separated pieces plus `<EOL>`.
fn token_len(line: &str) -> usize {
    line.split_whitespace().count() + 1
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpora {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = base_corpus(&mut rng, cfg.base_tokens);
    let patterns = api_patterns(&mut rng, cfg.patterns);
    let (domain_train, domain_test) = domain_corpus(&mut rng, &patterns, cfg);
    SynthCorpora { base, domain_train, domain_test }
}

fn base_line<R: Rng>(rng: &mut R) -> String {
    let v = |rng: &mut R| pick(rng, VARS);
    match rng.gen_range(0..100) {
        0..=17 => format!("{} = {} . {} ( {} )", v(rng), v(rng), pick(rng, METHODS), v(rng)),
        18..=29 => format!("{} = {} ( {} , {} )", v(rng), pick(rng, FUNCS), v(rng), v(rng)),
        30..=35 => format!("if {} is None :", v(rng)),
        36..=40 => format!("if {} > {} :", v(rng), rng.gen_range(0..100)),
        41..=44 => format!("if not {} :", v(rng)),
        45..=50 => format!("return {}", v(rng)),
        51..=53 => format!("return {} + {}", v(rng), rng.gen_range(1..10)),
        54..=57 => format!("for {} in {} :", v(rng), v(rng)),
        58..=60 => format!("for {} in range ( {} ) :", v(rng), rng.gen_range(1..50)),
        61..=66 => format!("{} . {} ( {} )", v(rng), pick(rng, METHODS), v(rng)),
        67..=69 => "print ( \"done\" )".to_string(),
        70..=71 => format!("raise {} ( \"bad input\" )", pick(rng, EXCEPTIONS)),
        72..=75 => format!("{} = {} + {}", v(rng), v(rng), rng.gen_range(0..10)),
        _ => {
            let (first, then) = *CHAINS.choose(rng).expect("chains");
            let call = format!("{} . {first} ( ) . {then} ( )", v(rng));
            if rng.gen_bool(0.5) {
                format!("{} = {call}", v(rng))
            } else {
                call
            }
        }
    }
}

fn base_corpus<R: Rng>(rng: &mut R, target: usize) -> String {
    let mut out = String::new();
    let mut tokens = 0;
    while tokens < target {
        let header = if rng.gen_bool(0.15) {
            format!("import {}", pick(rng, MODULES))
        } else {
            format!("def {} ( {} , {} ) :", pick(rng, FUNCS), pick(rng, VARS), pick(rng, VARS))
        };
        tokens += push_line(&mut out, &header);
        for _ in 0..rng.gen_range(3..9) {
            let line = base_line(rng);
            tokens += push_line(&mut out, &line);
        }
    }
    out
}

fn push_line(out: &mut String, line: &str) -> usize {
    out.push_str(line);
    out.push('\n');
    token_len(line)
}

fn api_patterns<R: Rng>(rng: &mut R, count: usize) -> Vec<ApiPattern> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let object = pick(rng, DOMAIN_OBJECTS);
        let method = pick(rng, DOMAIN_METHODS);
        if !seen.insert((object, method)) {
            continue;
        }
        let a0 = pick(rng, DOMAIN_ARGS);
        let mut a1 = pick(rng, DOMAIN_ARGS);
        while a1 == a0 {
            a1 = pick(rng, DOMAIN_ARGS);
        }
        let lhs = rng.gen_bool(0.6).then(|| pick(rng, DOMAIN_VARS));
        out.push(ApiPattern { lhs, object, method, args: [a0, a1] });
    }
    out
}

fn domain_line<R: Rng>(rng: &mut R, patterns: &[ApiPattern]) -> String {
    match rng.gen_range(0..100) {
        // API pattern, usually with both arguments
        0..=54 => {
            let p = patterns.choose(rng).expect("patterns");
            p.render(rng.gen_bool(0.8))
        }
        // chain method on a domain value, usually ending the line
        55..=84 => {
            let (first, _) = *CHAINS.choose(rng).expect("chains");
            let call = format!("{} . {first} ( )", pick(rng, DOMAIN_VARS));
            let call = if rng.gen_bool(0.2) { format!("{call} + \"sep\"") } else { call };
            format!("{} = {call}", pick(rng, DOMAIN_VARS))
        }
        85..=92 => format!("if {} is None :", pick(rng, DOMAIN_VARS)),
        _ => format!("return {}", pick(rng, DOMAIN_VARS)),
    }
}

fn domain_corpus<R: Rng>(rng: &mut R, patterns: &[ApiPattern], cfg: &SynthConfig) -> (String, String) {
    let mut train = String::new();
    let mut test = String::new();
    let mut tokens = 0;
    while tokens < cfg.domain_tokens {
        let mut block = String::new();
        let header = format!("def {} ( {} ) :", pick(rng, FUNCS), pick(rng, DOMAIN_VARS));
        tokens += push_line(&mut block, &header);
        for _ in 0..rng.gen_range(3..9) {
            let line = domain_line(rng, patterns);
            tokens += push_line(&mut block, &line);
        }
        if rng.gen_bool(cfg.test_fraction) {
            test.push_str(&block);
        } else {
            train.push_str(&block);
        }
    }
    (train, test)
}
