#![allow(dead_code)]

use rsd::config::RunConfig;

/// Small enough that a teacher trains in well under a second.
pub const TINY: &str = "\
[data]
size = 16
count = 24
test_count = 4
[teacher]
steps = 120
batch_size = 4
width = 4
bottleneck = 8
embed_dim = 8
[distill]
steps = 12
batch_size = 2
[vsd]
steps = 8
batch_size = 2
[eval]
teacher_nfe = [1]
";

pub fn tiny(overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::parse_with(TINY, &o).unwrap()
}
