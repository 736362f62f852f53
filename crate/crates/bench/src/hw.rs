//! Host topology probes.

use std::collections::HashSet;

/// Physical cores, counted as distinct (package, core) pairs in
/// `/proc/cpuinfo`. Falls back to the logical CPU count.
pub fn physical_cores() -> usize {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| parse_cpuinfo(&text))
        .unwrap_or_else(logical_cpus)
}

pub fn logical_cpus() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_cpuinfo(text: &str) -> Option<usize> {
    let mut cores = HashSet::new();
    let mut processors = 0;
    for block in text.split("\n\n") {
        let field = |key: &str| {
            block.lines().find_map(|l| {
                let (k, v) = l.split_once(':')?;
                (k.trim() == key).then(|| v.trim().to_string())
            })
        };
        if field("processor").is_none() {
            continue;
        }
        processors += 1;
        if let (Some(pkg), Some(core)) = (field("physical id"), field("core id")) {
            cores.insert((pkg, core));
        }
    }
    match (cores.len(), processors) {
        (0, 0) => None,
        (0, p) => Some(p),
        (c, _) => Some(c),
    }
}
