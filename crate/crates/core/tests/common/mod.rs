#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use kgllm::DatasetKind;

/// Row counts of a synthetic dataset.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Summary-table row counts of the four benchmarks.
pub fn benchmark_shape(kind: DatasetKind) -> Shape {
    let (entities, relations, train, dev, test) = match kind {
        DatasetKind::Wn11 => (38_696, 11, 112_581, 2_609, 10_544),
        DatasetKind::Fb13 => (75_043, 13, 316_232, 5_908, 23_733),
        DatasetKind::Wn18rr => (40_943, 11, 86_835, 3_034, 3_134),
        DatasetKind::Yago3_10 => (123_182, 37, 1_079_040, 5_000, 5_000),
    };
    Shape {
        entities,
        relations,
        train,
        dev,
        test,
    }
}

/// Writes a dataset directory with deterministic, collision-free names.
/// Entity texts are fixed-width so no entity text contains another.
/// Labeled kinds alternate `1` / `-1` rows on dev and test.
pub fn write_synthetic(dir: &Path, kind: DatasetKind, shape: Shape) {
    fs::create_dir_all(dir).unwrap();
    let mut ents = String::new();
    for i in 0..shape.entities {
        writeln!(ents, "ent_{i:07}\tEntity {i:07}").unwrap();
    }
    fs::write(dir.join("entity2text.txt"), ents).unwrap();
    let mut rels = String::new();
    for r in 0..shape.relations {
        writeln!(rels, "rel_{r:03}\trelation phrase {r:03}").unwrap();
    }
    fs::write(dir.join("relation2text.txt"), rels).unwrap();

    let n = shape.entities.max(1) as u64;
    let triple = |i: u64, salt: u64| {
        let h = (i.wrapping_mul(7919).wrapping_add(salt)) % n;
        let mut t = (i.wrapping_mul(104_729).wrapping_add(salt * 31 + 1)) % n;
        if t == h {
            t = (t + 1) % n;
        }
        let r = (i + salt) % shape.relations.max(1) as u64;
        (h, r, t)
    };
    let write_split = |name: &str, rows: usize, salt: u64, labeled: bool| {
        let mut out = String::with_capacity(rows * 40);
        for i in 0..rows as u64 {
            let (h, r, t) = triple(i, salt);
            write!(out, "ent_{h:07}\trel_{r:03}\tent_{t:07}").unwrap();
            if labeled {
                out.push_str(if i % 2 == 0 { "\t1" } else { "\t-1" });
            }
            out.push('\n');
        }
        fs::write(dir.join(name), out).unwrap();
    };
    write_split("train.tsv", shape.train, 0, false);
    write_split("dev.tsv", shape.dev, 1, kind.is_labeled());
    write_split("test.tsv", shape.test, 2, kind.is_labeled());
}

/// A small dataset shaped like `kind` with `test` rows.
pub fn small_synthetic(dir: &Path, kind: DatasetKind, test: usize) {
    write_synthetic(
        dir,
        kind,
        Shape {
            entities: 3_000,
            relations: if kind == DatasetKind::Yago3_10 {
                37
            } else {
                11
            },
            train: 6_000,
            dev: 50,
            test,
        },
    );
}
