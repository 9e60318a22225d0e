//! One line per acceptance criterion, written straight to stderr so it shows
//! up in the test log even when the test passes.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specforge_core::config::Config;
use specforge_core::dataset::{CorpusStats, FineTuningRecord};
use specforge_core::eval::{error_report, outputs_equivalent, pass_at_k, EquivalenceOptions};
use specforge_core::fixtures::{fabricate_records, write_synthetic_csvs};
use specforge_core::intents::{diversity_filter, rouge_l, tokenize, DropReason};
use specforge_core::llm::MockBackend;
use specforge_core::model::{
    Cell, CodeCandidate, ExecStatus, ExecutionRecord, Intent, ProgrammaticContext, SpecType, VarKind,
    VariableSnapshot,
};
use specforge_core::ndr::{self, Header};
use specforge_core::pipeline::{self, Stage};
use specforge_core::prompt::{default_exemplars, leaked_output_values, ExemplarKind};
use specforge_core::specs::{derive_io_examples, derive_type_desc, io_summary_prompt, SummarySettings};

fn report(id: &str, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "ACCEPTANCE {id} {verdict} {name}: {detail}").unwrap();
    assert!(pass, "{id} {name}: {detail}");
}

/// Fraction of size-k subsets of n samples (the first c correct) holding at
/// least one correct sample, by enumerating bitmasks.
fn subset_oracle(n: u32, c: u32, k: u32) -> f64 {
    let correct_mask = (1u32 << c) - 1;
    let (mut total, mut hit) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() == k {
            total += 1;
            if mask & correct_mask != 0 {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

#[test]
fn a1_pass_at_k_matches_subset_enumeration() {
    let start = Instant::now();
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for n in 1..=10u32 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n.into(), c.into(), k.into()).unwrap();
                worst = worst.max((got - subset_oracle(n, c, k)).abs());
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "A1",
        "pass@k vs subset oracle, n<=10",
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("{checked} triples, max |delta| {worst:.3e} (tol 1e-12), {elapsed:?} (limit 5s)"),
    );
}

#[test]
fn a2_pass_at_k_anchors() {
    let all = pass_at_k(50, 50, 5).unwrap();
    let none = pass_at_k(50, 0, 20).unwrap();
    report(
        "A2",
        "pass@k anchors",
        all == 1.0 && none == 0.0,
        format!("pass@5(n=50,c=50)={all}, pass@20(n=50,c=0)={none} (exact)"),
    );
}

fn lcs_oracle(a: &[String], b: &[String], i: usize, j: usize, memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
    if i == a.len() || j == b.len() {
        return 0;
    }
    if let Some(&v) = memo.get(&(i, j)) {
        return v;
    }
    let v = if a[i] == b[j] {
        1 + lcs_oracle(a, b, i + 1, j + 1, memo)
    } else {
        lcs_oracle(a, b, i + 1, j, memo).max(lcs_oracle(a, b, i, j + 1, memo))
    };
    memo.insert((i, j), v);
    v
}

fn rouge_oracle(a: &[String], b: &[String]) -> f64 {
    let l = lcs_oracle(a, b, 0, 0, &mut BTreeMap::new());
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / a.len() as f64;
    let r = l as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

const VOCAB: &[&str] = &["show", "the", "mean", "price", "per", "city", "count", "rows", "of", "table"];

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..=30);
    (0..len).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

#[test]
fn a3_rouge_l_matches_recursive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut asymmetric = 0;
    let mut bad_self = 0;
    for _ in 0..200 {
        let a = tokenize(&random_sentence(&mut rng));
        let b = tokenize(&random_sentence(&mut rng));
        let got = rouge_l(&a, &b);
        if got != rouge_oracle(&a, &b) {
            mismatches += 1;
        }
        if got != rouge_l(&b, &a) {
            asymmetric += 1;
        }
        if !a.is_empty() && rouge_l(&a, &a) != 1.0 {
            bad_self += 1;
        }
    }
    report(
        "A3",
        "ROUGE-L vs oracle on 200 random pairs",
        mismatches == 0 && asymmetric == 0 && bad_self == 0,
        format!("{mismatches} mismatches, {asymmetric} asymmetric, {bad_self} self-scores != 1 (exact)"),
    );
}

const DIVERSITY_CORPUS: [&str; 10] = [
    "Show the average price for each city",
    "Show the average price for every city",
    "Count the number of rows in the table",
    "Show the average price for each product",
    "List the ten most expensive products",
    "Count the number of rows in the table",
    "Plot a histogram of the units column",
    "Count how many rows mention each city",
    "List the ten most expensive products sold in Oslo",
    "Which city sells the most tea",
];

#[test]
fn a4_diversity_filter_golden() {
    let corpus: Vec<String> = DIVERSITY_CORPUS.iter().map(|s| s.to_string()).collect();
    let (kept, dropped) = diversity_filter(&corpus, 0.7).unwrap();
    let expected_kept: Vec<String> = [0, 2, 4, 6, 7, 9].iter().map(|&i| corpus[i].clone()).collect();
    let expected_dropped = vec![
        (corpus[1].clone(), DropReason::RougeOverlap),
        (corpus[3].clone(), DropReason::RougeOverlap),
        (corpus[5].clone(), DropReason::Duplicate),
        (corpus[8].clone(), DropReason::RougeOverlap),
    ];
    let got_dropped: Vec<(String, DropReason)> = dropped.into_iter().map(|d| (d.text, d.reason)).collect();
    let tokens: Vec<Vec<String>> = kept.iter().map(|s| tokenize(s)).collect();
    let mut max_pair = 0.0f64;
    for i in 0..tokens.len() {
        for j in 0..i {
            max_pair = max_pair.max(rouge_oracle(&tokens[i], &tokens[j]));
        }
    }
    report(
        "A4",
        "diversity filter golden (threshold 0.7)",
        kept == expected_kept && got_dropped == expected_dropped && max_pair < 0.7,
        format!("kept {}/10, dropped {}, max kept pairwise ROUGE-L {max_pair:.4}", kept.len(), got_dropped.len()),
    );
}

#[test]
fn a5_spec_rendering_goldens() {
    let record = common::spec_record();
    let intent = common::spec_intent();
    let type_desc = derive_type_desc(&record).unwrap().rendered;
    let io_examples = derive_io_examples(&record, false).unwrap().rendered;
    let settings = |noisy| SummarySettings {
        exemplars: default_exemplars(ExemplarKind::IoSummary),
        noisy,
        ..SummarySettings::default()
    };
    let normal = io_summary_prompt(&record, common::SPEC_SOLUTION, &intent, &settings(false)).unwrap();
    let noisy = io_summary_prompt(&record, common::SPEC_SOLUTION, &intent, &settings(true)).unwrap();
    let checks = [
        ("type_desc", common::golden("type_desc.txt", &(type_desc + "\n"))),
        ("io_examples", common::golden("io_examples.txt", &(io_examples + "\n"))),
        ("io_summary_normal", common::golden("io_summary_prompt_normal.txt", &normal)),
        ("io_summary_noisy", common::golden("io_summary_prompt_noisy.txt", &noisy)),
    ];
    let noisy_leaks = leaked_output_values(&noisy, &record);
    let normal_leaks = leaked_output_values(&normal, &record);
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(
        "A5",
        "spec rendering goldens",
        failed.is_empty() && noisy_leaks.is_empty() && !normal_leaks.is_empty(),
        format!(
            "golden mismatches {failed:?}, noisy prompt leaks {noisy_leaks:?}, normal prompt shows {} values",
            normal_leaks.len()
        ),
    );
}

fn e2e_config(input: &Path, out: &Path, replay: Option<PathBuf>) -> Config {
    let mut config = Config {
        seed: 0,
        ..Config::default()
    };
    config.pipeline.input_dir = input.to_path_buf();
    config.pipeline.out_dir = out.to_path_buf();
    config.pipeline.spec_type = Some(SpecType::IoSummary);
    config.execution.replay = replay;
    config
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn a6_end_to_end_replay_pipeline() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("csv");
    write_synthetic_csvs(&input, 20, 11).unwrap();
    let backend = MockBackend::personas();

    let out_a = tmp.path().join("a");
    let partial = e2e_config(&input, &out_a, None);
    pipeline::run(&partial, &backend, Some(Stage::GenSolutions)).unwrap();
    let plan = pipeline::plan(&partial).unwrap();
    let path_of = |stage| plan.get(stage).unwrap().output.clone();
    let (_, contexts): (_, Vec<ProgrammaticContext>) = ndr::read_records(&path_of(Stage::MineContexts)).unwrap();
    let (_, intents): (_, Vec<Intent>) = ndr::read_records(&path_of(Stage::GenIntents)).unwrap();
    let (_, candidates): (_, Vec<CodeCandidate>) = ndr::read_records(&path_of(Stage::GenSolutions)).unwrap();
    let context_of = |cand: &CodeCandidate| {
        let intent = intents.iter().find(|i| i.intent_id == cand.intent_id)?;
        contexts.iter().find(|c| c.context_id == intent.context_id).cloned()
    };
    let records = fabricate_records(&candidates, context_of, |c| c.sample_index < 3).unwrap();
    let replay = tmp.path().join("replay.ndr");
    ndr::write_records(&replay, &Header::new("executions", 0), &records).unwrap();

    let config_a = e2e_config(&input, &out_a, Some(replay.clone()));
    let summary = pipeline::run(&config_a, &backend, None).unwrap();
    let out_b = tmp.path().join("b");
    pipeline::run(&e2e_config(&input, &out_b, Some(replay)), &backend, None).unwrap();

    let final_plan = pipeline::plan(&config_a).unwrap();
    let (_, dataset): (_, Vec<FineTuningRecord>) =
        ndr::read_records(&final_plan.get(Stage::BuildDataset).unwrap().output).unwrap();
    let ok_ids: std::collections::HashSet<&str> = records
        .iter()
        .filter(|r| r.status == ExecStatus::Ok)
        .map(|r| r.candidate_id.as_str())
        .collect();
    let executable = dataset
        .iter()
        .filter(|r| r.meta.provenance.executable && ok_ids.contains(r.meta.candidate_id.as_str()))
        .count();
    let stats: CorpusStats =
        serde_json::from_str(&fs::read_to_string(summary.stats.unwrap()).unwrap()).unwrap();
    let identical = dir_bytes(&out_a) == dir_bytes(&out_b);
    let elapsed = start.elapsed();
    report(
        "A6",
        "end-to-end replay pipeline on 20 tables",
        contexts.len() == 20
            && !dataset.is_empty()
            && executable == dataset.len()
            && (stats.execution_rate - 0.6).abs() <= 1e-12
            && identical
            && elapsed < Duration::from_secs(60),
        format!(
            "{} contexts, {} candidates, {}/{} examples executable, execution_rate {} (want 0.6, tol 1e-12), \
             byte-identical reruns {identical}, {elapsed:?} (limit 60s)",
            contexts.len(),
            candidates.len(),
            executable,
            dataset.len(),
            stats.execution_rate
        ),
    );
}

#[test]
fn a7_error_report_counts() {
    let mut records = Vec::new();
    for i in 0..3 {
        records.push(ExecutionRecord::failure(format!("s{i}"), ExecStatus::SyntaxError, "SyntaxError"));
    }
    for i in 0..2 {
        records.push(ExecutionRecord::failure(format!("k{i}"), ExecStatus::SchemaError, "KeyError: 'x'"));
    }
    for i in 0..5 {
        records.push(ExecutionRecord {
            status: ExecStatus::Ok,
            error_message: None,
            output_vars: vec![VariableSnapshot::scalar("x", "int", Cell::Int(i))],
            ..ExecutionRecord::failure(format!("o{i}"), ExecStatus::Ok, "")
        });
    }
    let report_ = error_report(&records);
    let partition: usize = report_.table.values().sum();
    let pass = report_.syntax_errors == 3
        && report_.schema_errors == 2
        && report_.table.get("ok") == Some(&5)
        && report_.total == 10
        && partition == 10
        && report_.execution_rate == 0.5;
    report(
        "A7",
        "error report on 3 syntax / 2 schema / 5 ok",
        pass,
        format!(
            "syntax {}, schema {}, table {:?}, partition sum {partition}/{}, execution_rate {}",
            report_.syntax_errors, report_.schema_errors, report_.table, report_.total, report_.execution_rate
        ),
    );
}

fn random_table(rng: &mut ChaCha8Rng) -> (Vec<(String, String)>, Vec<Vec<Cell>>) {
    let cols = rng.gen_range(1..=5);
    let rows = rng.gen_range(1..=8);
    let mut columns = Vec::new();
    let mut cells = Vec::new();
    for c in 0..cols {
        let (dtype, column): (&str, Vec<Cell>) = match rng.gen_range(0..3) {
            0 => ("int64", (0..rows).map(|_| Cell::Int(rng.gen_range(-50..50))).collect()),
            1 => ("float64", (0..rows).map(|_| Cell::Float(rng.gen_range(-10.0..10.0))).collect()),
            _ => ("object", (0..rows).map(|_| Cell::Text(format!("v{}", rng.gen_range(0..6)))).collect()),
        };
        columns.push((format!("c{c}"), dtype.to_string()));
        cells.push(column);
    }
    (columns, cells)
}

fn snapshot(columns: Vec<(String, String)>, cells: Vec<Vec<Cell>>) -> VariableSnapshot {
    VariableSnapshot::from_table("out", "pandas.core.frame.DataFrame", VarKind::Tabular, columns, cells).unwrap()
}

#[test]
fn a8_equivalence_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let options = EquivalenceOptions::default();
    let (mut reflexive, mut permuted, mut flipped) = (0, 0, 0);
    for _ in 0..100 {
        let (columns, cells) = random_table(&mut rng);
        let reference = snapshot(columns.clone(), cells.clone());
        if outputs_equivalent(&reference, &reference, &options).unwrap() {
            reflexive += 1;
        }
        let mut order: Vec<usize> = (0..columns.len()).collect();
        order.shuffle(&mut rng);
        let renamed: Vec<(String, String)> =
            order.iter().map(|&i| (format!("renamed_{i}"), columns[i].1.clone())).collect();
        let mut moved: Vec<Vec<Cell>> = order.iter().map(|&i| cells[i].clone()).collect();
        if outputs_equivalent(&snapshot(renamed.clone(), moved.clone()), &reference, &options).unwrap() {
            permuted += 1;
        }
        let col = rng.gen_range(0..moved.len());
        let row = rng.gen_range(0..moved[col].len());
        moved[col][row] = match &moved[col][row] {
            Cell::Int(v) => Cell::Int(v + 1),
            Cell::Float(v) => Cell::Float(v + 1.0),
            Cell::Text(s) => Cell::Text(format!("{s}!")),
            other => other.clone(),
        };
        if !outputs_equivalent(&snapshot(renamed, moved), &reference, &options).unwrap() {
            flipped += 1;
        }
    }
    report(
        "A8",
        "equivalence on 100 random tables (tol 1e-6)",
        reflexive == 100 && permuted == 100 && flipped == 100,
        format!("reflexive {reflexive}/100, permuted+renamed equal {permuted}/100, one-cell change detected {flipped}/100"),
    );
}
