//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Built without the libtest harness so the lines are
//! always printed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use scribe::drafter::{self, AnnotationKind, TypeMapping};
use scribe::fortran::{self, SourceForm};
use scribe::indexer::{self, ConstructKind, FileRef, INDEX_FILE_NAME};
use scribe::prompt::{self, tags, AssembledPrompt, ChatMessage, ChatRole};
use scribe::translator::{self, ExtractError, Warning};
use sha2::{Digest, Sha256};

/// Wall-clock limit for indexing the fixture tree.
const INDEX_TIME_LIMIT: Duration = Duration::from_secs(5);
const EXTRACTION_PAIRS: u32 = 1000;
const PROMPT_SETS: u32 = 500;
const EXPECTED_MAX_TOKENS: u64 = 4096;
const MAX_CONCURRENCY: usize = 8;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_scribe")
}

fn run(args: &[String]) -> Output {
    Command::new(bin()).args(args).env_remove("OPENAI_API_KEY").output().unwrap()
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn check_exit(out: &Output, want: i32, what: &str) -> Result<(), String> {
    ensure(out.status.code() == Some(want), || {
        format!("{what} exited {:?}, want {want}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn fortran_files(root: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'))
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file() && fortran::is_fortran_path(e.path()))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    files
}

fn index_hashes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_name() == INDEX_FILE_NAME)
        .map(|e| (e.path().to_owned(), Sha256::digest(fs::read(e.path()).unwrap()).to_vec()))
        .collect()
}

fn index_fidelity() -> Outcome {
    let tree = common::tree_copy();
    let files = fortran_files(tree.path());
    let depth = common::fortran_dirs(tree.path()).iter().map(|d| d.split('/').count()).max().unwrap_or(0);
    let forms: BTreeSet<bool> = files.iter().filter_map(|f| SourceForm::from_path(f)).map(|f| f == SourceForm::Fixed).collect();
    let manifest = common::manifest();
    ensure(files.len() >= 15 && depth >= 3 && forms.len() == 2 && manifest.len() >= 30, || {
        format!("fixture too small: {} files, depth {depth}, {} forms, {} constructs", files.len(), forms.len(), manifest.len())
    })?;

    let start = Instant::now();
    let out = run(&args(&["index", &p(tree.path())]));
    let elapsed = start.elapsed();
    check_exit(&out, 0, "scribe index")?;
    ensure(elapsed < INDEX_TIME_LIMIT, || format!("took {elapsed:?}"))?;

    let (indexes, _) = indexer::load_tree(tree.path()).map_err(|e| e.to_string())?;
    let mut found = BTreeSet::new();
    for idx in &indexes {
        for (file, fc) in &idx.files {
            let path = if idx.directory == "." { file.clone() } else { format!("{}/{file}", idx.directory) };
            for (kind, name) in fc.iter() {
                found.insert((kind.as_str().to_owned(), name.to_owned(), path.clone()));
            }
        }
    }
    let hits = manifest.intersection(&found).count();
    let precision = hits as f64 / found.len().max(1) as f64;
    let recall = hits as f64 / manifest.len() as f64;
    ensure(precision == 1.0 && recall == 1.0, || {
        let missing: Vec<_> = manifest.difference(&found).collect();
        let extra: Vec<_> = found.difference(&manifest).collect();
        format!("precision {precision:.3} recall {recall:.3}; missing {missing:?}; extra {extra:?}")
    })?;
    Ok(format!(
        "precision {precision:.3} recall {recall:.3} ({hits}/{} constructs, {} files, depth {depth}), {:.2} s < {} s",
        manifest.len(),
        files.len(),
        elapsed.as_secs_f64(),
        INDEX_TIME_LIMIT.as_secs()
    ))
}

fn index_round_trip() -> Outcome {
    let tree = common::tree_copy();
    check_exit(&run(&args(&["index", &p(tree.path())])), 0, "first index")?;
    let first = index_hashes(tree.path());
    let (indexes, _) = indexer::load_tree(tree.path()).map_err(|e| e.to_string())?;
    for idx in &indexes {
        let scratch = tempfile::tempdir().unwrap();
        let written = indexer::write_index(idx, scratch.path()).map_err(|e| e.to_string())?;
        let back = indexer::read_index(&written).map_err(|e| e.to_string())?;
        ensure(&back == idx, || format!("round trip differs for {}", idx.directory))?;
    }
    check_exit(&run(&args(&["index", &p(tree.path())])), 0, "second index")?;
    let second = index_hashes(tree.path());
    ensure(first == second && !first.is_empty(), || "second run changed index bytes".into())?;
    Ok(format!("{} directories round-trip; SHA-256 identical across runs", indexes.len()))
}

fn inverse_map() -> Outcome {
    let tree = common::tree_copy();
    let out = run(&args(&["index", &p(tree.path())]));
    check_exit(&out, 0, "scribe index")?;
    let (_, map) = indexer::load_tree(tree.path()).map_err(|e| e.to_string())?;
    let manifest = common::manifest();
    let mut resolved = 0;
    for (kind, name, file) in &manifest {
        let kind = ConstructKind::ALL.into_iter().find(|k| k.as_str() == kind).unwrap();
        let files: Vec<String> = map.lookup(kind, name).iter().map(FileRef::path).collect();
        ensure(files.contains(file), || format!("{kind} {name} -> {files:?}, want {file}"))?;
        resolved += 1;
    }
    let dup: Vec<String> = map.lookup(ConstructKind::Subroutine, "shared_setup").iter().map(FileRef::path).collect();
    ensure(dup == ["physics/dup_b.f90", "util/dup_a.f90"], || format!("duplicate lookup {dup:?}"))?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure(
        stderr.lines().any(|l| l.starts_with("warning:") && l.contains("shared_setup") && l.contains("dup_a.f90") && l.contains("dup_b.f90")),
        || format!("no duplicate diagnostic in {stderr:?}"),
    )?;
    Ok(format!("{resolved}/{} manifest constructs resolve; shared_setup -> 2 files + diagnostic", manifest.len()))
}

fn draft_goldens() -> Outcome {
    let tree = common::tree_copy();
    check_exit(&run(&args(&["index", &p(tree.path())])), 0, "scribe index")?;
    let cases = [("decls", "decls.f90"), ("funcvar", "funcvar.f90"), ("target", "target.f")];
    let mut draft_args = args(&["draft"]);
    draft_args.extend(cases.iter().map(|(_, f)| p(&tree.path().join(f))));
    check_exit(&run(&draft_args), 0, "scribe draft")?;
    for (stem, _) in cases {
        let got = fs::read_to_string(tree.path().join(format!("{stem}.scribe"))).map_err(|e| e.to_string())?;
        ensure(got == common::golden(&format!("{stem}.scribe")), || format!("{stem}.scribe differs from golden"))?;
    }
    let decls = common::golden("decls.scribe");
    ensure(decls.contains("FArray2D<double> a(a_data.data(), 2, 3);") && decls.contains("double x;"), || {
        "decls golden lacks scalar/array conversions".into()
    })?;
    ensure(common::golden("funcvar.scribe").contains("// scribe: statement-function-candidate funcvar "), || {
        "funcvar golden lacks statement-function annotation".into()
    })?;
    let target = common::golden("target.scribe");
    for (name, file) in [("lnrat", "lib/lnrat.f"), ("L0", "lib/loops.f"), ("L1", "lib/loops.f"), ("Lsm1", "lib/loops.f")] {
        let line = format!("// scribe: external-function {name} defined in {file}");
        ensure(target.lines().any(|l| l == line), || format!("target golden lacks `{line}`"))?;
    }

    // No-body rule over every file of the tree.
    let (_, map) = indexer::load_tree(tree.path()).map_err(|e| e.to_string())?;
    let mut names = 0;
    for file in fortran_files(tree.path()) {
        let art = drafter::generate_draft(&file, &map, &TypeMapping::default()).map_err(|e| e.to_string())?;
        for a in art.annotations.iter().filter(|a| a.kind.is_external() || a.kind == AnnotationKind::StatementFunctionCandidate) {
            let word = regex::Regex::new(&format!(r"(?i)\b{}\b", regex::escape(&a.name))).unwrap();
            let body = art.draft_text.lines().find(|l| !l.starts_with("//") && !l.starts_with('#') && word.is_match(l));
            ensure(body.is_none(), || format!("{}: `{}` has C++ code: {body:?}", file.display(), a.name))?;
            names += 1;
        }
    }
    Ok(format!("3 goldens byte-exact; no-body rule holds for {names} annotated names"))
}

fn payload() -> impl Strategy<Value = String> {
    "[a-z<>/{}();=+* \n\t]{1,160}".prop_filter("tag-free and non-blank", |s| {
        tags::find_literal(s, &[tags::CSOURCE, tags::FSOURCE]).is_none() && !s.trim().is_empty()
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn extraction() -> Outcome {
    let count = std::cell::Cell::new(0u32);
    runner(EXTRACTION_PAIRS)
        .run(&(payload(), payload(), "[A-Za-z .:\n]{0,40}"), |(a, b, prose)| {
            count.set(count.get() + 1);
            let text = format!("{prose}{}\n{}{prose}", tags::wrap(tags::CSOURCE, &a), tags::wrap(tags::FSOURCE, &b));
            let (c, f, w) = translator::extract_tagged(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(c, a);
            prop_assert_eq!(f, b);
            prop_assert!(w.is_empty());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let count = count.get();
    ensure(count >= EXTRACTION_PAIRS, || format!("only {count} pairs ran"))?;

    let (_, f, w) = translator::extract_tagged(&tags::wrap(tags::CSOURCE, "int x;")).map_err(|e| e.to_string())?;
    ensure(f.is_empty() && w == [Warning::MissingFsource], || format!("missing fsource: {w:?}"))?;
    let raw = tags::wrap(tags::FSOURCE, "module m\nend module m");
    match translator::extract_tagged(&raw) {
        Err(ExtractError::MissingCsource { raw: r }) if r == raw => {}
        other => return Err(format!("missing csource: {other:?}")),
    }
    let dup = format!("{}{}{}", tags::wrap(tags::CSOURCE, "A"), tags::wrap(tags::CSOURCE, "B"), tags::wrap(tags::FSOURCE, "F"));
    let (c, _, w) = translator::extract_tagged(&dup).map_err(|e| e.to_string())?;
    ensure(c == "A" && w == [Warning::DuplicateBlock { tag: tags::CSOURCE, count: 2 }], || format!("duplicate: {c:?} {w:?}"))?;
    Ok(format!("{count} random pairs round-trip; missing-fsource warns, missing-csource errors, duplicate keeps first"))
}

fn offline_end_to_end() -> Outcome {
    let unshare = |rest: &[String]| -> Output {
        Command::new("unshare").arg("-rn").args(rest).env_remove("OPENAI_API_KEY").output().unwrap()
    };
    let probe = Command::new("unshare").args(["-rn", "true"]).output();
    ensure(probe.as_ref().is_ok_and(|o| o.status.success()), || {
        format!("cannot disable networking with `unshare -rn`: {probe:?}")
    })?;

    // Sanity check: inside the namespace a remote backend cannot reach a
    // server that is listening outside it.
    let server = common::StubServer::start(Duration::ZERO, Arc::new(|_, _| (200, common::completion_body("x", "stop"))));
    let tree = common::tree_copy();
    let root = tree.path();
    let scratch = tempfile::tempdir().unwrap();
    // Root inside the namespace cannot enter directories owned by unmapped
    // users, so the binary and template run from scratch copies.
    let exe = scratch.path().join("scribe");
    fs::copy(bin(), &exe).map_err(|e| e.to_string())?;
    let template = scratch.path().join("seed_prompt.toml");
    fs::copy(common::seed_prompt(), &template).map_err(|e| e.to_string())?;
    let with_bin = |a: &[&str]| -> Vec<String> { std::iter::once(p(&exe)).chain(a.iter().map(|s| s.to_string())).collect() };

    check_exit(&unshare(&with_bin(&["index", &p(root)])), 0, "offline index")?;
    let probe_out = unshare(&with_bin(&[
        "translate", &p(&root.join("target.f")), "--template", &p(&template),
        "--endpoint", &server.url, "--out", &p(&scratch.path().join("probe")),
    ]));
    check_exit(&probe_out, 1, "remote translate inside the namespace")?;
    ensure(server.requests().is_empty(), || "a request escaped the network namespace".into())?;

    let files: Vec<String> = fortran_files(root).iter().map(|f| p(f)).collect();
    let mut draft = with_bin(&["draft"]);
    draft.extend(files.iter().cloned());
    check_exit(&unshare(&draft), 0, "offline draft")?;

    let mut outputs = Vec::new();
    for run_no in 0..2 {
        let out_dir = scratch.path().join(format!("run{run_no}"));
        let mut translate = with_bin(&["translate", "--backend", "mock", "--template", &p(&template), "--out", &p(&out_dir)]);
        translate.extend(files.iter().cloned());
        check_exit(&unshare(&translate), 0, "offline translate")?;
        outputs.push(common::snapshot(&out_dir));
    }
    ensure(outputs[0] == outputs[1], || "two mock runs produced different files".into())?;
    let produced = &outputs[0];
    for f in fortran_files(root) {
        let rel = f.strip_prefix(root).unwrap().with_extension("");
        let rel = rel.to_string_lossy();
        for name in [format!("{rel}.cpp"), format!("{rel}_fi.f90")] {
            ensure(produced.contains_key(&name), || format!("missing output {name}"))?;
        }
    }
    let text = |k: &str| String::from_utf8_lossy(&produced[k]).into_owned();
    ensure(text("target.cpp") == common::golden("target.cpp"), || "target.cpp differs from golden".into())?;
    ensure(text("target_fi.f90") == common::golden("target_fi.f90"), || "target_fi.f90 differs from golden".into())?;
    Ok(format!(
        "index, draft, translate exit 0 with networking disabled; {} outputs for {} sources, identical across 2 runs, goldens match",
        produced.len(),
        files.len()
    ))
}

fn config_defaults() -> Outcome {
    let server = common::StubServer::start(
        Duration::from_millis(150),
        Arc::new(|_, _| {
            let reply = format!("{}\n{}", tags::wrap(tags::CSOURCE, "int f();"), tags::wrap(tags::FSOURCE, "! fi"));
            (200, common::completion_body(&reply, "stop"))
        }),
    );
    let tree = common::tree_copy();
    check_exit(&run(&args(&["index", &p(tree.path())])), 0, "scribe index")?;
    let files = fortran_files(tree.path());
    ensure(files.len() > MAX_CONCURRENCY, || "need more files than the batch size".into())?;
    let out_dir = tempfile::tempdir().unwrap();
    let mut a = args(&["translate", "--template", &p(&common::seed_prompt()), "--endpoint", &server.url, "--out", &p(out_dir.path())]);
    a.extend(files.iter().map(|f| p(f)));
    check_exit(&run(&a), 0, "translate against stub")?;

    let reqs = server.requests();
    ensure(reqs.len() == files.len(), || format!("{} requests for {} files", reqs.len(), files.len()))?;
    for r in &reqs {
        ensure(r.body["max_tokens"].as_u64() == Some(EXPECTED_MAX_TOKENS), || format!("max_tokens {}", r.body["max_tokens"]))?;
    }
    let peak = server.max_in_flight.load(Ordering::SeqCst);
    ensure(peak <= MAX_CONCURRENCY, || format!("peak concurrency {peak}"))?;
    Ok(format!("{} requests, all max_tokens={EXPECTED_MAX_TOKENS}; peak concurrency {peak} <= {MAX_CONCURRENCY}", reqs.len()))
}

fn prompt_round_trip() -> Outcome {
    let role = prop::sample::select(vec![ChatRole::System, ChatRole::User, ChatRole::Assistant]);
    let messages = prop::collection::vec((role, any::<String>()).prop_map(|(r, c)| ChatMessage::new(r, c)), 0..10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prompt.json");
    let count = std::cell::Cell::new(0u32);
    runner(PROMPT_SETS)
        .run(&messages, |msgs| {
            count.set(count.get() + 1);
            let prompt = AssembledPrompt { messages: msgs.clone(), source_file: "x.f90".into() };
            prompt::export_json(&prompt, &path).unwrap();
            let back = prompt::read_json(&path).unwrap();
            prop_assert_eq!(back.len(), msgs.len());
            for (b, m) in back.iter().zip(&msgs) {
                prop_assert_eq!(b.role, m.role);
                prop_assert_eq!(b.content.as_bytes(), m.content.as_bytes());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let count = count.get();
    ensure(count >= PROMPT_SETS, || format!("only {count} sets ran"))?;
    Ok(format!("{count} random message sets preserved byte-exactly"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("index fidelity", index_fidelity),
        ("index round-trip and idempotence", index_round_trip),
        ("inverse-map oracle", inverse_map),
        ("draft golden tests and no-body rule", draft_goldens),
        ("extraction property suite", extraction),
        ("end-to-end offline", offline_end_to_end),
        ("config defaults", config_defaults),
        ("prompt JSON round-trip", prompt_round_trip),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason} [{secs:.2}s]");
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
