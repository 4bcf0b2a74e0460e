mod oracles;

use std::collections::HashSet;

use bugforge_core::abstraction::{abstract_pair, deabstract, mine_idioms, IdiomVocabulary};
use bugforge_core::corpus::{dedup_files, mine_pairs, process_corpus, FilterRules, ManifestReason, SourceFile};
use bugforge_core::eval::is_deletion_only;
use bugforge_core::noising::{mask_batch, unmask};
use bugforge_core::synth::{synth_commits, synth_source_tree, SynthShape};
use bugforge_core::syntax::{extract_methods, normalize, render, texts, tokenize_java};
use bugforge_core::tokenizer::{train_bpe, SubwordVocabulary, MASK_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dedup_matches_hash_set_oracle() {
    let mut files = Vec::new();
    for i in 0..700 {
        files.push(SourceFile::new("r", &format!("u/{i}.java"), format!("class U{i} {{}}").into_bytes()).unwrap());
    }
    for i in 0..300 {
        let src = i % 100;
        files.push(SourceFile::new("r", &format!("c/{i}.java"), format!("class U{src} {{}}").into_bytes()).unwrap());
    }
    let mut seen = HashSet::new();
    let expected: Vec<String> =
        files.iter().filter(|f| seen.insert(f.content.clone())).map(|f| f.path.clone()).collect();
    let kept = dedup_files(files);
    assert_eq!(kept.len(), 700);
    assert_eq!(kept.iter().map(|f| f.path.clone()).collect::<Vec<_>>(), expected);
}

#[test]
fn synthetic_tree_trips_every_filter() {
    let tree = synth_source_tree(1, 4, 5, SynthShape::default());
    let files: Vec<SourceFile> = tree
        .iter()
        .map(|f| SourceFile::new(f.repo.clone(), &f.path, f.content.clone().into_bytes()).unwrap())
        .collect();
    let total = files.len();
    let (manifest, cleaned) = process_corpus(files, &FilterRules::default());
    assert_eq!(manifest.files.len() + manifest.rejected.len(), total);
    let reasons: HashSet<ManifestReason> = manifest.rejected.iter().map(|r| r.reason).collect();
    for r in [ManifestReason::Duplicate, ManifestReason::AutoGenerated, ManifestReason::TooLongLines, ManifestReason::DataLike] {
        assert!(reasons.contains(&r), "{r:?} not triggered: {:?}", manifest.rejected);
    }
    assert!(cleaned.iter().all(|c| !c.text.contains("Copyright")));
}

#[test]
fn render_then_parse_is_a_fixpoint() {
    let commits = synth_commits(2, 40, SynthShape::default());
    for c in &commits {
        for m in extract_methods(&c.file_diffs[0].after).unwrap() {
            let once = texts(&normalize(&m));
            let twice = texts(&tokenize_java(&render(&once)).unwrap());
            assert_eq!(once, twice);
        }
    }
}

#[test]
fn abstraction_round_trips_mined_pairs() {
    let pairs = mine_pairs(&synth_commits(9, 200, SynthShape::default()));
    let methods: Vec<_> = pairs.iter().map(|p| p.buggy.clone()).collect();
    for idioms in [IdiomVocabulary::empty(), mine_idioms(&methods, 20).unwrap()] {
        for p in &pairs {
            let (b, f) = (normalize(&p.buggy), normalize(&p.fixed));
            let a = abstract_pair(&b, &f, &idioms).unwrap();
            assert_eq!(deabstract(&a.buggy.tokens, &a.map).unwrap(), texts(&b));
            assert_eq!(deabstract(&a.fixed.tokens, &a.map).unwrap(), texts(&f));
        }
    }
}

#[test]
fn deletion_agrees_with_enumeration_up_to_six() {
    let seqs = oracles::all_sequences(&["a", "b", "c"], 6);
    let short: Vec<_> = seqs.iter().filter(|s| s.len() <= 4).collect();
    for b in seqs.iter().filter(|s| s.len() == 6) {
        for f in &short {
            if b == *f {
                continue;
            }
            assert_eq!(is_deletion_only(b, f).unwrap(), oracles::deletion_by_enumeration(b, f), "{b:?} {f:?}");
        }
    }
}

#[test]
fn bpe_matches_recount_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let len = rng.gen_range(1..=120);
        let doc: Vec<u8> = (0..len).map(|_| b"ab c\n"[rng.gen_range(0..5)]).collect();
        let got: Vec<(Vec<u8>, Vec<u8>)> =
            train_bpe(&[doc.clone()], 8).unwrap().into_iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(got, oracles::bpe_by_recount(&[doc], 8));
    }
}

#[test]
fn masking_preserves_content() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seqs: Vec<Vec<u32>> =
        (0..500).map(|_| (0..rng.gen_range(3..80)).map(|_| rng.gen_range(10..300)).collect()).collect();
    for (s, p) in seqs.iter().zip(mask_batch(&seqs, 0.3, 3, 42, &MASK_ID)) {
        let p = p.unwrap();
        assert_eq!(&unmask(&p, &MASK_ID).unwrap(), s);
    }
    let v = SubwordVocabulary::bytes_only();
    assert_eq!(v.decode(&v.encode(b"int x = 1;")), b"int x = 1;");
}
