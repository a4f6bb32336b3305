use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use phrasemine::annotator::{annotate, build_impact_matrix};
use phrasemine::bridge::{merge, parse_generated, train_record, GeneratedRecord, ParseConfig};
use phrasemine::eval::{
    aggregate_candidates, eval_documents, eval_sentences, tfidf_rank, Candidate, CorpusStats, DocEvalReport,
    MatchMode, SentenceEvalReport, TOP_K,
};
use phrasemine::text::{
    read_jsonl, read_phrase_sets, write_jsonl_line, CorpusReader, Document, PhraseRecord, PhraseSet, PhraseSource,
    TextError,
};
use phrasemine::EncoderBackend;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    filter_config, max_phrases, optional_path, require_file, require_output, required_path, threads,
    BackendSettings, ConfigFile, MiningSettings,
};
use crate::error::CliError;
use crate::output::{echo_config, write_atomic, AtomicOutput};
use crate::{Cli, Command};

/// Documents processed per parallel block.
const BLOCK_DOCS: usize = 256;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Annotate {
            corpus,
            out,
            threads: t,
            backend,
            mining,
        } => {
            let config = AnnotateConfig {
                command: "annotate",
                corpus: input(&corpus, &file, "corpus")?,
                out: output_path(&out, &file)?,
                threads: threads(t, &file)?,
                backend: backend.resolve(&file)?,
                mining: mining.resolve(&file)?,
            };
            run_annotate(&config)
        }
        Command::Impact {
            corpus,
            sentence_id,
            out,
            backend,
            mining,
        } => {
            let out = optional_path(&out, &file, "out")?;
            if let Some(o) = &out {
                require_output(o)?;
            }
            let config = ImpactConfig {
                command: "impact",
                corpus: input(&corpus, &file, "corpus")?,
                sentence_id: sentence_id
                    .or(file.string("sentence_id")?)
                    .ok_or_else(|| CliError::Usage("missing --sentence-id".into()))?,
                out,
                backend: backend.resolve(&file)?,
                mining: mining.resolve(&file)?,
            };
            run_impact(&config)
        }
        Command::ExportTrain { corpus, silver, out } => {
            let config = ExportConfig {
                command: "export-train",
                corpus: input(&corpus, &file, "corpus")?,
                silver: input(&silver, &file, "silver")?,
                out: output_path(&out, &file)?,
            };
            run_export(&config)
        }
        Command::ImportGenerated {
            corpus,
            generated,
            out,
            max_phrases: m,
            stopwords,
            no_pos_filter,
        } => {
            let stopwords = optional_path(&stopwords, &file, "stopwords")?;
            if let Some(p) = &stopwords {
                require_file(p)?;
            }
            let config = ImportConfig {
                command: "import-generated",
                corpus: input(&corpus, &file, "corpus")?,
                generated: input(&generated, &file, "generated")?,
                out: output_path(&out, &file)?,
                max_phrases: max_phrases(m, &file)?,
                stopwords,
                pos_filter: !no_pos_filter && file.boolean("pos_filter")?.unwrap_or(true),
            };
            run_import(&config)
        }
        Command::Merge { annotator, generator, out } => {
            let config = MergeConfig {
                command: "merge",
                annotator: input(&annotator, &file, "annotator")?,
                generator: input(&generator, &file, "generator")?,
                out: output_path(&out, &file)?,
            };
            run_merge(&config)
        }
        Command::EvalSentence {
            pred,
            gold,
            surface,
            out,
            csv,
        } => {
            let config = EvalSentenceConfig {
                command: "eval-sentence",
                pred: input(&pred, &file, "pred")?,
                gold: input(&gold, &file, "gold")?,
                match_mode: if surface || file.boolean("surface")?.unwrap_or(false) {
                    MatchMode::Surface
                } else {
                    MatchMode::Span
                },
                out: optional_output(&out, &file, "out")?,
                csv: optional_output(&csv, &file, "csv")?,
            };
            run_eval_sentence(&config)
        }
        Command::EvalDoc {
            corpus,
            pred,
            out,
            csv,
            threads: t,
        } => {
            let config = EvalDocConfig {
                command: "eval-doc",
                corpus: input(&corpus, &file, "corpus")?,
                pred: input(&pred, &file, "pred")?,
                top_k: TOP_K,
                out: optional_output(&out, &file, "out")?,
                csv: optional_output(&csv, &file, "csv")?,
                threads: threads(t, &file)?,
            };
            run_eval_doc(&config)
        }
    }
}

fn input(flag: &Option<PathBuf>, file: &ConfigFile, key: &str) -> Result<PathBuf, CliError> {
    let p = required_path(flag, file, key)?;
    require_file(&p)?;
    Ok(p)
}

fn output_path(flag: &Option<PathBuf>, file: &ConfigFile) -> Result<PathBuf, CliError> {
    let p = required_path(flag, file, "out")?;
    require_output(&p)?;
    Ok(p)
}

fn optional_output(flag: &Option<PathBuf>, file: &ConfigFile, key: &str) -> Result<Option<PathBuf>, CliError> {
    let p = optional_path(flag, file, key)?;
    if let Some(p) = &p {
        require_output(p)?;
    }
    Ok(p)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

/// Streams valid documents in blocks. Documents failing validation are
/// skipped with a warning; malformed lines abort.
fn for_each_block(
    corpus: &Path,
    mut f: impl FnMut(Vec<Document>) -> Result<(), CliError>,
) -> Result<usize, CliError> {
    let mut rejected = 0;
    let mut block = Vec::with_capacity(BLOCK_DOCS);
    for item in CorpusReader::open(corpus)? {
        match item {
            Ok(doc) => block.push(doc),
            Err(e @ (TextError::Offsets { .. } | TextError::InvalidDocument { .. })) => {
                log::warn!("rejected document: {e}");
                rejected += 1;
            }
            Err(e) => return Err(e.into()),
        }
        if block.len() == BLOCK_DOCS {
            f(std::mem::take(&mut block))?;
        }
    }
    if !block.is_empty() {
        f(block)?;
    }
    Ok(rejected)
}

#[derive(Debug, Serialize)]
struct AnnotateConfig {
    command: &'static str,
    corpus: PathBuf,
    out: PathBuf,
    threads: usize,
    backend: BackendSettings,
    mining: MiningSettings,
}

fn run_annotate(config: &AnnotateConfig) -> Result<(), CliError> {
    let backend = config.backend.build()?;
    let filter = filter_config(config.mining.stopwords.as_deref(), config.mining.pos_filter)?;
    let annotator = config.mining.annotator();
    let pool = pool(config.threads)?;
    let mut out = AtomicOutput::create(&config.out)?;
    let (mut sentences, mut phrases) = (0usize, 0usize);

    let rejected = for_each_block(&config.corpus, |docs| {
        let batch: Vec<_> = docs.iter().flat_map(|d| &d.sentences).collect();
        let results: Vec<_> =
            pool.install(|| batch.par_iter().map(|s| annotate(s, &backend, &annotator, &filter)).collect());
        for result in results {
            let set = result?;
            sentences += 1;
            phrases += set.len();
            write_jsonl_line(out.writer(), &PhraseRecord::from_set(&set))?;
        }
        log::info!("annotated {sentences} sentences");
        Ok(())
    })?;
    out.commit()?;
    echo_config(&config.out, config)?;
    let (hits, misses) = backend.stats();
    log::info!(
        "done: {sentences} sentences, {phrases} phrases, {rejected} rejected documents, cache {hits} hits / {misses} misses"
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ImpactConfig {
    command: &'static str,
    corpus: PathBuf,
    sentence_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    backend: BackendSettings,
    mining: MiningSettings,
}

fn run_impact(config: &ImpactConfig) -> Result<(), CliError> {
    let mut found = None;
    for item in CorpusReader::open(&config.corpus)? {
        let doc = match item {
            Ok(doc) => doc,
            Err(e @ (TextError::Offsets { .. } | TextError::InvalidDocument { .. })) => {
                log::warn!("rejected document: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(s) = doc.sentences.into_iter().find(|s| s.id == config.sentence_id) {
            found = Some(s);
            break;
        }
    }
    let sentence = found.ok_or_else(|| CliError::Data(format!("sentence {} not in corpus", config.sentence_id)))?;
    let backend = config.backend.build()?;
    let matrix = build_impact_matrix(&sentence, &backend as &dyn EncoderBackend, config.mining.metric.into())?;
    let csv = matrix.to_csv(&sentence);
    match &config.out {
        Some(path) => {
            write_atomic(path, csv.as_bytes())?;
            echo_config(path, config)?;
        }
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExportConfig {
    command: &'static str,
    corpus: PathBuf,
    silver: PathBuf,
    out: PathBuf,
}

fn run_export(config: &ExportConfig) -> Result<(), CliError> {
    let silver = read_phrase_sets(&config.silver, PhraseSource::Annotator)?;
    let mut seen = BTreeSet::new();
    let mut out = AtomicOutput::create(&config.out)?;
    let mut written = 0usize;
    for_each_block(&config.corpus, |docs| {
        for sentence in docs.iter().flat_map(|d| &d.sentences) {
            if let Some(set) = silver.get(&sentence.id) {
                seen.insert(sentence.id.clone());
                if let Some(record) = train_record(set, sentence)? {
                    write_jsonl_line(out.writer(), &record)?;
                    written += 1;
                }
            }
        }
        Ok(())
    })?;
    if let Some(unknown) = silver.keys().find(|k| !seen.contains(*k)) {
        return Err(phrasemine::bridge::BridgeError::UnknownSentence(unknown.clone()).into());
    }
    out.commit()?;
    echo_config(&config.out, config)?;
    log::info!("wrote {written} training records ({} sentences without phrases skipped)", seen.len() - written);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ImportConfig {
    command: &'static str,
    corpus: PathBuf,
    generated: PathBuf,
    out: PathBuf,
    max_phrases: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stopwords: Option<PathBuf>,
    pos_filter: bool,
}

fn run_import(config: &ImportConfig) -> Result<(), CliError> {
    let filter = filter_config(config.stopwords.as_deref(), config.pos_filter)?;
    let parse = ParseConfig {
        max_phrases: config.max_phrases,
    };
    let generated: HashMap<String, GeneratedRecord> = read_jsonl::<GeneratedRecord>(&config.generated)?
        .into_iter()
        .map(|r| (r.sentence_id.clone(), r))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = AtomicOutput::create(&config.out)?;
    let (mut hallucinated, mut phrases) = (0usize, 0usize);
    for_each_block(&config.corpus, |docs| {
        for sentence in docs.iter().flat_map(|d| &d.sentences) {
            if let Some(record) = generated.get(&sentence.id) {
                seen.insert(sentence.id.as_str().to_owned());
                let outcome = parse_generated(record, sentence, &filter, &parse);
                hallucinated += outcome.hallucinated;
                phrases += outcome.phrases.len();
                write_jsonl_line(out.writer(), &PhraseRecord::from_set(&outcome.phrases))?;
            }
        }
        Ok(())
    })?;
    if let Some(unknown) = generated.keys().find(|k| !seen.contains(*k)) {
        return Err(CliError::Data(format!("generated record for unknown sentence {unknown}")));
    }
    out.commit()?;
    echo_config(&config.out, config)?;
    log::info!("grounded {phrases} phrases; dropped {hallucinated} hallucinated phrase strings");
    Ok(())
}

#[derive(Debug, Serialize)]
struct MergeConfig {
    command: &'static str,
    annotator: PathBuf,
    generator: PathBuf,
    out: PathBuf,
}

fn run_merge(config: &MergeConfig) -> Result<(), CliError> {
    let annotator: Vec<PhraseSet> = read_jsonl::<PhraseRecord>(&config.annotator)?
        .into_iter()
        .map(|r| r.into_set(PhraseSource::Annotator))
        .collect();
    let generator: Vec<PhraseSet> = read_jsonl::<PhraseRecord>(&config.generator)?
        .into_iter()
        .map(|r| r.into_set(PhraseSource::Generator))
        .collect();
    let by_id: HashMap<&str, &PhraseSet> = generator.iter().map(|s| (s.sentence_id.as_str(), s)).collect();
    let annotated: BTreeSet<&str> = annotator.iter().map(|s| s.sentence_id.as_str()).collect();

    let mut out = AtomicOutput::create(&config.out)?;
    for a in &annotator {
        let empty = PhraseSet::new(a.sentence_id.clone(), PhraseSource::Generator);
        let g = by_id.get(a.sentence_id.as_str()).copied().unwrap_or(&empty);
        write_jsonl_line(out.writer(), &PhraseRecord::from_set(&merge(a, g)?))?;
    }
    for g in generator.iter().filter(|g| !annotated.contains(g.sentence_id.as_str())) {
        let empty = PhraseSet::new(g.sentence_id.clone(), PhraseSource::Annotator);
        write_jsonl_line(out.writer(), &PhraseRecord::from_set(&merge(&empty, g)?))?;
    }
    out.commit()?;
    echo_config(&config.out, config)
}

#[derive(Debug, Serialize)]
struct EvalSentenceConfig {
    command: &'static str,
    pred: PathBuf,
    gold: PathBuf,
    match_mode: MatchMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    csv: Option<PathBuf>,
}

fn sentence_table(report: &SentenceEvalReport) -> String {
    format!(
        "{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8.4}\n{:<10} {:>8.4}\n{:<10} {:>8.4}\n",
        "tp", report.tp, "fp", report.fp, "fn", report.fn_, "sentences", report.per_sentence.len(),
        "precision", report.precision, "recall", report.recall, "f1", report.f1
    )
}

#[derive(Serialize)]
struct SentenceSummary<'a> {
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    per_sentence: &'a [phrasemine::eval::SentenceCounts],
}

fn run_eval_sentence(config: &EvalSentenceConfig) -> Result<(), CliError> {
    let pred = read_phrase_sets(&config.pred, PhraseSource::Annotator)?;
    let gold = read_phrase_sets(&config.gold, PhraseSource::Gold)?;
    let report = eval_sentences(&pred, &gold, config.match_mode)?;
    let summary = SentenceSummary {
        precision: report.precision,
        recall: report.recall,
        f1: report.f1,
        tp: report.tp,
        fp: report.fp,
        fn_: report.fn_,
        per_sentence: &report.per_sentence,
    };
    let json = serde_json::to_string(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(sentence_table(&report).as_bytes())?;
    if let Some(path) = &config.out {
        write_atomic(path, format!("{json}\n").as_bytes())?;
        echo_config(path, config)?;
    } else {
        writeln!(stdout, "{json}")?;
    }
    if let Some(path) = &config.csv {
        let mut csv = String::from("sentence_id,tp,fp,fn\n");
        for s in &report.per_sentence {
            csv.push_str(&format!("{},{},{},{}\n", csv_field(&s.sentence_id), s.tp, s.fp, s.fn_));
        }
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Serialize)]
struct EvalDocConfig {
    command: &'static str,
    corpus: PathBuf,
    pred: PathBuf,
    top_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    csv: Option<PathBuf>,
    threads: usize,
}

struct DocCandidates {
    id: String,
    candidates: Vec<Candidate>,
    gold: Option<Vec<String>>,
}

fn run_eval_doc(config: &EvalDocConfig) -> Result<(), CliError> {
    let preds: HashMap<String, PhraseSet> = read_phrase_sets(&config.pred, PhraseSource::Annotator)?
        .into_iter()
        .collect();
    let pool = pool(config.threads)?;
    let mut docs: Vec<DocCandidates> = Vec::new();
    for_each_block(&config.corpus, |block| {
        let aggregated: Vec<DocCandidates> = pool.install(|| {
            block
                .into_par_iter()
                .map(|doc| DocCandidates {
                    candidates: aggregate_candidates(&doc, &preds),
                    id: doc.id,
                    gold: doc.gold_keyphrases,
                })
                .collect()
        });
        docs.extend(aggregated);
        Ok(())
    })?;

    let stats = pool.install(|| {
        docs.par_iter()
            .map(|d| CorpusStats::from_documents([d.candidates.as_slice()]))
            .reduce(CorpusStats::default, CorpusStats::merge)
    });
    if stats.n_docs == 0 {
        return Err(CliError::Data("corpus has no valid documents".into()));
    }
    let ranked = docs
        .iter()
        .map(|d| {
            tfidf_rank(&d.candidates, &stats, config.top_k)
                .map(|r| (d.id.clone(), r.into_iter().map(|p| p.surface).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let gold: HashMap<String, Vec<String>> =
        docs.iter().filter_map(|d| d.gold.clone().map(|g| (d.id.clone(), g))).collect();
    let report = eval_documents(&ranked, &gold);
    write_doc_report(config, &report)
}

fn write_doc_report(config: &EvalDocConfig, report: &DocEvalReport) -> Result<(), CliError> {
    let json = serde_json::to_string(report).map_err(|e| CliError::Data(e.to_string()))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:<10} {:>8}", "documents", report.per_document.len())?;
    writeln!(stdout, "{:<10} {:>8.4}", "f1@10", report.f1_at_10)?;
    if let Some(path) = &config.out {
        write_atomic(path, format!("{json}\n").as_bytes())?;
        echo_config(path, config)?;
    } else {
        writeln!(stdout, "{json}")?;
    }
    if let Some(path) = &config.csv {
        let mut csv = String::from("doc_id,precision,recall,f1,top\n");
        for d in &report.per_document {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&d.doc_id),
                d.precision,
                d.recall,
                d.f1,
                csv_field(&d.top.join("; "))
            ));
        }
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(())
}
