//! Experiment commands over an output directory.
//!
//! Layout under `paths.output_dir`:
//!
//! ```text
//! index/sparse.idx              index
//! index/vectors.tsv             embed (unless paths.vectors is given)
//! annotations/<source>.tsv      annotate
//! annotations/automatic.impact.tsv
//! annotations/automatic.train.tsv       (with training data)
//! reformulations/<strategy>-<shots>.jsonl
//! runs/<strategy>-<shots>-<retriever>.run
//! reports/...                   evaluate, stats
//! ```
//!
//! Every artifact starts with a provenance header (config hash and seed).
//! A command whose output already carries the current header is skipped.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use crate::annotation::{
    automatic_annotate_all, ingest_human, llm_annotate_all, needs_ptkb_subset, overlap_matrix, write_impact_audit,
    write_overlap,
};
use crate::artifact::{read_artifact, read_header, write_artifact, Header};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluation::{compare_methods, evaluate_run, write_comparison, write_plot_data, write_report, MetricReport};
use crate::exec::Execution;
use crate::llm::{ChatBackend, Gateway, HttpChatBackend, ResponseCache, TemplateSet};
use crate::model::{
    dataset_stats, parse_annotation_set, parse_collection, parse_qrels, parse_run, parse_topics, write_annotation_set,
    write_run, AnnotationSet, AnnotationSource, Conversation, Qrels, Run, TurnId,
};
use crate::reformulation::{
    assemble_search_query, build_demonstrations, parse_reformulations, write_reformulations, Demonstration,
    ReformulatedQuery, ReformulationOptions, Reformulator, Strategy,
};
use crate::retrieval::{
    build_index, parse_vectors, write_vectors, EmbeddingCache, EmbeddingProvider, EmbeddingStore, Embedder,
    HttpEmbeddingProvider, InvertedIndex, RetrieverKind, SparseRetriever,
};

pub fn run_tag(strategy: Strategy, shots: usize, retriever: RetrieverKind) -> String {
    format!("{strategy}-{shots}-{retriever}")
}

/// Evaluation scope: every assessed turn, or only those where some PTKB
/// sentence improves retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    NeedsPtkb,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::NeedsPtkb => "needs-ptkb",
        }
    }
}

struct SharedProvider(Arc<dyn EmbeddingProvider>);

impl EmbeddingProvider for SharedProvider {
    fn model(&self) -> &str {
        self.0.model()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.0.embed(texts)
    }
}

pub struct Pipeline {
    config: ExperimentConfig,
    header: Header,
    exec: Execution,
    chat: Arc<dyn ChatBackend>,
    embeddings: Arc<dyn EmbeddingProvider>,
    templates: TemplateSet,
    gateway: OnceLock<Gateway>,
    embedder: OnceLock<Embedder>,
    test_topics: OnceLock<Vec<Conversation>>,
    written: Mutex<Vec<PathBuf>>,
}

impl Pipeline {
    /// Validates `config` and connects HTTP backends for both endpoints.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let key = config.api_key();
        let chat = HttpChatBackend::new(&config.gateway.endpoint, key.clone(), config.gateway.retry)?;
        let embed = HttpEmbeddingProvider::new(
            &config.embedding.endpoint,
            &config.embedding.model,
            key,
            config.embedding.retry,
        )?;
        Self::with_backends(config, Arc::new(chat), Arc::new(embed))
    }

    pub fn with_backends(
        config: ExperimentConfig,
        chat: Arc<dyn ChatBackend>,
        embeddings: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self> {
        config.validate()?;
        let templates = match &config.paths.templates_dir {
            Some(dir) => TemplateSet::load(dir)?,
            None => TemplateSet::builtin(),
        };
        Ok(Pipeline {
            header: Header::new(config.hash(), config.seed),
            config,
            exec: Execution::default(),
            chat,
            embeddings,
            templates,
            gateway: OnceLock::new(),
            embedder: OnceLock::new(),
            test_topics: OnceLock::new(),
            written: Mutex::new(Vec::new()),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    /// Artifacts written (not skipped) so far, in write order.
    pub fn written_artifacts(&self) -> Vec<PathBuf> {
        self.written.lock().expect("written lock").clone()
    }

    pub fn gateway(&self) -> Result<&Gateway> {
        if let Some(g) = self.gateway.get() {
            return Ok(g);
        }
        let cache = ResponseCache::open(&self.config.paths.cache_dir.join("chat.jsonl"))?;
        let g = Gateway::new(self.chat.clone(), cache, self.config.gateway.settings.clone());
        Ok(self.gateway.get_or_init(|| g))
    }

    fn embedder(&self) -> Result<&Embedder> {
        if let Some(e) = self.embedder.get() {
            return Ok(e);
        }
        let cache = EmbeddingCache::open(&self.config.paths.cache_dir.join("embeddings.tsv"))?;
        let mut e = Embedder::new(Box::new(SharedProvider(self.embeddings.clone())), cache)
            .with_batch_size(self.config.embedding.batch_size);
        if let Some(d) = self.config.retrieval.dense_dimension {
            e = e.with_dimension(d);
        }
        Ok(self.embedder.get_or_init(|| e))
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.config.paths.output_dir.join(rel)
    }

    pub fn index_path(&self) -> PathBuf {
        self.out("index/sparse.idx")
    }

    pub fn vectors_path(&self) -> PathBuf {
        self.config
            .paths
            .vectors
            .clone()
            .unwrap_or_else(|| self.out("index/vectors.tsv"))
    }

    pub fn annotation_path(&self, source: AnnotationSource) -> PathBuf {
        self.out(&format!("annotations/{source}.tsv"))
    }

    fn train_annotation_path(&self) -> PathBuf {
        self.out("annotations/automatic.train.tsv")
    }

    pub fn reformulation_path(&self, strategy: Strategy, shots: usize) -> PathBuf {
        self.out(&format!("reformulations/{strategy}-{shots}.jsonl"))
    }

    pub fn run_path(&self, strategy: Strategy, shots: usize, retriever: RetrieverKind) -> PathBuf {
        self.out(&format!("runs/{}.run", run_tag(strategy, shots, retriever)))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out("reports")
    }

    fn is_current(&self, path: &Path) -> bool {
        read_header(path).as_ref() == Some(&self.header)
    }

    fn write(&self, path: &Path, body: &[u8]) -> Result<()> {
        write_artifact(path, &self.header, body)?;
        log::info!("wrote {}", path.display());
        self.written.lock().expect("written lock").push(path.to_path_buf());
        Ok(())
    }

    fn skip(&self, path: &Path) -> bool {
        let current = self.is_current(path);
        if current {
            log::info!("up to date: {}", path.display());
        }
        current
    }

    fn read_input(path: &Path) -> Result<Vec<u8>> {
        std::fs::read(path).map_err(|e| Error::io(path, e))
    }

    pub fn test_topics(&self) -> Result<&[Conversation]> {
        if let Some(t) = self.test_topics.get() {
            return Ok(t);
        }
        let convs = parse_topics(&Self::read_input(&self.config.paths.topics)?)?;
        Ok(self.test_topics.get_or_init(|| convs))
    }

    fn train_data(&self) -> Result<Option<(Vec<Conversation>, Qrels)>> {
        match (&self.config.paths.train_topics, &self.config.paths.train_qrels) {
            (Some(t), Some(q)) => Ok(Some((
                parse_topics(&Self::read_input(t)?)?,
                parse_qrels(&Self::read_input(q)?)?,
            ))),
            _ => Ok(None),
        }
    }

    pub fn qrels(&self) -> Result<Qrels> {
        parse_qrels(&Self::read_input(&self.config.paths.qrels)?)
    }

    fn load_index(&self) -> Result<InvertedIndex> {
        InvertedIndex::from_bytes(&read_artifact(&self.index_path(), "index")?)
    }

    fn load_vectors(&self) -> Result<EmbeddingStore> {
        let path = self.vectors_path();
        let store = parse_vectors(&read_artifact(&path, "embed")?)?;
        if let Some(d) = self.config.retrieval.dense_dimension {
            if store.dimension() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: store.dimension(),
                });
            }
        }
        Ok(store)
    }

    pub fn load_annotations(&self, source: AnnotationSource) -> Result<AnnotationSet> {
        let body = read_artifact(&self.annotation_path(source), &format!("annotate --source {source}"))?;
        parse_annotation_set(&body, source)
    }

    fn reformulator(&self) -> Result<Reformulator<'_>> {
        Ok(Reformulator {
            gateway: self.gateway()?,
            templates: &self.templates,
            options: ReformulationOptions {
                include_responses: self.config.gateway.include_responses,
            },
        })
    }

    pub fn cmd_index(&self) -> Result<PathBuf> {
        let path = self.index_path();
        if self.skip(&path) {
            return Ok(path);
        }
        let docs = parse_collection(&Self::read_input(&self.config.paths.collection)?)?;
        let index = build_index(docs, self.config.retrieval.stemming)?;
        self.write(&path, &index.to_bytes())?;
        Ok(path)
    }

    /// Embeds the collection unless precomputed vectors are configured.
    pub fn cmd_embed(&self) -> Result<PathBuf> {
        if self.config.paths.vectors.is_some() {
            self.load_vectors()?;
            return Ok(self.vectors_path());
        }
        let path = self.vectors_path();
        if self.skip(&path) {
            return Ok(path);
        }
        let docs = parse_collection(&Self::read_input(&self.config.paths.collection)?)?;
        let texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
        let vectors = self.embedder()?.embed_texts(&texts)?;
        let dim = vectors.first().map_or(0, Vec::len);
        let store = EmbeddingStore::from_vectors(dim, docs.iter().map(|d| d.doc_id.clone()).zip(vectors))?;
        self.write(&path, &write_vectors(&store))?;
        Ok(path)
    }

    pub fn cmd_annotate(&self, source: AnnotationSource) -> Result<Vec<PathBuf>> {
        let path = self.annotation_path(source);
        match source {
            AnnotationSource::Human => {
                if !self.skip(&path) {
                    let set = ingest_human(self.test_topics()?)?;
                    self.write(&path, &write_annotation_set(&set))?;
                }
                Ok(vec![path])
            }
            AnnotationSource::Llm => {
                if !self.skip(&path) {
                    let (set, flags) = llm_annotate_all(
                        self.test_topics()?,
                        None,
                        self.gateway()?,
                        &self.templates.select,
                        self.config.gateway.include_responses,
                        self.exec,
                        self.config.gateway.parallelism,
                    )?;
                    for (turn, f) in &flags {
                        log::warn!("{turn}: {}", f.join(" "));
                    }
                    self.write(&path, &write_annotation_set(&set))?;
                }
                Ok(vec![path])
            }
            AnnotationSource::Automatic => self.annotate_automatic(),
        }
    }

    fn annotate_automatic(&self) -> Result<Vec<PathBuf>> {
        let path = self.annotation_path(AnnotationSource::Automatic);
        let audit = self.out("annotations/automatic.impact.tsv");
        let train_path = self.train_annotation_path();
        let train_audit = self.out("annotations/automatic.train.impact.tsv");
        let train = self.config.paths.train_topics.is_some();
        let mut outputs = vec![path.clone(), audit.clone()];
        if train {
            outputs.extend([train_path.clone(), train_audit.clone()]);
        }
        if outputs.iter().all(|p| self.skip(p)) {
            return Ok(outputs);
        }
        let index = self.load_index()?;
        let store;
        let sparse = SparseRetriever {
            index: &index,
            params: self.config.retrieval.bm25(),
        };
        let dense;
        let retriever: &dyn crate::retrieval::Retriever = match self.config.impact.retriever {
            RetrieverKind::Sparse => &sparse,
            RetrieverKind::Dense => {
                store = self.load_vectors()?;
                dense = crate::retrieval::DenseRetriever {
                    store: &store,
                    embedder: self.embedder()?,
                };
                &dense
            }
        };
        let reformulator = self.reformulator()?;
        let run_split = |convs: &[Conversation], qrels: &Qrels, set_path: &Path, audit_path: &Path| -> Result<()> {
            let result = automatic_annotate_all(
                convs,
                &reformulator,
                retriever,
                qrels,
                &self.config.impact,
                self.exec,
                self.config.gateway.parallelism,
            )?;
            if !result.unassessed.is_empty() {
                log::info!("{} turns without judgments left out of automatic annotation", result.unassessed.len());
            }
            self.write(set_path, &write_annotation_set(&result.set))?;
            let mut report = String::new();
            let _ = writeln!(
                report,
                "# impact metric={} retriever={} epsilon={:e}",
                self.config.impact.metric, self.config.impact.retriever, self.config.impact.epsilon
            );
            report.push_str(&write_impact_audit(&result.records));
            self.write(audit_path, report.as_bytes())
        };
        run_split(self.test_topics()?, &self.qrels()?, &path, &audit)?;
        if let Some((convs, qrels)) = self.train_data()? {
            run_split(&convs, &qrels, &train_path, &train_audit)?;
        }
        Ok(outputs)
    }

    fn demonstrations(&self, shots: usize) -> Result<Vec<Demonstration>> {
        if shots == 0 {
            return Ok(Vec::new());
        }
        let Some((train, _)) = self.train_data()? else {
            return Err(Error::Config("few-shot runs need training topics".into()));
        };
        let body = read_artifact(&self.train_annotation_path(), "annotate --source automatic")?;
        let annotations = parse_annotation_set(&body, AnnotationSource::Automatic)?;
        build_demonstrations(
            &train,
            &annotations,
            shots,
            self.config.seed,
            self.config.gateway.include_responses,
        )
    }

    pub fn cmd_reformulate(&self, strategy: Strategy, shots: usize) -> Result<PathBuf> {
        let path = self.reformulation_path(strategy, shots);
        if self.skip(&path) {
            return Ok(path);
        }
        let annotations = strategy
            .annotation_source()
            .map(|s| self.load_annotations(s))
            .transpose()?;
        let demos = self.demonstrations(shots)?;
        let convs = self.test_topics()?;
        let records = self.reformulator()?.reformulate_all(
            convs,
            None,
            strategy,
            annotations.as_ref(),
            &demos,
            self.exec,
            self.config.gateway.parallelism,
        )?;
        let flagged = records.iter().filter(|r| !r.flags.is_empty()).count();
        if flagged > 0 {
            log::warn!("{strategy}-{shots}: {flagged} turns flagged during reformulation");
        }
        self.write(&path, &write_reformulations(&records))?;
        Ok(path)
    }

    fn load_reformulations(&self, strategy: Strategy, shots: usize) -> Result<Vec<ReformulatedQuery>> {
        let body = read_artifact(
            &self.reformulation_path(strategy, shots),
            &format!("reformulate --strategy {strategy} --shots {shots}"),
        )?;
        parse_reformulations(&body)
    }

    pub fn cmd_retrieve(&self, strategy: Strategy, shots: usize, kind: RetrieverKind) -> Result<PathBuf> {
        let path = self.run_path(strategy, shots, kind);
        if self.skip(&path) {
            return Ok(path);
        }
        let records = self.load_reformulations(strategy, shots)?;
        let queries: Vec<String> = records.iter().map(|r| assemble_search_query(r, kind)).collect();
        let depth = self.config.retrieval.depth;
        let rankings = match kind {
            RetrieverKind::Sparse => {
                let index = self.load_index()?;
                let params = self.config.retrieval.bm25();
                self.exec.map(&queries, |q| Ok(index.search(q, depth, params)))
            }
            RetrieverKind::Dense => {
                let store = self.load_vectors()?;
                let vectors = self.embedder()?.embed_texts(&queries)?;
                self.exec
                    .map(&vectors, |v| store.search(v, depth, Execution::Sequential))
            }
        };
        let mut run = Run::new(run_tag(strategy, shots, kind));
        for (r, ranking) in records.iter().zip(rankings) {
            run.rankings.insert(r.turn_id.clone(), ranking?);
        }
        self.write(&path, &write_run(&run, depth))?;
        Ok(path)
    }

    /// Run files present for the configured grid, in grid order.
    fn grid_runs(&self) -> Vec<(Strategy, usize, RetrieverKind, PathBuf)> {
        let g = &self.config.grid;
        let mut out = Vec::new();
        for &kind in &g.retrievers {
            for &strategy in &g.strategies {
                for &shots in &g.shots {
                    out.push((strategy, shots, kind, self.run_path(strategy, shots, kind)));
                }
            }
        }
        out
    }

    fn report_preamble(&self, scope: Scope, turns: usize) -> String {
        let s = &self.config.gateway.settings;
        format!(
            "# scope={} turns={} model={} temperature={} threshold={} t-test=paired-per-turn-two-tailed impact={}@{}\n",
            scope.as_str(),
            turns,
            s.model,
            s.temperature,
            self.config.metrics.threshold,
            self.config.impact.metric,
            self.config.impact.retriever,
        )
    }

    /// Evaluates every grid run file in `scope` and writes per-run reports,
    /// one comparison table per retriever, a combined summary, and plot data.
    pub fn cmd_evaluate(&self, scope: Scope) -> Result<Vec<PathBuf>> {
        let qrels = self.qrels()?;
        let filter: Option<BTreeSet<TurnId>> = match scope {
            Scope::All => None,
            Scope::NeedsPtkb => {
                let auto = self.load_annotations(AnnotationSource::Automatic)?;
                let assessed: BTreeSet<TurnId> = qrels.turns().cloned().collect();
                Some(needs_ptkb_subset(&auto, &assessed))
            }
        };
        if filter.as_ref().is_some_and(BTreeSet::is_empty) {
            return Err(Error::Validation("the needs-PTKB subset is empty".into()));
        }
        let dir = self.reports_dir().join(scope.as_str());
        let mut written = Vec::new();
        let mut summary = String::new();
        let mut groups: Vec<(String, crate::evaluation::ComparisonTable)> = Vec::new();
        for &kind in &self.config.grid.retrievers {
            let mut reports: Vec<MetricReport> = Vec::new();
            for (strategy, shots, _, path) in self.grid_runs().into_iter().filter(|r| r.2 == kind) {
                let body = read_artifact(&path, &format!("retrieve --strategy {strategy} --shots {shots} --retriever {kind}"))?;
                let run = parse_run(&body)?;
                let report = evaluate_run(&run, &qrels, &self.config.metrics, filter.as_ref(), self.exec)?;
                let rpath = dir.join(format!("{}.tsv", report.tag));
                let mut text = self.report_preamble(scope, report.evaluated_turn_count);
                text.push_str(&write_report(&report));
                self.write(&rpath, text.as_bytes())?;
                written.push(rpath);
                reports.push(report);
            }
            let baseline = self.config.grid.baseline.and_then(|b| {
                reports
                    .iter()
                    .find(|r| r.tag.starts_with(&format!("{b}-")))
                    .map(|r| r.tag.clone())
            });
            let table = compare_methods(&reports, baseline.as_deref())?;
            let cpath = dir.join(format!("comparison-{kind}.tsv"));
            let mut text = self.report_preamble(scope, table.turn_count);
            text.push_str(&write_comparison(&table));
            self.write(&cpath, text.as_bytes())?;
            written.push(cpath);
            let body = write_comparison(&table);
            let mut lines = body.lines();
            if summary.is_empty() {
                let _ = writeln!(summary, "retriever\t{}", lines.next().unwrap_or_default());
            } else {
                lines.next();
            }
            for l in lines {
                let _ = writeln!(summary, "{kind}\t{l}");
            }
            groups.push((kind.to_string(), table));
        }
        let spath = dir.join("summary.tsv");
        let mut text = self.report_preamble(scope, groups.first().map_or(0, |g| g.1.turn_count));
        text.push_str(&summary);
        self.write(&spath, text.as_bytes())?;
        written.push(spath);
        let refs: Vec<(&str, &crate::evaluation::ComparisonTable)> =
            groups.iter().map(|(g, t)| (g.as_str(), t)).collect();
        let ppath = dir.join("plot-aggregates.tsv");
        self.write(&ppath, write_plot_data(&refs).as_bytes())?;
        written.push(ppath);
        Ok(written)
    }

    /// Agreement between whichever annotation sets exist, over assessed
    /// turns.
    pub fn cmd_overlap(&self) -> Result<Option<PathBuf>> {
        let sets: Vec<AnnotationSet> = AnnotationSource::ALL
            .into_iter()
            .filter(|s| self.annotation_path(*s).exists())
            .map(|s| self.load_annotations(s))
            .collect::<Result<_>>()?;
        if sets.len() < 2 {
            return Ok(None);
        }
        let turns: BTreeSet<TurnId> = self.qrels()?.turns().cloned().collect();
        let refs: Vec<&AnnotationSet> = sets.iter().collect();
        let path = self.reports_dir().join("plot-overlap.tsv");
        self.write(&path, write_overlap(&overlap_matrix(&refs, &turns)).as_bytes())?;
        Ok(Some(path))
    }

    pub fn cmd_stats(&self) -> Result<(crate::model::DatasetStats, PathBuf)> {
        let stats = dataset_stats(self.test_topics()?, Some(&self.qrels()?));
        let path = self.reports_dir().join("stats.tsv");
        self.write(&path, stats.to_tsv().as_bytes())?;
        Ok((stats, path))
    }

    /// Runs every stage for the configured grid. Stages whose outputs are
    /// current are skipped.
    pub fn cmd_pipeline(&self) -> Result<Vec<PathBuf>> {
        let g = self.config.grid.clone();
        let mut out = vec![self.cmd_index()?];
        if g.retrievers.contains(&RetrieverKind::Dense) || self.config.impact.retriever == RetrieverKind::Dense {
            out.push(self.cmd_embed()?);
        }
        out.extend(self.cmd_annotate(AnnotationSource::Automatic)?);
        out.extend(self.cmd_annotate(AnnotationSource::Human)?);
        if g.strategies.contains(&Strategy::Llm) {
            out.extend(self.cmd_annotate(AnnotationSource::Llm)?);
        }
        for &strategy in &g.strategies {
            for &shots in &g.shots {
                out.push(self.cmd_reformulate(strategy, shots)?);
                for &kind in &g.retrievers {
                    out.push(self.cmd_retrieve(strategy, shots, kind)?);
                }
            }
        }
        out.extend(self.cmd_evaluate(Scope::All)?);
        match self.cmd_evaluate(Scope::NeedsPtkb) {
            Ok(paths) => out.extend(paths),
            Err(Error::Validation(msg)) => log::warn!("skipping subset evaluation: {msg}"),
            Err(e) => return Err(e),
        }
        out.extend(self.cmd_overlap()?);
        out.push(self.cmd_stats()?.1);
        Ok(out)
    }
}
