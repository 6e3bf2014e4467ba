//! Versioned line-delimited JSON files.
//!
//! Every file starts with a header line carrying `format_version` and `kind`;
//! the remaining lines hold one record each. Loaders reject unknown major
//! versions, and every writer goes through a temp file plus rename.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::drwm::TrainConfig;
use crate::error::{Error, Result};
use crate::linear::LinearHead;
use crate::metrics::{MetricsReport, QueryRanking};
use crate::model::{Dataset, Dims, Query, Scene, SocialGraph};
use crate::pipeline::{RunConfig, SceneDiagnostics};
use crate::scalar::Real;

pub const FORMAT_VERSION: &str = "1.0";
pub const SUPPORTED_MAJOR: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Dataset,
    Rankings,
    RelationHead,
    ClassifierHead,
    Metrics,
    Gradcheck,
    Case,
}

impl FileKind {
    fn name(self) -> &'static str {
        match self {
            FileKind::Dataset => "dataset",
            FileKind::Rankings => "rankings",
            FileKind::RelationHead => "relation_head",
            FileKind::ClassifierHead => "classifier_head",
            FileKind::Metrics => "metrics",
            FileKind::Gradcheck => "gradcheck",
            FileKind::Case => "case",
        }
    }
}

/// Parses `"MAJOR.MINOR"` and fails unless the major version is supported.
pub fn check_version(version: &str) -> Result<()> {
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(|| Error::Format(format!("malformed format_version {version:?}")))?;
    if major != SUPPORTED_MAJOR {
        return Err(Error::Format(format!(
            "format_version {version} has unsupported major version {major} (expected {SUPPORTED_MAJOR})"
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
struct Envelope {
    format_version: String,
    kind: FileKind,
}

/// Serializes `lines` as JSON lines and moves the result into place atomically.
pub fn write_atomic(path: &Path, lines: &[serde_json::Value]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    for line in lines {
        serde_json::to_writer(&mut tmp, line)?;
        tmp.write_all(b"\n")?;
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Reads every non-empty line of a JSONL file, checking the header's version and kind.
pub fn read_lines(path: &Path, expected: FileKind) -> Result<Vec<serde_json::Value>> {
    let file = fs::File::open(path)?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(serde_json::from_str::<serde_json::Value>(&line)?);
        }
    }
    let header = lines
        .first()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?;
    let env: Envelope = serde_json::from_value(header.clone())
        .map_err(|e| Error::Format(format!("bad header in {}: {e}", path.display())))?;
    check_version(&env.format_version)?;
    if env.kind != expected {
        return Err(Error::Format(format!(
            "{} holds a {} file, expected {}",
            path.display(),
            env.kind.name(),
            expected.name()
        )));
    }
    Ok(lines)
}

fn header(kind: FileKind, body: serde_json::Value) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    obj.insert("format_version".into(), FORMAT_VERSION.into());
    obj.insert("kind".into(), serde_json::to_value(kind).expect("kind serializes"));
    if let serde_json::Value::Object(extra) = body {
        obj.extend(extra);
    }
    serde_json::Value::Object(obj)
}

fn body<R: DeserializeOwned>(value: serde_json::Value) -> Result<R> {
    Ok(serde_json::from_value(value)?)
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader<T: Real> {
    dims: Dims,
    social_graph: SocialGraph,
    queries: Vec<Query<T>>,
    num_scenes: usize,
}

/// Header line with dims, graph and queries, then one scene per line.
pub fn write_dataset<T>(path: &Path, dataset: &Dataset<T>) -> Result<()>
where
    T: Real + Serialize,
{
    let head = DatasetHeader {
        dims: dataset.dims,
        social_graph: dataset.social_graph.clone(),
        queries: dataset.queries.clone(),
        num_scenes: dataset.scenes.len(),
    };
    let mut lines = vec![header(FileKind::Dataset, serde_json::to_value(head)?)];
    for scene in &dataset.scenes {
        lines.push(serde_json::to_value(scene)?);
    }
    write_atomic(path, &lines)
}

pub fn read_dataset<T>(path: &Path) -> Result<Dataset<T>>
where
    T: Real + DeserializeOwned,
{
    let mut lines = read_lines(path, FileKind::Dataset)?.into_iter();
    let head: DatasetHeader<T> = body(lines.next().expect("header checked"))?;
    let scenes = lines.map(body::<Scene<T>>).collect::<Result<Vec<_>>>()?;
    if scenes.len() != head.num_scenes {
        return Err(Error::Format(format!(
            "header announces {} scenes, file holds {}",
            head.num_scenes,
            scenes.len()
        )));
    }
    Ok(Dataset {
        social_graph: head.social_graph,
        queries: head.queries,
        scenes,
        dims: head.dims,
    })
}

/// Output of a ranking run: config echo, then one line per query, then one per scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingsFile<T: Real = f64> {
    pub config: RunConfig,
    pub rankings: Vec<QueryRanking<T>>,
    pub scenes: Vec<SceneDiagnostics<T>>,
}

#[derive(Serialize, Deserialize)]
struct RankingsHeader {
    config: RunConfig,
    num_queries: usize,
    num_scenes: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RankingsRecord<T: Real> {
    Query(QueryRanking<T>),
    Scene(SceneDiagnostics<T>),
}

pub fn write_rankings<T>(path: &Path, file: &RankingsFile<T>) -> Result<()>
where
    T: Real + Serialize,
{
    let head = RankingsHeader {
        config: file.config,
        num_queries: file.rankings.len(),
        num_scenes: file.scenes.len(),
    };
    let mut lines = vec![header(FileKind::Rankings, serde_json::to_value(head)?)];
    for r in &file.rankings {
        lines.push(serde_json::to_value(RankingsRecord::Query(r.clone()))?);
    }
    for s in &file.scenes {
        lines.push(serde_json::to_value(RankingsRecord::Scene(s.clone()))?);
    }
    write_atomic(path, &lines)
}

pub fn read_rankings<T>(path: &Path) -> Result<RankingsFile<T>>
where
    T: Real + DeserializeOwned,
{
    let mut lines = read_lines(path, FileKind::Rankings)?.into_iter();
    let head: RankingsHeader = body(lines.next().expect("header checked"))?;
    let mut out = RankingsFile {
        config: head.config,
        rankings: Vec::new(),
        scenes: Vec::new(),
    };
    for line in lines {
        match body::<RankingsRecord<T>>(line)? {
            RankingsRecord::Query(q) => out.rankings.push(q),
            RankingsRecord::Scene(s) => out.scenes.push(s),
        }
    }
    if out.rankings.len() != head.num_queries || out.scenes.len() != head.num_scenes {
        return Err(Error::Format("rankings file is truncated".into()));
    }
    Ok(out)
}

/// A trained linear head with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadFile<T: Real = f64> {
    pub head: LinearHead<T>,
    pub train: TrainConfig,
    pub loss_trace: Vec<T>,
}

pub fn write_head<T>(path: &Path, kind: FileKind, file: &HeadFile<T>) -> Result<()>
where
    T: Real + Serialize,
{
    if !matches!(kind, FileKind::RelationHead | FileKind::ClassifierHead) {
        return Err(Error::InvalidInput(format!("{} is not a head kind", kind.name())));
    }
    write_atomic(path, &[header(kind, serde_json::to_value(file)?)])
}

pub fn read_head<T>(path: &Path, kind: FileKind) -> Result<HeadFile<T>>
where
    T: Real + DeserializeOwned,
{
    let lines = read_lines(path, kind)?;
    if lines.len() != 1 {
        return Err(Error::Format("head file must hold exactly one line".into()));
    }
    let file: HeadFile<T> = body(lines.into_iter().next().expect("one line"))?;
    file.head.check_shape()?;
    Ok(file)
}

/// Metrics report with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config: serde_json::Value,
    pub report: MetricsReport,
}

pub fn write_metrics(path: &Path, file: &MetricsFile) -> Result<()> {
    write_atomic(path, &[header(FileKind::Metrics, serde_json::to_value(file)?)])
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let lines = read_lines(path, FileKind::Metrics)?;
    body(lines.into_iter().next().expect("header checked"))
}

/// Writes a single-record file of any kind with a serializable body object.
pub fn write_record<B: Serialize>(path: &Path, kind: FileKind, record: &B) -> Result<()> {
    write_atomic(path, &[header(kind, serde_json::to_value(record)?)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::rank_dataset;
    use crate::simulator::{build_case_fixture, generate_movie, CaseStudy, SimulatorConfig};

    fn small() -> Dataset {
        let cfg = SimulatorConfig {
            num_characters: 6,
            num_scenes: 8,
            relation_density: 0.4,
            ..SimulatorConfig::default()
        };
        generate_movie(&cfg).unwrap().0
    }

    #[test]
    fn version_check() {
        assert!(check_version("1.0").is_ok());
        assert!(check_version("1.7").is_ok());
        assert!(matches!(check_version("2.0"), Err(Error::Format(_))));
        assert!(matches!(check_version("x"), Err(Error::Format(_))));
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("movie.jsonl");
        let ds = small();
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset::<f64>(&path).unwrap(), ds);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + ds.scenes.len());
    }

    #[test]
    fn single_precision_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("case.jsonl");
        let ds = build_case_fixture::<f32>(CaseStudy::Case2);
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset::<f32>(&path).unwrap(), ds);
    }

    #[test]
    fn unknown_major_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("movie.jsonl");
        write_dataset(&path, &small()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen("\"1.0\"", "\"2.0\"", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(read_dataset::<f64>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("movie.jsonl");
        write_dataset(&path, &small()).unwrap();
        assert!(matches!(read_rankings::<f64>(&path), Err(Error::Format(_))));
        assert!(matches!(
            read_head::<f64>(&path, FileKind::RelationHead),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("movie.jsonl");
        write_dataset(&path, &small()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().take(3).collect();
        fs::write(&path, cut.join("\n")).unwrap();
        assert!(matches!(read_dataset::<f64>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn rankings_and_head_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_case_fixture::<f64>(CaseStudy::Case1);
        let cfg = RunConfig::default();
        let out = rank_dataset(&ds, &cfg, None).unwrap();
        let file = RankingsFile {
            config: cfg,
            rankings: out.rankings,
            scenes: out.scenes,
        };
        let path = dir.path().join("r.jsonl");
        write_rankings(&path, &file).unwrap();
        assert_eq!(read_rankings::<f64>(&path).unwrap(), file);

        let head = HeadFile {
            head: LinearHead::<f64>::seeded(5, 10, 3),
            train: TrainConfig::default(),
            loss_trace: vec![0.5, 0.25],
        };
        let hp = dir.path().join("nested/head.jsonl");
        write_head(&hp, FileKind::RelationHead, &head).unwrap();
        assert_eq!(read_head::<f64>(&hp, FileKind::RelationHead).unwrap(), head);
        assert!(read_head::<f64>(&hp, FileKind::ClassifierHead).is_err());
    }

    #[test]
    fn overwrite_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_dataset(&path, &small()).unwrap();
        let tiny = build_case_fixture::<f64>(CaseStudy::Case1);
        write_dataset(&path, &tiny).unwrap();
        assert_eq!(read_dataset::<f64>(&path).unwrap(), tiny);
        let leftovers = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
