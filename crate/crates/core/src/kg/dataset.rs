use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{load_triples, FilterIndex, KnowledgeGraph, Query, Triple, Vocab, VocabMode};

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Load the sibling test graph and evaluate test queries on it.
    pub inductive: bool,
    /// Overrides the default `<dir>_ind` location of the test graph.
    pub inductive_dir: Option<PathBuf>,
    /// Seed for the fact/train split when only `train.txt` is present.
    pub seed: u64,
}

/// Test-time graph with its own entities and the training relations.
#[derive(Clone, Debug)]
pub struct InductiveGraph {
    pub entities: Vocab,
    pub facts: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub graph: KnowledgeGraph,
    pub filter: FilterIndex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Graph, filter and triples that one evaluation runs against.
#[derive(Clone, Copy, Debug)]
pub struct EvalSplit<'a> {
    pub graph: &'a KnowledgeGraph,
    pub filter: &'a FilterIndex,
    pub triples: &'a [Triple],
}

impl EvalSplit<'_> {
    pub fn queries(&self) -> Vec<Query> {
        Query::both_directions(self.triples, self.graph.num_base_relations())
    }
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub name: String,
    pub entities: Vocab,
    pub relations: Vocab,
    pub facts: Vec<Triple>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub graph: KnowledgeGraph,
    pub filter: FilterIndex,
    pub inductive: Option<InductiveGraph>,
}

fn read_names(path: &Path) -> Result<Option<Vocab>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty());
    Vocab::from_names(names).map(Some)
}

fn mode_of(v: &Option<Vocab>) -> VocabMode {
    if v.is_some() {
        VocabMode::Fixed
    } else {
        VocabMode::Build
    }
}

impl DatasetBundle {
    /// Assembles a bundle from already-resolved parts.
    pub fn from_parts(
        name: impl Into<String>,
        entities: Vocab,
        relations: Vocab,
        facts: Vec<Triple>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let graph = KnowledgeGraph::build(&facts, entities.len(), relations.len())?;
        for t in train.iter().chain(&valid).chain(&test) {
            if t.subject >= entities.len() || t.object >= entities.len() {
                return Err(Error::Index {
                    kind: "entity",
                    id: t.subject.max(t.object),
                    len: entities.len(),
                });
            }
            if t.relation >= relations.len() {
                return Err(Error::Index {
                    kind: "relation",
                    id: t.relation,
                    len: relations.len(),
                });
            }
        }
        let filter = FilterIndex::build(
            [&facts[..], &train[..], &valid[..], &test[..]],
            relations.len(),
        );
        Ok(DatasetBundle {
            name: name.into(),
            entities,
            relations,
            facts,
            train,
            valid,
            test,
            graph,
            filter,
            inductive: None,
        })
    }

    pub fn load(dir: &Path, opts: &LoadOptions) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let fixed_entities = read_names(&dir.join("entities.txt"))?;
        let fixed_relations = read_names(&dir.join("relations.txt"))?;
        let (em, rm) = (mode_of(&fixed_entities), mode_of(&fixed_relations));
        let mut entities = fixed_entities.unwrap_or_default();
        let mut relations = fixed_relations.unwrap_or_default();
        let mut load = |name: &str, required: bool| -> Result<Option<Vec<Triple>>> {
            let p = dir.join(name);
            if !p.exists() {
                if required {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "missing split file"),
                    ));
                }
                return Ok(None);
            }
            load_triples(&p, &mut entities, &mut relations, em, rm).map(Some)
        };

        let facts = load("facts.txt", false)?;
        let mut train = load("train.txt", true)?.unwrap_or_default();
        let valid = load("valid.txt", false)?.unwrap_or_default();
        let test = load("test.txt", false)?.unwrap_or_default();

        let facts = match facts {
            Some(f) => f,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                train.shuffle(&mut rng);
                let cut = train.len() * 3 / 4;
                let queries = train.split_off(cut);
                std::mem::replace(&mut train, queries)
            }
        };

        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut bundle =
            DatasetBundle::from_parts(name, entities, relations, facts, train, valid, test)?;

        if opts.inductive {
            let ind_dir = opts.inductive_dir.clone().unwrap_or_else(|| {
                let mut s = dir.as_os_str().to_os_string();
                s.push("_ind");
                PathBuf::from(s)
            });
            bundle.inductive = Some(load_inductive(&ind_dir, &bundle.relations)?);
        }
        Ok(bundle)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.relations.len()
    }

    /// Forward and reverse training queries.
    pub fn train_queries(&self) -> Vec<Query> {
        Query::both_directions(&self.train, self.num_base_relations())
    }

    /// Validation always runs on the training graph; test runs on the
    /// inductive graph when one is loaded.
    pub fn split(&self, split: Split) -> EvalSplit<'_> {
        match (split, &self.inductive) {
            (Split::Test, Some(ind)) => EvalSplit {
                graph: &ind.graph,
                filter: &ind.filter,
                triples: &ind.test,
            },
            (Split::Train, _) => EvalSplit {
                graph: &self.graph,
                filter: &self.filter,
                triples: &self.train,
            },
            (Split::Valid, _) => EvalSplit {
                graph: &self.graph,
                filter: &self.filter,
                triples: &self.valid,
            },
            (Split::Test, None) => EvalSplit {
                graph: &self.graph,
                filter: &self.filter,
                triples: &self.test,
            },
        }
    }

    /// Training triples that also appear among the facts.
    pub fn fact_train_overlap(&self) -> usize {
        let facts: std::collections::HashSet<_> = self.facts.iter().collect();
        self.train.iter().filter(|t| facts.contains(t)).count()
    }
}

impl DatasetBundle {
    /// Writes the bundle in the layout [`DatasetBundle::load`] reads, with
    /// explicit `entities.txt` and `relations.txt` so ids survive a reload.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        let lines = |names: &[String]| names.iter().map(|n| format!("{n}\n")).collect::<String>();
        write("entities.txt", lines(self.entities.names()))?;
        write("relations.txt", lines(self.relations.names()))?;
        let triples = |ts: &[Triple]| {
            ts.iter()
                .map(|t| {
                    format!(
                        "{}\t{}\t{}\n",
                        self.entities.name(t.subject),
                        self.relations.name(t.relation),
                        self.entities.name(t.object)
                    )
                })
                .collect::<String>()
        };
        write("facts.txt", triples(&self.facts))?;
        write("train.txt", triples(&self.train))?;
        write("valid.txt", triples(&self.valid))?;
        write("test.txt", triples(&self.test))
    }
}

fn load_inductive(dir: &Path, relations: &Vocab) -> Result<InductiveGraph> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "inductive test graph not found",
            ),
        ));
    }
    let fixed = read_names(&dir.join("entities.txt"))?;
    let em = mode_of(&fixed);
    let mut entities = fixed.unwrap_or_default();
    let mut rels = relations.clone();
    let mut load = |name: &str| -> Result<Option<Vec<Triple>>> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        load_triples(&p, &mut entities, &mut rels, em, VocabMode::Fixed).map(Some)
    };
    let facts = match load("facts.txt")? {
        Some(f) => f,
        None => load("train.txt")?.ok_or_else(|| {
            Error::io(
                dir.join("facts.txt"),
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing test-graph facts"),
            )
        })?,
    };
    let valid = load("valid.txt")?.unwrap_or_default();
    let test = load("test.txt")?.ok_or_else(|| {
        Error::io(
            dir.join("test.txt"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing split file"),
        )
    })?;
    let graph = KnowledgeGraph::build(&facts, entities.len(), relations.len())?;
    let filter = FilterIndex::build([&facts[..], &valid[..], &test[..]], relations.len());
    Ok(InductiveGraph {
        entities,
        facts,
        valid,
        test,
        graph,
        filter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn toy(dir: &Path) {
        write(dir, "facts.txt", "a\tr\tb\nb\tr\tc\nc\ts\td\n");
        write(dir, "train.txt", "a\ts\tc\n");
        write(dir, "valid.txt", "b\ts\td\n");
        write(dir, "test.txt", "a\tr\tc\n");
    }

    #[test]
    fn loads_and_indexes_all_splits() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        let b = DatasetBundle::load(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(b.num_entities(), 4);
        assert_eq!(b.num_base_relations(), 2);
        assert_eq!(b.graph.edge_count(), 2 * 3 + 4);
        assert_eq!(b.filter.len(), 2 * 6);
        assert_eq!(b.train_queries().len(), 2);
        let q = b.train_queries()[1];
        assert_eq!(q.relation, 1 + 2);
        assert_eq!(b.fact_train_overlap(), 0);
    }

    #[test]
    fn loading_twice_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        let a = DatasetBundle::load(dir.path(), &LoadOptions::default()).unwrap();
        let b = DatasetBundle::load(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.filter, b.filter);
        assert_eq!(a.entities, b.entities);
    }

    #[test]
    fn single_train_file_is_split_three_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = (0..40).map(|i| format!("e{i}\tr\te{}\n", i + 1)).collect();
        write(dir.path(), "train.txt", &body);
        let opts = LoadOptions {
            seed: 7,
            ..LoadOptions::default()
        };
        let b = DatasetBundle::load(dir.path(), &opts).unwrap();
        assert_eq!(b.facts.len(), 30);
        assert_eq!(b.train.len(), 10);
        assert_eq!(b.fact_train_overlap(), 0);
        let again = DatasetBundle::load(dir.path(), &opts).unwrap();
        assert_eq!(b.train, again.train);
    }

    #[test]
    fn fixed_vocab_rejects_unknown_test_entity() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        write(dir.path(), "entities.txt", "a\nb\nc\nd\n");
        assert!(DatasetBundle::load(dir.path(), &LoadOptions::default()).is_ok());
        write(dir.path(), "test.txt", "a\tr\tzz\n");
        assert!(matches!(
            DatasetBundle::load(dir.path(), &LoadOptions::default()),
            Err(Error::Vocab { .. })
        ));
    }

    #[test]
    fn inductive_graph_has_disjoint_entities_shared_relations() {
        let root = tempfile::tempdir().unwrap();
        let main = root.path().join("kg");
        let ind = root.path().join("kg_ind");
        fs::create_dir_all(&main).unwrap();
        fs::create_dir_all(&ind).unwrap();
        toy(&main);
        write(&ind, "train.txt", "x\tr\ty\ny\ts\tz\n");
        write(&ind, "test.txt", "x\ts\tz\n");
        let opts = LoadOptions {
            inductive: true,
            ..LoadOptions::default()
        };
        let b = DatasetBundle::load(&main, &opts).unwrap();
        let ind_g = b.inductive.as_ref().unwrap();
        assert_eq!(ind_g.entities.names(), &["x", "y", "z"]);
        assert_eq!(ind_g.graph.num_base_relations(), 2);
        let test = b.split(Split::Test);
        assert_eq!(test.graph.num_entities(), 3);
        assert_eq!(b.split(Split::Valid).graph.num_entities(), 4);

        write(&ind, "test.txt", "x\tunknown_rel\tz\n");
        match DatasetBundle::load(&main, &opts) {
            Err(Error::Vocab { kind, name }) => {
                assert_eq!(kind, "relation");
                assert_eq!(name, "unknown_rel");
            }
            other => panic!("expected vocab error, got {other:?}"),
        }
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = DatasetBundle::load(Path::new("/nonexistent/kg"), &LoadOptions::default());
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
