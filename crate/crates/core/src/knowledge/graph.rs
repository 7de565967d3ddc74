use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read, KnowledgeError};

/// One directed edge of a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// A path from a context entity to a label entity through linked concepts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPath {
    pub source: String,
    pub target: String,
    pub hops: Vec<Hop>,
}

impl RelationPath {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// Each hop starts where the previous one ended.
    pub fn is_chained(&self) -> bool {
        self.hops.windows(2).all(|w| w[0].tail == w[1].head)
    }
}

/// Directed, relation-labelled concept graph. Node and relation ids follow
/// the lexicographic order of their names, so sorting adjacency by id sorts
/// it by name.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<String>,
    node_ids: HashMap<String, u32>,
    relations: Vec<String>,
    out: Vec<Vec<(u32, u32)>>,
    inc: Vec<Vec<(u32, u32)>>,
}

impl KnowledgeGraph {
    pub fn from_triples<I, S>(triples: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: AsRef<str>,
    {
        let set: BTreeSet<(String, String, String)> = triples
            .into_iter()
            .map(|(h, r, t)| (h.as_ref().to_string(), r.as_ref().to_string(), t.as_ref().to_string()))
            .collect();
        let nodes: Vec<String> = set
            .iter()
            .flat_map(|(h, _, t)| [h.clone(), t.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let relations: Vec<String> = set
            .iter()
            .map(|(_, r, _)| r.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let node_ids: HashMap<String, u32> = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        let rel_ids: HashMap<&str, u32> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i as u32))
            .collect();
        let mut out = vec![Vec::new(); nodes.len()];
        let mut inc = vec![Vec::new(); nodes.len()];
        for (h, r, t) in &set {
            let (h, r, t) = (node_ids[h], rel_ids[r.as_str()], node_ids[t]);
            out[h as usize].push((r, t));
            inc[t as usize].push((r, h));
        }
        for list in out.iter_mut().chain(inc.iter_mut()) {
            list.sort_unstable();
        }
        Self {
            nodes,
            node_ids,
            relations,
            out,
            inc,
        }
    }

    /// `head TAB relation TAB tail` per line, no header.
    pub fn parse_tsv(text: &str) -> Result<Self, KnowledgeError> {
        let mut triples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            match fields[..] {
                [h, r, t] if !h.is_empty() && !r.is_empty() && !t.is_empty() => triples.push((h, r, t)),
                _ => {
                    return Err(KnowledgeError::Parse {
                        location: format!("graph line {}", n + 1),
                        message: "expected head TAB relation TAB tail".into(),
                    })
                }
            }
        }
        Ok(Self::from_triples(triples))
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        Self::parse_tsv(&read(path)?)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, cui: &str) -> bool {
        self.node_ids.contains_key(cui)
    }

    /// Outgoing `(relation, neighbour)` pairs, sorted.
    pub fn successors(&self, cui: &str) -> Vec<(&str, &str)> {
        self.adjacent(&self.out, cui)
    }

    /// Incoming `(relation, neighbour)` pairs, sorted.
    pub fn predecessors(&self, cui: &str) -> Vec<(&str, &str)> {
        self.adjacent(&self.inc, cui)
    }

    fn adjacent<'a>(&'a self, lists: &'a [Vec<(u32, u32)>], cui: &str) -> Vec<(&'a str, &'a str)> {
        self.node_ids.get(cui).map_or_else(Vec::new, |&i| {
            lists[i as usize]
                .iter()
                .map(|&(r, v)| (self.relations[r as usize].as_str(), self.nodes[v as usize].as_str()))
                .collect()
        })
    }

    fn id(&self, cui: &str) -> Result<u32, KnowledgeError> {
        self.node_ids
            .get(cui)
            .copied()
            .ok_or_else(|| KnowledgeError::UnknownConcept(cui.to_string()))
    }

    /// Shortest directed path of at most `max_depth` hops, searched from
    /// both ends at once. Among shortest paths the one whose hop sequence of
    /// `(relation, next concept)` is lexicographically smallest is returned.
    pub fn bidir_search(&self, src: &str, dst: &str, max_depth: usize) -> Result<Option<Vec<Hop>>, KnowledgeError> {
        let s = self.id(src)?;
        let t = self.id(dst)?;
        if s == t {
            return Ok(Some(Vec::new()));
        }
        let mut fdist: HashMap<u32, u32> = HashMap::from([(s, 0)]);
        let mut bdist: HashMap<u32, u32> = HashMap::from([(t, 0)]);
        let mut ffront = vec![s];
        let mut bfront = vec![t];
        let (mut a, mut b) = (0u32, 0u32);
        let mut meet: Vec<u32> = Vec::new();

        while meet.is_empty() && ((a + b) as usize) < max_depth {
            if ffront.is_empty() || bfront.is_empty() {
                return Ok(None);
            }
            let forward = ffront.len() <= bfront.len();
            let (front, dist, other, lists, level) = if forward {
                (&mut ffront, &mut fdist, &bdist, &self.out, &mut a)
            } else {
                (&mut bfront, &mut bdist, &fdist, &self.inc, &mut b)
            };
            *level += 1;
            let mut next = Vec::new();
            for &u in front.iter() {
                for &(_, v) in &lists[u as usize] {
                    if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(v) {
                        e.insert(*level);
                        next.push(v);
                        if other.contains_key(&v) {
                            meet.push(v);
                        }
                    }
                }
            }
            *front = next;
        }
        if meet.is_empty() {
            return Ok(None);
        }
        let d = (a + b) as usize;

        // nodes at forward position i on some shortest path, for i = a down to 0
        let mut on_path: Vec<Vec<u32>> = vec![Vec::new(); a as usize + 1];
        on_path[a as usize] = fdist
            .iter()
            .filter(|&(v, &fd)| fd == a && bdist.get(v) == Some(&b))
            .map(|(&v, _)| v)
            .collect();
        for i in (0..a as usize).rev() {
            let mut layer: Vec<u32> = on_path[i + 1]
                .iter()
                .flat_map(|&v| self.inc[v as usize].iter().map(|&(_, u)| u))
                .filter(|u| fdist.get(u) == Some(&(i as u32)))
                .collect();
            layer.sort_unstable();
            layer.dedup();
            on_path[i] = layer;
        }
        for layer in &mut on_path {
            layer.sort_unstable();
        }

        let mut hops = Vec::with_capacity(d);
        let mut u = s;
        for i in 0..d {
            let remaining = (d - i - 1) as u32;
            let &(r, v) = self.out[u as usize]
                .iter()
                .find(|&&(_, v)| {
                    if i < a as usize {
                        on_path[i + 1].binary_search(&v).is_ok()
                    } else {
                        bdist.get(&v) == Some(&remaining)
                    }
                })
                .expect("a shortest path continues from every node on it");
            hops.push(Hop {
                head: self.nodes[u as usize].clone(),
                relation: self.relations[r as usize].clone(),
                tail: self.nodes[v as usize].clone(),
            });
            u = v;
        }
        debug_assert_eq!(u, t);
        Ok(Some(hops))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn graph(edges: &[(&str, &str, &str)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(edges.iter().copied())
    }

    #[test]
    fn identity_and_single_hop() {
        let g = graph(&[("a", "treats", "b")]);
        assert_eq!(g.bidir_search("a", "a", 3).unwrap(), Some(vec![]));
        let p = g.bidir_search("a", "b", 3).unwrap().unwrap();
        assert_eq!(
            p,
            [Hop {
                head: "a".into(),
                relation: "treats".into(),
                tail: "b".into()
            }]
        );
        assert_eq!(g.bidir_search("b", "a", 3).unwrap(), None, "edges are directed");
    }

    #[test]
    fn unknown_concept_is_an_error() {
        let g = graph(&[("a", "r", "b")]);
        assert_eq!(
            g.bidir_search("a", "zz", 3),
            Err(KnowledgeError::UnknownConcept("zz".into()))
        );
        assert_eq!(
            g.bidir_search("zz", "zz", 3),
            Err(KnowledgeError::UnknownConcept("zz".into()))
        );
    }

    #[test]
    fn depth_limit() {
        let g = graph(&[("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d"), ("d", "r", "e")]);
        assert_eq!(g.bidir_search("a", "e", 4).unwrap().map(|p| p.len()), Some(4));
        assert_eq!(g.bidir_search("a", "e", 3).unwrap(), None);
        assert_eq!(g.bidir_search("a", "d", 3).unwrap().map(|p| p.len()), Some(3));
    }

    #[test]
    fn ties_break_on_relation_then_concept() {
        let g = graph(&[
            ("a", "may_treat", "x"),
            ("a", "isa", "y"),
            ("a", "isa", "z"),
            ("x", "isa", "t"),
            ("y", "part_of", "t"),
            ("z", "isa", "t"),
        ]);
        let p = g.bidir_search("a", "t", 3).unwrap().unwrap();
        let names: Vec<(&str, &str)> = p.iter().map(|h| (h.relation.as_str(), h.tail.as_str())).collect();
        assert_eq!(names, [("isa", "y"), ("part_of", "t")]);
    }

    #[test]
    fn self_loops_and_duplicates_are_kept_harmless() {
        let g = graph(&[("a", "r", "a"), ("a", "r", "b"), ("a", "r", "b")]);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.bidir_search("a", "b", 1).unwrap().unwrap().len(), 1);
    }

    #[test]
    fn tsv_parsing() {
        let g = KnowledgeGraph::parse_tsv("C1\tmay_treat\tC2\n\nC2\tisa\tC3\n").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.successors("C1"), [("may_treat", "C2")]);
        assert_eq!(g.predecessors("C3"), [("isa", "C2")]);
        assert!(KnowledgeGraph::parse_tsv("C1\tC2\n").is_err());
    }

    fn bfs(g: &KnowledgeGraph, s: &str, t: &str) -> Option<usize> {
        let mut dist = HashMap::from([(s.to_string(), 0usize)]);
        let mut q = VecDeque::from([s.to_string()]);
        while let Some(u) = q.pop_front() {
            if u == t {
                return Some(dist[&u]);
            }
            for (_, v) in g.successors(&u) {
                if !dist.contains_key(v) {
                    dist.insert(v.to_string(), dist[&u] + 1);
                    q.push_back(v.to_string());
                }
            }
        }
        None
    }

    /// Enumerates every path of the given length and keeps the smallest hop sequence.
    fn brute_min_path(g: &KnowledgeGraph, s: &str, t: &str, len: usize) -> Option<Vec<(String, String)>> {
        fn go(
            g: &KnowledgeGraph,
            u: &str,
            t: &str,
            left: usize,
            acc: &mut Vec<(String, String)>,
            best: &mut Option<Vec<(String, String)>>,
        ) {
            if left == 0 {
                if u == t && best.as_ref().is_none_or(|b| *acc < *b) {
                    *best = Some(acc.clone());
                }
                return;
            }
            for (r, v) in g.successors(u) {
                acc.push((r.to_string(), v.to_string()));
                go(g, v, t, left - 1, acc, best);
                acc.pop();
            }
        }
        let mut best = None;
        go(g, s, t, len, &mut Vec::new(), &mut best);
        best
    }

    fn arb_graph() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
        prop::collection::vec((0u8..25, 0u8..3, 0u8..25), 0..70)
    }

    proptest! {
        #[test]
        fn matches_bfs_and_is_lexicographically_minimal(edges in arb_graph(), s in 0u8..25, t in 0u8..25, depth in 1usize..6) {
            let named: Vec<(String, String, String)> = edges
                .iter()
                .map(|(h, r, t)| (format!("n{h:02}"), format!("r{r}"), format!("n{t:02}")))
                .collect();
            let g = KnowledgeGraph::from_triples(named);
            let (s, t) = (format!("n{s:02}"), format!("n{t:02}"));
            if !g.contains(&s) || !g.contains(&t) {
                prop_assert!(g.bidir_search(&s, &t, depth).is_err());
                return Ok(());
            }
            let oracle = bfs(&g, &s, &t).filter(|&d| d <= depth);
            let got = g.bidir_search(&s, &t, depth).unwrap();
            prop_assert_eq!(got.as_ref().map(Vec::len), oracle);
            if let Some(p) = got {
                let rp = RelationPath { source: s.clone(), target: t.clone(), hops: p.clone() };
                prop_assert!(rp.is_chained());
                if let Some(first) = p.first() {
                    prop_assert_eq!(&first.head, &s);
                    prop_assert_eq!(&p.last().unwrap().tail, &t);
                }
                let seq: Vec<(String, String)> = p.into_iter().map(|h| (h.relation, h.tail)).collect();
                if !seq.is_empty() {
                    prop_assert_eq!(Some(seq.clone()), brute_min_path(&g, &s, &t, seq.len()));
                }
            }
        }

        #[test]
        fn adjacency_lists_are_inverse(edges in arb_graph()) {
            let named: Vec<(String, String, String)> = edges
                .iter()
                .map(|(h, r, t)| (format!("n{h}"), format!("r{r}"), format!("n{t}")))
                .collect();
            let g = KnowledgeGraph::from_triples(named.clone());
            let mut fwd = BTreeSet::new();
            let mut rev = BTreeSet::new();
            for n in &g.nodes {
                for (r, v) in g.successors(n) {
                    fwd.insert((n.clone(), r.to_string(), v.to_string()));
                }
                for (r, u) in g.predecessors(n) {
                    rev.insert((u.to_string(), r.to_string(), n.clone()));
                }
            }
            let want: BTreeSet<_> = named.into_iter().collect();
            prop_assert_eq!(&fwd, &want);
            prop_assert_eq!(&rev, &want);
        }
    }
}
