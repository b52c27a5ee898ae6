//! Built-in scripted scenario suite.
//!
//! Ten queries over a small knowledge base, with every model role scripted:
//! pinned embeddings give controlled retrieval and correlation orderings,
//! the chat stub supplies parametric contexts, rationales, and conflict
//! summaries, and the scripted next-token model spells out answers
//! conditioned on what actually reached its prompt. Six scenarios plant a
//! wrong parametric belief that retrieval corrects (so direct answering gets
//! 4/10 and the full pipeline 10/10, by construction), and a side suite of
//! four queries sabotages retrieval for two of them to exercise ground-truth
//! injection.

use std::collections::HashMap;

use crate::clients::stub::{EmbeddingPin, PinnedEmbedder, StubChatClient, StubScript, StubRule};
use crate::corpus::{GtRef, KnowledgeBase, KnowledgeEntry, Query, Section};
use crate::lm::{LmRule, ScriptedLm};

pub const EMBED_DIM: usize = 32;
pub const SCENARIO_COUNT: usize = 10;
/// Scenarios whose parametric belief already matches the gold answer.
pub const BASE_CORRECT: usize = 4;

struct Scenario {
    idx: usize,
    question: &'static str,
    q_star: &'static str,
    gold: &'static str,
    belief: &'static str,
    title: &'static str,
    gold_fact: &'static str,
    conflict_fact: &'static str,
    filler_fact: &'static str,
    c_m: &'static str,
    r_gold: &'static str,
    r_conflict: &'static str,
    r_filler: &'static str,
    r_cm: &'static str,
    summary: &'static str,
}

impl Scenario {
    fn qid(&self) -> String {
        format!("q{:02}", self.idx)
    }
    fn entity_id(&self) -> String {
        format!("e{:02}", self.idx)
    }
    fn image(&self) -> String {
        format!("img://scene{}", self.idx)
    }
}

fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            idx: 0,
            question: "What species is this red-capped mushroom?",
            q_star: "What species is the red-capped mushroom with white spots shown in the photo?",
            gold: "Amanita muscaria",
            belief: "Russula emetica",
            title: "Fly agaric",
            gold_fact: "A red cap dotted with white warts identifies the fly agaric Amanita muscaria.",
            conflict_fact: "A smooth plain red cap without any warts usually indicates Russula emetica.",
            filler_fact: "Field guides recommend photographing fungi from several angles.",
            c_m: "The plain red cap suggests this is Russula emetica.",
            r_gold: "white warts speckle the red cap",
            r_conflict: "a smooth cap with no warts",
            r_filler: "photography advice only",
            r_cm: "the cap appears plain red",
            summary: "presence of white warts on the cap; ring on the stem",
        },
        Scenario {
            idx: 1,
            question: "Which tower rises over this skyline?",
            q_star: "Which broadcast tower with a lattice spire rises over the skyline in the image?",
            gold: "Tokyo Skytree",
            belief: "Tokyo Tower",
            title: "Skytree",
            gold_fact: "The tallest lattice spire on this skyline is the Tokyo Skytree in Sumida.",
            conflict_fact: "An orange and white steel frame marks Tokyo Tower in Minato.",
            filler_fact: "Skyline photos are sharpest shortly after sunset.",
            c_m: "The silhouette resembles Tokyo Tower.",
            r_gold: "a slender white lattice spire",
            r_conflict: "orange and white latticework",
            r_filler: "lighting conditions commentary",
            r_cm: "the silhouette looks orange framed",
            summary: "spire color and lattice profile",
        },
        Scenario {
            idx: 2,
            question: "What bird with a yellow beak is perched here?",
            q_star: "What black bird with a bright yellow beak is perched on the branch?",
            gold: "European starling",
            belief: "common blackbird",
            title: "Starling",
            gold_fact: "Glossy speckled plumage with a yellow beak marks the European starling.",
            conflict_fact: "An all-black body with a yellow beak is typical of the common blackbird.",
            filler_fact: "Many songbirds visit gardens during early spring.",
            c_m: "An all-black songbird like this is a common blackbird.",
            r_gold: "speckles glisten across the feathers",
            r_conflict: "uniform black feathering",
            r_filler: "seasonal gardening note",
            r_cm: "the plumage looks uniformly black",
            summary: "speckling on the plumage",
        },
        Scenario {
            idx: 3,
            question: "What plant family does this flower belong to?",
            q_star: "What plant family does the flower with three petals and a lip belong to?",
            gold: "Orchidaceae",
            belief: "Orchidaceae",
            title: "Orchid",
            gold_fact: "A bilaterally symmetric lip petal places this flower in Orchidaceae.",
            conflict_fact: "Radially symmetric six-petal flowers belong to Liliaceae instead.",
            filler_fact: "Greenhouse humidity should stay above forty percent.",
            c_m: "The prominent lip petal means this flower is in Orchidaceae.",
            r_gold: "a distinct lip petal",
            r_conflict: "radial petal symmetry",
            r_filler: "greenhouse care instructions",
            r_cm: "lip petal visible in front",
            summary: "petal symmetry and the lip",
        },
        Scenario {
            idx: 4,
            question: "Which bridge is pictured at the strait?",
            q_star: "Which red suspension bridge spanning the strait is pictured?",
            gold: "Golden Gate Bridge",
            belief: "Golden Gate Bridge",
            title: "Golden Gate",
            gold_fact: "International orange towers over the strait belong to the Golden Gate Bridge.",
            conflict_fact: "Gray double decks across the bay identify the Bay Bridge.",
            filler_fact: "Fog often covers the strait on summer mornings.",
            c_m: "The international orange color says Golden Gate Bridge.",
            r_gold: "international orange tower paint",
            r_conflict: "gray deck coloring",
            r_filler: "weather pattern remark",
            r_cm: "orange paint over the strait",
            summary: "tower paint color",
        },
        Scenario {
            idx: 5,
            question: "What butterfly is resting on the leaf?",
            q_star: "What orange and black butterfly without a hindwing band rests on the leaf?",
            gold: "monarch butterfly",
            belief: "viceroy butterfly",
            title: "Monarch",
            gold_fact: "Orange wings without a black hindwing band belong to the monarch butterfly.",
            conflict_fact: "A black band across the hindwing distinguishes the viceroy butterfly.",
            filler_fact: "Butterflies often bask with open wings at midday.",
            c_m: "The banded hindwing suggests a viceroy butterfly.",
            r_gold: "no band crosses the hindwing",
            r_conflict: "a dark hindwing band",
            r_filler: "basking behavior aside",
            r_cm: "hindwing seems to carry a band",
            summary: "hindwing banding",
        },
        Scenario {
            idx: 6,
            question: "Which mountain peak fills this photo?",
            q_star: "Which glaciated stratovolcano peak fills the photo background?",
            gold: "Mount Rainier",
            belief: "Mount Fuji",
            title: "Rainier",
            gold_fact: "Heavy year-round glaciers on a broad summit identify Mount Rainier.",
            conflict_fact: "A perfectly symmetric bare cone is the profile of Mount Fuji.",
            filler_fact: "Alpine trails close during storm season.",
            c_m: "The symmetric cone looks like Mount Fuji.",
            r_gold: "broad glaciated summit",
            r_conflict: "a bare symmetric cone",
            r_filler: "trail closure information",
            r_cm: "cone appears symmetric",
            summary: "glacier coverage and summit shape",
        },
        Scenario {
            idx: 7,
            question: "Who painted this garden scene?",
            q_star: "Which impressionist painted the water lily garden scene?",
            gold: "Claude Monet",
            belief: "Claude Monet",
            title: "Water Lilies",
            gold_fact: "Loose water lily reflections in this garden are signature Claude Monet.",
            conflict_fact: "Bold swirling night skies indicate Vincent van Gogh.",
            filler_fact: "Museum lighting protects pigments from fading.",
            c_m: "Water lilies in soft focus point to Claude Monet.",
            r_gold: "soft lily pond brushwork",
            r_conflict: "swirling impasto strokes",
            r_filler: "conservation trivia",
            r_cm: "lily pond palette",
            summary: "brushwork style on the pond",
        },
        Scenario {
            idx: 8,
            question: "Which cathedral stands in this square?",
            q_star: "Which twin-spired gothic cathedral stands in the station square?",
            gold: "Cologne Cathedral",
            belief: "Notre-Dame de Paris",
            title: "Cologne Cathedral",
            gold_fact: "Twin openwork spires of dark stone crown Cologne Cathedral.",
            conflict_fact: "Two flat rectangular towers front Notre-Dame de Paris.",
            filler_fact: "Gothic construction often spanned several centuries.",
            c_m: "The facade recalls Notre-Dame de Paris.",
            r_gold: "twin pierced spires",
            r_conflict: "flat topped twin towers",
            r_filler: "construction history aside",
            r_cm: "facade with two towers",
            summary: "spire shape above the towers",
        },
        Scenario {
            idx: 9,
            question: "What tree species shows this bark?",
            q_star: "What tree species shows peeling white bark with dark fissures?",
            gold: "silver birch",
            belief: "silver birch",
            title: "Silver birch",
            gold_fact: "Peeling papery white bark with black diamonds marks the silver birch.",
            conflict_fact: "Smooth gray unbroken bark belongs to the European beech.",
            filler_fact: "Bark texture changes as trees mature.",
            c_m: "White peeling bark makes this a silver birch.",
            r_gold: "papery white curls of bark",
            r_conflict: "smooth gray surface",
            r_filler: "maturation commentary",
            r_cm: "white bark with fissures",
            summary: "bark color and peeling",
        },
    ]
}

struct OracleScenario {
    idx: usize, // embedding axis
    qid: &'static str,
    question: &'static str,
    gold: &'static str,
    title: &'static str,
    gold_fact: &'static str,
    decoys: [&'static str; 3],
}

fn oracle_scenarios() -> Vec<OracleScenario> {
    vec![
        OracleScenario {
            idx: 10,
            qid: "oq0",
            question: "Which lighthouse guards this rocky point?",
            gold: "Fastnet Lighthouse",
            title: "Fastnet",
            gold_fact: "The tapered granite tower on the rock is the Fastnet Lighthouse.",
            decoys: [
                "Many lighthouses switched to automated lamps in the 1980s.",
                "Rocky points see strong tidal currents.",
                "Seabirds nest near the point each summer.",
            ],
        },
        OracleScenario {
            idx: 11,
            qid: "oq1",
            question: "Which castle sits on this crag?",
            gold: "Edinburgh Castle",
            title: "Edinburgh Castle",
            gold_fact: "The fortress on the volcanic crag is Edinburgh Castle.",
            decoys: [
                "Castles often guarded river crossings.",
                "Crags form from eroded volcanic plugs.",
                "Audio guides are available at the gate.",
            ],
        },
    ]
}

impl OracleScenario {
    fn entity_id(&self) -> String {
        format!("e{}", self.idx)
    }
    fn image(&self) -> String {
        format!("img://oracle{}", self.idx - 10)
    }
}

fn axis(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    v[i] = 1.0;
    v
}

/// weight on the scenario axis, remainder on a shared orthogonal tail axis.
fn blended(main: usize, weight: f64, tail: usize) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    v[main] = weight;
    v[tail] = (1.0 - weight * weight).sqrt();
    v
}

const TAIL_GOLD: usize = 20;
const TAIL_CONFLICT: usize = 21;
const TAIL_FILLER: usize = 22;
const TAIL_CM: usize = 23;

/// Pinned similarity of each sentence kind to its scenario axis. Gold facts
/// sit far above the compression cut; parametric-context sentences sit at
/// the bottom.
pub const PIN_GOLD: f64 = 0.9;
pub const PIN_CONFLICT: f64 = 0.55;
pub const PIN_FILLER: f64 = 0.3;
pub const PIN_CM: f64 = 0.1;

pub const CHAT_FALLBACK: &str = "I cannot tell. <reason>inconclusive</reason>";

/// The whole scripted fixture: knowledge base, query sets, ground-truth
/// references, and scripts for all three model roles.
pub struct StubSuite {
    pub kb: KnowledgeBase,
    pub queries: Vec<Query>,
    pub oracle_queries: Vec<Query>,
    pub gt: HashMap<String, GtRef>,
    pub pins: Vec<EmbeddingPin>,
    pub chat_script: StubScript,
    pub lm_script: ScriptedLm,
}

impl StubSuite {
    pub fn embedder(&self) -> PinnedEmbedder {
        PinnedEmbedder::new(EMBED_DIM, self.pins.clone())
    }

    pub fn chat(&self) -> StubChatClient {
        StubChatClient::new(self.chat_script.clone())
    }

    pub fn lm(&self) -> ScriptedLm {
        self.lm_script.clone()
    }

    pub fn kb_jsonl(&self) -> String {
        self.kb
            .entries()
            .iter()
            .map(|e| serde_json::to_string(e).unwrap())
            .map(|l| l + "\n")
            .collect()
    }

    pub fn queries_jsonl(&self) -> String {
        to_jsonl(&self.queries)
    }

    pub fn oracle_queries_jsonl(&self) -> String {
        to_jsonl(&self.oracle_queries)
    }

    pub fn gt_jsonl(&self) -> String {
        let mut qids: Vec<&String> = self.gt.keys().collect();
        qids.sort();
        qids.iter()
            .map(|q| serde_json::to_string(&self.gt[*q]).unwrap() + "\n")
            .collect()
    }
}

fn to_jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).unwrap() + "\n")
        .collect()
}

pub fn builtin_suite() -> StubSuite {
    let mains = scenarios();
    let oracles = oracle_scenarios();

    let mut entries = Vec::new();
    let mut queries = Vec::new();
    let mut pins = Vec::new();
    let mut chat_rules: Vec<StubRule> = Vec::new();
    let mut lm_fact_rules: Vec<LmRule> = Vec::new();
    let mut lm_belief_rules: Vec<LmRule> = Vec::new();

    for s in &mains {
        let embedding = if s.idx == 0 {
            // one entry ships a precomputed image embedding to cover that path
            Some(axis(0))
        } else {
            None
        };
        entries.push(KnowledgeEntry {
            entity_id: s.entity_id(),
            title: s.title.to_string(),
            sections: vec![
                Section {
                    id: "s1".into(),
                    text: s.gold_fact.into(),
                },
                Section {
                    id: "s2".into(),
                    text: s.conflict_fact.into(),
                },
                Section {
                    id: "s3".into(),
                    text: s.filler_fact.into(),
                },
            ],
            image: s.image(),
            image_embedding: embedding,
        });
        queries.push(Query {
            qid: s.qid(),
            image: s.image(),
            question: s.question.into(),
            answers: vec![s.gold.into()],
            split_tag: None,
        });

        // controlled similarity geometry
        pins.push(EmbeddingPin {
            text: s.question.into(),
            vector: axis(s.idx),
        });
        pins.push(EmbeddingPin {
            text: s.q_star.into(),
            vector: axis(s.idx),
        });
        pins.push(EmbeddingPin {
            text: s.image(),
            vector: axis(s.idx),
        });
        pins.push(EmbeddingPin {
            text: s.gold_fact.into(),
            vector: blended(s.idx, PIN_GOLD, TAIL_GOLD),
        });
        pins.push(EmbeddingPin {
            text: s.conflict_fact.into(),
            vector: blended(s.idx, PIN_CONFLICT, TAIL_CONFLICT),
        });
        pins.push(EmbeddingPin {
            text: s.filler_fact.into(),
            vector: blended(s.idx, PIN_FILLER, TAIL_FILLER),
        });
        pins.push(EmbeddingPin {
            text: s.c_m.into(),
            vector: blended(s.idx, PIN_CM, TAIL_CM),
        });

        // chat script: parametric context, rewrite, one rationale per
        // context, conflict summary
        chat_rules.push(StubRule {
            matches: format!("{} Please describe the image", s.question),
            response: s.c_m.to_string(),
        });
        chat_rules.push(StubRule {
            matches: format!("Original question: {}", s.question),
            response: format!("<question>{}</question>", s.q_star),
        });
        for (fact, reason, answer) in [
            (s.gold_fact, s.r_gold, s.gold),
            (s.conflict_fact, s.r_conflict, s.belief),
            (s.filler_fact, s.r_filler, "unclear"),
            (s.c_m, s.r_cm, s.belief),
        ] {
            chat_rules.push(StubRule {
                matches: fact.to_string(),
                response: format!("Answer: {answer} <reason>{reason}</reason>"),
            });
        }
        chat_rules.push(StubRule {
            matches: s.r_gold.to_string(),
            response: format!("<reason>{}</reason>", s.summary),
        });

        // next-token script: the gold fact (when present in the prompt)
        // spells the gold answer; the bare question spells the parametric
        // belief
        lm_fact_rules.push(LmRule {
            matches: s.gold_fact.into(),
            completion: s.gold.into(),
        });
        lm_belief_rules.push(LmRule {
            matches: format!("{}. Short Answer:", s.question),
            completion: s.belief.into(),
        });
    }

    let mut oracle_queries = Vec::new();
    let mut gt = HashMap::new();
    for o in &oracles {
        let mut sections = vec![Section {
            id: "s1".into(),
            text: o.gold_fact.into(),
        }];
        for (i, d) in o.decoys.iter().enumerate() {
            sections.push(Section {
                id: format!("s{}", i + 2),
                text: d.to_string(),
            });
        }
        entries.push(KnowledgeEntry {
            entity_id: o.entity_id(),
            title: o.title.to_string(),
            sections,
            image: o.image(),
            image_embedding: None,
        });
        oracle_queries.push(Query {
            qid: o.qid.into(),
            image: o.image(),
            question: o.question.into(),
            answers: vec![o.gold.into()],
            split_tag: Some("oracle".into()),
        });
        gt.insert(
            o.qid.to_string(),
            GtRef {
                qid: o.qid.into(),
                entity_id: o.entity_id(),
                section_id: "s1".into(),
            },
        );

        pins.push(EmbeddingPin {
            text: o.question.into(),
            vector: axis(o.idx),
        });
        pins.push(EmbeddingPin {
            text: o.image(),
            vector: axis(o.idx),
        });
        // retrieval sabotage: the gold section ranks below all three decoys
        pins.push(EmbeddingPin {
            text: o.gold_fact.into(),
            vector: blended(o.idx, 0.05, TAIL_GOLD),
        });
        for (i, d) in o.decoys.iter().enumerate() {
            pins.push(EmbeddingPin {
                text: d.to_string(),
                vector: blended(o.idx, 0.6 - 0.1 * i as f64, TAIL_CONFLICT + i),
            });
        }

        lm_fact_rules.push(LmRule {
            matches: o.gold_fact.into(),
            completion: o.gold.into(),
        });
    }

    // two healthy-retrieval copies of the first scenarios round out the
    // ground-truth suite (injection is a no-op for them)
    for (qid, s) in [("oq2", &mains[0]), ("oq3", &mains[1])] {
        oracle_queries.push(Query {
            qid: qid.into(),
            image: s.image(),
            question: s.question.into(),
            answers: vec![s.gold.into()],
            split_tag: Some("oracle".into()),
        });
        gt.insert(
            qid.to_string(),
            GtRef {
                qid: qid.into(),
                entity_id: s.entity_id(),
                section_id: "s1".into(),
            },
        );
    }

    let mut lm_rules = lm_fact_rules;
    lm_rules.extend(lm_belief_rules);

    StubSuite {
        kb: KnowledgeBase::new(entries).expect("builtin suite KB is valid"),
        queries,
        oracle_queries,
        gt,
        pins,
        chat_script: StubScript {
            rules: chat_rules,
            fallback: CHAT_FALLBACK.into(),
        },
        lm_script: ScriptedLm::new(lm_rules),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shape() {
        let suite = builtin_suite();
        assert_eq!(suite.queries.len(), SCENARIO_COUNT);
        assert_eq!(suite.oracle_queries.len(), 4);
        assert_eq!(suite.kb.len(), 12);
        assert_eq!(suite.gt.len(), 4);
    }

    #[test]
    fn belief_matches_gold_on_exactly_four() {
        let agree = scenarios().iter().filter(|s| s.gold == s.belief).count();
        assert_eq!(agree, BASE_CORRECT);
    }

    #[test]
    fn fact_and_rule_strings_are_scenario_unique() {
        let ss = scenarios();
        for a in &ss {
            for b in &ss {
                if a.idx == b.idx {
                    continue;
                }
                assert!(!a.gold_fact.contains(b.gold_fact));
                assert!(!a.question.contains(b.question));
                assert!(!a.r_gold.contains(b.r_gold));
            }
        }
    }

    #[test]
    fn pins_cover_every_section_text() {
        let suite = builtin_suite();
        let pinned: std::collections::HashSet<&str> =
            suite.pins.iter().map(|p| p.text.as_str()).collect();
        for e in suite.kb.entries() {
            for s in &e.sections {
                assert!(pinned.contains(s.text.as_str()), "unpinned section: {}", s.text);
            }
        }
    }

    #[test]
    fn jsonl_round_trips() {
        let suite = builtin_suite();
        let dir = tempfile::tempdir().unwrap();
        let kb_path = dir.path().join("kb.jsonl");
        std::fs::write(&kb_path, suite.kb_jsonl()).unwrap();
        let kb = crate::corpus::load_knowledge_base(&kb_path).unwrap();
        assert_eq!(kb.len(), suite.kb.len());
        let q_path = dir.path().join("queries.jsonl");
        std::fs::write(&q_path, suite.queries_jsonl()).unwrap();
        let qs = crate::corpus::load_queries(&q_path).unwrap();
        assert_eq!(qs, suite.queries);
    }
}
