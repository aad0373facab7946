//! Regenerates the toy corpus under `data/toy/`:
//!
//!     cargo run -p factjudge-cli --example gen_toy -- data/toy

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[path = "../tests/support/oracle.rs"]
mod oracle;

const CRIMES: [(&str, &str); 8] = [
    ("盗窃", "theft"),
    ("抢劫", "robbery"),
    ("诈骗", "fraud"),
    ("伤害", "injury"),
    ("毒品", "drugs"),
    ("赌博", "gambling"),
    ("受贿", "bribery"),
    ("纵火", "arson"),
];

const FILLERS: [&str; 24] = [
    "张某", "李某", "王某", "夜间", "商店", "手机", "现金", "车辆", "住宅", "街道", "朋友", "酒后",
    "公司", "银行", "工地", "网络", "医院", "学校", "仓库", "钱包", "电脑", "超市", "码头", "村民",
];

const QUERIES: usize = 12;
const CANDIDATES: usize = 10;

fn text(words: &[&str]) -> String {
    format!("{}。", words.join("，"))
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    std::fs::create_dir_all(&out).unwrap();
    let lex = oracle::lexicon(factjudge::llm_gateway::BUNDLED_LEXICON);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let mut queries = Vec::new();
    let mut candidates = Vec::new();
    let mut pools = Vec::new();
    let mut qrels: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();

    for qi in 1..=QUERIES {
        let qid = format!("q{qi:02}");
        let crime = *CRIMES.choose(&mut rng).unwrap();
        let mut fillers = FILLERS.to_vec();
        fillers.shuffle(&mut rng);
        let (q_fill, rest) = fillers.split_at(6);
        let mut q_words = vec![crime.0];
        q_words.extend_from_slice(q_fill);
        q_words.shuffle(&mut rng);
        let q_text = text(&q_words);
        queries.push(json!({"id": qid, "fact_text": q_text, "crime_tags": [crime.1]}));

        let mut ids = Vec::new();
        for ci in 1..=CANDIDATES {
            let cid = format!("{qid}-c{ci:02}");
            // steer towards label 0/1/2/3 with weights 4/2/2/2
            let target = [0, 0, 0, 0, 1, 1, 2, 2, 3, 3][rng.gen_range(0..10)];
            let same_crime = target >= 2;
            let mf = target % 2 == 1;
            let shared = match (mf, same_crime) {
                (true, true) => rng.gen_range(4..=5),
                (true, false) => rng.gen_range(5..=6),
                (false, true) => rng.gen_range(0..=2),
                (false, false) => rng.gen_range(0..=3),
            };
            let c_crime = if same_crime {
                crime
            } else {
                **CRIMES.iter().filter(|c| c.0 != crime.0).collect::<Vec<_>>().choose(&mut rng).unwrap()
            };
            let mut words = vec![c_crime.0];
            words.extend(q_fill.choose_multiple(&mut rng, shared));
            words.extend(rest.choose_multiple(&mut rng, 6 - shared));
            words.shuffle(&mut rng);
            let c_text = text(&words);
            qrels
                .entry(qid.clone())
                .or_default()
                .insert(cid.clone(), oracle::label(&q_text, &c_text, &lex));
            candidates.push(json!({"id": cid, "fact_text": c_text, "crime_tags": [c_crime.1]}));
            ids.push(cid);
        }
        ids.shuffle(&mut rng);
        pools.push(json!({"query_id": qid, "candidate_ids": ids}));
    }

    let jsonl = |rows: &[serde_json::Value]| {
        rows.iter().map(|r| format!("{r}\n")).collect::<String>()
    };
    std::fs::write(out.join("queries.jsonl"), jsonl(&queries)).unwrap();
    std::fs::write(out.join("candidates.jsonl"), jsonl(&candidates)).unwrap();
    std::fs::write(out.join("pools.json"), serde_json::to_string_pretty(&pools).unwrap() + "\n").unwrap();
    std::fs::write(out.join("qrels.json"), serde_json::to_string_pretty(&qrels).unwrap() + "\n").unwrap();

    let mut hist = [0usize; 4];
    for l in qrels.values().flat_map(|m| m.values()) {
        hist[*l as usize] += 1;
    }
    println!("wrote {} queries, {} candidates; label histogram {hist:?}", queries.len(), candidates.len());
}
