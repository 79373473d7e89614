//! Regenerates the offline pipeline fixture under `data/fixture/`:
//! roster, recorded minutes-API replies, seed bundles and classifier
//! weights. Deterministic; run with
//! `cargo run -p ideoaxis-core --example make_fixture`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ideoaxis_core::corpus::{HttpReply, Party, ReplayTransport, DEFAULT_BASE_URL};
use ideoaxis_core::embedding::HashedNgramProvider;
use ideoaxis_core::nlproc::{train_classifier, LabeledSet, TrainOptions};
use ideoaxis_core::seedgen::{
    generate_seeds, prompt_for, FixtureChatClient, GenerateOptions, Side, JSDF_ISSUE, NPP_ISSUE,
};

const DIMENSION: usize = 512;
const PAGE_SIZE: usize = 25;
const SPEECHES_PER_SPEAKER: usize = 3;
const OPINIONS_PER_SPEECH: usize = 8;

struct Topic {
    id: &'static str,
    issue: &'static str,
    queries: [&'static str; 2],
    /// share of pro opinion sentences per party
    stance: [(Party, f64); 6],
    pro: &'static [&'static str],
    con: &'static [&'static str],
    facts: &'static [&'static str],
    seeds_pro: &'static [&'static str],
    seeds_con: &'static [&'static str],
}

const LEADS: [&str; 6] = ["", "改めて申し上げますが、", "率直に申し上げて、", "この点について、", "繰り返しになりますが、", "結論から申し上げれば、"];

const QUESTIONS: [&str; 4] = [
    "大臣の見解はいかがですか。",
    "政府はどのように説明するおつもりですか。",
    "総理はどうお考えでしょうか。",
    "具体的な計画はあるのですか。",
];

const TOPICS: [Topic; 2] = [
    Topic {
        id: "jsdf",
        issue: JSDF_ISSUE,
        queries: ["自衛隊", "憲法"],
        stance: [
            (Party::Jcp, 0.08),
            (Party::Cdp, 0.2),
            (Party::Komeito, 0.6),
            (Party::Ndp, 0.7),
            (Party::Jrp, 0.8),
            (Party::Ldp, 0.9),
        ],
        pro: &[
            "自衛隊を憲法に明記することに賛成です。",
            "自衛隊の存在を憲法に明記すべきだと考えます。",
            "憲法改正によって自衛隊の違憲論に終止符を打つべきです。",
            "自衛隊員の誇りのためにも憲法への明記を進めるべきだと確信しております。",
            "我が党は自衛隊の明記を含む憲法改正を推進いたします。",
            "厳しい安全保障環境を考えれば、自衛隊を憲法に位置付けることは必要不可欠です。",
        ],
        con: &[
            "自衛隊を憲法に明記することには反対です。",
            "憲法九条の改正は断じて認められません。",
            "自衛隊明記は平和主義を空洞化させるものであり、容認できません。",
            "九条を守り、改憲の動きは直ちに中止すべきであります。",
            "我が党は自衛隊明記の改憲に断固反対いたします。",
            "海外での武力行使に道を開く憲法改正は慎重であるべきだと申し上げたい。",
        ],
        facts: &[
            "自衛隊の関連予算は五兆円余り計上されています。",
            "自衛隊の災害派遣は昨年度も多数実施されました。",
            "自衛隊の定員については法律で定められております。",
        ],
        seeds_pro: &[
            "私は自衛隊を憲法に明記することに賛成です。自衛隊の違憲論に終止符を打ち、隊員が誇りを持って任務に当たれるようにすべきです。",
            "厳しい安全保障環境の中で国を守る自衛隊の存在を憲法に明記することは、国民の安心のために必要不可欠だと考えます。",
            "災害派遣で国民の命を守ってきた自衛隊を憲法に位置付けるべきです。憲法改正を堂々と進めるべきだと確信しております。",
            "自衛隊の合憲性をめぐる議論に決着をつけるためにも、九条に自衛隊を明記する憲法改正に賛成いたします。",
            "我が党は自衛隊の明記を含む憲法改正を推進いたします。国民投票で国民の判断を仰ぐべきです。",
        ],
        seeds_con: &[
            "私は自衛隊を憲法に明記することには反対です。九条の平和主義を空洞化させるものであり、容認できません。",
            "自衛隊明記は海外での武力行使に道を開くものであり、憲法九条の改正は断じて認められません。",
            "改憲ありきの議論は直ちに中止すべきであります。九条を守ることこそ平和への道だと考えます。",
            "自衛隊を憲法に書き込めば戦力不保持の原則が骨抜きになります。我が党は改憲に断固反対いたします。",
            "国民の多くが望んでいない憲法改正を急ぐべきではありません。自衛隊明記には反対です。",
        ],
    },
    Topic {
        id: "npp",
        issue: NPP_ISSUE,
        queries: ["原発", "原子力"],
        stance: [
            (Party::Jcp, 0.06),
            (Party::Cdp, 0.18),
            (Party::Komeito, 0.5),
            (Party::Ndp, 0.55),
            (Party::Jrp, 0.6),
            (Party::Ldp, 0.92),
        ],
        pro: &[
            "原発の再稼働を進めるべきだと考えます。",
            "原発はベースロード電源として必要不可欠だと確信しております。",
            "電気料金の高騰を抑えるためにも、原発の再稼働に賛成です。",
            "安全が確認された原発は速やかに再稼働すべきです。",
            "脱炭素の実現には原子力の活用こそが現実的な道だと信じます。",
            "エネルギー安全保障の観点から、原子力を最大限活用すべきであります。",
        ],
        con: &[
            "原発の再稼働には反対です。",
            "原発は国民の命を危険にさらすものであり、容認できません。",
            "原発ゼロを実現し、再生可能エネルギーに転換すべきです。",
            "原発の再稼働は直ちに中止すべきであります。",
            "核のごみの問題を考えれば、原発の再稼働は断じて認められません。",
            "我が党は原発の新増設と再稼働に断固反対いたします。",
        ],
        facts: &[
            "原発の再稼働の審査は現在も続いております。",
            "原子力規制委員会は昨年度に複数の審査を実施しました。",
            "原発の立地自治体には交付金が措置されています。",
        ],
        seeds_pro: &[
            "私は原発の再稼働に賛成です。安全が確認された原発を速やかに動かし、電気料金の高騰を抑えるべきです。",
            "脱炭素とエネルギー安全保障を両立させるには、原子力をベースロード電源として活用することが必要不可欠です。",
            "原子力規制委員会の審査に合格した原発は再稼働させるべきだと考えます。安定供給こそ国民生活を守る道です。",
            "エネルギー価格が高騰する中、原発の再稼働を進めることは現実的な選択だと確信しております。",
            "我が党は安全を大前提に原発の再稼働を推進いたします。原子力の活用を最大限進めるべきであります。",
        ],
        seeds_con: &[
            "私は原発の再稼働には反対です。事故の教訓を忘れ、国民の命を危険にさらすことは容認できません。",
            "核のごみの処分方法も決まらないまま原発を再稼働することは断じて認められません。",
            "原発ゼロを実現し、再生可能エネルギーへの転換を急ぐべきです。再稼働は直ちに中止すべきであります。",
            "避難計画が不十分なままの原発の再稼働には反対です。我が党は原発に頼らない社会を目指します。",
            "原発の再稼働ではなく、省エネと再生可能エネルギーの拡大にこそ力を注ぐべきだと考えます。",
        ],
    },
];

const SURNAMES: [&str; 24] = [
    "青木", "石川", "上田", "遠藤", "大野", "岡本", "金子", "川村", "菊地", "工藤", "小松", "近藤", "坂本", "柴田",
    "杉山", "関口", "高田", "千葉", "土屋", "中島", "西村", "野口", "原田", "福田",
];
const GIVEN: [&str; 4] = ["一郎", "花子", "健太", "由美"];

struct Speaker {
    name: String,
    party: Party,
    offset: f64,
}

fn speakers() -> Vec<Speaker> {
    let mut out = Vec::new();
    for (p, party) in [Party::Ldp, Party::Ndp, Party::Cdp, Party::Jcp, Party::Komeito, Party::Jrp]
        .into_iter()
        .enumerate()
    {
        for i in 0..4 {
            out.push(Speaker {
                name: format!("{}{}", SURNAMES[p * 4 + i], GIVEN[(p + i) % 4]),
                party,
                offset: [-0.05, -0.02, 0.02, 0.05][i],
            });
        }
    }
    out
}

/// Group label the minutes would print for a party.
fn group_label(p: Party) -> String {
    match p {
        Party::Ldp => "自由民主党・無所属の会".into(),
        Party::Cdp => "立憲民主党・無所属".into(),
        Party::Jrp => "日本維新の会".into(),
        Party::Ndp => "国民民主党・無所属クラブ".into(),
        _ => p.japanese_name().into(),
    }
}

struct Speech {
    id: String,
    speaker: String,
    group: String,
    date: NaiveDate,
    text: String,
}

fn speeches(topic: &Topic, roster: &[Speaker], rng: &mut ChaCha8Rng) -> Vec<Speech> {
    let start = NaiveDate::from_ymd_opt(2022, 1, 17).unwrap();
    let mut out = Vec::new();
    let push = |out: &mut Vec<Speech>, speaker: &str, group: String, body: String, rng: &mut ChaCha8Rng| {
        let date = start + chrono::Duration::days(rng.random_range(0..300));
        out.push(Speech {
            id: format!("{}{:05}", topic.id, out.len() + 1),
            speaker: speaker.to_string(),
            group,
            date,
            text: format!("○{}君　{}", speaker, body),
        });
    };
    let per_speaker = SPEECHES_PER_SPEAKER * OPINIONS_PER_SPEECH;
    for s in roster {
        let base = topic.stance.iter().find(|(p, _)| *p == s.party).unwrap().1;
        let share = (base + s.offset).clamp(0.0, 1.0);
        let n_pro = (share * per_speaker as f64).round() as usize;
        let mut opinions: Vec<String> = (0..per_speaker)
            .map(|i| {
                let frames = if i < n_pro { topic.pro } else { topic.con };
                let lead = LEADS[rng.random_range(0..LEADS.len())];
                format!("{lead}{}", frames[rng.random_range(0..frames.len())])
            })
            .collect();
        opinions.shuffle(rng);
        for chunk in opinions.chunks(OPINIONS_PER_SPEECH) {
            let mut sentences = vec![topic.facts[rng.random_range(0..topic.facts.len())].to_string()];
            sentences.extend(chunk.iter().cloned());
            sentences.push(format!(
                "{}について、{}",
                topic.queries[rng.random_range(0..2)],
                QUESTIONS[rng.random_range(0..QUESTIONS.len())]
            ));
            sentences.push("以上で質問を終わります。".into());
            push(&mut out, &s.name, group_label(s.party), sentences.concat(), rng);
        }
    }
    // a government witness, outside the roster
    push(
        &mut out,
        "政府参考人",
        String::new(),
        format!("{}以上でございます。", topic.facts[0]),
        rng,
    );
    // a retired member, present in the roster as inactive
    push(
        &mut out,
        "引退太郎",
        group_label(Party::Ldp),
        format!("{}{}", topic.facts[1], topic.pro[0]),
        rng,
    );
    // a member who says too little to be profiled
    push(
        &mut out,
        "寡黙次郎",
        group_label(Party::Cdp),
        format!("{}{}{}", topic.facts[2], topic.con[0], topic.con[1]),
        rng,
    );
    out
}

fn write_replies(dir: &Path, topic: &Topic, all: &[Speech]) {
    let from = "2022-01-01";
    let until = "2022-12-31";
    for q in topic.queries {
        let mut hits: Vec<&Speech> = all.iter().filter(|s| s.text.contains(q)).collect();
        hits.sort_by(|a, b| (a.date, &a.id).cmp(&(b.date, &b.id)));
        let total = hits.len();
        let mut start = 1;
        loop {
            let page: Vec<_> = hits.iter().skip(start - 1).take(PAGE_SIZE).collect();
            let records: Vec<_> = page
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    json!({
                        "speechID": s.id,
                        "speechOrder": i + 1,
                        "speaker": s.speaker,
                        "speakerGroup": s.group,
                        "nameOfHouse": "衆議院",
                        "nameOfMeeting": "憲法審査会",
                        "date": s.date.to_string(),
                        "speech": s.text,
                    })
                })
                .collect();
            let next = start + page.len();
            let mut body = json!({
                "numberOfRecords": total,
                "numberOfReturn": page.len(),
                "startRecord": start,
                "speechRecord": records,
            });
            if next <= total {
                body["nextRecordPosition"] = json!(next);
            }
            let query = [
                ("any", q.to_string()),
                ("from", from.into()),
                ("until", until.into()),
                ("nameOfHouse", "衆議院".into()),
                ("recordPacking", "json".into()),
                ("startRecord", start.to_string()),
                ("maximumRecords", PAGE_SIZE.to_string()),
            ]
            .map(|(k, v)| (k.to_string(), v));
            let reply = HttpReply {
                status: 200,
                body: body.to_string(),
            };
            ReplayTransport::record(dir, DEFAULT_BASE_URL, &query, &reply).unwrap();
            if next > total {
                break;
            }
            start = next;
        }
    }
}

fn write_roster(path: &Path, roster: &[Speaker]) {
    let mut s = String::from("# Synthetic legislators for the offline fixture.\n");
    for m in roster {
        s.push_str(&format!("\n[[member]]\nname = \"{}\"\nparty = \"{}\"\n", m.name, m.party.code()));
    }
    s.push_str("\n[[member]]\nname = \"引退太郎\"\nparty = \"LDP\"\nactive = false\n");
    s.push_str("\n[[member]]\nname = \"寡黙次郎\"\nparty = \"CDP\"\n");
    fs::write(path, s).unwrap();
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let out = root.join("fixture");
    for sub in ["replay", "seeds"] {
        let d = out.join(sub);
        if d.exists() {
            fs::remove_dir_all(&d).unwrap();
        }
        fs::create_dir_all(&d).unwrap();
    }
    let roster = speakers();
    write_roster(&out.join("roster.toml"), &roster);

    let mut rng = ChaCha8Rng::seed_from_u64(20230530);
    let mut hashes = Vec::new();
    for topic in &TOPICS {
        let all = speeches(topic, &roster, &mut rng);
        write_replies(&out.join("replay"), topic, &all);
        let ids: BTreeSet<&str> = all.iter().map(|s| s.id.as_str()).collect();
        println!("{}: {} speeches", topic.id, ids.len());

        for (side, texts) in [(Side::Pro, topic.seeds_pro), (Side::Con, topic.seeds_con)] {
            let client = FixtureChatClient::new("fixture-chat", texts.iter().copied());
            let prompt = prompt_for(topic.issue, side);
            let mut bundle =
                generate_seeds(topic.id, side, &prompt, texts.len(), &client, &GenerateOptions::default()).unwrap();
            bundle.created_at = Utc.with_ymd_and_hms(2023, 5, 30, 0, 0, 0).unwrap();
            let bundle = bundle.seal();
            let path = out.join("seeds").join(bundle.file_name());
            let mut bytes = serde_json::to_vec_pretty(&bundle).unwrap();
            bytes.push(b'\n');
            fs::write(&path, bytes).unwrap();
            println!("{} {}: {}", topic.id, side.as_str(), path.file_name().unwrap().to_string_lossy());
            hashes.push(bundle.content_hash.clone());
        }
    }

    let set = LabeledSet::load_tsv(&root.join("labeled/sentence_types.tsv")).unwrap();
    let provider = HashedNgramProvider::new(DIMENSION);
    let opts = TrainOptions {
        seed: 7,
        ..Default::default()
    };
    let (model, report) = train_classifier(&set, None, &provider, None, &opts).unwrap();
    model.save(&out.join("classifier.json")).unwrap();
    println!("classifier train accuracy {:.3}", report.train_accuracy);
    println!("seed hashes: {hashes:?}");
}
