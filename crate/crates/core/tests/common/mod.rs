#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wella_core::backend::mock_generate;
use wella_core::scenario::{parse_scenario, RoleId, ScenarioCategory, ScenarioSpec};
use wella_core::sft::{build_record, GroundTruthAnswers, SftRecord, SpecialTokenPolicy};
use wella_core::survey::{SartRating, TlxRating};
use wella_core::trajectory::{build_prompt, parse_response, Instrument};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub const CATEGORY_COUNTS: [(ScenarioCategory, usize); 3] =
    [(ScenarioCategory::Startup, 28), (ScenarioCategory::Shutdown, 11), (ScenarioCategory::Accident, 30)];

pub fn base_scenario(category: ScenarioCategory) -> ScenarioSpec {
    let file = match category {
        ScenarioCategory::Startup => "scenarios/su-001.json",
        ScenarioCategory::Shutdown => "scenarios/sd-001.json",
        ScenarioCategory::Accident => "scenarios/acc-001.json",
    };
    parse_scenario(&std::fs::read_to_string(fixture(file)).unwrap()).unwrap()
}

/// 69 records, one per (scenario, role), with random valid answers.
pub fn sft_dataset() -> (Vec<SftRecord>, Vec<(TlxRating, SartRating)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(69);
    let policy = SpecialTokenPolicy::default();
    let mut records = Vec::new();
    let mut answers = Vec::new();
    for (category, n) in CATEGORY_COUNTS {
        for k in 0..n {
            let mut scenario = base_scenario(category);
            scenario.id = format!("{}-{:03}", category.as_str().to_lowercase(), k / 5);
            let role = RoleId::ALL[k % 5];
            let bundle = build_prompt(&scenario, role, Instrument::Both);
            let traj = parse_response(&mock_generate(&bundle, k as u64), Instrument::Both).unwrap().trajectory;
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(0..=20) as f64 * 5.0).collect();
            let tlx = TlxRating::new(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
            let items: Vec<u8> = (0..10).map(|_| rng.random_range(1..=7)).collect();
            let sart = SartRating::new(&items).unwrap();
            records.push(build_record(&scenario, role, &traj, &GroundTruthAnswers::new(tlx, sart), &policy).unwrap());
            answers.push((tlx, sart));
        }
    }
    (records, answers)
}

#[derive(Debug, Clone)]
pub enum Reply {
    Status(u16, String),
    /// Wait before answering, long enough for the client to time out.
    Stall(Duration, Box<Reply>),
}

impl Reply {
    pub fn completion(content: &str) -> Reply {
        let body = serde_json::json!({
            "id": "cmpl-1",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
        });
        Reply::Status(200, body.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Captured {
    pub head: String,
    pub body: String,
}

/// Local HTTP server that answers requests from a script. Once the script
/// runs out the last reply repeats.
pub struct Stub {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Captured>>>,
}

impl Stub {
    pub fn start(script: Vec<Reply>) -> Stub {
        assert!(!script.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let script = Arc::new(script);
        let seen = requests.clone();
        thread::spawn(move || {
            for (i, conn) in listener.incoming().enumerate() {
                let Ok(conn) = conn else { break };
                let reply = script[i.min(script.len() - 1)].clone();
                let seen = seen.clone();
                thread::spawn(move || handle(conn, reply, seen));
            }
        });
        Stub { url, requests }
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.requests.lock().unwrap().clone()
    }
}

fn handle(conn: TcpStream, reply: Reply, seen: Arc<Mutex<Vec<Captured>>>) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut head = String::new();
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
        let end = line == "\r\n";
        head.push_str(&line);
        if end {
            break;
        }
    }
    let mut body = vec![0; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    seen.lock().unwrap().push(Captured { head, body: String::from_utf8_lossy(&body).into_owned() });
    respond(conn, reply);
}

fn respond(mut conn: TcpStream, reply: Reply) {
    match reply {
        Reply::Stall(d, then) => {
            thread::sleep(d);
            respond(conn, *then);
        }
        Reply::Status(code, body) => {
            let msg = format!(
                "HTTP/1.1 {code} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = conn.write_all(msg.as_bytes());
        }
    }
}
