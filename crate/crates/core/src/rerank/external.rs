//! Line-delimited JSON scoring protocol.
//!
//! The server speaks first with a handshake line
//! `{"name":..,"max_batch":..,"tokenizer":..}`. Each request line is
//! `{"id":n,"q":query,"p":passage}` and is answered by `{"id":n,"s":score}`,
//! possibly out of order. A request the server cannot handle is answered with
//! `{"id":n,"error":message}` and the connection stays open.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::scorer::{Scorer, ScorerError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub name: String,
    pub max_batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub q: String,
    pub p: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Where an external scorer lives: `tcp:HOST:PORT` for a local socket,
/// anything else is a command line whose stdin/stdout carry the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Command(Vec<String>),
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.is_empty() {
                return Err("empty tcp address".into());
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let cmd = s.strip_prefix("cmd:").unwrap_or(s);
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err("empty scorer command".into());
        }
        Ok(Endpoint::Command(argv))
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    child: Option<Child>,
}

impl Connection {
    fn recv(&self, deadline: Instant, timeout: Duration) -> Result<String, ScorerError> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(ScorerError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(ScorerError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ScorerError::Unavailable(
                "scorer closed the connection".into(),
            )),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Forwards batches to a scorer process or socket.
pub struct ExternalScorer {
    conn: Mutex<Connection>,
    handshake: Handshake,
    timeout: Duration,
    endpoint: String,
}

fn spawn_line_reader<R: std::io::Read + Send + 'static>(r: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let reader = BufReader::new(r);
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl ExternalScorer {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ScorerError> {
        let (writer, lines, child, label): (Box<dyn Write + Send>, _, _, _) = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| ScorerError::Unavailable(format!("{addr}: {e}")))?;
                let read_half = stream.try_clone()?;
                (
                    Box::new(stream),
                    spawn_line_reader(read_half),
                    None,
                    format!("tcp:{addr}"),
                )
            }
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| ScorerError::Unavailable(format!("{}: {e}", argv.join(" "))))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (
                    Box::new(stdin),
                    spawn_line_reader(stdout),
                    Some(child),
                    argv.join(" "),
                )
            }
        };
        let conn = Connection {
            writer,
            lines,
            next_id: 0,
            child,
        };
        let line = conn.recv(Instant::now() + timeout, timeout)?;
        let handshake: Handshake = serde_json::from_str(&line)
            .map_err(|e| ScorerError::ProtocolViolation(format!("bad handshake {line:?}: {e}")))?;
        if handshake.max_batch == 0 {
            return Err(ScorerError::ProtocolViolation("handshake max_batch is 0".into()));
        }
        Ok(ExternalScorer {
            conn: Mutex::new(conn),
            handshake,
            timeout,
            endpoint: label,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn score_chunk(&self, conn: &mut Connection, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        let first = conn.next_id;
        conn.next_id += pairs.len() as u64;
        for (i, (q, p)) in pairs.iter().enumerate() {
            let req = ScoreRequest {
                id: first + i as u64,
                q: q.to_string(),
                p: p.to_string(),
            };
            serde_json::to_writer(&mut conn.writer, &req).map_err(std::io::Error::from)?;
            conn.writer.write_all(b"\n")?;
        }
        conn.writer.flush()?;

        let deadline = Instant::now() + self.timeout;
        let mut pending: HashMap<u64, usize> = (0..pairs.len()).map(|i| (first + i as u64, i)).collect();
        let mut scores = vec![f64::NAN; pairs.len()];
        while !pending.is_empty() {
            let line = conn.recv(deadline, self.timeout)?;
            let resp: ScoreResponse = serde_json::from_str(&line)
                .map_err(|e| ScorerError::ProtocolViolation(format!("bad response {line:?}: {e}")))?;
            if let Some(err) = resp.error {
                return Err(ScorerError::ProtocolViolation(format!(
                    "scorer rejected request {:?}: {err}",
                    resp.id
                )));
            }
            let id = resp
                .id
                .ok_or_else(|| ScorerError::ProtocolViolation(format!("response without id: {line}")))?;
            let slot = pending
                .remove(&id)
                .ok_or_else(|| ScorerError::ProtocolViolation(format!("unexpected response id {id}")))?;
            let s = resp
                .s
                .ok_or_else(|| ScorerError::ProtocolViolation(format!("response {id} has no score")))?;
            if !(0.0..=1.0).contains(&s) {
                return Err(ScorerError::ProtocolViolation(format!(
                    "score {s} for request {id} outside [0, 1]"
                )));
            }
            scores[slot] = s;
        }
        Ok(scores)
    }
}

impl Scorer for ExternalScorer {
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.handshake.max_batch) {
            out.extend(self.score_chunk(&mut conn, chunk)?);
        }
        Ok(out)
    }

    fn descriptor(&self) -> String {
        format!("external:{}({})", self.handshake.name, self.endpoint)
    }

    fn tokenizer_name(&self) -> Option<String> {
        self.handshake.tokenizer.clone()
    }
}

pub fn external_scorer(endpoint: &Endpoint) -> Result<ExternalScorer, ScorerError> {
    ExternalScorer::connect(endpoint, DEFAULT_TIMEOUT)
}

/// Serves `scorer` over the protocol until the input closes. Malformed
/// requests get an error line; the loop keeps going.
pub fn serve_protocol<R: BufRead, W: Write>(
    scorer: &dyn Scorer,
    max_batch: usize,
    input: R,
    mut output: W,
) -> std::io::Result<usize> {
    let hello = Handshake {
        name: scorer.descriptor(),
        max_batch: max_batch.max(1),
        tokenizer: scorer.tokenizer_name(),
    };
    writeln!(output, "{}", serde_json::to_string(&hello)?)?;
    output.flush()?;
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<ScoreRequest>(&line) {
            Ok(req) => match scorer.score_batch(&[(&req.q, &req.p)]) {
                Ok(s) if s.len() == 1 => {
                    served += 1;
                    ScoreResponse {
                        id: Some(req.id),
                        s: Some(s[0]),
                        error: None,
                    }
                }
                Ok(_) => ScoreResponse {
                    id: Some(req.id),
                    s: None,
                    error: Some("scorer returned wrong number of scores".into()),
                },
                Err(e) => ScoreResponse {
                    id: Some(req.id),
                    s: None,
                    error: Some(e.to_string()),
                },
            },
            Err(e) => ScoreResponse {
                id: serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64())),
                s: None,
                error: Some(format!("malformed request: {e}")),
            },
        };
        writeln!(output, "{}", serde_json::to_string(&resp)?)?;
        output.flush()?;
    }
    Ok(served)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rerank::scorer::{lexical_overlap_scorer, ConstantScorer};
    use std::net::TcpListener;

    /// Serves canned response lines for every request batch.
    fn fake_server(handshake: &'static str, respond: fn(&ScoreRequest) -> String) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut w = stream.try_clone().unwrap();
            writeln!(w, "{handshake}").unwrap();
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                let req: ScoreRequest = serde_json::from_str(&line).unwrap();
                let out = respond(&req);
                if !out.is_empty() {
                    writeln!(w, "{out}").unwrap();
                }
            }
        });
        addr
    }

    fn connect(addr: String) -> ExternalScorer {
        ExternalScorer::connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).unwrap()
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!("tcp:127.0.0.1:9".parse(), Ok(Endpoint::Tcp("127.0.0.1:9".into())));
        assert_eq!(
            "cmd:python3 serve.py --x".parse(),
            Ok(Endpoint::Command(vec!["python3".into(), "serve.py".into(), "--x".into()]))
        );
        assert!("".parse::<Endpoint>().is_err());
        assert!("tcp:".parse::<Endpoint>().is_err());
    }

    #[test]
    fn echo_half() {
        let addr = fake_server(r#"{"name":"echo","max_batch":2}"#, |r| {
            format!(r#"{{"id":{},"s":0.5}}"#, r.id)
        });
        let s = connect(addr);
        assert_eq!(s.handshake().max_batch, 2);
        let pairs = [("q", "a"), ("q", "b"), ("q", "c")];
        assert_eq!(s.score_batch(&pairs).unwrap(), [0.5, 0.5, 0.5]);
        // ids keep increasing across calls
        assert_eq!(s.score_batch(&pairs[..1]).unwrap(), [0.5]);
    }

    #[test]
    fn out_of_order_responses_are_paired_by_id() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut w = stream.try_clone().unwrap();
            writeln!(w, r#"{{"name":"rev","max_batch":3}}"#).unwrap();
            let mut lines = BufReader::new(stream).lines();
            let reqs: Vec<ScoreRequest> = (0..3)
                .map(|_| serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap())
                .collect();
            for r in reqs.iter().rev() {
                let s = r.p.len() as f64 / 10.0;
                writeln!(w, r#"{{"id":{},"s":{s}}}"#, r.id).unwrap();
            }
        });
        let s = connect(addr);
        assert_eq!(s.score_batch(&[("q", "a"), ("q", "bb"), ("q", "ccc")]).unwrap(), [0.1, 0.2, 0.3]);
    }

    #[test]
    fn out_of_range_is_a_violation() {
        let addr = fake_server(r#"{"name":"bad","max_batch":8}"#, |r| {
            format!(r#"{{"id":{},"s":1.5}}"#, r.id)
        });
        let err = connect(addr).score_batch(&[("q", "p")]).unwrap_err();
        assert!(matches!(err, ScorerError::ProtocolViolation(_)), "{err:?}");
    }

    #[test]
    fn unknown_id_is_a_violation() {
        let addr = fake_server(r#"{"name":"bad","max_batch":8}"#, |r| {
            format!(r#"{{"id":{},"s":0.1}}"#, r.id + 100)
        });
        let err = connect(addr).score_batch(&[("q", "p")]).unwrap_err();
        assert!(matches!(err, ScorerError::ProtocolViolation(_)));
    }

    #[test]
    fn silence_times_out() {
        let addr = fake_server(r#"{"name":"mute","max_batch":8}"#, |_| String::new());
        let s = ExternalScorer::connect(&Endpoint::Tcp(addr), Duration::from_millis(200)).unwrap();
        assert!(matches!(s.score_batch(&[("q", "p")]), Err(ScorerError::Timeout(_))));
    }

    #[test]
    fn bad_handshake() {
        let addr = fake_server("hello", |_| String::new());
        let err = ExternalScorer::connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).err().unwrap();
        assert!(matches!(err, ScorerError::ProtocolViolation(_)));
    }

    #[test]
    fn missing_command_is_unavailable() {
        let ep = Endpoint::Command(vec!["/nonexistent/scorer-binary".into()]);
        assert!(matches!(
            ExternalScorer::connect(&ep, Duration::from_secs(1)),
            Err(ScorerError::Unavailable(_))
        ));
    }

    #[test]
    fn server_answers_and_survives_bad_lines() {
        let input = "{\"id\":1,\"q\":\"fix parser\",\"p\":\"parser\"}\nnot json\n{\"id\":7}\n{\"id\":2,\"q\":\"a\",\"p\":\"a\"}\n";
        let mut out = Vec::new();
        let served = serve_protocol(&lexical_overlap_scorer(), 16, input.as_bytes(), &mut out).unwrap();
        assert_eq!(served, 2);
        let lines: Vec<serde_json::Value> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines[0]["max_batch"], 16);
        assert_eq!(lines[0]["tokenizer"], "code_aware_default");
        assert_eq!(lines[1]["id"], 1);
        assert_eq!(lines[1]["s"], 0.5);
        assert!(lines[2]["error"].is_string());
        assert_eq!(lines[3]["id"], 7);
        assert!(lines[3]["error"].is_string());
        assert_eq!(lines[4]["s"], 1.0);
    }

    #[test]
    fn round_trip_through_served_scorer() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let w = stream.try_clone().unwrap();
            serve_protocol(&ConstantScorer(0.75), 4, BufReader::new(stream), w).unwrap();
        });
        let s = connect(addr);
        let pairs: Vec<(&str, &str)> = (0..10).map(|_| ("q", "p")).collect();
        assert_eq!(s.score_batch(&pairs).unwrap(), vec![0.75; 10]);
        assert!(s.descriptor().starts_with("external:constant(0.75)"));
    }
}
