//! External agent adapters speaking newline-delimited JSON.
//!
//! Each step sends one `observe` message and waits for one `act` reply:
//!
//! ```text
//! -> {"type":"observe","round":3,"feed":[{"stance":"favor","is_ai":false,"style":"neutral"}]}
//! <- {"type":"act","stance":"against","text":"..."}
//! ```
//!
//! Transports are a child process (stdin/stdout) or a TCP socket.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::AdapterError;
use crate::post::Post;
use crate::stance::{Stance, StyleTag};

pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterRole {
    #[default]
    Ai,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedItem {
    pub stance: Stance,
    pub is_ai: bool,
    pub style: StyleTag,
}

impl From<&Post> for FeedItem {
    fn from(p: &Post) -> Self {
        Self {
            stance: p.stance,
            is_ai: p.is_ai,
            style: p.style,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "observe")]
pub struct ObserveRequest {
    pub round: u32,
    pub feed: Vec<FeedItem>,
}

/// A reply as it arrives on the wire, before the stance token is checked.
#[derive(Debug, Clone, Deserialize)]
struct RawReply {
    #[serde(rename = "type")]
    kind: String,
    stance: String,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "act")]
pub struct ActReply {
    pub stance: Stance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Parses and checks one reply line.
pub fn parse_reply(line: &str, round: u32) -> Result<ActReply, AdapterError> {
    let protocol = |message: String| AdapterError::Protocol { round, message };
    let raw: RawReply =
        serde_json::from_str(line.trim()).map_err(|e| protocol(format!("malformed reply: {e}")))?;
    if raw.kind != "act" {
        return Err(protocol(format!("expected type \"act\", got {:?}", raw.kind)));
    }
    let stance = raw.stance.parse::<Stance>().map_err(|e| protocol(e.to_string()))?;
    Ok(ActReply {
        stance,
        text: raw.text,
    })
}

/// One request/reply exchange with an external agent. At most one request is
/// outstanding at a time.
pub trait AgentAdapter {
    fn role(&self) -> AdapterRole;
    fn exchange(&mut self, request: &ObserveRequest) -> Result<ActReply, AdapterError>;
}

/// Asks the adapter for one post.
pub fn external_agent_step(
    round: u32,
    feed: &[Post],
    author_id: &str,
    style: StyleTag,
    adapter: &mut dyn AgentAdapter,
) -> Result<Post, AdapterError> {
    let request = ObserveRequest {
        round,
        feed: feed.iter().map(FeedItem::from).collect(),
    };
    let reply = adapter.exchange(&request)?;
    let is_ai = adapter.role() == AdapterRole::Ai;
    Ok(Post {
        author_id: author_id.to_string(),
        round,
        stance: reply.stance,
        is_ai,
        style: if is_ai { style } else { StyleTag::Neutral },
        text: reply.text,
    })
}

/// Newline-delimited JSON adapter over any byte transport.
pub struct NdjsonAdapter {
    role: AdapterRole,
    deadline: Duration,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

fn spawn_line_reader<R: Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl NdjsonAdapter {
    pub fn from_streams<R, W>(reader: R, writer: W, role: AdapterRole, deadline: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self {
            role,
            deadline,
            writer: Box::new(writer),
            lines: spawn_line_reader(reader),
            child: None,
        }
    }

    /// Runs `command` through `sh -c` and talks to it over its stdin/stdout.
    pub fn spawn(command: &str, role: AdapterRole, deadline: Duration) -> std::io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut adapter = Self::from_streams(stdout, stdin, role, deadline);
        adapter.child = Some(child);
        Ok(adapter)
    }

    pub fn connect_tcp(addr: &str, role: AdapterRole, deadline: Duration) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Self::from_streams(reader, stream, role, deadline))
    }

    /// `tcp://host:port` connects a socket; anything else is run as a command.
    pub fn open(addr: &str, role: AdapterRole, deadline: Duration) -> std::io::Result<Self> {
        match addr.strip_prefix("tcp://") {
            Some(hostport) => Self::connect_tcp(hostport, role, deadline),
            None => Self::spawn(addr, role, deadline),
        }
    }
}

impl AgentAdapter for NdjsonAdapter {
    fn role(&self) -> AdapterRole {
        self.role
    }

    fn exchange(&mut self, request: &ObserveRequest) -> Result<ActReply, AdapterError> {
        let round = request.round;
        let mut line = serde_json::to_vec(request).expect("request serializes");
        line.push(b'\n');
        self.writer.write_all(&line)?;
        self.writer.flush()?;
        loop {
            return match self.lines.recv_timeout(self.deadline) {
                Ok(Ok(reply)) if reply.trim().is_empty() => continue,
                Ok(Ok(reply)) => parse_reply(&reply, round),
                Ok(Err(e)) => Err(AdapterError::Io(e)),
                Err(RecvTimeoutError::Timeout) => Err(AdapterError::Timeout {
                    round,
                    deadline_ms: self.deadline.as_millis(),
                }),
                Err(RecvTimeoutError::Disconnected) => Err(AdapterError::Protocol {
                    round,
                    message: "adapter closed its output stream".into(),
                }),
            };
        }
    }
}

impl Drop for NdjsonAdapter {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// In-process adapter replying from a fixed script, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct ScriptedAdapter {
    role: AdapterRole,
    replies: Vec<String>,
    next: usize,
    pub requests: Vec<ObserveRequest>,
}

impl ScriptedAdapter {
    pub fn new(role: AdapterRole, replies: Vec<String>) -> Self {
        Self {
            role,
            replies,
            next: 0,
            requests: Vec::new(),
        }
    }

    /// Always answers with the given stance.
    pub fn constant(stance: Stance) -> Self {
        Self::new(
            AdapterRole::Ai,
            vec![format!(r#"{{"type":"act","stance":"{}"}}"#, stance.token())],
        )
    }
}

impl AgentAdapter for ScriptedAdapter {
    fn role(&self) -> AdapterRole {
        self.role
    }

    fn exchange(&mut self, request: &ObserveRequest) -> Result<ActReply, AdapterError> {
        self.requests.push(request.clone());
        let Some(line) = self.replies.get(self.next % self.replies.len().max(1)) else {
            return Err(AdapterError::Protocol {
                round: request.round,
                message: "script is empty".into(),
            });
        };
        self.next += 1;
        parse_reply(line, request.round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed() -> Vec<Post> {
        vec![
            Post::human("u1", 2, Stance::Favor),
            Post::ai("ai-0", 2, Stance::Against, StyleTag::Condemnation),
        ]
    }

    #[test]
    fn observe_wire_format() {
        let req = ObserveRequest {
            round: 3,
            feed: feed().iter().map(FeedItem::from).collect(),
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"type":"observe","round":3,"feed":[{"stance":"favor","is_ai":false,"style":"neutral"},{"stance":"against","is_ai":true,"style":"condemnation"}]}"#
        );
    }

    #[test]
    fn scripted_echo() {
        let mut a = ScriptedAdapter::constant(Stance::Against);
        let post = external_agent_step(3, &feed(), "ai-1", StyleTag::Compassionate, &mut a).unwrap();
        assert_eq!(post.stance, Stance::Against);
        assert!(post.is_ai);
        assert_eq!(post.style, StyleTag::Compassionate);
        assert_eq!(post.author_id, "ai-1");
        assert_eq!(a.requests[0].feed.len(), 2);
    }

    #[test]
    fn human_role_posts_are_neutral_and_not_ai() {
        let mut a = ScriptedAdapter::new(
            AdapterRole::Human,
            vec![r#"{"type":"act","stance":"ni","text":"hmm"}"#.into()],
        );
        let post = external_agent_step(1, &[], "x", StyleTag::Condemnation, &mut a).unwrap();
        assert!(!post.is_ai);
        assert_eq!(post.style, StyleTag::Neutral);
        assert_eq!(post.text.as_deref(), Some("hmm"));
    }

    #[test]
    fn unknown_token_is_protocol_error() {
        let mut a = ScriptedAdapter::new(
            AdapterRole::Ai,
            vec![r#"{"type":"act","stance":"maybe"}"#.into()],
        );
        let err = external_agent_step(4, &[], "ai-0", StyleTag::Neutral, &mut a).unwrap_err();
        assert!(matches!(err, AdapterError::Protocol { round: 4, .. }), "{err}");
    }

    #[test]
    fn wrong_type_and_garbage_are_protocol_errors() {
        assert!(parse_reply(r#"{"type":"observe","stance":"favor"}"#, 0).is_err());
        assert!(parse_reply("not json", 0).is_err());
        assert!(parse_reply(r#"{"type":"act"}"#, 0).is_err());
        assert_eq!(
            parse_reply(r#"{"type":"act","stance":"favor"}"#, 0).unwrap().stance,
            Stance::Favor
        );
    }

    #[test]
    fn subprocess_round_trip() {
        let cmd = r#"while read line; do echo '{"type":"act","stance":"against","text":"no"}'; done"#;
        let mut a = NdjsonAdapter::spawn(cmd, AdapterRole::Ai, Duration::from_secs(10)).unwrap();
        for round in 1..4 {
            let post = external_agent_step(round, &feed(), "ai-0", StyleTag::Neutral, &mut a).unwrap();
            assert_eq!(post.stance, Stance::Against);
            assert_eq!(post.round, round);
            assert_eq!(post.text.as_deref(), Some("no"));
        }
    }

    #[test]
    fn silent_subprocess_times_out() {
        let mut a =
            NdjsonAdapter::spawn("sleep 5", AdapterRole::Ai, Duration::from_millis(200)).unwrap();
        let err = external_agent_step(7, &[], "ai-0", StyleTag::Neutral, &mut a).unwrap_err();
        assert!(matches!(err, AdapterError::Timeout { round: 7, .. }), "{err}");
    }

    #[test]
    fn tcp_round_trip() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut writer = stream.try_clone().unwrap();
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let req: ObserveRequest = serde_json::from_str(&line).unwrap();
            assert_eq!(req.round, 5);
            writer.write_all(b"{\"type\":\"act\",\"stance\":\"ni\"}\n").unwrap();
        });
        let mut a = NdjsonAdapter::open(&format!("tcp://{addr}"), AdapterRole::Ai, DEFAULT_DEADLINE)
            .unwrap();
        let post = external_agent_step(5, &feed(), "ai-0", StyleTag::Neutral, &mut a).unwrap();
        assert_eq!(post.stance, Stance::NotInferrable);
        server.join().unwrap();
    }
}
