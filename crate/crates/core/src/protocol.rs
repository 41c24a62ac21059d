//! Newline-delimited JSON protocol between the toolkit and a token source
//! running in another process.
//!
//! Requests carry a `cmd` field:
//!
//! ```text
//! {"cmd":"handshake"}
//! {"cmd":"tokenize","word":"apple","variant":"space"}     variant optional
//! {"cmd":"dist","context":[464,3290]}
//! {"cmd":"detokenize","ids":[464,3290]}
//! {"cmd":"generate","config":{"top_p":0.95,"temperature":1.0,
//!     "restriction_path":null,"max_tokens":512,"seed":1,"n_words":1000}}
//! {"cmd":"shutdown"}
//! ```
//!
//! Every response is one line, either `{"ok":{...}}` or
//! `{"err":{"code":"...","message":"..."}}`. Distributions travel sparsely
//! as natural-log probabilities plus the residual mass left out.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::sampling::{generate_corpus, Distribution, SamplerConfig};
use crate::source::TokenSource;
use crate::tokenizer::{Spacing, SubwordTokenizer, TokenId};
use crate::vocab::RestrictedTokenSet;

pub const PROTOCOL_VERSION: u32 = 1;

/// Served distributions keep the most probable tokens up to this mass.
pub const SERVED_MASS: f64 = 1.0 - 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Handshake,
    Tokenize {
        word: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variant: Option<Variant>,
    },
    Dist {
        context: Vec<TokenId>,
    },
    Detokenize {
        ids: Vec<TokenId>,
    },
    Generate {
        config: GenerateConfig,
    },
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Space,
}

impl From<Spacing> for Variant {
    fn from(s: Spacing) -> Self {
        match s {
            Spacing::Plain => Variant::Plain,
            Spacing::Space => Variant::Space,
        }
    }
}

impl From<Variant> for Spacing {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Plain => Spacing::Plain,
            Variant::Space => Spacing::Space,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub top_p: f64,
    pub temperature: f64,
    #[serde(default)]
    pub restriction_path: Option<PathBuf>,
    pub max_tokens: usize,
    pub seed: u64,
    pub n_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    pub model: String,
    pub eot: TokenId,
    pub max_context: usize,
    #[serde(default)]
    pub start_context: Vec<TokenId>,
    #[serde(default)]
    pub single_client: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDistribution {
    pub ids: Vec<TokenId>,
    /// Natural-log probabilities, aligned with `ids`.
    pub logprobs: Vec<f64>,
    pub residual: f64,
}

impl WireDistribution {
    /// Most probable tokens (ties by id) until `mass` is covered.
    pub fn from_distribution(d: &Distribution, mass: f64) -> Self {
        let mut v: Vec<(TokenId, f64)> = d.iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut acc = 0.0;
        let mut keep = v.len();
        for (i, &(_, p)) in v.iter().enumerate() {
            acc += p;
            if acc >= mass {
                keep = i + 1;
                break;
            }
        }
        v.truncate(keep);
        v.sort_by_key(|&(id, _)| id);
        let kept: f64 = v.iter().map(|&(_, p)| p).sum();
        WireDistribution {
            ids: v.iter().map(|&(id, _)| id).collect(),
            logprobs: v.iter().map(|&(_, p)| p.ln()).collect(),
            residual: (1.0 - kept).max(0.0),
        }
    }

    /// Checks the total against 1 within `1e-4` and renormalizes the
    /// listed support.
    pub fn into_distribution(self) -> Result<Distribution> {
        if self.ids.len() != self.logprobs.len() {
            return Err(Error::Protocol("ids and logprobs differ in length".into()));
        }
        let listed: f64 = self.logprobs.iter().map(|l| l.exp()).sum();
        if (listed + self.residual - 1.0).abs() > 1e-4 {
            return Err(Error::Protocol(format!(
                "distribution mass {listed} + residual {} is not 1",
                self.residual
            )));
        }
        Distribution::normalized(self.ids.into_iter().zip(self.logprobs.into_iter().map(f64::exp)))
    }
}

fn ok(v: Value) -> Value {
    json!({ "ok": v })
}

fn err(code: &str, message: impl std::fmt::Display) -> Value {
    json!({ "err": { "code": code, "message": message.to_string() } })
}

/// Answers one request line. Returns the response and whether the session
/// should end.
pub fn handle_line(src: &dyn TokenSource, line: &str) -> (Value, bool) {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return (err("bad_request", e), false),
    };
    let tok = src.tokenizer();
    let resp = match req {
        Request::Handshake => ok(json!(Handshake {
            protocol: PROTOCOL_VERSION,
            model: src.id(),
            eot: tok.eot(),
            max_context: src.max_context(),
            start_context: src.start_context(),
            single_client: !src.concurrent(),
        })),
        Request::Tokenize { word, variant } => {
            let run = |s: Spacing| tok.tokenize(&word, s);
            match variant {
                Some(v) => match run(v.into()) {
                    Ok(ids) => ok(json!({ "ids": ids })),
                    Err(e) => err("tokenize", e),
                },
                None => match (run(Spacing::Plain), run(Spacing::Space)) {
                    (Ok(p), Ok(s)) => ok(json!({ "plain": p, "space": s })),
                    (Err(e), _) | (_, Err(e)) => err("tokenize", e),
                },
            }
        }
        Request::Dist { context } => match src.next_distribution(&context) {
            Ok(d) => ok(json!(WireDistribution::from_distribution(&d, SERVED_MASS))),
            Err(e) => err("source", e),
        },
        Request::Detokenize { ids } => match tok.detokenize(&ids) {
            Ok(words) => ok(json!({ "words": words })),
            Err(e) => err("detokenize", e),
        },
        Request::Generate { config } => match serve_generate(src, &config) {
            Ok(v) => ok(v),
            Err(e) => err("generate", e),
        },
        Request::Shutdown => return (ok(json!({})), true),
    };
    (resp, false)
}

fn serve_generate(src: &dyn TokenSource, c: &GenerateConfig) -> Result<Value> {
    let restriction = match &c.restriction_path {
        Some(p) => Some(Arc::new(RestrictedTokenSet::read(p)?)),
        None => None,
    };
    let cfg = SamplerConfig {
        top_p: c.top_p,
        temperature: c.temperature,
        restriction,
        max_tokens: c.max_tokens,
        seed: c.seed,
        target_multiplier: 1.0,
        shards: 1,
    };
    let g = generate_corpus(src, &cfg, c.n_words)?;
    Ok(json!({
        "sentences": g.corpus.sentences(),
        "tokens": g.meta.tokens,
        "truncated": g.meta.truncated,
    }))
}

/// Serves `src` until `shutdown` or end of input. Malformed requests get an
/// error response and the session continues.
pub fn serve(src: &dyn TokenSource, input: impl BufRead, mut output: impl Write) -> Result<usize> {
    let mut handled = 0;
    for line in input.lines() {
        let line = line.map_err(|e| Error::Protocol(format!("read: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, done) = handle_line(src, &line);
        handled += 1;
        writeln!(output, "{resp}")
            .and_then(|_| output.flush())
            .map_err(|e| Error::Protocol(format!("write: {e}")))?;
        if done {
            break;
        }
    }
    Ok(handled)
}

struct Conn {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// A [`TokenSource`] living behind the protocol. Requests are serialized
/// over one connection.
pub struct AdapterClient {
    conn: Mutex<Conn>,
    info: Handshake,
    child: Option<Mutex<Child>>,
}

impl AdapterClient {
    pub fn connect(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Result<Self> {
        let mut client = AdapterClient {
            conn: Mutex::new(Conn {
                reader: Box::new(reader),
                writer: Box::new(writer),
            }),
            info: Handshake {
                protocol: 0,
                model: String::new(),
                eot: 0,
                max_context: 0,
                start_context: Vec::new(),
                single_client: true,
            },
            child: None,
        };
        let v = client.request(&Request::Handshake)?;
        client.info = serde_json::from_value(v).map_err(|e| Error::Protocol(format!("handshake: {e}")))?;
        if client.info.protocol != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "peer speaks protocol {}, expected {PROTOCOL_VERSION}",
                client.info.protocol
            )));
        }
        Ok(client)
    }

    /// Starts `program` and talks to it over its stdin and stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::connect(BufReader::new(stdout), stdin)?;
        client.child = Some(Mutex::new(child));
        Ok(client)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.info
    }

    pub fn request(&self, req: &Request) -> Result<Value> {
        let mut conn = self.conn.lock().expect("connection lock");
        let line = serde_json::to_string(req).expect("requests serialize");
        writeln!(conn.writer, "{line}")
            .and_then(|_| conn.writer.flush())
            .map_err(|e| Error::Protocol(format!("write: {e}")))?;
        let mut resp = String::new();
        let n = conn
            .reader
            .read_line(&mut resp)
            .map_err(|e| Error::Protocol(format!("read: {e}")))?;
        if n == 0 {
            return Err(Error::Protocol("peer closed the connection".into()));
        }
        parse_response(&resp)
    }

    /// Adapter-side bulk generation.
    pub fn generate(&self, config: GenerateConfig) -> Result<Vec<Vec<String>>> {
        let v = self.request(&Request::Generate { config })?;
        serde_json::from_value(v["sentences"].clone()).map_err(|e| Error::Protocol(format!("generate: {e}")))
    }

    /// Sends `shutdown` and waits for a spawned peer to exit.
    pub fn shutdown(&self) -> Result<()> {
        self.request(&Request::Shutdown)?;
        if let Some(child) = &self.child {
            child
                .lock()
                .expect("child lock")
                .wait()
                .map_err(|e| Error::Protocol(format!("wait: {e}")))?;
        }
        Ok(())
    }
}

impl Drop for AdapterClient {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut c = child.lock().expect("child lock");
            if matches!(c.try_wait(), Ok(None)) {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

pub fn parse_response(line: &str) -> Result<Value> {
    let mut v: Value =
        serde_json::from_str(line.trim()).map_err(|e| Error::Protocol(format!("bad response {line:?}: {e}")))?;
    if let Some(ok) = v.get_mut("ok") {
        return Ok(ok.take());
    }
    if let Some(e) = v.get("err") {
        return Err(Error::Adapter {
            code: e["code"].as_str().unwrap_or("unknown").into(),
            message: e["message"].as_str().unwrap_or("").into(),
        });
    }
    Err(Error::Protocol(format!("response has neither ok nor err: {line:?}")))
}

impl SubwordTokenizer for AdapterClient {
    fn tokenize(&self, word: &str, spacing: Spacing) -> Result<Vec<TokenId>> {
        let v = self.request(&Request::Tokenize {
            word: word.into(),
            variant: Some(spacing.into()),
        })?;
        serde_json::from_value(v["ids"].clone()).map_err(|e| Error::Protocol(format!("tokenize: {e}")))
    }

    fn eot(&self) -> TokenId {
        self.info.eot
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        let v = self.request(&Request::Detokenize { ids: ids.to_vec() })?;
        serde_json::from_value(v["words"].clone()).map_err(|e| Error::Protocol(format!("detokenize: {e}")))
    }
}

impl TokenSource for AdapterClient {
    fn id(&self) -> String {
        format!("adapter:{}", self.info.model)
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        self
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Arc<Distribution>> {
        let v = self.request(&Request::Dist {
            context: context.to_vec(),
        })?;
        let wire: WireDistribution =
            serde_json::from_value(v).map_err(|e| Error::Protocol(format!("dist: {e}")))?;
        Ok(Arc::new(wire.into_distribution()?))
    }

    fn start_context(&self) -> Vec<TokenId> {
        self.info.start_context.clone()
    }

    fn max_context(&self) -> usize {
        self.info.max_context
    }

    fn concurrent(&self) -> bool {
        !self.info.single_client
    }
}
