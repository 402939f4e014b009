//! Client side of the line-delimited JSON predictor protocol.
//!
//! Each forward pass sends one request line, `{"id", "tokens", "prompt_len",
//! "topk"}` with masked slots as `null`, and waits for the response line with
//! the same id: `{"id", "entries": [...]}` or `{"id", "error"}`. Entry
//! positions index the request's `tokens` array. Blank lines, lines that are
//! not valid responses, and responses for other ids (including error echoes
//! with a null id) are skipped.

use std::cell::{Cell, RefCell};
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use dico_core::prediction::DEFAULT_TOPK;
use dico_core::{Error, MaskPredictor, PositionPrediction, PredictionGrid, SequenceState, TokenId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: u64,
    pub tokens: Vec<Option<TokenId>>,
    pub prompt_len: usize,
    pub topk: usize,
}

impl PredictRequest {
    pub fn from_state(id: u64, state: &SequenceState, topk: usize) -> Self {
        let mut tokens: Vec<Option<TokenId>> = state.prompt().iter().map(|&t| Some(t)).collect();
        tokens.extend_from_slice(state.response());
        PredictRequest {
            id,
            tokens,
            prompt_len: state.prompt().len(),
            topk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub position: usize,
    pub argmax_token: TokenId,
    pub top1_prob: f64,
    pub top1_logit: f64,
    pub top2_logit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<Vec<(TokenId, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<WireEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictResponse {
    pub fn success(id: u64, entries: Vec<WireEntry>) -> Self {
        PredictResponse { id: Some(id), entries: Some(entries), error: None }
    }

    pub fn failure(id: Option<u64>, message: impl Into<String>) -> Self {
        PredictResponse { id, entries: None, error: Some(message.into()) }
    }
}

/// Converts wire entries to a response-relative grid.
pub fn entries_to_grid(entries: Vec<WireEntry>, prompt_len: usize) -> dico_core::Result<PredictionGrid> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let position = e.position.checked_sub(prompt_len).ok_or_else(|| {
            Error::Predictor(format!("entry for prompt position {}", e.position))
        })?;
        out.push(PositionPrediction {
            position,
            argmax_token: e.argmax_token,
            top1_prob: e.top1_prob,
            top1_logit: e.top1_logit,
            top2_logit: e.top2_logit,
            topk: e.topk,
        });
    }
    PredictionGrid::new(out)
}

/// Wire entries for a response-relative grid; the server-side inverse of
/// [`entries_to_grid`].
pub fn grid_to_entries(grid: &PredictionGrid, prompt_len: usize) -> Vec<WireEntry> {
    grid.iter()
        .map(|e| WireEntry {
            position: e.position + prompt_len,
            argmax_token: e.argmax_token,
            top1_prob: e.top1_prob,
            top1_logit: e.top1_logit,
            top2_logit: e.top2_logit,
            topk: e.topk.clone(),
        })
        .collect()
}

struct Channel<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
}

/// A [`MaskPredictor`] answering over a pair of byte streams.
pub struct BridgeClient<R, W> {
    channel: RefCell<Channel<R, W>>,
    topk: usize,
    skipped: Cell<usize>,
}

impl<R: BufRead, W: Write> BridgeClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        BridgeClient {
            channel: RefCell::new(Channel { reader, writer, next_id: 1 }),
            topk: DEFAULT_TOPK,
            skipped: Cell::new(0),
        }
    }

    pub fn with_topk(mut self, topk: usize) -> Self {
        self.topk = topk;
        self
    }

    /// Lines ignored so far.
    pub fn skipped_lines(&self) -> usize {
        self.skipped.get()
    }

    fn exchange(&self, state: &SequenceState) -> dico_core::Result<PredictionGrid> {
        let mut ch = self.channel.borrow_mut();
        let id = ch.next_id;
        ch.next_id += 1;
        let request = PredictRequest::from_state(id, state, self.topk);
        let io_err = |e: io::Error| Error::Predictor(format!("bridge i/o: {e}"));
        let mut line = serde_json::to_string(&request)
            .map_err(|e| Error::Predictor(format!("encoding request: {e}")))?;
        line.push('\n');
        ch.writer.write_all(line.as_bytes()).map_err(io_err)?;
        ch.writer.flush().map_err(io_err)?;

        let mut buf = String::new();
        loop {
            buf.clear();
            if ch.reader.read_line(&mut buf).map_err(io_err)? == 0 {
                return Err(Error::Predictor(format!("server closed the stream before answering request {id}")));
            }
            if buf.trim().is_empty() {
                continue;
            }
            let response: PredictResponse = match serde_json::from_str(buf.trim()) {
                Ok(r) => r,
                Err(_) => {
                    self.skipped.set(self.skipped.get() + 1);
                    continue;
                }
            };
            if response.id != Some(id) {
                self.skipped.set(self.skipped.get() + 1);
                continue;
            }
            if let Some(message) = response.error {
                return Err(Error::Predictor(format!("server error on request {id}: {message}")));
            }
            let entries = response
                .entries
                .ok_or_else(|| Error::Predictor(format!("response {id} has neither entries nor error")))?;
            return entries_to_grid(entries, request.prompt_len);
        }
    }
}

impl<R: BufRead, W: Write> MaskPredictor for BridgeClient<R, W> {
    fn predict(&self, state: &SequenceState) -> dico_core::Result<PredictionGrid> {
        self.exchange(state)
    }
}

/// A model server run as a child process (`sh -c <command>`) on piped
/// stdin/stdout. Dropping it closes stdin and reaps the child.
pub struct ServerProcess {
    client: Option<BridgeClient<BufReader<ChildStdout>, ChildStdin>>,
    child: Child,
}

impl ServerProcess {
    pub fn spawn(command: &str) -> io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(ServerProcess {
            client: Some(BridgeClient::new(BufReader::new(stdout), stdin)),
            child,
        })
    }

    pub fn client(&self) -> &BridgeClient<BufReader<ChildStdout>, ChildStdin> {
        self.client.as_ref().expect("client present until drop")
    }
}

impl MaskPredictor for ServerProcess {
    fn predict(&self, state: &SequenceState) -> dico_core::Result<PredictionGrid> {
        self.client().predict(state)
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        drop(self.client.take());
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// Rebuilds the state a request describes.
pub fn request_state(request: &PredictRequest) -> dico_core::Result<SequenceState> {
    if request.prompt_len > request.tokens.len() {
        return Err(Error::InvalidArgument("prompt_len exceeds the token count".into()));
    }
    let (prompt, response) = request.tokens.split_at(request.prompt_len);
    let prompt = prompt
        .iter()
        .map(|t| t.ok_or_else(|| Error::InvalidArgument("masked prompt token".into())))
        .collect::<dico_core::Result<Vec<TokenId>>>()?;
    let mut state = SequenceState::new(prompt, response.len())?;
    for (p, t) in response.iter().enumerate() {
        if let Some(t) = t {
            state.assign(p, *t)?;
        }
    }
    Ok(state)
}

/// Server-side handling of one request line.
pub fn answer<P: MaskPredictor + ?Sized>(line: &str, predictor: &P) -> PredictResponse {
    let request: PredictRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return PredictResponse::failure(None, format!("bad request: {e}")),
    };
    match request_state(&request).and_then(|s| predictor.predict(&s)) {
        Ok(grid) => PredictResponse::success(request.id, grid_to_entries(&grid, request.prompt_len)),
        Err(e) => PredictResponse::failure(Some(request.id), e.to_string()),
    }
}

/// Answers requests line by line until `input` ends; returns the number of
/// requests seen.
pub fn serve<R: BufRead, W: Write, P: MaskPredictor + ?Sized>(
    input: R,
    mut output: W,
    predictor: &P,
) -> io::Result<usize> {
    let mut count = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        count += 1;
        let response = answer(line.trim(), predictor);
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(count)
}
