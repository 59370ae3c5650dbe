//! Bridge to an external worker process serving pretrained checkpoints.
//!
//! The worker reads one JSON request per line on stdin and answers with one
//! JSON object per line on stdout. Requests carry a `task` field:
//!
//! | task        | request fields          | response fields              |
//! |-------------|-------------------------|------------------------------|
//! | `nli`       | `premise`, `hypothesis` | `probs` (entail/neutral/contra) |
//! | `generate`  | `input`                 | `text`                       |
//! | `order`     | `facts`                 | `order`                      |
//! | `aggregate` | `facts`                 | `delimiters`                 |
//! | `coref`     | `sentences`             | `clusters`                   |
//!
//! A response with an `error` string fails the call.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::{EntailmentClassifier, TextGenerator};
use crate::aggregation::DelimiterPredictor;
use crate::corpus::{CorefResolver, Mention};
use crate::error::{Error, Result};
use crate::facts::{Delimiters, Fact};
use crate::ordering::FactOrderer;

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A long-lived worker process shared by all callers; requests are
/// serialised through a lock.
pub struct ProcessBackend {
    program: String,
    channel: Mutex<Channel>,
}

impl ProcessBackend {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ProcessBackend {
            program: program.to_string(),
            channel: Mutex::new(Channel { child, stdin, stdout }),
        })
    }

    /// Parses a whitespace-separated command line such as
    /// `python3 serve.py --device cpu`.
    pub fn from_command_line(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| Error::Config("empty backend command".into()))?;
        Self::spawn(&program, &parts.collect::<Vec<_>>())
    }

    pub fn request(&self, request: &Value) -> Result<Value> {
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| Error::Backend("worker lock poisoned".into()))?;
        let line = serde_json::to_string(request)? + "\n";
        ch.stdin
            .write_all(line.as_bytes())
            .and_then(|_| ch.stdin.flush())
            .map_err(|e| Error::Backend(format!("{}: write failed: {e}", self.program)))?;
        let mut reply = String::new();
        let n = ch
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Backend(format!("{}: read failed: {e}", self.program)))?;
        if n == 0 {
            return Err(Error::Backend(format!("{} closed its output", self.program)));
        }
        let value: Value =
            serde_json::from_str(&reply).map_err(|e| Error::Backend(format!("{}: malformed reply: {e}", self.program)))?;
        if let Some(err) = value.get("error").and_then(Value::as_str) {
            return Err(Error::Backend(format!("{}: {err}", self.program)));
        }
        Ok(value)
    }

    fn field<T: DeserializeOwned>(&self, reply: &Value, name: &str) -> Result<T> {
        let v = reply
            .get(name)
            .ok_or_else(|| Error::Backend(format!("{}: reply lacks {name:?}", self.program)))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Backend(format!("{}: field {name:?}: {e}", self.program)))
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

fn fact_texts(facts: &[Fact]) -> Vec<&str> {
    facts.iter().map(|f| f.text.as_str()).collect()
}

impl EntailmentClassifier for ProcessBackend {
    fn probabilities(&self, premise: &str, hypothesis: &str) -> Result<[f64; 3]> {
        let reply = self.request(&json!({"task": "nli", "premise": premise, "hypothesis": hypothesis}))?;
        self.field(&reply, "probs")
    }
}

impl TextGenerator for ProcessBackend {
    fn generate_text(&self, input: &str) -> Result<String> {
        let reply = self.request(&json!({"task": "generate", "input": input}))?;
        self.field(&reply, "text")
    }
}

impl FactOrderer for ProcessBackend {
    fn order(&self, facts: &[Fact]) -> Result<Vec<usize>> {
        let reply = self.request(&json!({"task": "order", "facts": fact_texts(facts)}))?;
        self.field(&reply, "order")
    }
}

impl DelimiterPredictor for ProcessBackend {
    fn predict(&self, ordered: &[Fact]) -> Result<Delimiters> {
        let reply = self.request(&json!({"task": "aggregate", "facts": fact_texts(ordered)}))?;
        Delimiters::new(self.field(&reply, "delimiters")?)
    }
}

impl CorefResolver for ProcessBackend {
    fn clusters(&self, sentences: &[String]) -> Result<Vec<Vec<Mention>>> {
        let reply = self.request(&json!({"task": "coref", "sentences": sentences}))?;
        self.field(&reply, "clusters")
    }
}
