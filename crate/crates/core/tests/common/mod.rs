#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

/// One scripted reply; `delay` is slept before answering.
#[derive(Clone, Debug)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(text: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 3, "total_tokens": 13}
        });
        Self { status: 200, body: body.to_string(), delay: Duration::ZERO }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: format!("{{\"error\": {{\"message\": \"status {status}\"}}}}"),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Seen {
    pub at: Instant,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Minimal HTTP/1.1 server speaking just enough of the chat-completions API.
/// Replies come from `script` in order; once it runs out, `fallback` repeats.
pub struct FakeServer {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl FakeServer {
    pub fn start(script: Vec<Reply>, fallback: Reply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let queue = Arc::new(Mutex::new(std::collections::VecDeque::from(script)));
        let seen2 = Arc::clone(&seen);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let seen = Arc::clone(&seen2);
                let queue = Arc::clone(&queue);
                let fallback = fallback.clone();
                thread::spawn(move || handle(stream, &seen, &queue, &fallback));
            }
        });
        Self { url, seen }
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn handle(
    stream: TcpStream,
    seen: &Mutex<Vec<Seen>>,
    queue: &Mutex<std::collections::VecDeque<Reply>>,
    fallback: &Reply,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let at = Instant::now();
        let mut len = 0usize;
        let mut auth = None;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap_or(0),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
        }
        let mut body = vec![0u8; len];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        seen.lock().unwrap().push(Seen {
            at,
            authorization: auth,
            body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
        });
        let reply = queue.lock().unwrap().pop_front().unwrap_or_else(|| fallback.clone());
        thread::sleep(reply.delay);
        let mut out = &stream;
        let resp = format!(
            "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
            reply.status,
            reply.body.len(),
            reply.body
        );
        if out.write_all(resp.as_bytes()).is_err() {
            return;
        }
    }
}

/// Largest number of instants inside any half-open window of `width`.
pub fn max_in_window(times: &[Instant], width: Duration) -> usize {
    let mut t: Vec<Instant> = times.to_vec();
    t.sort();
    let mut best = 0;
    let mut j = 0;
    for i in 0..t.len() {
        while t[i] - t[j] >= width {
            j += 1;
        }
        best = best.max(i - j + 1);
    }
    best
}

use groundkit::geometry::{point_in_bbox, BBox, Point};
use groundkit::pointing_game::{AttentionDump, DumpMeta};
use rand::Rng;

/// Random valid dump; values are multiples of 1/64 so ties happen.
pub fn random_dump(rng: &mut impl Rng, layers: usize) -> AttentionDump {
    let heads = rng.gen_range(1..=4);
    let grid_h = rng.gen_range(1..=8u32);
    let grid_w = rng.gen_range(1..=8u32);
    let itc = (grid_h * grid_w) as usize;
    let t_star = itc + rng.gen_range(0..20);
    let meta = DumpMeta {
        layers,
        heads,
        grid_h,
        grid_w,
        t_star,
        total_tokens: t_star + 1 + rng.gen_range(0..5),
        image_token_count: itc,
        image_w: rng.gen_range(grid_w.max(8)..=160),
        image_h: rng.gen_range(grid_h.max(8)..=160),
        dtype: "f32le".into(),
        model_id: "synthetic".into(),
    };
    let data = (0..layers).map(|_| random_layer(rng, heads, itc)).collect();
    AttentionDump::new(meta, data).unwrap()
}

pub fn random_layer(rng: &mut impl Rng, heads: usize, itc: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(heads * itc);
    for _ in 0..heads {
        let raw: Vec<u32> = (0..itc).map(|_| rng.gen_range(0..8)).collect();
        let total: u32 = raw.iter().sum::<u32>().max(1);
        // row mass at most one, quantized
        let denom = (total as f32 / 48.0).ceil().max(1.0) * 64.0;
        out.extend(raw.iter().map(|&r| r as f32 / denom));
    }
    out
}

/// Single-loop reference: per layer, scan every image pixel, look up its
/// grid cell by nearest sampling, average heads there, keep the first maximum.
pub fn brute_force_pointing(dump: &AttentionDump, gt: &BBox) -> (bool, Vec<Point>) {
    let m = dump.meta();
    let mut points = Vec::new();
    let mut any = false;
    for l in 0..m.layers {
        let mut best = f64::NEG_INFINITY;
        let mut at = Point::new(0.0, 0.0);
        for y in 0..m.image_h {
            for x in 0..m.image_w {
                let gy = (y as u64 * m.grid_h as u64 / m.image_h as u64) as usize;
                let gx = (x as u64 * m.grid_w as u64 / m.image_w as u64) as usize;
                let idx = gy * m.grid_w as usize + gx;
                let mut s = 0.0f64;
                for h in 0..m.heads {
                    s += f64::from(dump.head_row(l, h)[idx]);
                }
                let v = s / m.heads as f64;
                if v > best {
                    best = v;
                    at = Point::new(x as f64, y as f64);
                }
            }
        }
        any |= point_in_bbox(at, gt);
        points.push(at);
    }
    (any, points)
}
