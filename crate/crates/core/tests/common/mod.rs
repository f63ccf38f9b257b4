#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use vidpanel::benchmark::{AnswerOption, QAItem};
use vidpanel::harness::mock::{Handler, MockReply, MockServer};
use vidpanel::harness::{EndpointConfig, HttpBackend, ItemInputs, ItemRequest};
use vidpanel::{Grid, Result};

pub fn item(id: &str, gold: char, duration: f64) -> QAItem {
    QAItem {
        item_id: id.to_string(),
        video_uri: format!("videos/{id}.mp4"),
        question: format!("Which option is right for {id}?"),
        options: ["red", "green", "blue", "yellow"]
            .iter()
            .zip('A'..)
            .map(|(t, l)| AnswerOption { letter: l, text: format!("{t} {id}") })
            .collect(),
        gold,
        duration_seconds: duration,
        tags: Vec::new(),
    }
}

/// `n` items with golds cycling through A-D and durations spread over the VMME buckets.
pub fn items(n: usize) -> Vec<QAItem> {
    (0..n)
        .map(|i| {
            let gold = (b'A' + (i % 4) as u8) as char;
            let duration = [60.0, 600.0, 2400.0][i % 3];
            item(&format!("q{i:03}"), gold, duration)
        })
        .collect()
}

/// The same two placeholder images for every item, 2x2 grid.
pub struct FixedInputs;

impl ItemInputs for FixedInputs {
    fn grid_for(&self, _: &QAItem) -> Result<Grid> {
        Ok(Grid { rows: 2, cols: 2 })
    }

    fn inputs_for(&self, _: &QAItem) -> Result<ItemRequest> {
        Ok(ItemRequest { images: vec![b"png-0".to_vec(), b"png-1".to_vec()], grid: Grid { rows: 2, cols: 2 } })
    }
}

/// Answers by finding which item's question appears in the prompt.
pub fn answer_table(items: &[QAItem], answer: impl Fn(&QAItem) -> String) -> Handler {
    let table: HashMap<String, String> = items.iter().map(|i| (i.question.clone(), answer(i))).collect();
    Arc::new(move |req| {
        let hit = table.iter().find(|(q, _)| req.prompt.contains(q.as_str()));
        MockReply::ok(hit.map_or("?".to_string(), |(_, a)| a.clone()))
    })
}

/// Wraps a handler and counts requests.
pub fn counting(inner: Handler) -> (Handler, Arc<AtomicUsize>) {
    let n = Arc::new(AtomicUsize::new(0));
    let c = Arc::clone(&n);
    (
        Arc::new(move |req| {
            c.fetch_add(1, Ordering::SeqCst);
            inner(req)
        }),
        n,
    )
}

pub fn endpoint(server: &MockServer) -> EndpointConfig {
    EndpointConfig {
        base_url: server.base_url(),
        model_name: "mock".into(),
        max_retries: 2,
        backoff_initial_ms: 10,
        timeout_seconds: 10.0,
        ..EndpointConfig::default()
    }
}

pub fn backend(server: &MockServer) -> HttpBackend {
    HttpBackend::new(endpoint(server)).unwrap()
}
