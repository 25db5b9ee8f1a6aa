use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use vps_core::evidence::fetch::{extract_readable_text, HttpFetcher, StubFetcher};
use vps_core::evidence::search::{promote, SearchError, StubSearch};
use vps_core::evidence::{
    build_evidence_buffer, extract_keywords, fetch_content, load_buffer, retrieve_evidence, search,
    EvidenceError, RetrievalConfig, SearchResult, EVIDENCE_FILE, NO_SOURCES_NOTE,
};
use vps_core::model::{Case, CaseMetadata, FETCH_FAILED};
use vps_core::net::{NetworkPolicy, RetryPolicy};

const ID115: &str = "During the liberation of Krasny Liman, Russian soldiers found the nationalists\" commando post in the pioneer camp";

#[test]
fn id115_description_keywords() {
    let q = extract_keywords("", ID115).unwrap();
    // by hand: drop "during", "the", "of", "in"; the only multi-word capitalised
    // run not split by punctuation is "Krasny Liman"
    let want = [
        "liberation",
        "krasny",
        "liman",
        "russian",
        "soldiers",
        "found",
        "nationalists",
        "commando",
        "post",
        "pioneer",
        "camp",
    ];
    assert_eq!(q.keywords, want);
    assert_eq!(q.exact_phrase.as_deref(), Some("Krasny Liman"));
}

#[test]
fn stopword_only_input_has_no_keywords() {
    assert!(matches!(
        extract_keywords("", "a of the"),
        Err(EvidenceError::NoKeywords)
    ));
    assert!(matches!(
        extract_keywords("  ", ""),
        Err(EvidenceError::NoKeywords)
    ));
}

#[test]
fn duplicated_title_and_description() {
    let t = "Flooding in Porto Alegre after heavy rain";
    assert_eq!(
        extract_keywords(t, t).unwrap(),
        extract_keywords(t, "").unwrap()
    );
}

#[test]
fn title_words_come_first_and_keywords_are_capped() {
    let q = extract_keywords(
        "Bridge collapse",
        "one two three four five six seven eight nine ten eleven twelve thirteen",
    )
    .unwrap();
    assert_eq!(q.keywords.len(), 12);
    assert_eq!(&q.keywords[..2], ["bridge", "collapse"]);
}

fn result(i: usize, title: &str) -> SearchResult {
    SearchResult {
        link: format!("https://example.org/{i}"),
        title: title.into(),
        snippet: String::new(),
        date: None,
    }
}

#[test]
fn exact_matches_are_promoted() {
    let raw = vec![
        result(0, "Fighting near Lyman"),
        result(1, "Krasny Liman retaken"),
        result(2, "Donetsk front update"),
        result(3, "Battle for krasny liman"),
        result(4, "Other news"),
    ];
    let ranked = promote(raw, Some("Krasny Liman"), 10);
    let links: Vec<_> = ranked.iter().map(|r| r.result.link.as_str()).collect();
    assert_eq!(
        links,
        [
            "https://example.org/1",
            "https://example.org/3",
            "https://example.org/0",
            "https://example.org/2",
            "https://example.org/4"
        ]
    );
    assert_eq!(
        ranked.iter().map(|r| r.rank).collect::<Vec<_>>(),
        [1, 2, 3, 4, 5]
    );
    assert_eq!(
        ranked.iter().map(|r| r.exact_match).collect::<Vec<_>>(),
        [true, true, false, false, false]
    );
}

#[test]
fn default_k_is_ten() {
    assert_eq!(RetrievalConfig::default().k, 10);
    let stub = StubSearch::new((0..25).map(|i| result(i, "x")).collect());
    let q = extract_keywords("bridge collapse", "").unwrap();
    let out = search(
        &q,
        RetrievalConfig::default().k,
        &stub,
        &RetryPolicy::immediate(3),
    );
    assert_eq!(out.results.len(), 10);
}

#[test]
fn failing_search_retries_then_proceeds_empty() {
    let stub = StubSearch::failing(SearchError::QuotaExceeded("daily".into()));
    let q = extract_keywords("bridge collapse", "").unwrap();
    let out = search(&q, 10, &stub, &RetryPolicy::immediate(3));
    assert!(out.results.is_empty());
    assert!(out.error.unwrap().contains("quota"));
    assert_eq!(stub.calls(), 3);
}

proptest! {
    #[test]
    fn promotion_is_a_stable_partition(flags in proptest::collection::vec(any::<bool>(), 0..30), k in 1usize..40) {
        let raw: Vec<SearchResult> = flags
            .iter()
            .enumerate()
            .map(|(i, &f)| result(i, if f { "has PHRASE here" } else { "nothing" }))
            .collect();
        let ranked = promote(raw, Some("phrase"), k);
        prop_assert!(ranked.len() <= k);
        // oracle: indices of matches in order, then non-matches in order
        let want: Vec<usize> = (0..flags.len()).filter(|&i| flags[i])
            .chain((0..flags.len()).filter(|&i| !flags[i]))
            .take(k)
            .collect();
        let got: Vec<usize> = ranked.iter()
            .map(|r| r.result.link.rsplit('/').next().unwrap().parse().unwrap())
            .collect();
        prop_assert_eq!(got, want);
        for (i, r) in ranked.iter().enumerate() {
            prop_assert_eq!(r.rank, i + 1);
        }
    }
}

const ARTICLE_PAGE: &str = r#"<html><head><title>t</title>
<meta name="date" content="2022-05-28"></head><body>
<header><a href="/">Home</a> <a href="/world">World</a></header>
<nav><ul><li><a href="/a">Politics section link</a></li><li><a href="/b">Sports section link</a></li></ul></nav>
<div class="menu"><p><a href="/x">Subscribe to the newsletter today</a> <a href="/y">Sign in</a></p></div>
<article><h1>Town changes hands</h1>
<p>Forces entered the town on Saturday after weeks of shelling, officials said.</p>
<p>Residents described long queues for water and a damaged <a href="/bridge">bridge</a> on the river.</p>
</article>
<footer>Copyright notice and legal links</footer>
</body></html>"#;

#[test]
fn readable_text_keeps_the_article_and_drops_navigation() {
    let text = extract_readable_text(ARTICLE_PAGE);
    assert!(text.contains("Town changes hands"));
    assert!(text.contains("Forces entered the town on Saturday"));
    assert!(text.contains("damaged bridge on the river"));
    for junk in ["Politics section link", "Subscribe", "Home", "Copyright"] {
        assert!(!text.contains(junk), "{junk} leaked into {text:?}");
    }
    // without an article element the link-heavy paragraph is still filtered
    let no_article = ARTICLE_PAGE
        .replace("<article>", "<div>")
        .replace("</article>", "</div>");
    let text = extract_readable_text(&no_article);
    assert!(text.contains("Forces entered the town"));
    assert!(!text.contains("Subscribe"));
}

/// Minimal HTTP/1.1 server answering every request with `body`.
fn serve(body: Vec<u8>, content_type: &'static str) -> (String, Arc<Mutex<Vec<Instant>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(Mutex::new(Vec::new()));
    let log = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut s) = stream else { continue };
            log.lock().unwrap().push(Instant::now());
            let mut reader = BufReader::new(s.try_clone().unwrap());
            let mut line = String::new();
            while reader.read_line(&mut line).is_ok() && line != "\r\n" && !line.is_empty() {
                line.clear();
            }
            let head = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            let _ = s.write_all(head.as_bytes());
            let _ = s.write_all(&body);
        }
    });
    (format!("http://{addr}"), hits)
}

fn http_fetcher(politeness: Duration) -> HttpFetcher {
    HttpFetcher::new(NetworkPolicy::online(), Duration::from_secs(5), politeness).unwrap()
}

#[test]
fn unreachable_host_gives_the_failure_marker() {
    // bind then drop to get a port with nothing listening
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let page = fetch_content(
        &format!("http://127.0.0.1:{port}/x"),
        &http_fetcher(Duration::ZERO),
        1024,
    );
    assert_eq!(page.content, FETCH_FAILED);
}

#[test]
fn oversized_pages_are_truncated_with_a_note() {
    let body = "word ".repeat(4000).into_bytes();
    let (base, _) = serve(body, "text/plain");
    let page = fetch_content(&format!("{base}/big"), &http_fetcher(Duration::ZERO), 1000);
    assert!(page.content.ends_with("[truncated at 1000 bytes]"));
    assert_eq!(page.content.matches("word").count(), 200);
}

#[test]
fn same_host_requests_are_spaced() {
    let (base, hits) = serve(b"<p>hello there, this is a page</p>".to_vec(), "text/html");
    let fetcher = http_fetcher(Duration::from_millis(200));
    let results: Vec<_> = (0..3)
        .map(|i| vps_core::evidence::RankedResult {
            result: SearchResult {
                link: format!("{base}/{i}"),
                title: format!("t{i}"),
                snippet: String::new(),
                date: None,
            },
            rank: i + 1,
            exact_match: false,
        })
        .collect();
    let buf = build_evidence_buffer("c", None, &results, &fetcher, &RetrievalConfig::default());
    assert!(buf
        .documents
        .iter()
        .all(|d| d.content.contains("hello there")));
    let mut t = hits.lock().unwrap().clone();
    t.sort();
    assert_eq!(t.len(), 3);
    for w in t.windows(2) {
        assert!(
            w[1] - w[0] >= Duration::from_millis(180),
            "{:?}",
            w[1] - w[0]
        );
    }
}

#[test]
fn offline_policy_refuses_real_fetchers() {
    assert!(HttpFetcher::new(
        NetworkPolicy::offline(),
        Duration::from_secs(1),
        Duration::ZERO
    )
    .is_err());
}

fn fixture_dir(results: &[SearchResult]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("search.json"),
        serde_json::to_vec(results).unwrap(),
    )
    .unwrap();
    std::fs::create_dir(dir.path().join("pages")).unwrap();
    std::fs::write(dir.path().join("pages/article.html"), ARTICLE_PAGE).unwrap();
    let mut index = serde_json::Map::new();
    for (i, r) in results.iter().enumerate() {
        let v = if i == 0 {
            serde_json::Value::Null
        } else {
            "article.html".into()
        };
        index.insert(r.link.clone(), v);
    }
    std::fs::write(
        dir.path().join("pages/index.json"),
        serde_json::to_vec(&index).unwrap(),
    )
    .unwrap();
    dir
}

fn case() -> Case {
    Case {
        case_id: "c1".into(),
        metadata: CaseMetadata {
            description: ID115.into(),
            media_link: "https://t.me/channel/1".into(),
            ..Default::default()
        },
        assets: vec![],
    }
}

#[test]
fn buffer_is_persisted_in_rank_order_and_reused() {
    let mut results: Vec<SearchResult> = (0..5).map(|i| result(i, "Report")).collect();
    results[3].title = "In Krasny Liman today".into();
    results[2].date = Some("May 28, 2022".into());
    let fixtures = fixture_dir(&results);
    let out = tempfile::tempdir().unwrap();
    let search_stub = StubSearch::from_dir(fixtures.path()).unwrap();
    let pages = StubFetcher::from_dir(fixtures.path()).unwrap();
    let cfg = RetrievalConfig {
        retry: RetryPolicy::immediate(3),
        ..Default::default()
    };

    let r = retrieve_evidence(&case(), &search_stub, &pages, &cfg, out.path(), false).unwrap();
    assert!(!r.from_cache);
    assert_eq!(r.buffer.documents.len(), 5);
    assert_eq!(r.buffer.documents[0].link, "https://example.org/3");
    assert!(r.buffer.documents[0].exact_match);
    // result 0 is unreachable in the fixture index
    let d0 = r
        .buffer
        .documents
        .iter()
        .find(|d| d.link.ends_with("/0"))
        .unwrap();
    assert_eq!(d0.content, FETCH_FAILED);
    let d2 = r
        .buffer
        .documents
        .iter()
        .find(|d| d.link.ends_with("/2"))
        .unwrap();
    assert_eq!(d2.date, "May 28, 2022");
    let d1 = r
        .buffer
        .documents
        .iter()
        .find(|d| d.link.ends_with("/1"))
        .unwrap();
    assert_eq!(d1.date, "2022-05-28");
    assert_eq!(r.buffer.source_link.as_ref().unwrap().rank, 0);
    assert_eq!(pages.calls(), 6);

    let raw: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.path().join(EVIDENCE_FILE)).unwrap()).unwrap();
    let arr = raw.as_array().unwrap();
    assert_eq!(arr.len(), 6);
    let ranks: Vec<u64> = arr.iter().map(|d| d["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, [0, 1, 2, 3, 4, 5]);
    for d in arr {
        for key in ["link", "date", "title", "content"] {
            assert!(d[key].is_string(), "missing {key}");
        }
    }

    let search_again = StubSearch::from_dir(fixtures.path()).unwrap();
    let pages_again = StubFetcher::from_dir(fixtures.path()).unwrap();
    let cached = retrieve_evidence(
        &case(),
        &search_again,
        &pages_again,
        &cfg,
        out.path(),
        false,
    )
    .unwrap();
    assert!(cached.from_cache);
    assert_eq!(cached.buffer, load_buffer(out.path()).unwrap().unwrap());
    assert_eq!(cached.buffer.documents, r.buffer.documents);
    assert_eq!((search_again.calls(), pages_again.calls()), (0, 0));

    let refreshed =
        retrieve_evidence(&case(), &search_again, &pages_again, &cfg, out.path(), true).unwrap();
    assert!(!refreshed.from_cache);
    assert_eq!(search_again.calls(), 1);
}

#[test]
fn zero_results_mark_the_buffer() {
    let fixtures = fixture_dir(&[]);
    let out = tempfile::tempdir().unwrap();
    let r = retrieve_evidence(
        &case(),
        &StubSearch::from_dir(fixtures.path()).unwrap(),
        &StubFetcher::from_dir(fixtures.path()).unwrap(),
        &RetrievalConfig::default(),
        out.path(),
        false,
    )
    .unwrap();
    assert!(r.buffer.documents.is_empty());
    assert!(r.buffer.notes.iter().any(|n| n == NO_SOURCES_NOTE));
    // the media link is still fetched (and fails, as it is not in the index)
    assert_eq!(r.buffer.source_link.unwrap().content, FETCH_FAILED);
}
