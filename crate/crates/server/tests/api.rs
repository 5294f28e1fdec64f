mod common;

use axum::body::Body;
use axum::http::{Method, StatusCode};
use common::*;
use serde_json::{json, Value};
use wtstream_core::scheduler::{EngineRecord, Schedule, Terminator};
use wtstream_core::types::{format_ts, DataPoint};

#[tokio::test]
async fn model_lifecycle_status_codes() {
    let (app, node, _) = app();
    let (s, v) = call(&app, Method::PUT, "/node/models", pma("wt", "wt.pred", 1)).await;
    assert_eq!((s, v), (StatusCode::OK, json!({ "mid": "wt" })));
    let (s, _) = call(&app, Method::PUT, "/node/models", pma("wt", "wt.pred", 1)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, v) = call(&app, Method::PUT, "/node/models", b"not a zip".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    let (s, v) = get(&app, "/node/models/wt").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!(node.scheduler().model("wt").unwrap()));
    assert_eq!(v["manifest"]["inputs"].as_array().unwrap().len(), 3);
    let (s, v) = get(&app, "/node/models").await;
    assert_eq!((s, v.as_array().unwrap().len()), (StatusCode::OK, 1));
    assert_eq!(get(&app, "/node/models/unknown").await.0, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, Method::DELETE, "/node/models/wt", Body::empty()).await;
    assert_eq!((s, v), (StatusCode::OK, json!({ "mid": "wt" })));
    assert!(node.scheduler().models().is_empty());
    assert_eq!(call(&app, Method::DELETE, "/node/models/wt", Body::empty()).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn engine_lifecycle_status_codes() {
    let (app, node, _) = app();
    let engine = json!({ "eid": "copy", "kind": "external", "command_template": "cp {input_file} {output_file}" });
    let (s, v) = call(&app, Method::PUT, "/node/engines", engine.to_string()).await;
    assert_eq!((s, v), (StatusCode::OK, json!({ "eid": "copy" })));
    assert_eq!(call(&app, Method::PUT, "/node/engines", engine.to_string()).await.0, StatusCode::CONFLICT);
    let bad = json!({ "eid": "bad", "kind": "external", "command_template": "cat {input_file}" });
    assert_eq!(call(&app, Method::PUT, "/node/engines", bad.to_string()).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, Method::PUT, "/node/engines", "{").await.0, StatusCode::BAD_REQUEST);

    let (s, v) = get(&app, "/node/engines/copy").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!(node.scheduler().engine("copy").unwrap()));
    assert_eq!(get(&app, "/node/engines/nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/node/engines").await.1.as_array().unwrap().len(), 1);
    assert_eq!(call(&app, Method::DELETE, "/node/engines/copy", Body::empty()).await.0, StatusCode::OK);
    assert_eq!(call(&app, Method::DELETE, "/node/engines/copy", Body::empty()).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn prediction_control_status_codes() {
    let (app, _, _) = app();
    assert_eq!(post(&app, "/node/prediction?action=start").await.0, StatusCode::NOT_FOUND, "no models");
    call(&app, Method::PUT, "/node/models", pma("wt", "wt.pred", 1)).await;

    let (s, v) = post(&app, "/node/prediction?mode=2&time=201212061100&interval=3600").await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["schedule"]["mode"], "time_scheduled");
    assert_eq!(v["running"], false);
    assert_eq!(post(&app, "/node/prediction?mode=2&interval=0").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/node/prediction?mode=7").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/node/prediction").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/node/prediction?action=jump").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/node/prediction?action=stop").await.0, StatusCode::CONFLICT);

    let (s, v) = post(&app, "/node/prediction?action=start").await;
    assert_eq!((s, v["running"].clone()), (StatusCode::OK, json!(true)));
    assert_eq!(post(&app, "/node/prediction?action=start").await.0, StatusCode::CONFLICT);
    assert_eq!(post(&app, "/node/prediction?mode=1").await.0, StatusCode::CONFLICT, "mode change while running");
    assert_eq!(post(&app, "/node/prediction?action=stop").await.0, StatusCode::OK);
    assert_eq!(post(&app, "/node/prediction?mid=ghost&action=start").await.0, StatusCode::NOT_FOUND);

    call(&app, Method::PUT, "/node/models", pma("second", "second.pred", 2)).await;
    assert_eq!(post(&app, "/node/prediction?action=start").await.0, StatusCode::BAD_REQUEST, "ambiguous model");
    let (s, v) = get(&app, "/node/prediction?mid=second").await;
    assert_eq!((s, v["mid"].clone()), (StatusCode::OK, json!("second")));

    // run before any data: the lagged window is empty
    assert_eq!(post(&app, "/node/prediction?mid=wt&action=run&as_of=201212061100").await.0, StatusCode::CONFLICT);
}

/// The same operations through REST and through the node give the same
/// observable state.
#[tokio::test]
async fn routes_match_direct_calls() {
    let (app, via_rest, _) = app();
    let (direct, _) = node();

    call(&app, Method::PUT, "/node/models", pma("wt", "wt.pred", 5)).await;
    direct.scheduler().register_pma(&pma("wt", "wt.pred", 5)).unwrap();

    post(&app, "/node/prediction?mode=2&time=2012-12-06T17:00:00Z&interval=3600&count=3").await;
    direct
        .scheduler()
        .set_mode(
            "wt",
            Schedule::TimeScheduled {
                start: h(17),
                interval_secs: 3600,
                terminator: Terminator::Count(3),
            },
        )
        .unwrap();
    post(&app, "/node/prediction?action=start").await;
    direct.scheduler().start("wt").unwrap();

    // one ingest batch per hour; the data clock advances with each batch
    for i in 0..24 {
        let batch = json!([
            { "stream_id": "tm", "timestamp": format_ts(&h(i)), "value": 15.0 + (i % 6) as f64 },
            { "stream_id": "rf", "timestamp": format_ts(&h(i)), "value": (i % 3) as f64 },
        ]);
        let (s, _) = call(&app, Method::POST, "/ingest", batch.to_string()).await;
        assert_eq!(s, StatusCode::OK);
        direct.ingest(DataPoint::new("tm", h(i), 15.0 + (i % 6) as f64)).unwrap();
        direct.ingest(DataPoint::new("rf", h(i), (i % 3) as f64)).unwrap();
        direct.advance_to(h(i));
    }

    let (_, rest_info) = get(&app, "/node/models/wt").await;
    let direct_info = json!(direct.scheduler().model("wt").unwrap());
    assert_eq!(rest_info, direct_info);
    assert_eq!(rest_info["counters"]["predictions"], 3);
    assert_eq!(rest_info["running"], false, "count terminator reached");

    let (s, rest_values) = get(&app, "/streams/wt.pred/values").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rest_values, json!(direct.repository().retrieve("wt.pred", None, None, None).unwrap()));
    assert_eq!(rest_values.as_array().unwrap().len(), 3);
    assert_eq!(via_rest.repository().count("tm").unwrap(), 24);

    let (s, doc) = get(&app, "/streams/wt.pred/download").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(doc, Value::String(direct.repository().download("wt.pred", None, None).unwrap()));

    let (_, rest_run) = post(&app, "/node/prediction?action=run&as_of=2012-12-06T23:00:00Z").await;
    let direct_run = direct.run_once("wt", h(23)).unwrap();
    let direct_run = direct_run.predictions().next().unwrap();
    assert_eq!(rest_run["value"], json!(direct_run.value));
    assert_eq!(rest_run["inputs"], json!(direct_run.inputs));
}

#[tokio::test]
async fn streams_rules_and_notifications() {
    let (app, node, _) = app();
    let (s, v) = call(&app, Method::POST, "/streams", json!({ "stream_id": "wl" }).to_string()).await;
    assert_eq!((s, v["kind"].clone()), (StatusCode::OK, json!("sensor")));
    assert_eq!(call(&app, Method::POST, "/streams", json!({ "stream_id": "wl" }).to_string()).await.0, StatusCode::CONFLICT);
    assert_eq!(
        call(&app, Method::POST, "/streams", json!({ "stream_id": "has space" }).to_string()).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(get(&app, "/streams/nope").await.0, StatusCode::NOT_FOUND);
    let (_, list) = get(&app, "/streams").await;
    assert_eq!(list, json!(node.streams()));

    let rows = json!([
        { "timestamp": "2012-12-06T01:00:00Z", "value": 1.5 },
        { "timestamp": "2012-12-06T02:00:00Z", "value": 2.5 },
    ]);
    let (s, v) = call(&app, Method::POST, "/streams/wl/values", rows.to_string()).await;
    assert_eq!((s, v["accepted"].clone()), (StatusCode::OK, json!(2)));
    let (_, v) = get(&app, "/streams/wl/values?from=201212060200&to=201212060300").await;
    assert_eq!(v, json!([{ "timestamp": "2012-12-06T02:00:00Z", "value": 2.5 }]));
    assert_eq!(get(&app, "/streams/wl/values?from=banana").await.0, StatusCode::BAD_REQUEST);
    let bad = json!([{ "timestamp": "2012-12-06T03:00:00Z", "value": "NaN" }]);
    assert_eq!(call(&app, Method::POST, "/streams/wl/values", bad.to_string()).await.0, StatusCode::BAD_REQUEST);

    let rule = json!({ "rule_id": "wl-avg", "source_stream": "wl", "aggregate": "avg", "window_secs": 7200 });
    assert_eq!(call(&app, Method::POST, "/rules", rule.to_string()).await.0, StatusCode::OK);
    assert_eq!(call(&app, Method::POST, "/rules", rule.to_string()).await.0, StatusCode::CONFLICT);
    let (s, v) = get(&app, "/rules/wl-avg").await;
    assert_eq!((s, v["rule"]["window_secs"].clone()), (StatusCode::OK, json!(7200)));
    assert_eq!(call(&app, Method::DELETE, "/streams/wl", Body::empty()).await.0, StatusCode::CONFLICT, "rule uses it");

    let n = json!({
        "rule_id": "high",
        "source_stream": "wl",
        "predicate": { "cmp": "gt", "threshold": 3.0 },
        "qualifier": { "consecutive": { "n": 2 } },
    });
    let (s, v) = call(&app, Method::POST, "/notifications/rules", n.to_string()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let zero = json!({
        "rule_id": "z", "source_stream": "wl",
        "predicate": { "cmp": "gt", "threshold": 3.0 }, "qualifier": { "consecutive": { "n": 0 } },
    });
    assert_eq!(call(&app, Method::POST, "/notifications/rules", zero.to_string()).await.0, StatusCode::BAD_REQUEST);
    let rows = json!([
        { "timestamp": "2012-12-06T03:00:00Z", "value": 4.0 },
        { "timestamp": "2012-12-06T04:00:00Z", "value": 5.0 },
    ]);
    call(&app, Method::POST, "/streams/wl/values", rows.to_string()).await;
    let (_, events) = get(&app, "/notifications").await;
    assert_eq!(events, json!(node.events()));
    assert_eq!(events[0]["triggered_at"], "2012-12-06T04:00:00Z");
    assert_eq!(get(&app, "/streams/notifications").await.1["count"], 1);

    assert_eq!(call(&app, Method::DELETE, "/notifications/rules/high", Body::empty()).await.0, StatusCode::OK);
    assert_eq!(call(&app, Method::DELETE, "/rules/wl-avg", Body::empty()).await.0, StatusCode::OK);
    assert_eq!(call(&app, Method::DELETE, "/streams/wl", Body::empty()).await.0, StatusCode::OK);
    assert_eq!(get(&app, "/streams/wl").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn model_rules_are_protected_and_reachable() {
    let (app, _, _) = app();
    call(&app, Method::PUT, "/node/models", pma("wt", "wt.pred", 1)).await;
    let (s, v) = get(&app, "/rules/wt/tm17").await;
    assert_eq!((s, v["rule"]["lag_secs"].clone()), (StatusCode::OK, json!(17 * 3600)));
    assert_eq!(call(&app, Method::DELETE, "/rules/wt/tm17", Body::empty()).await.0, StatusCode::CONFLICT);
    // sensor streams cannot take prediction writes and vice versa
    let p = json!([{ "timestamp": "2012-12-06T01:00:00Z", "value": 1.0 }]);
    assert_eq!(call(&app, Method::POST, "/streams/wt.pred/values", p.to_string()).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn data_clock_advance_and_status() {
    let (app, node, clock) = app();
    let (s, v) = post(&app, "/node/advance?to=2012-12-06T05:00:00Z").await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(wtstream_core::clock::Clock::now(&clock), h(5));
    assert_eq!(post(&app, "/node/advance").await.0, StatusCode::BAD_REQUEST);
    let (_, st) = get(&app, "/node/status").await;
    assert_eq!(st["clock"], "data");
    assert_eq!(st["now"], "2012-12-06T05:00:00Z");

    let wall = wtstream_server::api::router(wtstream_server::api::AppState::new(
        node,
        wtstream_server::api::ServerClock::Wall,
    ));
    assert_eq!(post(&wall, "/node/advance?to=201212060600").await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn metadata_round_trip() {
    let (app, node, _) = app();
    let site = json!({ "type": "site", "site_id": "lake-a", "name": "Lake A", "latitude": 37.9, "longitude": 127.8 });
    assert_eq!(call(&app, Method::PUT, "/metadata", site.to_string()).await.0, StatusCode::OK);
    let bad = json!({ "type": "site", "site_id": "x", "name": "x", "latitude": 137.9, "longitude": 0.0 });
    assert_eq!(call(&app, Method::PUT, "/metadata", bad.to_string()).await.0, StatusCode::BAD_REQUEST);
    let (_, v) = get(&app, "/metadata").await;
    assert_eq!(v, json!(node.repository().metadata()));
    let engine = EngineRecord::external("e", "cp {input_file} {output_file}");
    assert_eq!(call(&app, Method::PUT, "/node/engines", json!(engine).to_string()).await.0, StatusCode::OK);
}
