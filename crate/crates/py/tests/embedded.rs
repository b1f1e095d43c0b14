use std::ffi::CString;

use pyo3::prelude::*;
use wakeline::wakeline;

const SCRIPT: &str = r#"
import wakeline as wl

m = wl.parse_record("367001234,1700000000,42.5,-70.25,102.3,360")
assert m.entity_id == "367001234" and m.sog == 102.3
n = wl.normalize(m)
assert n.sog == 40.0 and n.cog == 0.0
assert wl.parse_record(m.to_json()) == m
try:
    wl.parse_record("1,2,95,0,1,1")
    raise AssertionError("latitude 95 accepted")
except ValueError as e:
    assert "lat" in str(e)

assert abs(wl.haversine_m(0.0, 0.0, 0.0, 0.001) - 111.19) < 0.01

w = [wl.AisMessage("e", 1700000000 + 60 * i, 0.0, 0.001 * i, 5.0, 90.0) for i in range(5)]
w.append(wl.AisMessage("e", w[-1].timestamp + 25200, 0.0, 0.01, 5.0, 90.0))
fired, reason, detail = wl.detect_changepoint(w)
assert fired and reason == "time_gap" and "25200" in detail
assert wl.detect_changepoint(w[:5]) == (False, "none", wl.detect_changepoint(w[:5])[2])

cols, rows = wl.build_features(w)
assert len(rows) == 6 and len(rows[0]) == len(cols) == 31
assert abs(rows[-1][cols.index("dt_1")] - 7.0) < 1e-12

s = wl.TrackStore(max_window_len=3)
outcomes = [s.append(x) for x in w] + [s.append(w[0])]
assert outcomes[:6] == ["stored"] * 6 and outcomes[6] == "duplicate"
assert [x.timestamp for x in s.window("e")] == [x.timestamp for x in w[-3:]]
assert s.history_len("e") == 6 and s.entities() == ["e"]

assert 4_400_000 <= wl.count_parameters("activity", "full") <= 5_000_000
ck = wl.Checkpoint.init("activity", seed=1)
p = ck.predict_proba(w)
assert len(p) == 5 and abs(sum(p) - 1) < 1e-9 and ck.predict(w) in ck.classes

t = wl.generate_track("buoy_drift", 600 * 60, seed=4)
assert len(t.messages) == 600 and t.entity == "buoy" and t.activity == "other"
tracks = wl.generate_dataset(2, seed=1, track_duration_s=1800)
assert len(tracks) >= 10
data = [(tr.messages, tr.activity) for tr in tracks]
trained, best, log = wl.train(data, epochs=2, seed=3)
assert len(log) == 2 and 1 <= best <= 2
ev = wl.evaluate(trained, data)
assert sum(map(sum, ev["confusion"]["counts"])) == len(data)

e = wl.Engine(trained, config='{"entity_min_context": 3}')
assert e.on_message(w[0]) is None
events = [e.on_message(x) for x in w[1:]]
assert events[:-1] == [None] * 4 and events[-1]["changepoint_reason"] == "time_gap"
assert e.classify_entity("e") == "unknown"
try:
    e.on_line("not,a,record")
    raise AssertionError("bad line accepted")
except wl.DeadLetterError as err:
    assert '"stage":"parse"' in str(err)
lines = [x.to_csv() for x in w]
lines = [l.replace("e,", "f,", 1) for l in lines] + ["garbage"]
ev, dead = e.run_lines(lines)
assert len(ev) == 1 and len(dead) == 1
assert e.metrics()["classifications_total"] == 2

probs = [0.1] * 5
probs[ck.classes.index("fishing")] = 0.6
pp = wl.apply_postprocess(probs, w[0], entity="buoy")
assert pp["raw_class"] == "fishing"
assert pp["final_class"] != "fishing" and "entity_gate" in pp["applied_rules"]
"#;

#[test]
fn python_api_round_trip() {
    pyo3::append_to_inittab!(wakeline);
    Python::attach(|py| {
        let code = CString::new(SCRIPT).unwrap();
        if let Err(e) = py.run(&code, None, None) {
            e.print(py);
            panic!("embedded script failed: {e}");
        }
    });
}
