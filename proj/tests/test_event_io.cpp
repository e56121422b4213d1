#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <tuple>

#include "tgv/event_io.hpp"
#include "tgv/rng.hpp"

using namespace tgv;

TEST_CASE("voxelize basics") {
    SUBCASE("no events gives a zero frame") {
        EventFrame f = voxelize({}, 8, 8, 0, 100);
        CHECK(f.counts.shape() == Shape{2, 8, 8});
        for (size_t i = 0; i < f.counts.numel(); ++i) CHECK(f.counts.at(i) == 0.0f);
    }
    SUBCASE("one ON event lands in channel 1") {
        std::vector<EventRecord> recs = {{50, 3, 5, 1}};
        EventFrame f = voxelize(recs, 8, 8, 0, 100);
        for (size_t i = 0; i < f.counts.numel(); ++i) {
            const float expect = i == (1 * 8 + 5) * 8 + 3 ? 1.0f : 0.0f;
            CHECK(f.counts.at(i) == expect);
        }
    }
    SUBCASE("window filtering is half-open") {
        std::vector<EventRecord> recs = {{10, 0, 0, 0}, {20, 0, 0, 0}, {30, 0, 0, 0}};
        EventFrame f = voxelize(recs, 4, 4, 10, 30);
        CHECK(f.counts.at(0) == 2.0f); // t=10 and t=20; t=30 excluded
    }
    SUBCASE("out-of-bounds coordinate names the record index") {
        std::vector<EventRecord> recs = {{5, 1, 1, 1}, {6, 9, 0, 1}};
        try {
            voxelize(recs, 8, 8, 0, 100);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("record 1") != std::string::npos);
        }
    }
    SUBCASE("empty window is rejected") {
        CHECK_THROWS_AS(voxelize({}, 4, 4, 10, 10), ParamError);
    }
}

TEST_CASE("voxelize matches a hash-map tally on 1000 random events") {
    Rng rng(99);
    const uint32_t h = 16, w = 24;
    std::vector<EventRecord> recs(1000);
    uint64_t t = 0;
    for (auto& r : recs) {
        t += rng.next_below(20);
        r = {t, uint16_t(rng.next_below(w)), uint16_t(rng.next_below(h)), uint8_t(rng.next_below(2))};
    }
    const uint64_t t0 = recs[100].t, t1 = recs[900].t;
    EventFrame f = voxelize(recs, h, w, t0, t1);

    std::map<std::tuple<int, int, int>, int> tally;
    for (const auto& r : recs) {
        if (r.t >= t0 && r.t < t1) tally[{r.polarity, r.y, r.x}]++;
    }
    double total = 0.0;
    for (uint32_t p = 0; p < 2; ++p) {
        for (uint32_t y = 0; y < h; ++y) {
            for (uint32_t x = 0; x < w; ++x) {
                auto it = tally.find({int(p), int(y), int(x)});
                const float expect = it == tally.end() ? 0.0f : float(it->second);
                CHECK(f.counts.at((size_t(p) * h + y) * w + x) == expect);
                total += f.counts.at((size_t(p) * h + y) * w + x);
            }
        }
    }
    // frame sum equals the number of in-window events
    size_t in_window = 0;
    for (const auto& r : recs) in_window += (r.t >= t0 && r.t < t1) ? 1 : 0;
    CHECK(total == double(in_window));
}

TEST_CASE("voxelize is permutation-invariant over same-timestamp records") {
    Rng rng(5);
    std::vector<EventRecord> recs;
    for (int i = 0; i < 200; ++i) {
        recs.push_back({uint64_t(i / 10) * 7, uint16_t(rng.next_below(6)), uint16_t(rng.next_below(6)),
                        uint8_t(rng.next_below(2))});
    }
    EventFrame a = voxelize(recs, 6, 6, 0, 1000);
    // shuffle within equal timestamps
    for (size_t i = 0; i + 1 < recs.size(); ++i) {
        const size_t j = i + rng.next_below(recs.size() - i);
        if (recs[i].t == recs[j].t) std::swap(recs[i], recs[j]);
    }
    EventFrame b = voxelize(recs, 6, 6, 0, 1000);
    CHECK(a.counts.data() == b.counts.data());
}

TEST_CASE("evs1 round trips") {
    SUBCASE("empty stream is a 16-byte header") {
        EventStream s;
        s.width = 128;
        s.height = 128;
        auto bytes = write_stream(s);
        CHECK(bytes.size() == 16);
        EventStream r = read_stream(bytes);
        CHECK(r.width == 128);
        CHECK(r.height == 128);
        CHECK(r.records.empty());
    }
    SUBCASE("one record costs 13 bytes") {
        EventStream s;
        s.width = 32;
        s.height = 32;
        s.records = {{123456, 3, 4, 1}};
        auto bytes = write_stream(s);
        CHECK(bytes.size() == 29);
        EventStream r = read_stream(bytes);
        REQUIRE(r.records.size() == 1);
        CHECK(r.records[0] == s.records[0]);
    }
    SUBCASE("10k random records survive a byte-compare round trip") {
        Rng rng(17);
        EventStream s;
        s.width = 240;
        s.height = 180;
        uint64_t t = 0;
        for (int i = 0; i < 10000; ++i) {
            t += rng.next_below(50);
            s.records.push_back({t, uint16_t(rng.next_below(s.width)),
                                 uint16_t(rng.next_below(s.height)), uint8_t(rng.next_below(2))});
        }
        auto bytes = write_stream(s);
        EventStream r = read_stream(bytes);
        auto bytes2 = write_stream(r);
        CHECK(bytes == bytes2);
        CHECK(r.records == s.records);
    }
    SUBCASE("bad magic is a format error") {
        EventStream s;
        s.width = s.height = 8;
        auto bytes = write_stream(s);
        bytes[0] = 'X';
        CHECK_THROWS_AS(read_stream(bytes), FormatError);
    }
    SUBCASE("count mismatch is a corrupt-file error") {
        EventStream s;
        s.width = s.height = 8;
        s.records = {{1, 0, 0, 1}, {2, 1, 1, 0}};
        auto bytes = write_stream(s);
        bytes.resize(bytes.size() - 13);
        CHECK_THROWS_AS(read_stream(bytes), CorruptFileError);
    }
}

TEST_CASE("synth: static scene emits no events after the bootstrap frame") {
    SynthSceneConfig cfg;
    cfg.height = cfg.width = 64;
    cfg.patch_size = 8;
    cfg.frames = 10;
    cfg.object = ObjectKind::square;
    cfg.object_size = 16;
    cfg.speed = 0.0;
    cfg.activity_fraction = 0.0;
    cfg.seed = 4;
    SynthStream s = synth_stream(cfg);
    REQUIRE(s.event_frames.size() == 10);
    for (uint32_t f = 1; f < 10; ++f) {
        double sum = 0.0;
        for (size_t i = 0; i < s.event_frames[f].counts.numel(); ++i)
            sum += s.event_frames[f].counts.at(i);
        CHECK(sum == 0.0);
        CHECK(s.active_patches[f].empty());
    }
}

TEST_CASE("synth: full-screen flicker touches every patch") {
    SynthSceneConfig cfg;
    cfg.height = cfg.width = 64;
    cfg.patch_size = 8;
    cfg.frames = 6;
    cfg.object = ObjectKind::flicker;
    cfg.object_size = 64;
    cfg.speed = 0.0;
    cfg.activity_fraction = 1.0;
    cfg.seed = 4;
    SynthStream s = synth_stream(cfg);
    CHECK(s.measured_activity == 1.0);
    for (uint32_t f = 1; f < cfg.frames; ++f) CHECK(s.active_patches[f].size() == 64);
}

TEST_CASE("synth: 15% activity on the 196-patch grid lands in [23,36]") {
    SynthSceneConfig cfg = solve_activity_config(224, 224, 16, 100, 0.15, 7);
    SynthStream s = synth_stream(cfg);
    double mean_active = 0.0;
    for (uint32_t f = 1; f < cfg.frames; ++f) mean_active += double(s.active_patches[f].size());
    mean_active /= (cfg.frames - 1);
    CHECK(mean_active >= 23.0);
    CHECK(mean_active <= 36.0);
}

TEST_CASE("synth: fixed seed is bit-deterministic") {
    SynthSceneConfig cfg = solve_activity_config(64, 64, 8, 20, 0.2, 11);
    SynthStream a = synth_stream(cfg);
    SynthStream b = synth_stream(cfg);
    CHECK(a.records == b.records);
    REQUIRE(a.rgb_frames.size() == b.rgb_frames.size());
    for (size_t f = 0; f < a.rgb_frames.size(); ++f) {
        CHECK(a.rgb_frames[f].data() == b.rgb_frames[f].data());
    }
    CHECK(a.active_patches == b.active_patches);
}

TEST_CASE("synth: unreachable activity target is a config error") {
    SynthSceneConfig cfg;
    cfg.height = cfg.width = 64;
    cfg.patch_size = 8;
    cfg.frames = 10;
    cfg.object = ObjectKind::square;
    cfg.object_size = 4;
    cfg.speed = 0.0; // static object cannot hit 50% activity
    cfg.activity_fraction = 0.5;
    CHECK_THROWS_AS(synth_stream(cfg), ConfigError);
}

TEST_CASE("dvs128 preset hits its activity target") {
    SynthSceneConfig cfg = dvs128_preset(20, 0.1, 13);
    CHECK(cfg.height == 128);
    CHECK(cfg.width == 128);
    SynthStream s = synth_stream(cfg);
    CHECK(std::abs(s.measured_activity - 0.1) <= 0.02);
}

TEST_CASE("synth stream writes and reads back as evs1") {
    SynthSceneConfig cfg = solve_activity_config(64, 64, 8, 12, 0.25, 3);
    SynthStream s = synth_stream(cfg);
    EventStream es = to_event_stream(s);
    auto bytes = write_stream(es);
    EventStream back = read_stream(bytes);
    CHECK(back.records == es.records);
    CHECK(back.records.size() > 0);
}
