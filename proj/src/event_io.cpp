#include "tgv/event_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tgv/error.hpp"
#include "tgv/rng.hpp"

namespace tgv {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', '1'};
constexpr size_t kHeaderBytes = 16;
constexpr size_t kRecordBytes = 13;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
}

} // namespace

EventFrame voxelize(const std::vector<EventRecord>& records, uint32_t height, uint32_t width,
                    uint64_t t_start, uint64_t t_end) {
    if (t_end <= t_start) throw ParamError("voxelize: empty window");
    Tensor counts = Tensor::zeros({2, height, width});
    auto& d = counts.data();
    for (size_t i = 0; i < records.size(); ++i) {
        const EventRecord& r = records[i];
        if (r.t < t_start || r.t >= t_end) continue;
        if (r.x >= width || r.y >= height || r.polarity > 1) {
            throw DataError("voxelize: record " + std::to_string(i) + " out of bounds (x=" +
                            std::to_string(r.x) + ", y=" + std::to_string(r.y) + ", p=" +
                            std::to_string(int(r.polarity)) + ")");
        }
        d[(size_t(r.polarity) * height + r.y) * width + r.x] += 1.0f;
    }
    return EventFrame{std::move(counts), t_start, t_end};
}

std::vector<uint8_t> write_stream(const EventStream& stream) {
    std::vector<uint8_t> out;
    out.reserve(kHeaderBytes + stream.records.size() * kRecordBytes);
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, stream.width);
    put_u16(out, stream.height);
    put_u64(out, stream.records.size());
    uint64_t prev_t = 0;
    for (size_t i = 0; i < stream.records.size(); ++i) {
        const EventRecord& r = stream.records[i];
        if (r.t < prev_t) throw DataError("write_stream: record " + std::to_string(i) + " breaks timestamp order");
        if (r.x >= stream.width || r.y >= stream.height || r.polarity > 1) {
            throw DataError("write_stream: record " + std::to_string(i) + " out of bounds");
        }
        prev_t = r.t;
        put_u64(out, r.t);
        put_u16(out, r.x);
        put_u16(out, r.y);
        out.push_back(r.polarity);
    }
    return out;
}

EventStream read_stream(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("read_stream: bad magic (expected EVS1)");
    }
    EventStream s;
    s.width = get_u16(bytes.data() + 4);
    s.height = get_u16(bytes.data() + 6);
    const uint64_t count = get_u64(bytes.data() + 8);
    if (bytes.size() != kHeaderBytes + count * kRecordBytes) {
        throw CorruptFileError("read_stream: header declares " + std::to_string(count) +
                               " records but payload holds " +
                               std::to_string((bytes.size() - kHeaderBytes) / kRecordBytes));
    }
    s.records.resize(count);
    uint64_t prev_t = 0;
    for (uint64_t i = 0; i < count; ++i) {
        const uint8_t* p = bytes.data() + kHeaderBytes + i * kRecordBytes;
        EventRecord& r = s.records[i];
        r.t = get_u64(p);
        r.x = get_u16(p + 8);
        r.y = get_u16(p + 10);
        r.polarity = p[12];
        if (r.t < prev_t) throw DataError("read_stream: record " + std::to_string(i) + " breaks timestamp order");
        if (r.x >= s.width || r.y >= s.height || r.polarity > 1) {
            throw DataError("read_stream: record " + std::to_string(i) + " out of bounds");
        }
        prev_t = r.t;
    }
    return s;
}

void write_stream_file(const std::string& path, const EventStream& stream) {
    const auto bytes = write_stream(stream);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("write_stream: cannot open '" + path + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw Error("write_stream: write failed for '" + path + "'");
}

EventStream read_stream_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("read_stream: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return read_stream(bytes);
}

// ---- synthetic scenes ---------------------------------------------------------

ObjectKind object_kind_from_string(const std::string& s) {
    if (s == "square") return ObjectKind::square;
    if (s == "dot") return ObjectKind::dot;
    if (s == "flicker") return ObjectKind::flicker;
    throw ParamError("unknown object kind '" + s + "' (square|dot|flicker)");
}

std::string to_string(ObjectKind k) {
    switch (k) {
        case ObjectKind::square: return "square";
        case ObjectKind::dot: return "dot";
        case ObjectKind::flicker: return "flicker";
    }
    return "?";
}

namespace {

constexpr float kBackground = 0.12f;
constexpr float kBrightA = 0.85f;
constexpr float kBrightB = 0.35f; // flicker alternates between A and B
constexpr double kChangeEps = 0.01;

struct SceneState {
    double px, py;  // top-left corner
    double vx, vy;
    uint32_t size;
};

void paint(Tensor& rgb, const SceneState& s, uint32_t h, uint32_t w, float intensity) {
    auto& d = rgb.data();
    const int x0 = int(std::lround(s.px));
    const int y0 = int(std::lround(s.py));
    for (int y = y0; y < y0 + int(s.size); ++y) {
        if (y < 0 || y >= int(h)) continue;
        for (int x = x0; x < x0 + int(s.size); ++x) {
            if (x < 0 || x >= int(w)) continue;
            for (int c = 0; c < 3; ++c) d[(size_t(c) * h + y) * w + x] = intensity;
        }
    }
}

void validate_config(const SynthSceneConfig& c) {
    if (c.height == 0 || c.width == 0 || c.frames == 0) throw ConfigError("synth: zero dimension");
    if (c.patch_size == 0 || c.height % c.patch_size != 0 || c.width % c.patch_size != 0) {
        throw ConfigError("synth: patch size " + std::to_string(c.patch_size) +
                          " must divide " + std::to_string(c.width) + "x" + std::to_string(c.height));
    }
    if (c.activity_fraction < 0.0 || c.activity_fraction > 1.0) {
        throw ConfigError("synth: activity_fraction outside [0,1]");
    }
    const uint32_t size = c.object == ObjectKind::dot ? 3 : c.object_size;
    if (size == 0 || size > c.height || size > c.width) {
        throw ConfigError("synth: object size " + std::to_string(size) + " does not fit the frame");
    }
    if (c.speed < 0.0) throw ConfigError("synth: negative speed");
}

SynthStream generate(const SynthSceneConfig& c) {
    validate_config(c);
    const uint32_t h = c.height, w = c.width, p = c.patch_size;
    const uint32_t patches_x = w / p, patches_y = h / p;
    const uint32_t n_patches = patches_x * patches_y;
    Rng rng(c.seed);

    SceneState s;
    s.size = c.object == ObjectKind::dot ? 3 : c.object_size;
    const double max_x = double(w - s.size), max_y = double(h - s.size);
    s.px = rng.uniform(0.0, max_x);
    s.py = rng.uniform(0.0, max_y);
    switch (c.direction) {
        case 0: s.vx = c.speed; s.vy = 0; break;
        case 1: s.vx = -c.speed; s.vy = 0; break;
        case 2: s.vx = 0; s.vy = c.speed; break;
        case 3: s.vx = 0; s.vy = -c.speed; break;
        default: {
            const double ang = rng.uniform(0.0, 6.283185307179586);
            s.vx = c.speed * std::cos(ang);
            s.vy = c.speed * std::sin(ang);
        }
    }

    SynthStream out;
    out.config = c;
    out.event_frames.reserve(c.frames);
    out.rgb_frames.reserve(c.frames);
    out.active_patches.resize(c.frames);

    Tensor prev_rgb;
    double active_sum = 0.0;
    for (uint32_t f = 0; f < c.frames; ++f) {
        float intensity = kBrightA;
        if (c.object == ObjectKind::flicker && f % 2 == 1) intensity = kBrightB;
        Tensor rgb = Tensor::full({3, h, w}, kBackground);
        paint(rgb, s, h, w, intensity);

        const uint64_t t0 = uint64_t(f) * kFrameWindowUs;
        const uint64_t t1 = t0 + kFrameWindowUs;
        std::vector<EventRecord> records;
        if (f > 0) {
            std::vector<uint8_t> patch_hit(n_patches, 0);
            const auto& cur = rgb.data();
            const auto& prv = prev_rgb.data();
            for (uint32_t y = 0; y < h; ++y) {
                for (uint32_t x = 0; x < w; ++x) {
                    const double diff = double(cur[size_t(y) * w + x]) - double(prv[size_t(y) * w + x]);
                    if (std::abs(diff) <= kChangeEps) continue;
                    EventRecord r;
                    r.t = t0 + rng.next_below(kFrameWindowUs);
                    r.x = uint16_t(x);
                    r.y = uint16_t(y);
                    r.polarity = diff > 0 ? 1 : 0;
                    records.push_back(r);
                    patch_hit[(y / p) * patches_x + (x / p)] = 1;
                }
            }
            std::sort(records.begin(), records.end(), [](const EventRecord& a, const EventRecord& b) {
                return std::tie(a.t, a.y, a.x, a.polarity) < std::tie(b.t, b.y, b.x, b.polarity);
            });
            auto& gt = out.active_patches[f];
            for (uint32_t i = 0; i < n_patches; ++i) {
                if (patch_hit[i]) gt.push_back(i);
            }
            active_sum += double(gt.size()) / double(n_patches);
        }
        out.event_frames.push_back(voxelize(records, h, w, t0, t1));
        out.records.insert(out.records.end(), records.begin(), records.end());
        out.rgb_frames.push_back(std::move(rgb));
        prev_rgb = out.rgb_frames.back();

        // advance with reflection at the borders
        s.px += s.vx;
        s.py += s.vy;
        if (s.px < 0) { s.px = -s.px; s.vx = -s.vx; }
        if (s.py < 0) { s.py = -s.py; s.vy = -s.vy; }
        if (s.px > max_x) { s.px = 2 * max_x - s.px; s.vx = -s.vx; }
        if (s.py > max_y) { s.py = 2 * max_y - s.py; s.vy = -s.vy; }
    }
    out.measured_activity = c.frames > 1 ? active_sum / double(c.frames - 1) : 0.0;
    return out;
}

} // namespace

SynthStream synth_stream(const SynthSceneConfig& config) {
    SynthStream s = generate(config);
    const double target = config.activity_fraction;
    const double got = s.measured_activity;
    if (std::abs(got - target) > 0.2 * target + 1e-9) {
        throw ConfigError("synth: activity_fraction " + std::to_string(target) +
                          " not achievable with this object (measured " + std::to_string(got) + ")");
    }
    return s;
}

SynthSceneConfig solve_activity_config(uint32_t height, uint32_t width, uint32_t patch_size,
                                       uint32_t frames, double activity, uint64_t seed) {
    SynthSceneConfig cfg;
    cfg.height = height;
    cfg.width = width;
    cfg.patch_size = patch_size;
    cfg.frames = frames;
    cfg.activity_fraction = activity;
    cfg.seed = seed;
    cfg.speed = 2.0;
    if (activity <= 0.0) {
        cfg.object = ObjectKind::square;
        cfg.object_size = std::max(4u, patch_size);
        cfg.speed = 0.0;
        return cfg;
    }
    cfg.object = ObjectKind::flicker;
    if (activity >= 0.999) {
        cfg.object_size = std::min(height, width);
        cfg.speed = 0.0;
        return cfg;
    }

    // closed-form starting point: a flicker square of side s touches about
    // (s/p + 1)^2 patches per frame
    const double n_patches = double(width / patch_size) * double(height / patch_size);
    const double target_patches = activity * n_patches;
    const double s0 = patch_size * (std::sqrt(target_patches) - 1.0);

    double best_err = 1e9;
    uint32_t best_size = 0;
    const uint32_t lo = uint32_t(std::max(2.0, s0 * 0.6));
    const uint32_t hi = uint32_t(std::min(double(std::min(height, width)), std::max(s0 * 1.5, s0 + 8)));
    SynthSceneConfig probe = cfg;
    probe.frames = std::min(frames, 24u);
    for (uint32_t size = lo; size <= hi; ++size) {
        probe.object_size = size;
        const double got = generate(probe).measured_activity;
        const double err = std::abs(got - activity);
        if (err < best_err) {
            best_err = err;
            best_size = size;
        }
    }
    if (best_size == 0 || best_err > 0.15 * activity) {
        throw ConfigError("synth: no object size realizes activity_fraction " + std::to_string(activity));
    }
    cfg.object_size = best_size;
    return cfg;
}

SynthSceneConfig dvs128_preset(uint32_t frames, double activity, uint64_t seed) {
    return solve_activity_config(128, 128, 8, frames, activity, seed);
}

EventStream to_event_stream(const SynthStream& s) {
    EventStream out;
    out.width = uint16_t(s.config.width);
    out.height = uint16_t(s.config.height);
    out.records = s.records;
    return out;
}

} // namespace tgv
