#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgv/tensor.hpp"

namespace tgv {

// One DVS event. Streams keep records sorted by non-decreasing timestamp;
// coordinates are bounded by the owning stream's width/height.
struct EventRecord {
    uint64_t t;        // microseconds
    uint16_t x;        // column
    uint16_t y;        // row
    uint8_t polarity;  // 0 = OFF, 1 = ON

    bool operator==(const EventRecord&) const = default;
};

struct EventStream {
    uint16_t width = 0;
    uint16_t height = 0;
    std::vector<EventRecord> records;
};

// Polarity-count voxel slice of a stream over one time window.
// counts has shape [2,H,W]; channel 0 holds OFF counts, channel 1 ON.
struct EventFrame {
    Tensor counts;
    uint64_t t_start = 0;
    uint64_t t_end = 0;

    uint32_t height() const { return counts.dim(1); }
    uint32_t width() const { return counts.dim(2); }
};

// counts[p,y,x] = number of polarity-p events at (x,y) with t in [t_start, t_end).
// Out-of-bounds coordinates raise DataError naming the record index.
EventFrame voxelize(const std::vector<EventRecord>& records, uint32_t height, uint32_t width,
                    uint64_t t_start, uint64_t t_end);

// EVS1 binary stream format, little-endian:
//   magic "EVS1" | width u16 | height u16 | count u64   (16-byte header)
//   records: t u64 | x u16 | y u16 | polarity u8        (13 bytes each)
std::vector<uint8_t> write_stream(const EventStream& stream);
EventStream read_stream(const std::vector<uint8_t>& bytes);
void write_stream_file(const std::string& path, const EventStream& stream);
EventStream read_stream_file(const std::string& path);

// ---- synthetic scenes -------------------------------------------------------

enum class ObjectKind { square, dot, flicker };

ObjectKind object_kind_from_string(const std::string& s);
std::string to_string(ObjectKind k);

// Frame window length used by the generator.
inline constexpr uint64_t kFrameWindowUs = 10000;

struct SynthSceneConfig {
    uint32_t height = 224;
    uint32_t width = 224;
    uint32_t frames = 100;
    uint32_t patch_size = 16;
    double activity_fraction = 0.15; // target fraction of patch grid touched per frame
    ObjectKind object = ObjectKind::flicker;
    uint32_t object_size = 72;       // ignored for dot (fixed 3 px)
    double speed = 2.0;              // pixels per frame
    int direction = -1;              // -1 seeded, 0..3 = +x,-x,+y,-y
    uint64_t seed = 1;
};

struct SynthStream {
    SynthSceneConfig config;
    std::vector<EventFrame> event_frames;               // frame 0 is empty (no predecessor)
    std::vector<Tensor> rgb_frames;                     // [3,H,W] each
    std::vector<std::vector<uint32_t>> active_patches;  // ground truth, sorted per frame
    std::vector<EventRecord> records;                   // all frames, time-ordered
    double measured_activity = 0.0;                     // mean fraction over frames >= 1
};

// Deterministic scene generation; validates that the measured mean
// active-patch fraction lands within +-20% relative of the configured
// target (frames 1..N-1; the bootstrap frame has no events).
SynthStream synth_stream(const SynthSceneConfig& config);

// Searches object sizes until the generator hits the requested activity.
SynthSceneConfig solve_activity_config(uint32_t height, uint32_t width, uint32_t patch_size,
                                       uint32_t frames, double activity, uint64_t seed);

// 128x128 sensor-style preset (8-pixel patches, 256-slot grid).
SynthSceneConfig dvs128_preset(uint32_t frames, double activity, uint64_t seed);

// Concatenates all per-frame records into one file-ready stream.
EventStream to_event_stream(const SynthStream& s);

} // namespace tgv
