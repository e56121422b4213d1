#include "tgv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tgv/error.hpp"

namespace tgv {

namespace {

constexpr char kMagic[4] = {'T', 'G', 'V', 'M'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
}

void put_f32(std::vector<uint8_t>& out, float f) {
    put_u32(out, std::bit_cast<uint32_t>(f));
}

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    size_t remaining() const { return bytes.size() - pos; }

    uint32_t u32(const std::string& what) {
        if (remaining() < 4) throw CorruptFileError("checkpoint: truncated while reading " + what);
        uint32_t v = uint32_t(bytes[pos]) | uint32_t(bytes[pos + 1]) << 8 |
                     uint32_t(bytes[pos + 2]) << 16 | uint32_t(bytes[pos + 3]) << 24;
        pos += 4;
        return v;
    }

    std::string str(size_t len, const std::string& what) {
        if (remaining() < len) throw CorruptFileError("checkpoint: truncated while reading " + what);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
        return s;
    }
};

} // namespace

std::vector<uint8_t> save_checkpoint(const TensorMap& tensors) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kCheckpointVersion);
    for (const auto& [name, tensor] : tensors) {
        if (name.empty()) throw ParamError("checkpoint: tensor names must be non-empty");
        if (!tensor.defined()) throw ParamError("checkpoint: tensor '" + name + "' is undefined");
        put_u32(out, uint32_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, uint32_t(tensor.ndim()));
        for (uint32_t d : tensor.shape()) put_u32(out, d);
        for (float f : tensor.data()) put_f32(out, f);
    }
    return out;
}

TensorMap load_checkpoint(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic (expected TGVM)");
    }
    Reader r{bytes, 4};
    const uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    TensorMap out;
    while (!r.eof()) {
        const uint32_t name_len = r.u32("tensor name length");
        if (name_len == 0) throw CorruptFileError("checkpoint: empty tensor name");
        const std::string name = r.str(name_len, "tensor name");
        const uint32_t ndim = r.u32("rank of '" + name + "'");
        Shape shape(ndim);
        size_t numel = 1;
        for (uint32_t i = 0; i < ndim; ++i) {
            shape[i] = r.u32("dims of '" + name + "'");
            numel *= shape[i];
        }
        if (r.remaining() < numel * 4) {
            throw CorruptFileError("checkpoint: truncated payload for tensor '" + name + "'");
        }
        std::vector<float> data(numel);
        for (size_t i = 0; i < numel; ++i) {
            data[i] = std::bit_cast<float>(r.u32("payload of '" + name + "'"));
        }
        if (out.count(name)) throw CorruptFileError("checkpoint: duplicate tensor '" + name + "'");
        out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

void save_checkpoint_file(const std::string& path, const TensorMap& tensors) {
    const auto bytes = save_checkpoint(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw Error("checkpoint: write failed for '" + path + "'");
}

TensorMap load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

} // namespace tgv
