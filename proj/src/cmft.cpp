#include "xmad/cmft.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "xmad/error.hpp"
#include "xmad/fsutil.hpp"

namespace xmad::cmft {
namespace {

void put_u32(unsigned char* out, std::uint32_t v) {
    out[0] = static_cast<unsigned char>(v);
    out[1] = static_cast<unsigned char>(v >> 8);
    out[2] = static_cast<unsigned char>(v >> 16);
    out[3] = static_cast<unsigned char>(v >> 24);
}

std::uint32_t get_u32(const unsigned char* in) {
    return static_cast<std::uint32_t>(in[0]) | (static_cast<std::uint32_t>(in[1]) << 8) |
           (static_cast<std::uint32_t>(in[2]) << 16) | (static_cast<std::uint32_t>(in[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* name) {
    require(v <= 0xFFFFFFFFu, ErrorKind::Shape, std::string(name) + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
}

constexpr std::size_t kChunkFloats = 1 << 14;

}  // namespace

std::uint64_t write_feature_tensor(const FeatureMap& map, std::ostream& sink) {
    require(map.data().size() == map.rows() * map.cols() * map.dim(), ErrorKind::Shape, "inconsistent feature map");
    require_finite(map, "write_feature_tensor");

    std::array<unsigned char, kHeaderBytes> header{};
    std::memcpy(header.data(), "CMFT", 4);
    put_u32(header.data() + 4, kVersion);
    put_u32(header.data() + 8, checked_u32(map.rows(), "rows"));
    put_u32(header.data() + 12, checked_u32(map.cols(), "cols"));
    put_u32(header.data() + 16, checked_u32(map.dim(), "dim"));
    put_u32(header.data() + 20, kDtypeFloat32);

    std::uint64_t offset = 0;
    sink.write(reinterpret_cast<const char*>(header.data()), header.size());
    if (!sink) fail(ErrorKind::Io, "write failed at byte offset 0");
    offset += header.size();

    std::vector<unsigned char> buffer;
    const auto& data = map.data();
    for (std::size_t start = 0; start < data.size(); start += kChunkFloats) {
        const std::size_t n = std::min(kChunkFloats, data.size() - start);
        buffer.resize(n * 4);
        for (std::size_t i = 0; i < n; ++i) put_u32(buffer.data() + 4 * i, std::bit_cast<std::uint32_t>(data[start + i]));
        sink.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
        if (!sink) fail(ErrorKind::Io, "write failed at byte offset " + std::to_string(offset));
        offset += buffer.size();
    }
    return offset;
}

FeatureMap read_feature_tensor(std::istream& source) {
    std::array<unsigned char, kHeaderBytes> header{};
    source.read(reinterpret_cast<char*>(header.data()), header.size());
    const auto got = static_cast<std::size_t>(source.gcount());
    if (got >= 4 && std::memcmp(header.data(), "CMFT", 4) != 0) fail(ErrorKind::Format, "bad magic (expected \"CMFT\")");
    if (got < header.size()) {
        fail(ErrorKind::Length, "truncated header: expected 24 bytes, got " + std::to_string(got));
    }
    const std::uint32_t version = get_u32(header.data() + 4);
    require(version == kVersion, ErrorKind::Format, "unsupported version " + std::to_string(version));
    const std::uint64_t rows = get_u32(header.data() + 8);
    const std::uint64_t cols = get_u32(header.data() + 12);
    const std::uint64_t dim = get_u32(header.data() + 16);
    const std::uint32_t dtype = get_u32(header.data() + 20);
    require(dtype == kDtypeFloat32, ErrorKind::Format, "unsupported dtype " + std::to_string(dtype));

    const std::uint64_t count = rows * cols * dim;
    std::vector<float> data(count);
    std::vector<unsigned char> buffer;
    std::uint64_t read_bytes = 0;
    for (std::uint64_t start = 0; start < count; start += kChunkFloats) {
        const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(kChunkFloats, count - start));
        buffer.resize(n * 4);
        source.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
        read_bytes += static_cast<std::uint64_t>(source.gcount());
        if (static_cast<std::size_t>(source.gcount()) != buffer.size()) {
            fail(ErrorKind::Length, "truncated payload: expected " + std::to_string(4 * count) + " bytes, got " +
                                        std::to_string(read_bytes));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const float v = std::bit_cast<float>(get_u32(buffer.data() + 4 * i));
            if (!std::isfinite(v)) {
                const std::uint64_t flat = start + i;
                fail(ErrorKind::Value, "non-finite value at cell " + std::to_string(flat / std::max<std::uint64_t>(dim, 1)) +
                                           " coordinate " + std::to_string(flat % std::max<std::uint64_t>(dim, 1)));
            }
            data[start + i] = v;
        }
    }
    return FeatureMap(rows, cols, dim, std::move(data));
}

std::uint64_t save(const FeatureMap& map, const std::filesystem::path& path) {
    std::uint64_t written = 0;
    write_atomically(path, [&](std::ostream& out) { written = write_feature_tensor(map, out); });
    return written;
}

FeatureMap load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Lookup, "cannot open " + path.string());
    try {
        return read_feature_tensor(in);
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
}

}  // namespace xmad::cmft
