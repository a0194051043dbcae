#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "xmad/cmft.hpp"
#include "xmad/random.hpp"

using namespace xmad;

namespace {

std::string bytes_of(const FeatureMap& m) {
    std::stringstream s;
    cmft::write_feature_tensor(m, s);
    return s.str();
}

std::string header(std::uint32_t rows, std::uint32_t cols, std::uint32_t dim, const char* magic = "CMFT",
                   std::uint32_t version = 1, std::uint32_t dtype = 0) {
    std::string h(magic, 4);
    for (std::uint32_t v : {version, rows, cols, dim, dtype}) {
        for (int i = 0; i < 4; ++i) h.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    return h;
}

}  // namespace

TEST_CASE("single zero value is 28 bytes with a zero payload") {
    const std::string b = bytes_of(FeatureMap(1, 1, 1, 0.0f));
    REQUIRE(b.size() == 28);
    CHECK(b.substr(0, 4) == "CMFT");
    CHECK(b.substr(0, 24) == header(1, 1, 1));
    CHECK(b.substr(24) == std::string(4, '\0'));
}

TEST_CASE("payload is little-endian row-major float32") {
    FeatureMap m(1, 2, 1);
    m.data() = {1.0f, -2.0f};
    const std::string b = bytes_of(m);
    REQUIRE(b.size() == 32);
    const unsigned char one[4] = {0x00, 0x00, 0x80, 0x3F};
    const unsigned char minus_two[4] = {0x00, 0x00, 0x00, 0xC0};
    CHECK(std::memcmp(b.data() + 24, one, 4) == 0);
    CHECK(std::memcmp(b.data() + 28, minus_two, 4) == 0);
}

TEST_CASE("size formula") {
    CHECK(cmft::file_size(56, 56, 768) == 9633816);
    CHECK(bytes_of(FeatureMap(3, 5, 7)).size() == cmft::file_size(3, 5, 7));
}

TEST_CASE("bad magic is a format error") {
    std::stringstream s(std::string("XXXX") + std::string(40, '\0'));
    CHECK_ERROR_KIND(cmft::read_feature_tensor(s), ErrorKind::Format);
}

TEST_CASE("unsupported version or dtype is a format error") {
    std::stringstream v(header(1, 1, 1, "CMFT", 2) + std::string(4, '\0'));
    CHECK_ERROR_KIND(cmft::read_feature_tensor(v), ErrorKind::Format);
    std::stringstream d(header(1, 1, 1, "CMFT", 1, 1) + std::string(4, '\0'));
    CHECK_ERROR_KIND(cmft::read_feature_tensor(d), ErrorKind::Format);
}

TEST_CASE("truncated payload is a length error naming both sizes") {
    std::stringstream s(header(2, 2, 2) + std::string(7 * 4, '\0'));
    std::string msg;
    CHECK(testing::error_kind([&] { cmft::read_feature_tensor(s); }, &msg) == ErrorKind::Length);
    CHECK(msg.find("32") != std::string::npos);
    CHECK(msg.find("28") != std::string::npos);
}

TEST_CASE("truncated header is a length error") {
    std::stringstream s(std::string("CMFT") + std::string(6, '\0'));
    CHECK_ERROR_KIND(cmft::read_feature_tensor(s), ErrorKind::Length);
}

TEST_CASE("non-finite payload is a value error with the cell index") {
    FeatureMap m(2, 2, 3, 1.0f);
    std::string b = bytes_of(m);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(b.data() + 24 + 4 * 7, &nan, 4);  // cell 2, coordinate 1
    std::stringstream s(b);
    std::string msg;
    CHECK(testing::error_kind([&] { cmft::read_feature_tensor(s); }, &msg) == ErrorKind::Value);
    CHECK(msg.find("cell 2") != std::string::npos);
}

TEST_CASE("writing a non-finite map is a value error") {
    FeatureMap m(1, 1, 2, 0.0f);
    m.data()[1] = std::numeric_limits<float>::infinity();
    std::stringstream s;
    CHECK_ERROR_KIND(cmft::write_feature_tensor(m, s), ErrorKind::Value);
}

TEST_CASE("sink failure is an I/O error") {
    std::stringstream s;
    s.setstate(std::ios::badbit);
    std::string msg;
    CHECK(testing::error_kind([&] { cmft::write_feature_tensor(FeatureMap(1, 1, 1), s); }, &msg) == ErrorKind::Io);
    CHECK(msg.find("offset") != std::string::npos);
}

TEST_CASE("round trip is bitwise over random shapes and values") {
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        FeatureMap m(1 + uniform_index(rng, 9), 1 + uniform_index(rng, 9), 1 + uniform_index(rng, 33));
        for (auto& v : m.data()) v = static_cast<float>(normal(rng) * std::pow(10.0, uniform(rng, -30, 30)));
        m.data()[0] = -0.0f;
        std::stringstream s;
        const auto n = cmft::write_feature_tensor(m, s);
        CHECK(n == cmft::file_size(m.rows(), m.cols(), m.dim()));
        const FeatureMap back = cmft::read_feature_tensor(s);
        REQUIRE(back.data().size() == m.data().size());
        CHECK(std::memcmp(back.data().data(), m.data().data(), 4 * m.data().size()) == 0);
        CHECK(back.rows() == m.rows());
        CHECK(back.cols() == m.cols());
        CHECK(back.dim() == m.dim());
    }
}

TEST_CASE("save and load through the file system") {
    testing::TempDir dir("cmft");
    FeatureMap m(4, 3, 5);
    Rng rng(1);
    for (auto& v : m.data()) v = static_cast<float>(uniform01(rng));
    const auto path = dir / "nested/a.cmft";
    CHECK(cmft::save(m, path) == cmft::file_size(4, 3, 5));
    CHECK(std::filesystem::file_size(path) == cmft::file_size(4, 3, 5));
    CHECK(cmft::load(path) == m);
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    CHECK_ERROR_KIND(cmft::load(dir / "missing.cmft"), ErrorKind::Lookup);
}
