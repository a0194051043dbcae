#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "doctest.h"
#include "xmad/error.hpp"

namespace testing {

/// Kind of the xmad::Error thrown by `fn`, or nothing when it returns normally.
inline std::optional<xmad::ErrorKind> error_kind(const std::function<void()>& fn, std::string* message = nullptr) {
    try {
        fn();
    } catch (const xmad::Error& e) {
        if (message) *message = e.message();
        return e.kind();
    }
    return std::nullopt;
}

/// Fresh scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("xmad_test_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

private:
    std::filesystem::path path_;
};

}  // namespace testing

#define CHECK_ERROR_KIND(expr, kind) CHECK(testing::error_kind([&] { (void)(expr); }) == (kind))
