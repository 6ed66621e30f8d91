#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace t4d {

// Error taxonomy used across the library. The CLI maps these to exit code 2
// (data/validation); anything else that escapes is an internal error (3).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};
struct GeometryError : Error {
    using Error::Error;
};
struct RangeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct SplitError : Error {
    using Error::Error;
};
struct ParseError : Error {
    ParseError(const std::string& msg, std::uint64_t offset)
        : Error(msg + " (at byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::uint64_t byte_offset;
};
struct IoError : Error {
    using Error::Error;
};

int num_threads();
void set_num_threads(int n);

// Runs fn(i) for i in [0, count). Work is split into contiguous blocks, one
// per worker, so any writes to disjoint per-index outputs are race-free and
// the result is identical for every thread count.
void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& fn);

}  // namespace t4d
