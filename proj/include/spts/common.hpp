#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spts {

enum class ErrorKind {
    Shape,
    Budget,
    Ordering,
    Format,
    Numeric,
    Input,
    Schedule,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string & msg) {
    throw Error(kind, msg);
}

// Running FLOP tally for the calling thread. matmul and the probe paths add to
// it; the metrics module reads and resets it around measured sections.
struct FlopCounter {
    uint64_t flops = 0;

    void add(uint64_t n) { flops += n; }
    void reset() { flops = 0; }
};

FlopCounter & flop_counter();

} // namespace spts
