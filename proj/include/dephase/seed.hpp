#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dephase {

/// Hierarchical seed path (experiment -> sequence -> trajectory -> stream).
///
/// Every child seed is a pure function of the parent value and the child
/// index, so streams do not depend on the order in which work is scheduled.
class SeedLineage {
public:
    SeedLineage() = default;
    explicit SeedLineage(std::uint64_t root);

    SeedLineage child(std::uint64_t index) const;

    std::uint64_t value() const { return value_; }
    const std::vector<std::uint64_t>& path() const { return path_; }
    std::string to_string() const;

    std::mt19937_64 engine() const { return std::mt19937_64(value_); }

    friend bool operator==(const SeedLineage& a, const SeedLineage& b) {
        return a.value_ == b.value_ && a.path_ == b.path_;
    }

private:
    std::vector<std::uint64_t> path_;
    std::uint64_t value_ = 0;
};

std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t index);

// Stream indices below a trajectory node.
namespace stream {
inline constexpr std::uint64_t injected = 0;
inline constexpr std::uint64_t native = 1;
inline constexpr std::uint64_t pulse_jitter = 2;
inline constexpr std::uint64_t shots = 3;
inline constexpr std::uint64_t time_offset = 4;
}  // namespace stream

}  // namespace dephase
