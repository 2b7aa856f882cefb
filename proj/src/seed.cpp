#include "dephase/seed.hpp"

#include <sstream>

namespace dephase {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t index) {
    return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

SeedLineage::SeedLineage(std::uint64_t root) : path_{root}, value_(splitmix64(root)) {}

SeedLineage SeedLineage::child(std::uint64_t index) const {
    SeedLineage out = *this;
    out.path_.push_back(index);
    out.value_ = mix_seed(value_, index);
    return out;
}

std::string SeedLineage::to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < path_.size(); ++i) {
        if (i) os << '/';
        os << path_[i];
    }
    return os.str();
}

}  // namespace dephase
