#include "heterolora/rng.hpp"

#include <cmath>
#include <numbers>

namespace heterolora {

std::uint64_t Rng::uniform_below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    double ang = 2.0 * std::numbers::pi * u2;
    spare_ = mag * std::sin(ang);
    has_spare_ = true;
    return mag * std::cos(ang);
}

std::uint64_t hash_label(std::uint64_t root, std::string_view label) {
    // FNV-1a over the label, then mixed with the root through one splitmix step.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    Rng mixer(root ^ h);
    return mixer.next_u64();
}

Rng& RngPool::stream(std::string_view label) {
    auto it = streams_.find(label);
    if (it == streams_.end()) {
        it = streams_.emplace(std::string(label), Rng(hash_label(root_, label))).first;
    }
    return it->second;
}

Rng RngPool::derived(std::string_view label) const {
    return Rng(hash_label(root_, label));
}

}  // namespace heterolora
