#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace heterolora {

// Counter-free splitmix64 PRNG. Self-contained so streams are bit-identical
// across standard libraries; std::normal_distribution is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) via rejection.
    std::uint64_t uniform_below(std::uint64_t n);

    // Standard normal via Box-Muller; the paired value is cached.
    double gaussian();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Root seed fanned out into labeled substreams ("init.*", "data.*", ...).
// A substream is created on first use and keeps its position afterwards,
// so the order in which unrelated streams are consumed cannot interact.
class RngPool {
public:
    explicit RngPool(std::uint64_t root_seed) : root_(root_seed) {}

    std::uint64_t root_seed() const { return root_; }

    Rng& stream(std::string_view label);

    // One-shot generator for a label; does not touch pooled stream state.
    Rng derived(std::string_view label) const;

private:
    std::uint64_t root_;
    std::map<std::string, Rng, std::less<>> streams_;
};

std::uint64_t hash_label(std::uint64_t root, std::string_view label);

}  // namespace heterolora
