#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dsct {

// Counter-based generator: the i-th draw of a stream is a pure function of
// (seed, i), so streams can be forked, serialized and resumed exactly.
// Output mixing is the splitmix64 finalizer.
class Rng {
public:
    explicit Rng(uint64_t seed = 0, uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    uint64_t next_u64() {
        uint64_t z = seed_ + counter_ * 0x9E3779B97F4A7C15ull;
        ++counter_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform on [0,1), 53-bit resolution
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform on the open interval (0,1); safe to feed into log()
    double uniform_open() {
        return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        double u1 = uniform_open();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double gumbel() { return -std::log(-std::log(uniform_open())); }

    // Independent child stream; the parent is not advanced.
    Rng fork(uint64_t stream) const {
        uint64_t z = (seed_ ^ 0xA0761D6478BD642Full) + stream * 0xE7037ED1A0B428DBull;
        z = (z ^ (z >> 32)) * 0xD6E8FEB86659FD93ull;
        return Rng(z ^ (z >> 32));
    }

    Rng fork(std::string_view label) const {
        uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
        for (char c : label) {
            h ^= uint64_t(uint8_t(c));
            h *= 0x100000001b3ull;
        }
        return fork(h);
    }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }
    void restore(uint64_t seed, uint64_t counter) {
        seed_ = seed;
        counter_ = counter;
    }

private:
    uint64_t seed_;
    uint64_t counter_;
};

} // namespace dsct
