#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "forensim/tensor.hpp"

namespace forensim {

/// splitmix64; used to derive independent per-sample streams from (seed, key)
/// pairs so parallel workers stay reproducible.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a over bytes. Stable across platforms; the dataset split keys on it.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
    return mix64(mix64(seed) ^ key);
}

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& key) {
    return derive_seed(seed, fnv1a64(key));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    /// Inclusive on both ends.
    long randint(long lo, long hi) {
        return std::uniform_int_distribution<long>(lo, hi)(gen_);
    }
    bool bernoulli(double p) { return uniform() < p; }

    Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(mean, stddev);
        return t;
    }
    Tensor uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace forensim
