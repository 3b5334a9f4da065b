#pragma once

#include <cstdint>

namespace gage {

// SplitMix64 (Vigna's fixed-increment variant of Java's SplittableRandom).
// State transition and output constants must not change: dataset golden
// files depend on this exact sequence.
struct SplitMix64 {
    uint64_t state = 0;

    SplitMix64() = default;
    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Finalizer applied to an arbitrary state value; used to build
    // order-independent per-sample streams.
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Uniform double in [0,1), 53 significant bits.
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range, multiply-shift mapping.
    int uniform_int(int lo, int hi) {
        uint64_t range = uint64_t(hi - lo) + 1;
        return lo + int((unsigned __int128)(next()) * range >> 64);
    }

    // Approximate standard normal: sum of 12 uniforms minus 6 (Irwin-Hall).
    // Exact mean 0 / variance 1, support [-6,6], and uses only IEEE
    // add/multiply so results are bit-stable across platforms.
    double normal() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }
};

// Per-sample stream seed: mix(dataset_seed, sample_id, view_index).
// Order-independent, so samples can be generated in any order or in parallel.
inline uint64_t stream_seed(uint64_t dataset_seed, uint64_t sample_id, uint64_t view_index) {
    return SplitMix64::mix(SplitMix64::mix(SplitMix64::mix(dataset_seed) ^ sample_id) ^ view_index);
}

}  // namespace gage
