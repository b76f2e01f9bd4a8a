#pragma once

#include "phrec/rng.hpp"
#include "phrec/volume.hpp"

#include <filesystem>
#include <string>
#include <unistd.h>

namespace test_helpers {

// Scratch directory under the system temp root, removed on destruction.
struct TmpDir {
    std::filesystem::path path;

    explicit TmpDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("phrec_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

inline phrec::Volume random_volume(phrec::Dims3 dims, std::uint64_t seed,
                                   double lo = 0.0, double hi = 1.0) {
    phrec::Volume v(dims, {1.0, 1.0, 1.0});
    phrec::Rng rng(seed);
    for (auto& x : v.data) x = lo + (hi - lo) * rng.uniform();
    return v;
}

// Values quantized to float32 so VOL1 round trips are bitwise identities.
inline phrec::Volume random_volume_f32(phrec::Dims3 dims, std::uint64_t seed) {
    phrec::Volume v = random_volume(dims, seed);
    for (auto& x : v.data) x = static_cast<float>(x);
    return v;
}

inline phrec::Mask random_mask(phrec::Dims3 dims, std::uint64_t seed, double fill_prob = 0.3) {
    phrec::Mask m(dims, {1.0, 1.0, 1.0});
    phrec::Rng rng(seed);
    for (auto& x : m.data) x = rng.uniform() < fill_prob ? 1 : 0;
    return m;
}

} // namespace test_helpers
