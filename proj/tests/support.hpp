#pragma once

// Shared fixtures and brute-force oracles for the test suites.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "safeprobe/safeprobe.hpp"

namespace testing_support {

using namespace safeprobe;
namespace fs = std::filesystem;

/// Removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("safeprobe_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

/// Planted config with u on axis 0 and a random tool direction.
inline SynthConfig planted_config(std::uint64_t seed = 1, std::size_t d = 8, std::size_t layers = 4,
                                  std::size_t n = 200, double gap = 2.0, double sigma = 0.5,
                                  double alpha = 0.0) {
    SynthConfig c;
    c.seed = seed;
    c.d_model = d;
    c.n_layers = layers;
    c.n_items = n;
    c.class_gap = gap;
    c.noise_sigma = sigma;
    c.tool_shift_alpha = alpha;
    c.planted_directions = axis_directions(layers, d, 0);
    c.tool_shift_direction = random_directions(seed + 1000, layers, d);
    return c;
}

/// O(n^2) pairwise AUC in units of half-credits: 2*wins + ties over 2*n_safe*n_unsafe.
inline double brute_auc(const std::vector<double>& scores, const std::vector<SafetyLabel>& labels) {
    long long num = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != SafetyLabel::safe) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != SafetyLabel::unsafe) continue;
            ++pairs;
            if (scores[i] > scores[j]) num += 2;
            else if (scores[i] == scores[j]) num += 1;
        }
    }
    return static_cast<double>(num) / static_cast<double>(2 * pairs);
}

/// Class means computed directly from the records, without the library fitter.
inline std::pair<Vec, Vec> class_means(const TraceSet& set, std::size_t layer) {
    Vec safe(set.d_model(), 0.0), unsafe(set.d_model(), 0.0);
    double ns = 0, nu = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto h = set.state(i, layer);
        if (set.records[i].label == SafetyLabel::safe) {
            for (std::size_t k = 0; k < h.size(); ++k) safe[k] += h[k];
            ++ns;
        } else if (set.records[i].label == SafetyLabel::unsafe) {
            for (std::size_t k = 0; k < h.size(); ++k) unsafe[k] += h[k];
            ++nu;
        }
    }
    for (auto& x : safe) x /= ns;
    for (auto& x : unsafe) x /= nu;
    return {safe, unsafe};
}

/// Standard normal CDF by Simpson integration of the density from -12.
inline double phi_oracle(double x) {
    const int n = 200000;
    const double a = -12.0, h = (x - a) / n;
    const auto f = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
    double s = f(a) + f(x);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

inline std::string slurp(const fs::path& p) { return detail::read_file(p); }

}  // namespace testing_support
