#pragma once

#include "mlvamp/common.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace mlvamp {

// Child seed from a master seed and an arbitrary tag path. Adding a new tag
// path never shifts the seeds of existing ones.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * path.size());
    words.push_back(static_cast<std::uint32_t>(master));
    words.push_back(static_cast<std::uint32_t>(master >> 32));
    for (auto p : path) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    Vec normal_vec(Index n, double stddev = 1.0) {
        Vec v(n);
        for (Index i = 0; i < n; ++i) v[i] = stddev * normal();
        return v;
    }

    Mat normal_mat(Index rows, Index cols, double stddev = 1.0) {
        Mat m(rows, cols);
        // column-major fill keeps the stream order independent of storage tricks
        for (Index j = 0; j < cols; ++j)
            for (Index i = 0; i < rows; ++i) m(i, j) = stddev * normal();
        return m;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Standard normals addressed by (stream, sample index). Samples are produced in
// fixed-size blocks, each with its own engine, so the values never depend on
// how a caller partitions the index range.
class BlockNormals {
public:
    static constexpr Index kBlock = 4096;

    explicit BlockNormals(std::uint64_t seed) : seed_(seed) {}

    void fill(std::uint64_t stream, Eigen::Ref<Vec> out) const {
        const Index n = out.size();
        for (Index start = 0; start < n; start += kBlock) {
            Rng rng(derive_seed(seed_, {stream, static_cast<std::uint64_t>(start / kBlock)}));
            const Index end = std::min(n, start + kBlock);
            for (Index i = start; i < end; ++i) out[i] = rng.normal();
        }
    }

    Vec draw(std::uint64_t stream, Index n) const {
        Vec v(n);
        fill(stream, v);
        return v;
    }

private:
    std::uint64_t seed_;
};

} // namespace mlvamp
