#ifndef S2AP_DATA_HPP
#define S2AP_DATA_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2ap/tensor.hpp"

namespace s2ap {

/// Train/test split with features inside the unit box (required by the
/// attack clamping).
struct Dataset {
    Tensor x_train;
    std::vector<int> y_train;
    Tensor x_test;
    std::vector<int> y_test;
    int class_count = 2;
};

/// Two interleaved half-circles with Gaussian noise, min-max rescaled into
/// [0,1]^2, split 80/20 by a seeded shuffle. n must be even; the full set
/// holds exactly n/2 samples per class. Bit-deterministic for a fixed seed.
Dataset gen_two_moons(int64_t n, double noise, uint64_t seed);

struct IdxError : std::runtime_error {
    explicit IdxError(const std::string& what) : std::runtime_error(what) {}
};
struct IdxBadMagic : IdxError {
    explicit IdxBadMagic(const std::string& what) : IdxError(what) {}
};
struct IdxTruncated : IdxError {
    explicit IdxTruncated(const std::string& what) : IdxError(what) {}
};
struct IdxCountMismatch : IdxError {
    explicit IdxCountMismatch(const std::string& what) : IdxError(what) {}
};

struct LabeledData {
    Tensor x;  // (n, rows*cols), pixel/255
    std::vector<int> y;
    int64_t rows = 0;
    int64_t cols = 0;
};

/// Reads an IDX image/label file pair (big-endian magics 0x00000803 and
/// 0x00000801). Pixels are scaled to [0,1] by /255. Throws IdxBadMagic,
/// IdxTruncated or IdxCountMismatch.
LabeledData load_idx(const std::string& images_path, const std::string& labels_path);

/// Writers for the same format, used for round-trip checks and small
/// synthetic datasets.
void write_idx_images(const std::string& path, int64_t count, int64_t rows, int64_t cols,
                      const std::vector<uint8_t>& pixels);
void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels);

/// Assembles a Dataset from two IDX pairs.
Dataset load_idx_dataset(const std::string& train_images, const std::string& train_labels,
                         const std::string& test_images, const std::string& test_labels);

}  // namespace s2ap

#endif  // S2AP_DATA_HPP
