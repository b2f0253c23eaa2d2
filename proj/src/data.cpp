#include "s2ap/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "s2ap/rng.hpp"

namespace s2ap {

Dataset gen_two_moons(int64_t n, double noise, uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw std::invalid_argument("two_moons: n must be even and >= 2");
    if (noise < 0.0) throw std::invalid_argument("two_moons: noise must be >= 0");

    const int64_t half = n / 2;
    Tensor x = Tensor::zeros({n, 2});
    std::vector<int> y(static_cast<size_t>(n));
    Rng rng(substream(seed, stream::data));

    const double pi = 3.14159265358979323846;
    for (int64_t i = 0; i < half; ++i) {
        const double t = half == 1 ? 0.0 : pi * static_cast<double>(i) / static_cast<double>(half - 1);
        // Outer moon: unit upper half-circle at the origin.
        x.data[static_cast<size_t>(2 * i)] = std::cos(t);
        x.data[static_cast<size_t>(2 * i + 1)] = std::sin(t);
        y[static_cast<size_t>(i)] = 0;
        // Inner moon: unit lower half-circle centered at (1, 0.5).
        x.data[static_cast<size_t>(2 * (half + i))] = 1.0 - std::cos(t);
        x.data[static_cast<size_t>(2 * (half + i) + 1)] = 0.5 - std::sin(t);
        y[static_cast<size_t>(half + i)] = 1;
    }
    if (noise > 0.0) {
        for (double& v : x.data) v += noise * rng.normal();
    }

    // Min-max rescale each coordinate into [0,1].
    for (int64_t c = 0; c < 2; ++c) {
        double lo = x.data[static_cast<size_t>(c)], hi = lo;
        for (int64_t i = 0; i < n; ++i) {
            const double v = x.data[static_cast<size_t>(2 * i + c)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double span = hi > lo ? hi - lo : 1.0;
        for (int64_t i = 0; i < n; ++i) {
            double& v = x.data[static_cast<size_t>(2 * i + c)];
            v = (v - lo) / span;
        }
    }

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(substream(seed, stream::data, 1));
    split_rng.shuffle(order);

    const int64_t n_train = (n * 8) / 10;
    Dataset ds;
    ds.class_count = 2;
    ds.x_train = Tensor::zeros({n_train, 2});
    ds.x_test = Tensor::zeros({n - n_train, 2});
    for (int64_t i = 0; i < n; ++i) {
        const int64_t src = order[static_cast<size_t>(i)];
        Tensor& dst = i < n_train ? ds.x_train : ds.x_test;
        const int64_t row = i < n_train ? i : i - n_train;
        dst.data[static_cast<size_t>(2 * row)] = x.data[static_cast<size_t>(2 * src)];
        dst.data[static_cast<size_t>(2 * row + 1)] = x.data[static_cast<size_t>(2 * src + 1)];
        if (i < n_train)
            ds.y_train.push_back(y[static_cast<size_t>(src)]);
        else
            ds.y_test.push_back(y[static_cast<size_t>(src)]);
    }
    return ds;
}

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw IdxTruncated("idx: truncated header in " + path);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError("idx: cannot open " + path);
    return in;
}

std::string hex32(uint32_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out = "0x";
    for (int shift = 28; shift >= 0; shift -= 4) out += digits[(v >> shift) & 0xf];
    return out;
}

}  // namespace

LabeledData load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img = open_input(images_path);
    const uint32_t img_magic = read_be32(img, images_path);
    if (img_magic != kImageMagic) {
        throw IdxBadMagic("idx: bad image magic in " + images_path + " (got " + hex32(img_magic) +
                          ", want 0x00000803)");
    }
    const uint32_t count = read_be32(img, images_path);
    const uint32_t rows = read_be32(img, images_path);
    const uint32_t cols = read_be32(img, images_path);
    const size_t pixel_count = static_cast<size_t>(count) * rows * cols;
    std::vector<unsigned char> pixels(pixel_count);
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixel_count));
    if (static_cast<size_t>(img.gcount()) != pixel_count)
        throw IdxTruncated("idx: truncated pixel data in " + images_path);

    std::ifstream lab = open_input(labels_path);
    const uint32_t lab_magic = read_be32(lab, labels_path);
    if (lab_magic != kLabelMagic) {
        throw IdxBadMagic("idx: bad label magic in " + labels_path);
    }
    const uint32_t lab_count = read_be32(lab, labels_path);
    if (lab_count != count) {
        throw IdxCountMismatch("idx: " + std::to_string(count) + " images but " +
                               std::to_string(lab_count) + " labels");
    }
    std::vector<unsigned char> labels(lab_count);
    lab.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(lab_count));
    if (static_cast<size_t>(lab.gcount()) != lab_count)
        throw IdxTruncated("idx: truncated label data in " + labels_path);

    LabeledData out;
    out.rows = rows;
    out.cols = cols;
    out.x = Tensor::zeros({static_cast<int64_t>(count), static_cast<int64_t>(rows) * cols});
    for (size_t i = 0; i < pixel_count; ++i)
        out.x.data[i] = static_cast<double>(pixels[i]) / 255.0;
    out.y.reserve(lab_count);
    for (unsigned char l : labels) out.y.push_back(static_cast<int>(l));
    return out;
}

void write_idx_images(const std::string& path, int64_t count, int64_t rows, int64_t cols,
                      const std::vector<uint8_t>& pixels) {
    if (static_cast<int64_t>(pixels.size()) != count * rows * cols)
        throw std::invalid_argument("idx: pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IdxError("idx: cannot write " + path);
    write_be32(out, kImageMagic);
    write_be32(out, static_cast<uint32_t>(count));
    write_be32(out, static_cast<uint32_t>(rows));
    write_be32(out, static_cast<uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IdxError("idx: cannot write " + path);
    write_be32(out, kLabelMagic);
    write_be32(out, static_cast<uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

Dataset load_idx_dataset(const std::string& train_images, const std::string& train_labels,
                         const std::string& test_images, const std::string& test_labels) {
    LabeledData train = load_idx(train_images, train_labels);
    LabeledData test = load_idx(test_images, test_labels);
    Dataset ds;
    ds.x_train = std::move(train.x);
    ds.y_train = std::move(train.y);
    ds.x_test = std::move(test.x);
    ds.y_test = std::move(test.y);
    int max_label = 0;
    for (int v : ds.y_train) max_label = std::max(max_label, v);
    for (int v : ds.y_test) max_label = std::max(max_label, v);
    ds.class_count = max_label + 1;
    return ds;
}

}  // namespace s2ap
