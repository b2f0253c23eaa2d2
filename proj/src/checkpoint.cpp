#include "s2ap/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace s2ap {

namespace {

constexpr char kMagic[6] = {'S', 'P', 'C', 'H', 'K', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw CheckpointError("checkpoint: truncated file " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f64s(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_f64s(std::istream& in, std::vector<double>& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (static_cast<size_t>(in.gcount()) != v.size() * sizeof(double))
        throw CheckpointError("checkpoint: truncated tensor data in " + path);
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& config_text,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    write_u32(out, static_cast<uint32_t>(config_text.size()));
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_u32(out, static_cast<uint32_t>(net.layer_count()));
    for (const auto& layer : net.layers()) {
        out.put(layer.prunable ? 1 : 0);
        out.put(layer.has_bias ? 1 : 0);
        write_u32(out, static_cast<uint32_t>(layer.in_dim()));
        write_u32(out, static_cast<uint32_t>(layer.out_dim()));
        write_f64s(out, layer.w.data);
        write_f64s(out, layer.s.data);
        write_f64s(out, layer.m.data);
        if (layer.has_bias) write_f64s(out, layer.bias.data);
    }
    if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[6];
    in.read(magic, sizeof magic);
    if (in.gcount() != sizeof magic || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path + " (want SPCHK1)");

    Checkpoint ckpt;
    const uint32_t config_len = read_u32(in, path);
    ckpt.config_text.resize(config_len);
    in.read(ckpt.config_text.data(), config_len);
    if (static_cast<uint32_t>(in.gcount()) != config_len)
        throw CheckpointError("checkpoint: truncated config text in " + path);

    const uint32_t layer_count = read_u32(in, path);
    std::vector<int64_t> dims;
    std::vector<PrunableLayer> layers;
    for (uint32_t l = 0; l < layer_count; ++l) {
        const int prunable = in.get();
        const int has_bias = in.get();
        if (prunable < 0 || has_bias < 0)
            throw CheckpointError("checkpoint: truncated layer header in " + path);
        const int64_t in_dim = read_u32(in, path);
        const int64_t out_dim = read_u32(in, path);
        PrunableLayer layer;
        layer.prunable = prunable != 0;
        layer.has_bias = has_bias != 0;
        layer.w = Tensor::zeros({in_dim, out_dim});
        layer.s = Tensor::zeros({in_dim, out_dim});
        layer.m = Tensor::zeros({in_dim, out_dim});
        layer.z = Tensor::zeros({in_dim, out_dim});
        layer.nu = Tensor::zeros({in_dim, out_dim});
        read_f64s(in, layer.w.data, path);
        read_f64s(in, layer.s.data, path);
        read_f64s(in, layer.m.data, path);
        layer.bias = Tensor::zeros({out_dim});
        if (layer.has_bias) read_f64s(in, layer.bias.data, path);
        layers.push_back(std::move(layer));
    }

    // Rebuild the network with matching topology, then adopt the stored
    // tensors.
    if (layers.empty()) throw CheckpointError("checkpoint: no layers in " + path);
    dims.push_back(layers.front().in_dim());
    for (const auto& layer : layers) dims.push_back(layer.out_dim());
    ckpt.net = Network::mlp(dims, 0);
    for (size_t l = 0; l < layers.size(); ++l) {
        if (ckpt.net.layers()[l].in_dim() != layers[l].in_dim())
            throw CheckpointError("checkpoint: inconsistent layer dims in " + path);
        ckpt.net.layers()[l] = std::move(layers[l]);
    }
    return ckpt;
}

}  // namespace s2ap
