#ifndef S2AP_CHECKPOINT_HPP
#define S2AP_CHECKPOINT_HPP

#include <stdexcept>
#include <string>

#include "s2ap/model.hpp"

namespace s2ap {

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

/// SPCHK1 container: "SPCHK1" magic, the producing config as embedded text,
/// then per layer the shapes plus the w / s / m / bias arrays. Little-endian
/// throughout; the exact field order is documented in the README.
void save_checkpoint(const Network& net, const std::string& config_text,
                     const std::string& path);

struct Checkpoint {
    Network net;
    std::string config_text;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace s2ap

#endif  // S2AP_CHECKPOINT_HPP
