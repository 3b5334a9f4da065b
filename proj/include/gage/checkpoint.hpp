#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gage/tensor.hpp"

namespace gage {

// Versioned named-tensor archive.
//
// Binary layout (little-endian):
//   magic "GAGB" | u32 version=1 | u32 tensor_count |
//   per tensor: u16 name_len | name bytes (UTF-8) | u8 dtype (0 = f32) |
//               u8 rank | u32 dims[rank] | f32 payload (row-major)
//
// A text sidecar at <path>.meta carries key=value lines (profile, variant,
// view, branch, tau, kappa, normalization stats, train seed).
struct Checkpoint {
    std::vector<std::pair<std::string, TensorPtr>> tensors;  // ordered
    std::vector<std::pair<std::string, std::string>> meta;   // ordered

    void add(const std::string& name, const TensorPtr& t);
    const TensorPtr find(const std::string& name) const;  // null when absent
    void set_meta(const std::string& key, const std::string& value);
    std::string meta_value(const std::string& key) const;  // throws when absent
    bool has_meta(const std::string& key) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace gage
