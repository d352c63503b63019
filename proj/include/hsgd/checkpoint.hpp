#pragma once

#include <string>
#include <vector>

#include "hsgd/convnet.hpp"

namespace hsgd {

/// Binary parameter file, little-endian:
///   "HSGDCKPT" | u32 version | u32 network count
///   per network: u32 activation | u32 layer count
///   per layer:   u32 kind (0 block, 1 final) | u32 in | u32 out | u32 kernel | u32 payload floats
///                f32 payload (weight, scale, shift, bias)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const std::vector<ConvNetParams<float>>& nets);
std::vector<ConvNetParams<float>> load_checkpoint(const std::string& path);

std::string encode_checkpoint(const std::vector<ConvNetParams<float>>& nets);
std::vector<ConvNetParams<float>> decode_checkpoint(const std::string& bytes);

}  // namespace hsgd
