#pragma once

#include <filesystem>
#include <string>

#include "s3d/network.hpp"

namespace s3d {

/// Model file layout, all integers little-endian:
///   "S3D1" | version 0x01 | u64 config length | config JSON (UTF-8)
///   then per array in declaration order: u64 element count | fp64 values.
inline constexpr char kModelMagic[4] = {'S', '3', 'D', '1'};
inline constexpr unsigned char kModelVersion = 0x01;

void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

/// Same container as save_model, for any parameter-shaped state (optimizer velocity).
void save_params(const NetworkConfig& config, const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_params(const NetworkConfig& expected, const std::filesystem::path& path);

std::string serialize_model(const NetworkConfig& config, const NetworkParams& params);
/// Throws LoadError on bad magic/version, truncation, or array shape mismatch.
std::pair<NetworkConfig, NetworkParams> deserialize_model(const std::string& bytes);

}  // namespace s3d
