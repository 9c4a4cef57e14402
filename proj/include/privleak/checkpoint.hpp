#pragma once

#include <filesystem>
#include <iosfwd>

#include "privleak/network.hpp"

namespace privleak {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "NNCP", u32 version, u64 header length (little-endian), UTF-8
/// JSON header {spec, params:[{name,shape,offset}], seed}, then the flat
/// parameter vector as little-endian float32.
void write_checkpoint(std::ostream& out, const Network<float>& net);
Network<float> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net);
Network<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace privleak
