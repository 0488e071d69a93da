#pragma once

#include <filesystem>

#include "pdml/toynet.hpp"

namespace pdml {

// Binary checkpoint layout, all integers and floats little-endian:
//
//   offset  size        field
//   0       8           magic "PDMLNET1"
//   8       4           u32 channels_in
//   12      4           u32 num_classes
//   16      4           u32 num_layers (L)
//   20      4*L         u32 output channels per conv layer
//   ..      8           u64 init seed
//   ..      8           f64 embedding init gain
//   ..      8           u64 parameter count (N)
//   ..      8*N         f64 parameters in ParamLayout order
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace pdml
