#pragma once

#include <filesystem>

#include "tempofuse/grid.hpp"

namespace tempofuse {

// PFM: "Pf" (1 channel) or "PF" (3 channels), negative scale = little
// endian, rows stored bottom to top. Two-channel maps are written as PF
// with a zero third channel.
void write_pfm(const std::filesystem::path& path, const Map& map);
Map read_pfm(const std::filesystem::path& path);

// 8-bit binary PGM of a [0, 1] image (values clipped).
void write_pgm(const std::filesystem::path& path, const Map& image);
Map read_pgm(const std::filesystem::path& path);

}  // namespace tempofuse
