#pragma once

#include <filesystem>

#include "netvlad/geodata.hpp"

namespace netvlad {

// On-disk dataset layout:
//   <dir>/manifest.json                image metadata + world config echo
//   <dir>/desc/<id, 6 digits>.bin      raw little-endian float32, row-major N x D
// Round-trips are bit-exact.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace netvlad
