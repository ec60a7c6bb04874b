#include "netvlad/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "netvlad/config.hpp"

namespace fs = std::filesystem;

namespace netvlad {

namespace {

std::string bin_name(ImageId id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "desc/%06u.bin", id);
  return std::string(buf);
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw RuntimeError("short write to '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir / "desc");

  Json manifest;
  manifest["format"] = "netvlad-dataset";
  manifest["version"] = 1;
  manifest["descriptor_dim"] = dataset.descriptor_dim;
  manifest["world_config"] = world_config_to_json(dataset.config);
  Json images = Json::array();
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const GeoImage& img = dataset.images[i];
    Json e;
    e["id"] = img.id;
    e["file"] = bin_name(img.id);
    e["n"] = dataset.descriptors[i].rows();
    e["x"] = img.x;
    e["y"] = img.y;
    e["t"] = img.timestamp_days;
    e["condition"] = img.condition;
    e["place"] = img.place;
    e["role"] = to_string(img.role);
    e["split"] = to_string(img.split);
    images.push_back(std::move(e));
  }
  manifest["images"] = std::move(images);

  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", text.data(), text.size());

  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const auto& m = dataset.descriptors[i];
    write_file(dir / bin_name(dataset.images[i].id), m.data(),
               sizeof(float) * static_cast<std::size_t>(m.size()));
  }
}

Dataset load_dataset(const fs::path& dir) {
  Json manifest;
  try {
    manifest = Json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest in '" + dir.string() + "' is not valid JSON: " + e.what());
  }

  StrictObject obj(manifest, "manifest");
  if (as_string(obj.require("format"), "manifest.format") != "netvlad-dataset") {
    throw ValidationError("'" + dir.string() + "' is not a netvlad dataset");
  }
  if (as_int(obj.require("version"), "manifest.version") != 1) {
    throw ValidationError("unsupported dataset version in '" + dir.string() + "'");
  }

  Dataset ds;
  ds.descriptor_dim =
      static_cast<int>(as_int(obj.require("descriptor_dim"), "manifest.descriptor_dim"));
  ds.config = world_config_from_json(obj.require("world_config"), "manifest.world_config");

  const Json& images = obj.require("images");
  if (!images.is_array()) throw ValidationError("manifest.images: expected an array");
  obj.finish();

  for (const auto& e : images) {
    StrictObject entry(e, "manifest image entry");
    GeoImage img;
    img.id = static_cast<ImageId>(as_u64(entry.require("id"), "image.id"));
    const std::string file = as_string(entry.require("file"), "image.file");
    const auto n = as_int(entry.require("n"), "image.n");
    img.x = as_double(entry.require("x"), "image.x");
    img.y = as_double(entry.require("y"), "image.y");
    img.timestamp_days = as_int(entry.require("t"), "image.t");
    img.condition = static_cast<int>(as_int(entry.require("condition"), "image.condition"));
    img.place = static_cast<int>(as_int(entry.require("place"), "image.place"));
    img.role = role_from_string(as_string(entry.require("role"), "image.role"));
    img.split = split_from_string(as_string(entry.require("split"), "image.split"));
    entry.finish();

    const std::string bytes = read_file(dir / file);
    const std::size_t expected = static_cast<std::size_t>(n) * ds.descriptor_dim * sizeof(float);
    if (bytes.size() != expected) {
      throw ValidationError("descriptor file '" + file + "': expected " +
                            std::to_string(expected) + " bytes, found " +
                            std::to_string(bytes.size()));
    }
    MatrixX<float> m(n, ds.descriptor_dim);
    std::memcpy(m.data(), bytes.data(), bytes.size());

    ds.images.push_back(img);
    ds.descriptors.push_back(std::move(m));
  }
  if (ds.images.empty()) throw ValidationError("dataset in '" + dir.string() + "' has no images");

  // keep lookups by id cheap and deterministic
  std::vector<std::size_t> order(ds.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.images[a].id < ds.images[b].id;
  });
  Dataset sorted;
  sorted.descriptor_dim = ds.descriptor_dim;
  sorted.config = ds.config;
  for (const std::size_t i : order) {
    if (!sorted.images.empty() && sorted.images.back().id == ds.images[i].id) {
      throw ValidationError("duplicate image id " + std::to_string(ds.images[i].id));
    }
    sorted.images.push_back(ds.images[i]);
    sorted.descriptors.push_back(std::move(ds.descriptors[i]));
  }
  return sorted;
}

}  // namespace netvlad
